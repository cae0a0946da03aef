#pragma once

// File formats.
//
// Volumes and fields: a text header (`*.vhdr`) next to a raw payload of
// little-endian float32 values, x fastest, components interleaved per voxel:
//
//   vcor-volume 1
//   dims: 24 24 24
//   spacing: 1 1 1
//   dtype: float32-le
//   components: 1
//   order: x-fastest
//   data: reference.raw
//
// Landmarks: CSV `id,x,y,z` in continuous voxel coordinates.
// Checkpoints: magic "VCORCKPT", u32 version, u64 header length, a JSON
// header (architecture, seed, tensor names and sizes), then every tensor as
// little-endian float64 in header order.
// Configs: JSON; every key is optional and defaults as in the structs.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcor/metrics.hpp"
#include "vcor/phantom.hpp"
#include "vcor/reasoner.hpp"
#include "vcor/reliability.hpp"
#include "vcor/trainkit.hpp"

namespace vcor {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct VolumeHeader {
  Grid3 grid;
  int components = 1;
  std::string data_file;
};

VolumeHeader read_volume_header(const fs::path& header);

void write_volume(const fs::path& header, const Volume3& vol);
Volume3 read_volume(const fs::path& header);
void write_field(const fs::path& header, const DisplacementField& field);
DisplacementField read_field(const fs::path& header);
// Stored as 0/1 float32; read back with a 0.5 threshold.
void write_mask(const fs::path& header, const BinaryMask& mask);
BinaryMask read_mask(const fs::path& header);

// Values as the float32 payload stores them.
Volume3 quantize(const Volume3& vol);
DisplacementField quantize(const DisplacementField& field);

void write_landmarks(const fs::path& path, const LandmarkSet& set);
LandmarkSet read_landmarks(const fs::path& path);

void save_checkpoint(const fs::path& path, const ModelParams& params);
ModelParams load_checkpoint(const fs::path& path);

// One row per hop: hop,tre_mean_mm,tre_std_mm,dsc,ncc,mse,mi,pct_neg_jac,uncertainty
void write_metrics_csv(const fs::path& path, const std::vector<HopMetrics>& rows);
std::vector<HopMetrics> read_metrics_csv(const fs::path& path);
// Shortest round-tripping decimal, "nan" for missing values.
std::string format_number(double x);

void write_history_csv(const fs::path& path, const RunHistory& history);

// Case directory layout written by the phantom command.
struct CaseFiles {
  static constexpr const char* kReference = "reference.vhdr";
  static constexpr const char* kSource = "source.vhdr";
  static constexpr const char* kField = "gt_field.vhdr";
  static constexpr const char* kMaskRef = "mask_ref.vhdr";
  static constexpr const char* kMaskSrc = "mask_src.vhdr";
  static constexpr const char* kLandmarksRef = "landmarks_ref.csv";
  static constexpr const char* kLandmarksSrc = "landmarks_src.csv";
};

// Returns the written file names relative to `dir`.
std::vector<std::string> write_case(const fs::path& dir, const PhantomCase& pc);
PhantomCase read_case(const fs::path& dir);
// Case directories listed in `cohort_dir`/manifest.json, in manifest order.
std::vector<PhantomCase> read_cohort(const fs::path& cohort_dir);

json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const json& j);
json to_json(const LossWeights& w);
LossWeights loss_from_json(const json& j);
json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);
json to_json(const CohortConfig& c);
CohortConfig cohort_config_from_json(const json& j);
json to_json(const WeightScheme& s);
WeightScheme weight_scheme_from_json(const json& j);
json to_json(const BoundFit& fit);
json to_json(const ReliabilitySeries& s);

json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace vcor
