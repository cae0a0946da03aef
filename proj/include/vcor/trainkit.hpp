#pragma once

// Unsupervised training with Adam and a stepped learning-rate schedule, and
// the leave-one-out harness over a phantom cohort.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vcor/metrics.hpp"
#include "vcor/phantom.hpp"
#include "vcor/reasoner.hpp"

namespace vcor {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-4;
  double lr_decay = 0.1;
  int lr_period = 50;  // epochs between decays
  int batch_size = 1;
  LossWeights loss;
  int hops = 3;
  std::uint64_t seed = 0;
  ArchConfig arch;
  InitOptions init;
  AdamConfig adam;
  bool clip_gradients = false;
  double clip_norm = 1.0;
  int eval_every = 10;        // epochs between training-set evaluations; 0 disables
  int checkpoint_every = 0;   // epochs between checkpoints; 0 disables
  std::filesystem::path checkpoint_path;  // written on checkpoints and on abort
  // Random axis flips applied jointly to each training pair.
  bool augment_flips = false;
  // Replace each training source by the case's reference warped with a fresh
  // random smooth field (unsupervised: the field never enters the loss).
  bool augment_resample = false;
  double augment_amplitude = 3.0;
  double augment_smoothness = 6.0;

  void validate() const;
};

// lr0 * decay^floor(epoch / period), epochs counted from 0.
double learning_rate_at(const TrainConfig& config, int epoch);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  LossBreakdown loss;       // mean over the epoch's cases of the training objective
  LossBreakdown final_hop;  // mean of the unweighted final-hop terms
  double grad_norm = 0.0;   // mean pre-clipping gradient norm
};

struct EvalRecord {
  int epoch = 0;  // evaluation after this many completed epochs
  int case_index = 0;
  std::vector<HopMetrics> hops;  // hop 0 (unregistered) .. K
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::vector<EvalRecord> evaluations;
  std::uint64_t seed = 0;
  TrainConfig config;
  double wall_clock_seconds = 0.0;  // informational; never written to artifacts
};

struct TrainResult {
  ModelParams params;
  RunHistory history;
};

// Thrown when a loss or gradient goes non-finite. Carries the parameters from
// before the failing step; the same parameters are written to
// config.checkpoint_path when it is set.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, ModelParams last_good, RunHistory history)
      : NumericalError(what), last_good(std::move(last_good)), history(std::move(history)) {}
  ModelParams last_good;
  RunHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const std::vector<PhantomCase>& cohort, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Rows for hop 0 (unregistered) through K of one case.
std::vector<HopMetrics> evaluate_case(const PhantomCase& pc, const ModelParams& params, int hops,
                                      const EvalOptions& opts = {});

struct LooRow {
  int held_out = 0;
  HopMetrics metrics;
};

struct LooResult {
  std::vector<LooRow> rows;            // held-out case major, hop minor
  std::vector<ModelParams> models;     // one per fold
};

// For every case: train on the others, evaluate all hops on the held-out case.
// Folds run on up to `jobs` threads; results do not depend on `jobs`.
LooResult loo_eval(const std::vector<PhantomCase>& cohort, const TrainConfig& config, int jobs = 1);

// Joint random flips of a training pair, deterministic in (seed, epoch, case).
std::pair<Volume3, Volume3> flip_pair(const Volume3& reference, const Volume3& source, unsigned axes);

}  // namespace vcor
