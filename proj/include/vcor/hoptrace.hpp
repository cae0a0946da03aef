#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "vcor/layers.hpp"
#include "vcor/metrics.hpp"
#include "vcor/voxelgrid.hpp"

namespace vcor {

struct AttentionMap {
  int hop = 0;
  Eigen::MatrixXd weights;             // head-averaged, source tokens x reference tokens
  std::vector<Eigen::MatrixXd> heads;  // per head, same layout
};

struct HopEntry {
  int hop = 0;  // 1-based
  DisplacementField field;
  Volume3 warped;
  AttentionMap attention;
  FeatureMap source_features;  // F_s after this hop's cross-attention
  std::shared_ptr<const FeatureMap> reference_features;
  std::optional<HopMetrics> metrics;
};

struct HopTrace {
  std::shared_ptr<const FeatureMap> reference_features;
  std::vector<HopEntry> hops;

  const HopEntry& final_hop() const { return hops.back(); }
};

}  // namespace vcor
