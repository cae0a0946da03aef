#pragma once

// Unsupervised registration loss: local NCC + beta * MSE + lambda * smoothness.

#include <vector>

#include "vcor/hoptrace.hpp"
#include "vcor/voxelgrid.hpp"

namespace vcor {

struct LossWeights {
  double beta = 0.5;
  double lambda = 0.01;
  int ncc_window = 5;
  bool per_hop_supervision = false;
  std::vector<double> hop_weights;  // per-hop weights when supervising every hop; empty = all 1

  void validate() const;
  // Weight of every hop in a K-hop trace; final-hop-only unless per_hop_supervision.
  std::vector<double> weights_for(int hops) const;
};

inline constexpr double kNccVarianceFloor = 1e-5;

// 1 - mean local correlation over cubic windows of side `window` (truncated
// at the borders). Range [0, 2].
double ncc_loss(const Volume3& a, const Volume3& b, int window);
// d ncc_loss / d b.
Volume3 ncc_loss_gradient(const Volume3& a, const Volume3& b, int window);

double mse_loss(const Volume3& a, const Volume3& b);
Volume3 mse_loss_gradient(const Volume3& a, const Volume3& b);

// Sum of squared forward differences of every component along every axis,
// divided by the voxel count.
double smoothness_loss(const DisplacementField& phi);
DisplacementField smoothness_loss_gradient(const DisplacementField& phi);

struct LossBreakdown {
  double ncc = 0.0;  // hop-weighted raw terms
  double mse = 0.0;
  double reg = 0.0;
  double similarity = 0.0;      // ncc + beta * mse
  double regularization = 0.0;  // lambda * reg
  double total = 0.0;
};

LossBreakdown total_loss(const Volume3& reference, const HopTrace& trace, const LossWeights& weights);

}  // namespace vcor
