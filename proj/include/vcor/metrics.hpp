#pragma once

// Registration quality metrics: TRE, DSC, global NCC, MSE, normalised mutual
// information and folding percentage.

#include <array>
#include <limits>

#include "vcor/phantom.hpp"
#include "vcor/voxelgrid.hpp"

namespace vcor {

// One row of the per-hop report. Unavailable entries are NaN.
struct HopMetrics {
  static constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

  int hop = 0;
  double tre_mean_mm = kMissing;
  double tre_std_mm = kMissing;
  double dsc = kMissing;
  double ncc = kMissing;
  double mse = kMissing;
  double mi = kMissing;
  double pct_neg_jac = kMissing;  // percent, [0, 100]
  double uncertainty = kMissing;  // ensemble field variance, when computed
};

struct TreResult {
  double mean_mm = 0.0;
  double std_mm = 0.0;  // population standard deviation
};

// Mean and SD over i of ||p_i + phi(p_i) - q_i|| in millimetres, with phi
// sampled trilinearly at p_i. `points` must live on phi's grid: under the
// warp convention output(x) = source(x + phi(x)), these are the reference
// landmarks and `targets` the corresponding source landmarks.
TreResult tre(const LandmarkSet& points, const LandmarkSet& targets, const DisplacementField& phi,
              const std::array<double, 3>& spacing);

double dsc(const BinaryMask& a, const BinaryMask& b);

// Pearson correlation over all voxels. Throws InputError if both volumes are
// constant; returns 0 if only one is.
double global_ncc(const Volume3& a, const Volume3& b);

// (H(A) + H(B)) / H(A, B) with `bins` equal-width bins over [0, 1] after
// clamping; natural logarithms.
double normalized_mi(const Volume3& a, const Volume3& b, int bins = 32);

BinaryMask threshold_mask(const Volume3& v, double level = 0.5);
Volume3 mask_to_volume(const BinaryMask& m);

struct EvalOptions {
  int mi_bins = 32;
};

// Full metric battery for one hop: TRE at the reference landmarks, DSC of
// the warped source mask against the reference mask, and image metrics of
// `warped` against the reference.
HopMetrics evaluate_hop(const PhantomCase& pc, int hop, const DisplacementField& phi, const Volume3& warped,
                        const EvalOptions& opts = {});

// Metrics of the unregistered pair (zero field).
HopMetrics evaluate_baseline(const PhantomCase& pc, const EvalOptions& opts = {});

}  // namespace vcor
