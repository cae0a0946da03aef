#pragma once

// Synthetic reference/source pairs with known ground-truth deformations.

#include <cstdint>
#include <utility>
#include <vector>

#include "vcor/voxelgrid.hpp"

namespace vcor {

struct PhantomCase {
  Volume3 reference;
  Volume3 source;              // warp(reference, gt_field)
  DisplacementField gt_field;  // fold-free, ||grad u||_inf < 0.5
  LandmarkSet landmarks_ref;
  LandmarkSet landmarks_src;   // T_gt(p_src) = p_ref
  BinaryMask mask_ref;
  BinaryMask mask_src;
  std::uint64_t seed = 0;
};

// Upper bound on the infinity-norm Lipschitz constant of the field: the larger
// of the central-difference Jacobian norm and the per-cell forward-difference
// bound of the trilinear interpolant.
double displacement_lipschitz_bound(const DisplacementField& u);

// Gaussian-smoothed white noise, scaled to `amplitude` voxels (max abs
// component) and then shrunk, if needed, until the Lipschitz bound is <= 0.45.
DisplacementField generate_smooth_field(const Grid3& grid, double amplitude, double smoothness, std::uint64_t seed);

// Soft-edged nested ellipsoids with branching tubes, normalised to [0, 1].
// The mask marks the outer body ellipsoid.
std::pair<Volume3, BinaryMask> synth_anatomy(const Grid3& grid, std::uint64_t seed);

PhantomCase make_case(const Grid3& grid, double amplitude, double smoothness, int n_landmarks, std::uint64_t seed);

struct CohortConfig {
  int cases = 10;
  Grid3 grid{{24, 24, 24}, {1.0, 1.0, 1.0}};
  std::vector<double> amplitudes{2.0, 3.0};  // cycled over cases
  double smoothness = 6.0;
  int landmarks = 50;
  std::uint64_t seed = 0;
};

std::uint64_t case_seed(std::uint64_t cohort_seed, int case_index);

// Case `index` of the cohort; make_cohort is this for every index in order.
PhantomCase make_cohort_case(const CohortConfig& config, int index);
std::vector<PhantomCase> make_cohort(const CohortConfig& config);

}  // namespace vcor
