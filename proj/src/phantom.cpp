#include "vcor/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vcor {
namespace {

constexpr double kLipschitzTarget = 0.45;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream)};
  return std::mt19937_64(seq);
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& x : k) x /= sum;
  return k;
}

// Blur of a grid padded by the kernel radius on every side, evaluated only on
// the interior. Shrinks one axis per pass; no border handling is needed.
Eigen::VectorXd blur_interior(const Grid3& padded, const Eigen::VectorXd& in, const std::vector<double>& kernel) {
  const int radius = int(kernel.size() / 2);
  std::array<int, 3> dims = padded.dims;
  Eigen::VectorXd cur = in;
  for (int axis = 0; axis < 3; ++axis) {
    std::array<int, 3> out_dims = dims;
    out_dims[axis] -= 2 * radius;
    Eigen::VectorXd next(Index(out_dims[0]) * out_dims[1] * out_dims[2]);
    const Index stride = axis == 0 ? 1 : axis == 1 ? dims[0] : Index(dims[0]) * dims[1];
    Index o = 0;
    for (int k = 0; k < out_dims[2]; ++k)
      for (int j = 0; j < out_dims[1]; ++j)
        for (int i = 0; i < out_dims[0]; ++i) {
          const Index first = i + Index(dims[0]) * (j + Index(dims[1]) * k);
          double acc = 0.0;
          for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * cur[first + Index(t) * stride];
          next[o++] = acc;
        }
    cur = std::move(next);
    dims = out_dims;
  }
  return cur;
}

double logistic_edge(double signed_distance, double width) { return 1.0 / (1.0 + std::exp(signed_distance / width)); }

struct Ellipsoid {
  Vec3 centre;
  Vec3 radii;
  double intensity;

  double signed_distance(const Vec3& p) const {
    const double r = ((p - centre).array() / radii.array()).matrix().norm();
    return (r - 1.0) * radii.minCoeff();
  }
};

struct Tube {
  Vec3 a;
  Vec3 b;
  double radius;
  double intensity;

  double signed_distance(const Vec3& p) const {
    const Vec3 ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (p - (a + t * ab)).norm() - radius;
  }
};

}  // namespace

double displacement_lipschitz_bound(const DisplacementField& u) {
  const auto& g = u.grid;
  double bound = 0.0;
  if (g.dims[0] >= 3 && g.dims[1] >= 3 && g.dims[2] >= 3) {
    // Central-difference Jacobian (the scheme used by jacobian_map).
    const std::array<Index, 3> stride{1, Index(g.dims[0]), Index(g.dims[0]) * g.dims[1]};
    for (Index v = 0; v < g.size(); ++v) {
      const auto c = g.coords(v);
      Mat3 jac;
      for (int a = 0; a < 3; ++a) {
        Index lo = v, hi = v;
        double h = 2.0;
        if (c[a] == 0) hi = v + stride[a], h = 1.0;
        else if (c[a] == g.dims[a] - 1) lo = v - stride[a], h = 1.0;
        else lo = v - stride[a], hi = v + stride[a];
        jac.col(a) = (u.vectors.col(hi) - u.vectors.col(lo)) / h;
      }
      bound = std::max(bound, jac.cwiseAbs().rowwise().sum().maxCoeff());
    }
  }
  // Forward differences bound the trilinear interpolant inside each cell.
  for (int k = 0; k + 1 < g.dims[2]; ++k)
    for (int j = 0; j + 1 < g.dims[1]; ++j)
      for (int i = 0; i + 1 < g.dims[0]; ++i) {
        Mat3 cell = Mat3::Zero();
        for (int corner = 0; corner < 4; ++corner) {
          const int b0 = corner & 1, b1 = (corner >> 1) & 1;
          const std::array<std::array<int, 3>, 3> bases{{{i, j + b0, k + b1}, {i + b0, j, k + b1}, {i + b0, j + b1, k}}};
          for (int a = 0; a < 3; ++a) {
            auto lo = bases[a];
            auto hi = lo;
            hi[a] += 1;
            const Vec3 d = u.vectors.col(g.index(hi[0], hi[1], hi[2])) - u.vectors.col(g.index(lo[0], lo[1], lo[2]));
            cell.col(a) = cell.col(a).cwiseMax(d.cwiseAbs());
          }
        }
        bound = std::max(bound, cell.rowwise().sum().maxCoeff());
      }
  return bound;
}

DisplacementField generate_smooth_field(const Grid3& grid, double amplitude, double smoothness, std::uint64_t seed) {
  grid.validate();
  if (!(amplitude >= 0.0)) throw InputError("amplitude must be >= 0");
  if (!(smoothness > 0.0)) throw InputError("smoothness must be > 0");
  DisplacementField field(grid);
  if (amplitude == 0.0) return field;

  auto rng = make_rng(seed, 0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto kernel = gaussian_kernel(smoothness);
  // Noise is drawn on a grid padded by the kernel radius and cropped after
  // blurring, so the field is statistically uniform up to the borders.
  const int pad = int(kernel.size() / 2);
  Grid3 padded = grid;
  for (int a = 0; a < 3; ++a) padded.dims[a] += 2 * pad;
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd noise(padded.size());
    for (Index v = 0; v < padded.size(); ++v) noise[v] = normal(rng);
    field.vectors.row(c) = blur_interior(padded, noise, kernel).transpose();
  }
  const double peak = field.vectors.cwiseAbs().maxCoeff();
  if (peak > 0.0) field.vectors *= amplitude / peak;
  const double lip = displacement_lipschitz_bound(field);
  if (lip > kLipschitzTarget) field.vectors *= kLipschitzTarget / lip;
  return field;
}

std::pair<Volume3, BinaryMask> synth_anatomy(const Grid3& grid, std::uint64_t seed) {
  grid.validate();
  for (int a = 0; a < 3; ++a)
    if (grid.dims[a] < 16) throw InputError("synth_anatomy requires every dimension >= 16");

  auto rng = make_rng(seed, 0xa7a7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const Vec3 n(grid.dims[0], grid.dims[1], grid.dims[2]);
  const Vec3 centre = (n.array() - 1.0).matrix() / 2.0 + Vec3(range(-1, 1), range(-1, 1), range(-1, 1));
  const double edge = 0.6;

  Ellipsoid body{centre, Vec3(range(0.36, 0.42) * n[0], range(0.36, 0.42) * n[1], range(0.36, 0.42) * n[2]), 0.35};

  std::vector<Ellipsoid> inner;
  std::vector<Tube> tubes;
  for (int side : {-1, 1}) {
    const Vec3 lung_centre = centre + Vec3(side * range(0.16, 0.2) * n[0], range(-0.03, 0.03) * n[1], 0.0);
    const Vec3 lung_radii(range(0.12, 0.15) * n[0], range(0.22, 0.27) * n[1], range(0.25, 0.3) * n[2]);
    inner.push_back({lung_centre, lung_radii, 0.08});

    // Branching airway/vessel tree inside each lobe.
    const Vec3 top = lung_centre + Vec3(0.0, 0.0, 0.8 * lung_radii[2]);
    const Vec3 fork = lung_centre + Vec3(range(-0.2, 0.2) * lung_radii[0], range(-0.2, 0.2) * lung_radii[1], 0.0);
    const double r = range(0.9, 1.3);
    tubes.push_back({top, fork, r, 0.6});
    for (int b = 0; b < 3; ++b) {
      const Vec3 dir(range(-0.7, 0.7), range(-0.9, 0.9), -range(0.3, 0.9));
      const Vec3 end = fork + (dir.array() * lung_radii.array()).matrix();
      tubes.push_back({fork, end, 0.75 * r, 0.6});
    }
  }
  inner.push_back({centre + Vec3(range(-0.05, 0.05) * n[0], -range(0.15, 0.2) * n[1], range(-0.1, 0.1) * n[2]),
                   Vec3(range(0.07, 0.1) * n[0], range(0.07, 0.1) * n[1], range(0.1, 0.14) * n[2]), 0.75});

  std::normal_distribution<double> noise(0.0, 0.01);
  Volume3 vol(grid);
  BinaryMask mask(grid);
  for (Index v = 0; v < grid.size(); ++v) {
    const Vec3 p = detail::voxel_position(grid, v);
    const double body_d = body.signed_distance(p);
    double value = body.intensity * logistic_edge(body_d, edge);
    for (const auto& e : inner) {
      const double s = logistic_edge(e.signed_distance(p), edge);
      value = value * (1.0 - s) + e.intensity * s;
    }
    for (const auto& t : tubes) {
      const double s = logistic_edge(t.signed_distance(p), 0.5 * edge);
      value = value * (1.0 - s) + t.intensity * s;
    }
    vol.values[v] = value + noise(rng);
    mask.values[v] = body_d < 0.0 ? 1 : 0;
  }
  const double lo = vol.values.minCoeff();
  const double hi = vol.values.maxCoeff();
  vol.values = (vol.values.array() - lo) / (hi - lo);
  return {std::move(vol), std::move(mask)};
}

PhantomCase make_case(const Grid3& grid, double amplitude, double smoothness, int n_landmarks, std::uint64_t seed) {
  if (n_landmarks < 1) throw InputError("n_landmarks must be >= 1");
  PhantomCase pc;
  pc.seed = seed;
  std::tie(pc.reference, pc.mask_ref) = synth_anatomy(grid, seed);
  pc.gt_field = generate_smooth_field(grid, amplitude, smoothness, seed ^ 0x9e3779b97f4a7c15ULL);
  pc.source = warp(pc.reference, pc.gt_field);

  Volume3 mask_d(grid);
  mask_d.values = pc.mask_ref.values.cast<double>();
  const Volume3 mask_w = warp(mask_d, pc.gt_field);
  pc.mask_src = BinaryMask(grid);
  for (Index v = 0; v < grid.size(); ++v) pc.mask_src.values[v] = mask_w.values[v] >= 0.5 ? 1 : 0;

  // Candidate landmarks: masked, high-gradient voxels away from the border.
  const int margin = 2;
  std::vector<std::pair<double, Index>> candidates;
  for (int k = margin; k < grid.dims[2] - margin; ++k)
    for (int j = margin; j < grid.dims[1] - margin; ++j)
      for (int i = margin; i < grid.dims[0] - margin; ++i) {
        const Index v = grid.index(i, j, k);
        if (!pc.mask_ref.values[v]) continue;
        const Vec3 grad(pc.reference(i + 1, j, k) - pc.reference(i - 1, j, k),
                        pc.reference(i, j + 1, k) - pc.reference(i, j - 1, k),
                        pc.reference(i, j, k + 1) - pc.reference(i, j, k - 1));
        candidates.emplace_back(grad.norm(), v);
      }
  if (candidates.empty()) throw InputError("no landmark candidates inside the mask");
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  // Keep the top 40% by gradient magnitude (more if the mask is tiny).
  candidates.resize(std::min(candidates.size(), std::max<std::size_t>(candidates.size() * 2 / 5, n_landmarks)));

  auto rng = make_rng(seed, 0x1a1a);
  std::shuffle(candidates.begin(), candidates.end(), rng);

  for (const auto& [grad, v] : candidates) {
    if (int(pc.landmarks_ref.size()) == n_landmarks) break;
    const Vec3 p_ref = detail::voxel_position(grid, v);
    Vec3 p = p_ref;
    bool converged = false;
    for (int it = 0; it < 50; ++it) {
      p = p_ref - sample_displacement(pc.gt_field, p);
      if ((p + sample_displacement(pc.gt_field, p) - p_ref).norm() < 1e-6) {
        converged = true;
        break;
      }
    }
    if (!converged) throw NumericalError("landmark inversion did not converge");
    bool inside = true;
    for (int a = 0; a < 3; ++a) inside = inside && p[a] > 0.0 && p[a] < grid.dims[a] - 1;
    if (!inside) continue;
    pc.landmarks_ref.points.push_back(p_ref);
    pc.landmarks_src.points.push_back(p);
  }
  if (int(pc.landmarks_ref.size()) < n_landmarks) throw InputError("not enough landmark candidates inside the mask");
  for (int i = 0; i < n_landmarks; ++i) {
    pc.landmarks_ref.labels.push_back(std::to_string(i));
    pc.landmarks_src.labels.push_back(std::to_string(i));
  }
  return pc;
}

std::uint64_t case_seed(std::uint64_t cohort_seed, int case_index) {
  return cohort_seed * 1000003ULL + std::uint64_t(case_index) * 7919ULL + 1ULL;
}

PhantomCase make_cohort_case(const CohortConfig& config, int index) {
  if (config.amplitudes.empty()) throw InputError("cohort needs at least one amplitude");
  if (index < 0 || index >= config.cases) throw InputError("case index out of range");
  const double amp = config.amplitudes[index % config.amplitudes.size()];
  return make_case(config.grid, amp, config.smoothness, config.landmarks, case_seed(config.seed, index));
}

std::vector<PhantomCase> make_cohort(const CohortConfig& config) {
  if (config.cases < 1) throw InputError("cohort needs at least one case");
  std::vector<PhantomCase> cohort;
  cohort.reserve(config.cases);
  for (int i = 0; i < config.cases; ++i) cohort.push_back(make_cohort_case(config, i));
  return cohort;
}

}  // namespace vcor
