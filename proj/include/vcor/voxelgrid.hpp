#pragma once

// Regular-grid volumes and displacement fields, trilinear sampling, the
// spatial-transformer warp (with its adjoint), and Jacobian analysis.
//
// Conventions used throughout the library:
//   * voxel (i, j, k) lives at continuous coordinate (i, j, k); axis 0 is the
//     fastest-varying index in memory;
//   * displacements are stored in voxel units, T(x) = x + u(x);
//   * samples outside the grid are clamped to the nearest edge voxel.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vcor/errors.hpp"

namespace vcor {

using Index = std::ptrdiff_t;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Grid3 {
  std::array<int, 3> dims{2, 2, 2};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  Index size() const { return Index(dims[0]) * dims[1] * dims[2]; }

  Index index(int i, int j, int k) const {
    return Index(i) + Index(dims[0]) * (Index(j) + Index(dims[1]) * k);
  }

  std::array<int, 3> coords(Index idx) const {
    const int i = int(idx % dims[0]);
    const Index rest = idx / dims[0];
    return {i, int(rest % dims[1]), int(rest / dims[1])};
  }

  bool contains(const Vec3& p) const {
    for (int a = 0; a < 3; ++a) {
      if (!(p[a] >= 0.0 && p[a] <= dims[a] - 1)) return false;
    }
    return true;
  }

  // Throws InputError unless dims >= 2 and spacing finite and positive.
  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 2) throw InputError("grid dimension " + std::to_string(a) + " must be >= 2");
      if (!std::isfinite(spacing[a]) || spacing[a] <= 0.0)
        throw InputError("grid spacing must be finite and positive");
    }
  }

  bool operator==(const Grid3&) const = default;
};

template <typename Scalar>
struct VolumeT {
  using Values = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Grid3 grid;
  Values values;

  VolumeT() = default;
  explicit VolumeT(const Grid3& g, Scalar fill = Scalar(0)) : grid(g), values(Values::Constant(g.size(), fill)) {}

  Scalar& operator()(int i, int j, int k) { return values[grid.index(i, j, k)]; }
  Scalar operator()(int i, int j, int k) const { return values[grid.index(i, j, k)]; }
};

template <typename Scalar>
struct DisplacementFieldT {
  using Vectors = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

  Grid3 grid;
  Vectors vectors;  // one column per voxel

  DisplacementFieldT() = default;
  explicit DisplacementFieldT(const Grid3& g) : grid(g), vectors(Vectors::Zero(3, g.size())) {}

  auto operator()(int i, int j, int k) { return vectors.col(grid.index(i, j, k)); }
  auto operator()(int i, int j, int k) const { return vectors.col(grid.index(i, j, k)); }
};

using Volume3 = VolumeT<double>;
using DisplacementField = DisplacementFieldT<double>;
using BinaryMask = VolumeT<std::uint8_t>;

struct LandmarkSet {
  std::vector<Vec3> points;
  std::vector<std::string> labels;  // empty, or one per point

  std::size_t size() const { return points.size(); }

  void validate() const {
    if (points.empty()) throw InputError("landmark set is empty");
    if (!labels.empty() && labels.size() != points.size())
      throw InputError("landmark labels do not match point count");
    for (const auto& p : points)
      if (!p.allFinite()) throw InputError("landmark coordinate is not finite");
  }
};

namespace detail {

// Linear interpolation cell along one axis with clamp-to-edge semantics.
// `inside` is false when the coordinate was clamped, in which case the
// derivative along this axis is zero.
struct AxisCell {
  int lo = 0;
  int hi = 0;
  double t = 0.0;
  bool inside = true;
};

inline AxisCell axis_cell(double p, int n) {
  AxisCell c;
  if (n == 1) {
    c.inside = false;
    return c;
  }
  if (p < 0.0) {
    c.lo = 0, c.hi = 1, c.t = 0.0, c.inside = false;
  } else if (p >= n - 1) {
    c.lo = n - 2, c.hi = n - 1, c.t = 1.0, c.inside = p <= n - 1;
  } else {
    c.lo = int(std::floor(p));
    c.hi = c.lo + 1;
    c.t = p - c.lo;
  }
  return c;
}

inline double lerp(double a, double b, double t) {
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  return (1.0 - t) * a + t * b;
}

struct Stencil {
  std::array<Index, 8> idx;  // corner (bx, by, bz) at bx + 2*by + 4*bz
  AxisCell ax[3];
};

inline Stencil stencil(const Grid3& g, const Vec3& p) {
  Stencil s;
  for (int a = 0; a < 3; ++a) s.ax[a] = axis_cell(p[a], g.dims[a]);
  for (int c = 0; c < 8; ++c) {
    const int i = (c & 1) ? s.ax[0].hi : s.ax[0].lo;
    const int j = (c & 2) ? s.ax[1].hi : s.ax[1].lo;
    const int k = (c & 4) ? s.ax[2].hi : s.ax[2].lo;
    s.idx[c] = g.index(i, j, k);
  }
  return s;
}

// Corner weights in the same order as Stencil::idx.
inline std::array<double, 8> weights(const Stencil& s) {
  std::array<double, 8> w;
  const double tx = s.ax[0].t, ty = s.ax[1].t, tz = s.ax[2].t;
  for (int c = 0; c < 8; ++c) {
    w[c] = ((c & 1) ? tx : 1.0 - tx) * ((c & 2) ? ty : 1.0 - ty) * ((c & 4) ? tz : 1.0 - tz);
  }
  return w;
}

template <typename Getter>
double interpolate(const Stencil& s, Getter&& get) {
  const double tx = s.ax[0].t, ty = s.ax[1].t, tz = s.ax[2].t;
  const double x00 = lerp(get(s.idx[0]), get(s.idx[1]), tx);
  const double x10 = lerp(get(s.idx[2]), get(s.idx[3]), tx);
  const double x01 = lerp(get(s.idx[4]), get(s.idx[5]), tx);
  const double x11 = lerp(get(s.idx[6]), get(s.idx[7]), tx);
  return lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz);
}

// Gradient of the trilinear interpolant with respect to the sample point.
template <typename Getter>
Vec3 interpolate_gradient(const Stencil& s, Getter&& get) {
  std::array<double, 8> v;
  for (int c = 0; c < 8; ++c) v[c] = get(s.idx[c]);
  const double tx = s.ax[0].t, ty = s.ax[1].t, tz = s.ax[2].t;
  Vec3 g = Vec3::Zero();
  if (s.ax[0].inside) {
    g[0] = (1 - ty) * (1 - tz) * (v[1] - v[0]) + ty * (1 - tz) * (v[3] - v[2]) + (1 - ty) * tz * (v[5] - v[4]) +
           ty * tz * (v[7] - v[6]);
  }
  if (s.ax[1].inside) {
    g[1] = (1 - tx) * (1 - tz) * (v[2] - v[0]) + tx * (1 - tz) * (v[3] - v[1]) + (1 - tx) * tz * (v[6] - v[4]) +
           tx * tz * (v[7] - v[5]);
  }
  if (s.ax[2].inside) {
    g[2] = (1 - tx) * (1 - ty) * (v[4] - v[0]) + tx * (1 - ty) * (v[5] - v[1]) + (1 - tx) * ty * (v[6] - v[2]) +
           tx * ty * (v[7] - v[3]);
  }
  return g;
}

inline void require_finite(const Vec3& p) {
  if (!p.allFinite()) throw InputError("sample point is not finite");
}

inline Vec3 voxel_position(const Grid3& g, Index idx) {
  const auto c = g.coords(idx);
  return Vec3(c[0], c[1], c[2]);
}

}  // namespace detail

template <typename Scalar>
double trilinear_sample(const VolumeT<Scalar>& vol, const Vec3& point) {
  detail::require_finite(point);
  const auto s = detail::stencil(vol.grid, point);
  return detail::interpolate(s, [&](Index i) { return double(vol.values[i]); });
}

template <typename Scalar>
Vec3 sample_displacement(const DisplacementFieldT<Scalar>& dvf, const Vec3& point) {
  detail::require_finite(point);
  const auto s = detail::stencil(dvf.grid, point);
  Vec3 out;
  for (int c = 0; c < 3; ++c) out[c] = detail::interpolate(s, [&](Index i) { return double(dvf.vectors(c, i)); });
  return out;
}

// output(x) = vol(x + u(x)).
template <typename Scalar>
VolumeT<Scalar> warp(const VolumeT<Scalar>& vol, const DisplacementFieldT<Scalar>& dvf) {
  if (!(vol.grid == dvf.grid)) throw ShapeError("warp: volume and displacement grids differ");
  VolumeT<Scalar> out(vol.grid);
  const Index n = vol.grid.size();
  for (Index v = 0; v < n; ++v) {
    const Vec3 p = detail::voxel_position(vol.grid, v) + dvf.vectors.col(v).template cast<double>();
    detail::require_finite(p);
    const auto s = detail::stencil(vol.grid, p);
    out.values[v] = Scalar(detail::interpolate(s, [&](Index i) { return double(vol.values[i]); }));
  }
  return out;
}

// Adjoint of warp with respect to the displacement: given dL/d(output),
// returns dL/du.
template <typename Scalar>
DisplacementFieldT<Scalar> warp_displacement_adjoint(const VolumeT<Scalar>& vol, const DisplacementFieldT<Scalar>& dvf,
                                                     const VolumeT<Scalar>& grad_out) {
  if (!(vol.grid == dvf.grid) || !(vol.grid == grad_out.grid))
    throw ShapeError("warp adjoint: grids differ");
  DisplacementFieldT<Scalar> grad(vol.grid);
  const Index n = vol.grid.size();
  for (Index v = 0; v < n; ++v) {
    if (grad_out.values[v] == Scalar(0)) continue;
    const Vec3 p = detail::voxel_position(vol.grid, v) + dvf.vectors.col(v).template cast<double>();
    detail::require_finite(p);
    const auto s = detail::stencil(vol.grid, p);
    const Vec3 g = detail::interpolate_gradient(s, [&](Index i) { return double(vol.values[i]); });
    grad.vectors.col(v) = (double(grad_out.values[v]) * g).template cast<Scalar>();
  }
  return grad;
}

// Per-voxel det(I + grad u); central differences inside, one-sided on faces.
template <typename Scalar>
VolumeT<Scalar> jacobian_map(const DisplacementFieldT<Scalar>& dvf) {
  const auto& g = dvf.grid;
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 3) throw InputError("jacobian_map requires every dimension >= 3");
  VolumeT<Scalar> out(g);
  const std::array<Index, 3> stride{1, Index(g.dims[0]), Index(g.dims[0]) * g.dims[1]};
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::array<int, 3> c{i, j, k};
        const Index v = g.index(i, j, k);
        Mat3 jac = Mat3::Identity();
        for (int a = 0; a < 3; ++a) {
          Index lo = v, hi = v;
          double h = 2.0;
          if (c[a] == 0) {
            hi = v + stride[a], h = 1.0;
          } else if (c[a] == g.dims[a] - 1) {
            lo = v - stride[a], h = 1.0;
          } else {
            lo = v - stride[a], hi = v + stride[a];
          }
          for (int comp = 0; comp < 3; ++comp)
            jac(comp, a) += (double(dvf.vectors(comp, hi)) - double(dvf.vectors(comp, lo))) / h;
        }
        out.values[v] = Scalar(jac.determinant());
      }
  return out;
}

// Fraction (not percent) of voxels whose determinant is negative.
template <typename Scalar>
double percent_negative_jacobian(const VolumeT<Scalar>& jac) {
  if (jac.values.size() == 0) return 0.0;
  Index neg = 0;
  for (Index v = 0; v < jac.values.size(); ++v) neg += jac.values[v] < Scalar(0);
  return double(neg) / double(jac.values.size());
}

namespace detail {

// Low-resolution sampling position of a target voxel (cell-centre alignment).
inline Vec3 upsample_position(const Grid3& low, const Grid3& target, Index v) {
  const auto c = target.coords(v);
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = (c[a] + 0.5) * double(low.dims[a]) / double(target.dims[a]) - 0.5;
  return p;
}

inline Vec3 upsample_ratio(const Grid3& low, const Grid3& target) {
  return Vec3(double(target.dims[0]) / low.dims[0], double(target.dims[1]) / low.dims[1],
              double(target.dims[2]) / low.dims[2]);
}

inline void check_upsample(const Grid3& low, const Grid3& target) {
  target.validate();
  for (int a = 0; a < 3; ++a) {
    if (low.dims[a] < 1) throw InputError("upsample: low-resolution grid is empty");
    if (target.dims[a] < low.dims[a]) throw InputError("upsample: target grid is smaller than the source grid");
  }
}

}  // namespace detail

// Trilinear upsampling of each component, rescaled so vectors are expressed
// in target-grid voxels.
template <typename Scalar>
DisplacementFieldT<Scalar> upsample_displacement(const DisplacementFieldT<Scalar>& low, const Grid3& target) {
  detail::check_upsample(low.grid, target);
  if (low.grid.dims == target.dims) {
    DisplacementFieldT<Scalar> out = low;
    out.grid = target;
    return out;
  }
  const Vec3 ratio = detail::upsample_ratio(low.grid, target);
  DisplacementFieldT<Scalar> out(target);
  for (Index v = 0; v < target.size(); ++v) {
    const auto s = detail::stencil(low.grid, detail::upsample_position(low.grid, target, v));
    for (int c = 0; c < 3; ++c) {
      out.vectors(c, v) =
          Scalar(ratio[c] * detail::interpolate(s, [&](Index i) { return double(low.vectors(c, i)); }));
    }
  }
  return out;
}

// Adjoint of upsample_displacement: scatters a target-grid gradient back
// onto the low-resolution grid.
template <typename Scalar>
DisplacementFieldT<Scalar> upsample_displacement_adjoint(const Grid3& low, const DisplacementFieldT<Scalar>& grad) {
  detail::check_upsample(low, grad.grid);
  if (low.dims == grad.grid.dims) {
    DisplacementFieldT<Scalar> out = grad;
    out.grid = low;
    return out;
  }
  const Vec3 ratio = detail::upsample_ratio(low, grad.grid);
  DisplacementFieldT<Scalar> out(low);
  for (Index v = 0; v < grad.grid.size(); ++v) {
    const auto s = detail::stencil(low, detail::upsample_position(low, grad.grid, v));
    const auto w = detail::weights(s);
    for (int corner = 0; corner < 8; ++corner) {
      if (w[corner] == 0.0) continue;
      for (int c = 0; c < 3; ++c) out.vectors(c, s.idx[corner]) += Scalar(ratio[c] * w[corner] * grad.vectors(c, v));
    }
  }
  return out;
}

}  // namespace vcor
