#pragma once

// Shared fixtures and brute-force oracles for the unit tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "vcor/voxelgrid.hpp"

namespace vcor::test {

inline Grid3 cube(int n, double spacing = 1.0) { return Grid3{{n, n, n}, {spacing, spacing, spacing}}; }

inline Volume3 random_volume(const Grid3& g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Volume3 v(g);
  for (Index i = 0; i < g.size(); ++i) v.values[i] = u(rng);
  return v;
}

inline DisplacementField random_field(const Grid3& g, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  DisplacementField f(g);
  for (Index i = 0; i < f.vectors.size(); ++i) f.vectors.data()[i] = u(rng);
  return f;
}

// Smooth field from a few low-frequency sinusoids.
inline DisplacementField smooth_field(const Grid3& g, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  DisplacementField f(g);
  std::array<std::array<double, 3>, 3> ph{};
  for (auto& row : ph)
    for (auto& p : row) p = phase(rng);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i)
        for (int c = 0; c < 3; ++c)
          f(i, j, k)[c] = amplitude * std::sin(0.31 * i + ph[c][0]) * std::cos(0.27 * j + ph[c][1]) *
                          std::sin(0.23 * k + ph[c][2]);
  return f;
}

// Clamp-to-edge trilinear interpolation written out corner by corner.
template <typename Get>
double corner_sum(const Grid3& g, Vec3 p, Get&& get) {
  int base[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double x = std::clamp(p[a], 0.0, double(g.dims[a] - 1));
    base[a] = std::min(int(std::floor(x)), g.dims[a] - 2);
    t[a] = x - base[a];
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
        acc += w * get(base[0] + dx, base[1] + dy, base[2] + dz);
      }
  return acc;
}

inline double oracle_sample(const Volume3& v, const Vec3& p) {
  return corner_sum(v.grid, p, [&](int i, int j, int k) { return v(i, j, k); });
}

inline Vec3 oracle_displacement(const DisplacementField& f, const Vec3& p) {
  Vec3 out;
  for (int c = 0; c < 3; ++c) out[c] = corner_sum(f.grid, p, [&](int i, int j, int k) { return f(i, j, k)[c]; });
  return out;
}

// Per-voxel brute-force warp through oracle_sample.
inline Volume3 oracle_warp(const Volume3& v, const DisplacementField& f) {
  Volume3 out(v.grid);
  for (int k = 0; k < v.grid.dims[2]; ++k)
    for (int j = 0; j < v.grid.dims[1]; ++j)
      for (int i = 0; i < v.grid.dims[0]; ++i) out(i, j, k) = oracle_sample(v, Vec3(i, j, k) + f(i, j, k));
  return out;
}

// Forward-difference smoothness written as nested loops.
inline double oracle_smoothness(const DisplacementField& f) {
  const auto& d = f.grid.dims;
  double sum = 0.0;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        for (int c = 0; c < 3; ++c) {
          if (i + 1 < d[0]) sum += std::pow(f(i + 1, j, k)[c] - f(i, j, k)[c], 2);
          if (j + 1 < d[1]) sum += std::pow(f(i, j + 1, k)[c] - f(i, j, k)[c], 2);
          if (k + 1 < d[2]) sum += std::pow(f(i, j, k + 1)[c] - f(i, j, k)[c], 2);
        }
  return sum / double(f.grid.size());
}

// Mean millimetre distance between p + f(p) and q over landmark pairs.
inline double oracle_tre(const std::vector<Vec3>& p, const std::vector<Vec3>& q, const DisplacementField& f) {
  double sum = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const Vec3 r = p[n] + oracle_displacement(f, p[n]) - q[n];
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) d2 += std::pow(r[a] * f.grid.spacing[a], 2);
    sum += std::sqrt(d2);
  }
  return sum / double(p.size());
}

// Local correlation loss evaluated window by window.
inline double oracle_ncc_loss(const Volume3& a, const Volume3& b, int window, double floor = 1e-5) {
  const auto& d = a.grid.dims;
  const int r = window / 2;
  double total = 0.0;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        double n = 0, sa = 0, sb = 0;
        for (int z = std::max(0, k - r); z <= std::min(d[2] - 1, k + r); ++z)
          for (int y = std::max(0, j - r); y <= std::min(d[1] - 1, j + r); ++y)
            for (int x = std::max(0, i - r); x <= std::min(d[0] - 1, i + r); ++x) {
              n += 1, sa += a(x, y, z), sb += b(x, y, z);
            }
        const double ma = sa / n, mb = sb / n;
        double vaa = 0, vbb = 0, vab = 0;
        for (int z = std::max(0, k - r); z <= std::min(d[2] - 1, k + r); ++z)
          for (int y = std::max(0, j - r); y <= std::min(d[1] - 1, j + r); ++y)
            for (int x = std::max(0, i - r); x <= std::min(d[0] - 1, i + r); ++x) {
              const double da = a(x, y, z) - ma, db = b(x, y, z) - mb;
              vaa += da * da, vbb += db * db, vab += da * db;
            }
        total += (vab / n) / std::sqrt(std::max(vaa / n, floor) * std::max(vbb / n, floor));
      }
  return 1.0 - total / double(a.grid.size());
}

}  // namespace vcor::test
