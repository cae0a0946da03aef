#pragma once

// Plot data and 8-bit raster output: mid-plane slices as binary PGM, Jacobian
// determinant slices as binary PPM.
//
// Jacobian colormap (det = d):
//   d < 0              (0, 0, 255)                      folding
//   0 <= d < 0.9       (0, 255 t, 255 (1 - t)), t = d / 0.9
//   |d - 1| <= 0.1     (0, 255, 0)                      near volume-preserving
//   d > 1.1            (255 t, 255 (1 - t), 0), t = min((d - 1.1) / 0.9, 1)
// Channel values are rounded to nearest.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vcor/reliability.hpp"
#include "vcor/voxelgrid.hpp"

namespace vcor {

enum class Plane { Axial, Coronal, Sagittal };

std::string plane_name(Plane p);

// Image rows run along the first in-plane axis' partner: axial is (x, y) at
// z = nz/2, coronal (x, z) at y = ny/2, sagittal (y, z) at x = nx/2. Row 0 is
// the lowest second-axis index.
struct Slice {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, width fastest
};

Slice extract_slice(const Volume3& vol, Plane plane);

// Binary PGM (P5) mapping [lo, hi] linearly onto 0..255 with clamping.
std::string encode_pgm(const Slice& s, double lo = 0.0, double hi = 1.0);

std::array<std::uint8_t, 3> jacobian_color(double det);

// Binary PPM (P6) of a determinant slice under the colormap above.
std::string encode_jacobian_ppm(const Slice& s);

struct SchemeSeries {
  WeightScheme::Mode mode;
  ReliabilitySeries series;
};

// hop,scheme,similarity,confidence,uncertainty
std::string series_csv(const std::vector<SchemeSeries>& series);

}  // namespace vcor
