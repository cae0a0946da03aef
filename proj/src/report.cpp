#include "vcor/report.hpp"

#include <algorithm>
#include <cmath>

#include "vcor/io.hpp"

namespace vcor {
namespace {

std::uint8_t channel(double x) { return std::uint8_t(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }

std::string raster_header(const char* magic, const Slice& s) {
  return std::string(magic) + "\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
}

}  // namespace

std::string plane_name(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
  }
  return "?";
}

Slice extract_slice(const Volume3& vol, Plane plane) {
  const auto& d = vol.grid.dims;
  Slice s;
  switch (plane) {
    case Plane::Axial:
      s.width = d[0], s.height = d[1];
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) s.values.push_back(vol(i, j, d[2] / 2));
      break;
    case Plane::Coronal:
      s.width = d[0], s.height = d[2];
      for (int k = 0; k < d[2]; ++k)
        for (int i = 0; i < d[0]; ++i) s.values.push_back(vol(i, d[1] / 2, k));
      break;
    case Plane::Sagittal:
      s.width = d[1], s.height = d[2];
      for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j) s.values.push_back(vol(d[0] / 2, j, k));
      break;
  }
  return s;
}

std::string encode_pgm(const Slice& s, double lo, double hi) {
  if (!(hi > lo)) throw InputError("pgm range must satisfy lo < hi");
  std::string out = raster_header("P5", s);
  for (double v : s.values) out.push_back(char(channel((v - lo) / (hi - lo))));
  return out;
}

std::array<std::uint8_t, 3> jacobian_color(double det) {
  if (std::isnan(det) || det < 0.0) return {0, 0, 255};
  if (std::abs(det - 1.0) <= 0.1) return {0, 255, 0};
  if (det < 0.9) {
    const double t = det / 0.9;
    return {0, channel(t), channel(1.0 - t)};
  }
  const double t = std::min((det - 1.1) / 0.9, 1.0);
  return {channel(t), channel(1.0 - t), 0};
}

std::string encode_jacobian_ppm(const Slice& s) {
  std::string out = raster_header("P6", s);
  for (double v : s.values)
    for (std::uint8_t c : jacobian_color(v)) out.push_back(char(c));
  return out;
}

std::string series_csv(const std::vector<SchemeSeries>& series) {
  std::string out = "hop,scheme,similarity,confidence,uncertainty\n";
  for (const auto& s : series) {
    const auto& r = s.series;
    for (std::size_t i = 0; i < r.confidence.size(); ++i)
      out += std::to_string(r.first_hop + int(i)) + "," + mode_name(s.mode) + "," + format_number(r.similarity[i]) +
             "," + format_number(r.confidence[i]) + "," + format_number(r.uncertainty[i]) + "\n";
  }
  return out;
}

}  // namespace vcor
