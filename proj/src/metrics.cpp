#include "vcor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vcor/objective.hpp"

namespace vcor {

TreResult tre(const LandmarkSet& points, const LandmarkSet& targets, const DisplacementField& phi,
              const std::array<double, 3>& spacing) {
  points.validate();
  targets.validate();
  if (points.size() != targets.size()) throw InputError("tre: landmark counts differ");
  std::string outside;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (!phi.grid.contains(points.points[i])) outside += (outside.empty() ? "" : ",") + std::to_string(i);
  if (!outside.empty()) throw InputError("tre: landmarks outside the grid: " + outside);

  const Vec3 mm(spacing[0], spacing[1], spacing[2]);
  std::vector<double> dist(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points.points[i];
    const Vec3 residual = p + sample_displacement(phi, p) - targets.points[i];
    dist[i] = residual.cwiseProduct(mm).norm();
  }
  TreResult r;
  for (double d : dist) r.mean_mm += d;
  r.mean_mm /= double(dist.size());
  double var = 0.0;
  for (double d : dist) var += (d - r.mean_mm) * (d - r.mean_mm);
  r.std_mm = std::sqrt(var / double(dist.size()));
  return r;
}

double dsc(const BinaryMask& a, const BinaryMask& b) {
  if (!(a.grid == b.grid)) throw ShapeError("dsc: grids differ");
  Index inter = 0, na = 0, nb = 0;
  for (Index v = 0; v < a.values.size(); ++v) {
    const bool x = a.values[v] != 0, y = b.values[v] != 0;
    inter += x && y;
    na += x;
    nb += y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(inter) / double(na + nb);
}

double global_ncc(const Volume3& a, const Volume3& b) {
  if (!(a.grid == b.grid)) throw ShapeError("global_ncc: grids differ");
  const Eigen::ArrayXd da = a.values.array() - a.values.mean();
  const Eigen::ArrayXd db = b.values.array() - b.values.mean();
  const double va = da.square().sum(), vb = db.square().sum();
  if (va == 0.0 && vb == 0.0) throw InputError("global_ncc: both volumes are constant");
  if (va == 0.0 || vb == 0.0) return 0.0;
  return (da * db).sum() / std::sqrt(va * vb);
}

double normalized_mi(const Volume3& a, const Volume3& b, int bins) {
  if (bins < 2) throw InputError("normalized_mi: bins must be >= 2");
  if (!(a.grid == b.grid)) throw ShapeError("normalized_mi: grids differ");
  const auto bin_of = [bins](double x) {
    const double c = std::clamp(x, 0.0, 1.0);
    return std::min(int(c * bins), bins - 1);
  };
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, bins);
  for (Index v = 0; v < a.values.size(); ++v) joint(bin_of(a.values[v]), bin_of(b.values[v])) += 1.0;
  joint /= double(a.values.size());
  const auto entropy = [](const auto& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i)
      if (p(i) > 0.0) h -= p(i) * std::log(p(i));
    return h;
  };
  const Eigen::VectorXd pa = joint.rowwise().sum();
  const Eigen::VectorXd pb = joint.colwise().sum().transpose();
  const double hab = entropy(joint.reshaped());
  if (hab == 0.0) return 2.0;  // both constant: each fully determines the other
  return (entropy(pa) + entropy(pb)) / hab;
}

BinaryMask threshold_mask(const Volume3& v, double level) {
  BinaryMask m(v.grid);
  for (Index i = 0; i < v.values.size(); ++i) m.values[i] = v.values[i] >= level ? 1 : 0;
  return m;
}

Volume3 mask_to_volume(const BinaryMask& m) {
  Volume3 v(m.grid);
  v.values = m.values.cast<double>();
  return v;
}

HopMetrics evaluate_hop(const PhantomCase& pc, int hop, const DisplacementField& phi, const Volume3& warped,
                        const EvalOptions& opts) {
  HopMetrics m;
  m.hop = hop;
  const auto t = tre(pc.landmarks_ref, pc.landmarks_src, phi, pc.reference.grid.spacing);
  m.tre_mean_mm = t.mean_mm;
  m.tre_std_mm = t.std_mm;
  m.dsc = dsc(threshold_mask(warp(mask_to_volume(pc.mask_src), phi)), pc.mask_ref);
  m.ncc = global_ncc(pc.reference, warped);
  m.mse = mse_loss(pc.reference, warped);
  m.mi = normalized_mi(pc.reference, warped, opts.mi_bins);
  m.pct_neg_jac = 100.0 * percent_negative_jacobian(jacobian_map(phi));
  return m;
}

HopMetrics evaluate_baseline(const PhantomCase& pc, const EvalOptions& opts) {
  return evaluate_hop(pc, 0, DisplacementField(pc.reference.grid), pc.source, opts);
}

}  // namespace vcor
