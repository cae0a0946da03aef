#include "vcor/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vcor {
namespace {

void require_same_grid(const Volume3& a, const Volume3& b, const char* what) {
  if (!(a.grid == b.grid)) throw ShapeError(std::string(what) + ": grids differ");
}

// Sum over the cubic window of half-width r around every voxel, truncated at
// the grid border. Separable running sums along each axis.
Eigen::VectorXd box_sum(const Grid3& g, const Eigen::VectorXd& in, int r) {
  Eigen::VectorXd cur = in, next(in.size());
  const std::array<Index, 3> stride{1, Index(g.dims[0]), Index(g.dims[0]) * g.dims[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = g.dims[axis];
    const Index s = stride[axis];
    // Lines along `axis` start at every voxel whose `axis` coordinate is 0.
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    std::vector<double> prefix(n + 1);
    for (int u = 0; u < g.dims[a1]; ++u)
      for (int w = 0; w < g.dims[a2]; ++w) {
        const Index start = Index(u) * stride[a1] + Index(w) * stride[a2];
        prefix[0] = 0.0;
        for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + cur[start + i * s];
        for (int i = 0; i < n; ++i)
          next[start + i * s] = prefix[std::min(n, i + r + 1)] - prefix[std::max(0, i - r)];
      }
    std::swap(cur, next);
  }
  return cur;
}

Eigen::VectorXd window_counts(const Grid3& g, int r) {
  return box_sum(g, Eigen::VectorXd::Ones(g.size()), r);
}

void check_window(int window) {
  if (window < 3 || window % 2 == 0) throw ConfigError("ncc window must be odd and >= 3");
}

struct LocalStats {
  Eigen::ArrayXd count, mean_a, mean_b, var_a, var_b, cov, cc;
};

LocalStats local_stats(const Volume3& a, const Volume3& b, int window) {
  check_window(window);
  require_same_grid(a, b, "ncc");
  const int r = window / 2;
  const auto& g = a.grid;
  LocalStats s;
  s.count = window_counts(g, r).array();
  s.mean_a = box_sum(g, a.values, r).array() / s.count;
  s.mean_b = box_sum(g, b.values, r).array() / s.count;
  const Eigen::ArrayXd saa = box_sum(g, a.values.cwiseProduct(a.values), r).array() / s.count;
  const Eigen::ArrayXd sbb = box_sum(g, b.values.cwiseProduct(b.values), r).array() / s.count;
  const Eigen::ArrayXd sab = box_sum(g, a.values.cwiseProduct(b.values), r).array() / s.count;
  s.var_a = saa - s.mean_a.square();
  s.var_b = sbb - s.mean_b.square();
  s.cov = sab - s.mean_a * s.mean_b;
  s.cc = s.cov / (s.var_a.max(kNccVarianceFloor) * s.var_b.max(kNccVarianceFloor)).sqrt();
  return s;
}

}  // namespace

void LossWeights::validate() const {
  if (!(beta >= 0.0) || !(lambda >= 0.0)) throw ConfigError("loss weights beta and lambda must be >= 0");
  check_window(ncc_window);
  for (double w : hop_weights)
    if (!(w >= 0.0)) throw ConfigError("hop weights must be >= 0");
}

std::vector<double> LossWeights::weights_for(int hops) const {
  std::vector<double> w(hops, 0.0);
  if (hops < 1) return w;
  if (!per_hop_supervision) {
    w.back() = 1.0;
    return w;
  }
  if (hop_weights.empty()) return std::vector<double>(hops, 1.0);
  if (int(hop_weights.size()) < hops) throw ConfigError("fewer hop weights than hops");
  return std::vector<double>(hop_weights.begin(), hop_weights.begin() + hops);
}

double ncc_loss(const Volume3& a, const Volume3& b, int window) {
  return 1.0 - local_stats(a, b, window).cc.mean();
}

Volume3 ncc_loss_gradient(const Volume3& a, const Volume3& b, int window) {
  const auto s = local_stats(a, b, window);
  const int r = window / 2;
  const auto& g = a.grid;
  const double n_total = double(g.size());

  // d cc_v / d b_j = alpha_v a_j + beta_v b_j + gamma_v for j in window(v).
  const Eigen::ArrayXd va = s.var_a.max(kNccVarianceFloor);
  const Eigen::ArrayXd vb = s.var_b.max(kNccVarianceFloor);
  const Eigen::ArrayXd alpha = 1.0 / (s.count * (va * vb).sqrt());
  const Eigen::ArrayXd active = (s.var_b > kNccVarianceFloor).cast<double>();
  const Eigen::ArrayXd beta = -active * s.cc / (vb * s.count);
  const Eigen::ArrayXd gamma = -s.mean_a * alpha - beta * s.mean_b;

  const Eigen::ArrayXd box_alpha = box_sum(g, alpha.matrix(), r).array();
  const Eigen::ArrayXd box_beta = box_sum(g, beta.matrix(), r).array();
  const Eigen::ArrayXd box_gamma = box_sum(g, gamma.matrix(), r).array();

  Volume3 grad(g);
  grad.values = (-(a.values.array() * box_alpha + b.values.array() * box_beta + box_gamma) / n_total).matrix();
  return grad;
}

double mse_loss(const Volume3& a, const Volume3& b) {
  require_same_grid(a, b, "mse");
  return (a.values - b.values).squaredNorm() / double(a.values.size());
}

Volume3 mse_loss_gradient(const Volume3& a, const Volume3& b) {
  require_same_grid(a, b, "mse");
  Volume3 grad(a.grid);
  grad.values = 2.0 * (b.values - a.values) / double(a.values.size());
  return grad;
}

double smoothness_loss(const DisplacementField& phi) {
  const auto& g = phi.grid;
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 3) throw InputError("smoothness_loss requires every dimension >= 3");
  const std::array<Index, 3> stride{1, Index(g.dims[0]), Index(g.dims[0]) * g.dims[1]};
  double sum = 0.0;
  for (Index v = 0; v < g.size(); ++v) {
    const auto c = g.coords(v);
    for (int a = 0; a < 3; ++a) {
      if (c[a] + 1 >= g.dims[a]) continue;
      sum += (phi.vectors.col(v + stride[a]) - phi.vectors.col(v)).squaredNorm();
    }
  }
  return sum / double(g.size());
}

DisplacementField smoothness_loss_gradient(const DisplacementField& phi) {
  const auto& g = phi.grid;
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 3) throw InputError("smoothness_loss requires every dimension >= 3");
  const std::array<Index, 3> stride{1, Index(g.dims[0]), Index(g.dims[0]) * g.dims[1]};
  const double scale = 2.0 / double(g.size());
  DisplacementField grad(g);
  for (Index v = 0; v < g.size(); ++v) {
    const auto c = g.coords(v);
    for (int a = 0; a < 3; ++a) {
      if (c[a] + 1 >= g.dims[a]) continue;
      const Vec3 d = scale * (phi.vectors.col(v + stride[a]) - phi.vectors.col(v));
      grad.vectors.col(v + stride[a]) += d;
      grad.vectors.col(v) -= d;
    }
  }
  return grad;
}

LossBreakdown total_loss(const Volume3& reference, const HopTrace& trace, const LossWeights& weights) {
  if (trace.hops.empty()) throw InputError("total_loss: empty trace");
  weights.validate();
  const auto hop_w = weights.weights_for(int(trace.hops.size()));
  LossBreakdown out;
  for (std::size_t k = 0; k < trace.hops.size(); ++k) {
    if (hop_w[k] == 0.0) continue;
    const auto& entry = trace.hops[k];
    out.ncc += hop_w[k] * ncc_loss(reference, entry.warped, weights.ncc_window);
    out.mse += hop_w[k] * mse_loss(reference, entry.warped);
    out.reg += hop_w[k] * smoothness_loss(entry.field);
  }
  out.similarity = out.ncc + weights.beta * out.mse;
  out.regularization = weights.lambda * out.reg;
  out.total = out.similarity + out.regularization;
  return out;
}

}  // namespace vcor
