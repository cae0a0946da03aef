#pragma once

// Central-difference check of loss_gradient on a tiny model.
//
// The forward pass is piecewise smooth: ReLUs and the interpolation cells of
// the warp switch branches. A central difference whose stencil straddles such
// a switch measures the average of two one-sided slopes, not the derivative,
// so a coordinate is only used when branch_signature agrees at theta - h,
// theta and theta + h. Rejected draws are replaced by fresh ones.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "vcor/reasoner.hpp"

namespace vcor::test {

struct GradCheckReport {
  int checked = 0;
  int rejected = 0;
  double worst_relative_error = 0.0;
  std::map<std::string, int> per_group;
  std::vector<std::string> failures;
};

inline Volume3 blurred_noise(const Grid3& g, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd raw(g.size());
  for (Index i = 0; i < g.size(); ++i) raw[i] = normal(rng);
  Volume3 v(g);
  for (Index i = 0; i < g.size(); ++i) {
    const auto c = g.coords(i);
    double s = 0.0, w = 0.0;
    for (Index j = 0; j < g.size(); ++j) {
      const auto d = g.coords(j);
      double r2 = 0.0;
      for (int a = 0; a < 3; ++a) r2 += double(c[a] - d[a]) * (c[a] - d[a]);
      const double wj = std::exp(-r2 / 4.0);
      s += wj * raw[j];
      w += wj;
    }
    v.values[i] = s / w;
  }
  v.values.array() -= v.values.minCoeff();
  v.values /= v.values.maxCoeff();
  return v;
}

inline GradCheckReport gradient_check(std::uint64_t seed, int coordinates, double step, double tolerance) {
  std::mt19937_64 rng(seed);
  const Grid3 g{{8, 8, 8}, {1, 1, 1}};
  const Volume3 reference = blurred_noise(g, rng);
  const Volume3 source = blurred_noise(g, rng);

  ArchConfig arch;
  arch.depth = 2;
  arch.channels = 8;
  arch.hops = 3;
  InitOptions init;
  init.zero_flow = false;  // a zero flow layer would zero every upstream gradient
  init.flow_scale = 0.02;
  ModelParams params = init_params(arch, seed + 1, init);
  // Offset the fields away from integer displacements, where the warp has kinks.
  for (auto& head : params.heads) head.flow.bias.setConstant(0.3);

  LossWeights weights;
  weights.per_hop_supervision = true;  // every hop's head receives gradient
  const int hops = arch.hops;
  const LossGradient lg = loss_gradient(reference, source, params, hops, weights);
  const auto loss_at = [&] { return total_loss(reference, forward(reference, source, params, hops), weights).total; };

  auto p = tensors(params);
  const auto gr = tensors(lg.grad);
  std::vector<std::string> groups;
  std::map<std::string, std::vector<std::size_t>> by_group;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (!by_group.count(p[t].group)) groups.push_back(p[t].group);
    by_group[p[t].group].push_back(t);
  }

  GradCheckReport report;
  const auto base_sig = branch_signature(reference, source, params, hops);
  for (int n = 0; n < coordinates; ++n) {
    const auto& tensor_ids = by_group[groups[n % groups.size()]];
    for (int attempt = 0; attempt < 200; ++attempt) {
      const std::size_t t = tensor_ids[std::uniform_int_distribution<std::size_t>(0, tensor_ids.size() - 1)(rng)];
      const Index i = std::uniform_int_distribution<Index>(0, p[t].size - 1)(rng);
      double& x = p[t].data[i];
      const double x0 = x;
      x = x0 + step;
      const bool same_plus = branch_signature(reference, source, params, hops) == base_sig;
      const double lp = loss_at();
      x = x0 - step;
      const bool same_minus = branch_signature(reference, source, params, hops) == base_sig;
      const double lm = loss_at();
      x = x0;
      if (!same_plus || !same_minus) {
        ++report.rejected;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * step);
      const double an = gr[t].data[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12});
      report.worst_relative_error = std::max(report.worst_relative_error, rel);
      ++report.checked;
      ++report.per_group[p[t].group];
      if (rel >= tolerance)
        report.failures.push_back(p[t].name + "[" + std::to_string(i) + "] fd=" + std::to_string(fd) +
                                  " analytic=" + std::to_string(an));
      break;
    }
  }
  return report;
}

}  // namespace vcor::test
