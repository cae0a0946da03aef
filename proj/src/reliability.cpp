#include "vcor/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace vcor {
namespace {

int slot(Metric m) { return static_cast<int>(m); }

void check_weights(const MetricWeights& w, const char* what) {
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(std::string(what) + " weights must be finite and >= 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(std::string(what) + " weights must sum to 1");
}

}  // namespace

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Tre: return "tre";
    case Metric::Dsc: return "dsc";
    case Metric::Ncc: return "ncc";
    case Metric::Mse: return "mse";
    case Metric::Mi: return "mi";
    case Metric::PctNegJac: return "pct_neg_jac";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  for (Metric m : kAllMetrics)
    if (metric_name(m) == name) return m;
  throw ConfigError("unknown metric '" + name + "'");
}

bool larger_is_better(Metric m) { return !(m == Metric::Tre || m == Metric::Mse || m == Metric::PctNegJac); }

double metric_value(const HopMetrics& row, Metric m) {
  switch (m) {
    case Metric::Tre: return row.tre_mean_mm;
    case Metric::Dsc: return row.dsc;
    case Metric::Ncc: return row.ncc;
    case Metric::Mse: return row.mse;
    case Metric::Mi: return row.mi;
    case Metric::PctNegJac: return row.pct_neg_jac;
  }
  return HopMetrics::kMissing;
}

double normalize_metric(double value, Metric m, const NormBounds& bounds) {
  const double t = std::clamp((value - bounds.min) / (bounds.max - bounds.min), 0.0, 1.0);
  return larger_is_better(m) ? t : 1.0 - t;
}

std::array<NormBounds, kMetricCount> WeightScheme::default_bounds() {
  std::array<NormBounds, kMetricCount> b;
  b[slot(Metric::Tre)] = {0.0, 10.0};
  b[slot(Metric::Dsc)] = {0.0, 1.0};
  b[slot(Metric::Ncc)] = {0.0, 1.0};
  b[slot(Metric::Mse)] = {0.0, 0.02};
  b[slot(Metric::Mi)] = {1.0, 2.0};
  b[slot(Metric::PctNegJac)] = {0.0, 1.0};
  return b;
}

void WeightScheme::validate() const {
  check_weights(confidence, "confidence");
  check_weights(uncertainty, "uncertainty");
  for (const auto& b : bounds)
    if (!std::isfinite(b.min) || !std::isfinite(b.max) || !(b.min < b.max))
      throw ConfigError("normalisation bounds must be finite with min < max");
}

MetricWeights complete_weights(const std::vector<std::pair<Metric, double>>& partial) {
  MetricWeights w{};
  std::array<bool, kMetricCount> given{};
  double used = 0.0;
  for (const auto& [m, x] : partial) {
    if (given[slot(m)]) throw ConfigError("metric '" + metric_name(m) + "' weighted twice");
    given[slot(m)] = true;
    w[slot(m)] = x;
    used += x;
  }
  const int rest = int(std::count(given.begin(), given.end(), false));
  if (used > 1.0 + 1e-12) throw ConfigError("partial weights exceed 1");
  if (rest == 0) return w;
  const double share = std::max(0.0, 1.0 - used) / rest;
  for (int i = 0; i < kMetricCount; ++i)
    if (!given[i]) w[i] = share;
  return w;
}

WeightScheme WeightScheme::constant() {
  WeightScheme s;
  s.mode = Mode::Constant;
  s.confidence = complete_weights({});
  s.uncertainty = complete_weights({});
  return s;
}

WeightScheme WeightScheme::empirical() {
  WeightScheme s;
  s.mode = Mode::Empirical;
  s.confidence = complete_weights({{Metric::Tre, 0.3}});
  s.uncertainty = complete_weights({{Metric::Tre, 0.4}});
  return s;
}

WeightScheme WeightScheme::empirical_brain() {
  WeightScheme s;
  s.mode = Mode::Empirical;
  s.confidence = complete_weights({});
  s.uncertainty = complete_weights({{Metric::Mi, 0.4}, {Metric::PctNegJac, 0.2}});
  return s;
}

std::string mode_name(WeightScheme::Mode mode) {
  return mode == WeightScheme::Mode::Empirical ? "empirical" : "constant";
}

double similarity_score(const HopMetrics& row, const WeightScheme& scheme) {
  scheme.validate();
  double s = 0.0;
  for (Metric m : kAllMetrics) {
    const double w = scheme.confidence[slot(m)];
    if (w == 0.0) continue;
    const double v = metric_value(row, m);
    if (std::isnan(v))
      throw ConfigError("metric '" + metric_name(m) + "' is weighted but missing at hop " + std::to_string(row.hop));
    s += w * normalize_metric(v, m, scheme.bounds[slot(m)]);
  }
  return std::clamp(s, 0.0, 1.0);
}

Psi Psi::logistic(double gain) {
  if (!(gain > 0.0) || !std::isfinite(gain)) throw ConfigError("logistic gain must be finite and > 0");
  Psi p;
  p.kind = Kind::Logistic;
  p.gain = gain;
  return p;
}

Psi Psi::from_function(std::function<double(double)> f) {
  if (!f) throw ConfigError("custom psi is empty");
  Psi p;
  p.kind = Kind::Custom;
  p.custom = std::move(f);
  p.min_slope();  // validates monotonicity
  return p;
}

double Psi::operator()(double s) const {
  switch (kind) {
    case Kind::Identity: return s;
    case Kind::Logistic: return 1.0 / (1.0 + std::exp(-gain * (s - 0.5)));
    case Kind::Custom: return custom(s);
  }
  return s;
}

double Psi::min_slope() const {
  switch (kind) {
    case Kind::Identity: return 1.0;
    case Kind::Logistic: {
      // psi' = g psi (1 - psi) is symmetric about 0.5 and smallest at the ends.
      const double e = 1.0 / (1.0 + std::exp(gain * 0.5));
      return gain * e * (1.0 - e);
    }
    case Kind::Custom: {
      constexpr int kSteps = 10000;
      double alpha = std::numeric_limits<double>::infinity();
      double prev = custom(0.0);
      for (int i = 1; i <= kSteps; ++i) {
        const double cur = custom(double(i) / kSteps);
        const double slope = (cur - prev) * kSteps;
        if (!std::isfinite(cur) || !(slope > 0.0)) throw ConfigError("custom psi is not strictly increasing on [0, 1]");
        alpha = std::min(alpha, slope);
        prev = cur;
      }
      return alpha;
    }
  }
  return 1.0;
}

double confidence(double similarity, const Psi& psi) {
  if (!(similarity >= 0.0 && similarity <= 1.0)) throw InputError("similarity score must lie in [0, 1]");
  return psi(similarity);
}

Volume3 perturbed_source(const Volume3& source, double sigma, std::uint64_t seed, int member) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InputError("ensemble sigma must be finite and >= 0");
  Volume3 out = source;
  if (sigma == 0.0) return out;
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(member), 0x656e73u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, sigma);
  for (Index v = 0; v < out.values.size(); ++v) out.values[v] += noise(rng);
  return out;
}

double ensemble_variance(const std::vector<DisplacementField>& fields) {
  if (fields.size() < 2) throw InputError("ensemble needs at least 2 members");
  const auto& g = fields.front().grid;
  for (const auto& f : fields)
    if (!(f.grid == g)) throw ShapeError("ensemble members live on different grids");
  const double n = double(fields.size());
  // Deviations from the first member, so identical members give exactly 0.
  Eigen::Matrix3Xd mean = Eigen::Matrix3Xd::Zero(3, g.size());
  for (const auto& f : fields) mean += f.vectors - fields.front().vectors;
  mean /= n;
  Eigen::Matrix3Xd var = Eigen::Matrix3Xd::Zero(3, g.size());
  for (const auto& f : fields) var.array() += (f.vectors - fields.front().vectors - mean).array().square();
  return var.sum() / (n * double(var.size()));
}

std::vector<double> ensemble_uncertainty(const Volume3& reference, const Volume3& source,
                                         const ModelParams& params, int hops, const EnsembleOptions& opts) {
  if (opts.members < 2) throw InputError("ensemble needs at least 2 members");
  std::vector<std::vector<DisplacementField>> per_hop(hops);
  for (int m = 0; m < opts.members; ++m) {
    auto trace = forward(reference, perturbed_source(source, opts.sigma, opts.seed, m), params, hops);
    for (int k = 0; k < hops; ++k) per_hop[k].push_back(std::move(trace.hops[k].field));
  }
  std::vector<double> u(hops);
  for (int k = 0; k < hops; ++k) u[k] = ensemble_variance(per_hop[k]);
  return u;
}

std::vector<double> metric_uncertainty(const std::vector<std::vector<HopMetrics>>& members,
                                       const WeightScheme& scheme) {
  scheme.validate();
  if (members.size() < 2) throw InputError("ensemble needs at least 2 members");
  const std::size_t hops = members.front().size();
  for (const auto& m : members)
    if (m.size() != hops) throw InputError("ensemble members report different hop counts");
  const double n = double(members.size());
  std::vector<double> u(hops, 0.0);
  for (std::size_t k = 0; k < hops; ++k) {
    for (Metric metric : kAllMetrics) {
      const double w = scheme.uncertainty[slot(metric)];
      if (w == 0.0) continue;
      double mean = 0.0, sq = 0.0;
      for (const auto& m : members) {
        const double v = metric_value(m[k], metric);
        if (std::isnan(v)) throw ConfigError("metric '" + metric_name(metric) + "' is weighted but missing");
        mean += normalize_metric(v, metric, scheme.bounds[slot(metric)]);
      }
      mean /= n;
      for (const auto& m : members) {
        const double d = normalize_metric(metric_value(m[k], metric), metric, scheme.bounds[slot(metric)]) - mean;
        sq += d * d;
      }
      u[k] += w * std::sqrt(sq / n);
    }
  }
  return u;
}

void ReliabilitySeries::validate() const {
  if (confidence.size() != similarity.size() || uncertainty.size() != similarity.size())
    throw InputError("reliability series columns differ in length");
  for (double u : uncertainty)
    if (!(u >= 0.0)) throw InputError("uncertainty must be >= 0");
}

ReliabilitySeries build_series(const std::vector<HopMetrics>& rows, const WeightScheme& scheme, const Psi& psi,
                               const std::vector<double>& uncertainty) {
  if (rows.empty()) throw InputError("no hop rows");
  if (uncertainty.size() != rows.size()) throw InputError("one uncertainty value per hop is required");
  ReliabilitySeries s;
  s.first_hop = rows.front().hop;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].hop != s.first_hop + int(i)) throw InputError("hop rows must be consecutive");
    s.similarity.push_back(similarity_score(rows[i], scheme));
    s.confidence.push_back(confidence(s.similarity.back(), psi));
  }
  s.uncertainty = uncertainty;
  s.validate();
  return s;
}

BoundFit fit_bounds(const ReliabilitySeries& series, double alpha) {
  series.validate();
  const std::size_t n = series.confidence.size();
  if (n < 2) throw InputError("bound fitting needs at least 2 hops");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InputError("alpha must be finite and > 0");

  BoundFit fit;
  fit.alpha = alpha;
  fit.eps_min = std::numeric_limits<double>::infinity();
  fit.kappa_sq = 0.0;
  const auto& c = series.confidence;
  const auto& u = series.uncertainty;
  for (std::size_t h = 0; h + 1 < n; ++h) {
    const int hop = series.first_hop + int(h) + 1;
    fit.eps_min = std::min(fit.eps_min, (c[h + 1] - c[h]) / alpha);
    if (!(c[h + 1] > c[h])) fit.confidence_violations.push_back(hop);

    double ratio;
    if (u[h] > 0.0) {
      ratio = u[h + 1] / u[h];
    } else {
      ratio = u[h + 1] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    fit.kappa_sq = std::max(fit.kappa_sq, ratio);
    if (!(ratio < 1.0)) fit.uncertainty_violations.push_back(hop);
  }
  fit.kappa = std::sqrt(fit.kappa_sq);
  fit.certified_confidence = fit.eps_min > 0.0;
  fit.certified_uncertainty = fit.kappa_sq < 1.0;
  for (std::size_t h = 0; h < n; ++h) {
    fit.confidence_envelope.push_back(c[0] + alpha * fit.eps_min * double(h));
    fit.uncertainty_envelope.push_back(std::pow(fit.kappa_sq, double(h)) * u[0]);
  }
  return fit;
}

bool envelopes_hold(const ReliabilitySeries& series, const BoundFit& fit) {
  constexpr double kUlps = 16.0 * std::numeric_limits<double>::epsilon();
  const auto& c = series.confidence;
  const auto& u = series.uncertainty;
  if (fit.confidence_envelope.size() != c.size() || fit.uncertainty_envelope.size() != u.size()) return false;
  for (std::size_t h = 0; h < c.size(); ++h) {
    const double cs = std::max({std::abs(c[0]), std::abs(c[h]), 1.0}) * kUlps * double(h + 1);
    if (c[h] < fit.confidence_envelope[h] - cs) return false;
    if (std::isfinite(fit.uncertainty_envelope[h])) {
      const double us = std::max(std::abs(u[h]), std::abs(fit.uncertainty_envelope[h])) * kUlps * double(h + 1);
      if (u[h] > fit.uncertainty_envelope[h] + us) return false;
    }
  }
  return true;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2) return upper;
  return 0.5 * (*std::max_element(values.begin(), values.begin() + mid) + upper);
}

ReliabilitySeries median_series(const std::vector<ReliabilitySeries>& series) {
  if (series.empty()) throw InputError("no series to aggregate");
  ReliabilitySeries out = series.front();
  const std::size_t n = out.similarity.size();
  for (const auto& s : series)
    if (s.first_hop != out.first_hop || s.similarity.size() != n)
      throw InputError("series cover different hop ranges");
  auto column = [&](auto member) {
    std::vector<double> col(n);
    for (std::size_t h = 0; h < n; ++h) {
      std::vector<double> v;
      for (const auto& s : series) v.push_back((s.*member)[h]);
      col[h] = median(std::move(v));
    }
    return col;
  };
  out.similarity = column(&ReliabilitySeries::similarity);
  out.confidence = column(&ReliabilitySeries::confidence);
  out.uncertainty = column(&ReliabilitySeries::uncertainty);
  return out;
}

}  // namespace vcor
