#pragma once

// Hop-wise confidence and uncertainty, and certification of the bounds
//
//   C_{h+1} >= C_h + alpha * eps_min      (confidence grows at least linearly)
//   U_{h+1} <= kappa^2 * U_h              (uncertainty contracts geometrically)
//
// on an observed series.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vcor/metrics.hpp"
#include "vcor/reasoner.hpp"

namespace vcor {

enum class Metric { Tre, Dsc, Ncc, Mse, Mi, PctNegJac };

inline constexpr int kMetricCount = 6;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics{Metric::Tre, Metric::Dsc, Metric::Ncc,
                                                             Metric::Mse, Metric::Mi,  Metric::PctNegJac};

std::string metric_name(Metric m);    // "tre", "dsc", "ncc", "mse", "mi", "pct_neg_jac"
Metric parse_metric(const std::string& name);
bool larger_is_better(Metric m);
double metric_value(const HopMetrics& row, Metric m);  // NaN when missing

using MetricWeights = std::array<double, kMetricCount>;  // indexed by Metric

struct NormBounds {
  double min = 0.0;
  double max = 1.0;
};

// Clamped min-max map to [0, 1], flipped for metrics where smaller is better.
double normalize_metric(double value, Metric m, const NormBounds& bounds);

struct WeightScheme {
  enum class Mode { Empirical, Constant };

  Mode mode = Mode::Constant;
  MetricWeights confidence{};
  MetricWeights uncertainty{};
  std::array<NormBounds, kMetricCount> bounds = default_bounds();

  void validate() const;

  static std::array<NormBounds, kMetricCount> default_bounds();
  // Equal weight on every metric.
  static WeightScheme constant();
  // TRE-led weighting (0.3 confidence, 0.4 uncertainty).
  static WeightScheme empirical();
  // Variant without landmarks in mind: MI 0.4 and %J_neg 0.2 of the uncertainty.
  static WeightScheme empirical_brain();
};

std::string mode_name(WeightScheme::Mode mode);

// Fills the metrics not listed in `partial` with equal shares of 1 - sum.
MetricWeights complete_weights(const std::vector<std::pair<Metric, double>>& partial);

// Weighted sum of normalised metrics with the confidence weights. A metric
// with positive weight that is missing from `row` is a ConfigError.
double similarity_score(const HopMetrics& row, const WeightScheme& scheme);

// Strictly increasing map from similarity to confidence.
struct Psi {
  enum class Kind { Identity, Logistic, Custom };

  Kind kind = Kind::Identity;
  double gain = 4.0;                    // logistic steepness g
  std::function<double(double)> custom;  // used when kind == Custom

  double operator()(double s) const;
  // Lower bound alpha on psi' over [0, 1]. Custom maps are checked on a dense
  // grid and rejected with ConfigError unless strictly increasing.
  double min_slope() const;

  static Psi identity() { return {}; }
  static Psi logistic(double gain);
  static Psi from_function(std::function<double(double)> f);
};

double confidence(double similarity, const Psi& psi);

struct EnsembleOptions {
  int members = 8;
  double sigma = 0.02;  // std of the additive Gaussian noise on the source
  std::uint64_t seed = 0;
};

// U_k for hops 1..K: voxel- and component-mean of the population variance of
// phi^(k) across members, each member seeing its own noisy copy of `source`.
std::vector<double> ensemble_uncertainty(const Volume3& reference, const Volume3& source,
                                         const ModelParams& params, int hops, const EnsembleOptions& opts);

// Voxel- and component-mean population variance across `fields`.
double ensemble_variance(const std::vector<DisplacementField>& fields);

// Noisy source seen by ensemble member `member`.
Volume3 perturbed_source(const Volume3& source, double sigma, std::uint64_t seed, int member);

// Alternative uncertainty built from metric variability: per hop, the
// uncertainty-weighted sum of the standard deviations of the normalised
// metrics across members. members[m][k] is member m at hop k.
std::vector<double> metric_uncertainty(const std::vector<std::vector<HopMetrics>>& members,
                                       const WeightScheme& scheme);

struct ReliabilitySeries {
  int first_hop = 1;
  std::vector<double> similarity;
  std::vector<double> confidence;
  std::vector<double> uncertainty;
  int members = 0;
  double sigma = 0.0;

  void validate() const;
};

ReliabilitySeries build_series(const std::vector<HopMetrics>& rows, const WeightScheme& scheme, const Psi& psi,
                               const std::vector<double>& uncertainty);

struct BoundFit {
  double alpha = 1.0;
  double eps_min = 0.0;
  double kappa_sq = 0.0;
  double kappa = 0.0;
  bool certified_confidence = false;
  bool certified_uncertainty = false;
  std::vector<int> confidence_violations;   // hop numbers h+1 with C_{h+1} <= C_h
  std::vector<int> uncertainty_violations;  // hop numbers h+1 with U_{h+1} >= U_h
  std::vector<double> confidence_envelope;  // C_0 + alpha * eps_min * h
  std::vector<double> uncertainty_envelope; // kappa^(2h) * U_0
};

BoundFit fit_bounds(const ReliabilitySeries& series, double alpha);

// Checks the envelope inequalities at every hop, allowing a few ulps for the
// rounding of the envelope arithmetic itself.
bool envelopes_hold(const ReliabilitySeries& series, const BoundFit& fit);

// Median of the values (mean of the middle pair for even counts).
double median(std::vector<double> values);

// Per-hop medians of every column across series sharing one hop range.
ReliabilitySeries median_series(const std::vector<ReliabilitySeries>& series);

}  // namespace vcor
