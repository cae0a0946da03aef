#include "vcor/trainkit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "vcor/io.hpp"

namespace vcor {
namespace {

void add_scaled(LossBreakdown& acc, const LossBreakdown& x, double s) {
  acc.ncc += s * x.ncc;
  acc.mse += s * x.mse;
  acc.reg += s * x.reg;
  acc.similarity += s * x.similarity;
  acc.regularization += s * x.regularization;
  acc.total += s * x.total;
}

class Adam {
 public:
  Adam(const ModelParams& like, const AdamConfig& cfg) : cfg_(cfg), m_(zeros_like(like)), v_(zeros_like(like)) {}

  void step(ModelParams& params, const ModelParams& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    auto p = tensors(params);
    const auto g = tensors(grad);
    auto m = tensors(m_);
    auto v = tensors(v_);
    for (std::size_t t = 0; t < p.size(); ++t)
      for (Index i = 0; i < p[t].size; ++i) {
        const double gi = g[t].data[i];
        double& mi = m[t].data[i];
        double& vi = v[t].data[i];
        mi = cfg_.beta1 * mi + (1.0 - cfg_.beta1) * gi;
        vi = cfg_.beta2 * vi + (1.0 - cfg_.beta2) * gi * gi;
        p[t].data[i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon);
      }
  }

 private:
  AdamConfig cfg_;
  ModelParams m_, v_;
  long t_ = 0;
};

double squared_norm(const ModelParams& grad) {
  double s = 0.0;
  for (const auto& t : tensors(grad))
    for (Index i = 0; i < t.size; ++i) s += t.data[i] * t.data[i];
  return s;
}

void scale(ModelParams& grad, double factor) {
  for (auto& t : tensors(grad))
    for (Index i = 0; i < t.size; ++i) t.data[i] *= factor;
}

void accumulate(ModelParams& acc, const ModelParams& x) {
  auto a = tensors(acc);
  const auto b = tensors(x);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (Index i = 0; i < a[t].size; ++i) a[t].data[i] += b[t].data[i];
}

Volume3 flip(const Volume3& v, unsigned axes) {
  Volume3 out(v.grid);
  const auto& d = v.grid.dims;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const int fi = (axes & 1u) ? d[0] - 1 - i : i;
        const int fj = (axes & 2u) ? d[1] - 1 - j : j;
        const int fk = (axes & 4u) ? d[2] - 1 - k : k;
        out(i, j, k) = v(fi, fj, fk);
      }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(lr_decay > 0.0) || !std::isfinite(lr_decay)) throw ConfigError("lr decay must be > 0");
  if (lr_period < 1) throw ConfigError("lr period must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (hops < 1) throw ConfigError("hops must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  if (augment_resample && (!(augment_amplitude >= 0.0) || !(augment_smoothness > 0.0)))
    throw ConfigError("augmentation amplitude must be >= 0 and smoothness > 0");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("evaluation and checkpoint intervals must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0))
    throw ConfigError("adam constants out of range");
  loss.validate();
  ArchConfig a = arch;
  a.hops = hops;
  a.validate();
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.learning_rate * std::pow(config.lr_decay, double(epoch / config.lr_period));
}

std::pair<Volume3, Volume3> flip_pair(const Volume3& reference, const Volume3& source, unsigned axes) {
  return {flip(reference, axes), flip(source, axes)};
}

std::vector<HopMetrics> evaluate_case(const PhantomCase& pc, const ModelParams& params, int hops,
                                      const EvalOptions& opts) {
  const HopTrace trace = forward(pc.reference, pc.source, params, hops);
  std::vector<HopMetrics> rows{evaluate_baseline(pc, opts)};
  for (const auto& entry : trace.hops) rows.push_back(evaluate_hop(pc, entry.hop, entry.field, entry.warped, opts));
  return rows;
}

TrainResult train(const std::vector<PhantomCase>& cohort, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (cohort.empty()) throw InputError("training cohort is empty");
  for (const auto& pc : cohort)
    if (!(pc.reference.grid == cohort.front().reference.grid))
      throw ShapeError("training cases must share one grid");

  const auto start = std::chrono::steady_clock::now();
  ArchConfig arch = config.arch;
  arch.hops = config.hops;

  TrainResult result;
  result.params = init_params(arch, config.seed, config.init);
  auto& params = result.params;
  auto& history = result.history;
  history.seed = config.seed;
  history.config = config;

  Adam adam(params, config.adam);
  std::seed_seq seq{std::uint32_t(config.seed), std::uint32_t(config.seed >> 32), 0x7472u};
  std::mt19937_64 order_rng(seq);
  std::mt19937_64 aug_rng(order_rng());
  std::vector<int> order(cohort.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    const double per_case = 1.0 / double(cohort.size());
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      ModelParams grad = zeros_like(params);
      try {
        for (std::size_t i = b; i < end; ++i) {
          const auto& pc = cohort[order[i]];
          const Volume3* reference = &pc.reference;
          const Volume3* source = &pc.source;
          Volume3 resampled;
          if (config.augment_resample) {
            const auto field = generate_smooth_field(pc.reference.grid, config.augment_amplitude,
                                                     config.augment_smoothness, aug_rng());
            resampled = warp(pc.reference, field);
            source = &resampled;
          }
          LossGradient lg;
          if (config.augment_flips) {
            const auto [r, s] = flip_pair(*reference, *source, unsigned(aug_rng() & 7u));
            lg = loss_gradient(r, s, params, config.hops, config.loss);
          } else {
            lg = loss_gradient(*reference, *source, params, config.hops, config.loss);
          }
          accumulate(grad, lg.grad);
          add_scaled(rec.loss, lg.loss, per_case);
          add_scaled(rec.final_hop, lg.per_hop.back(), per_case);
        }
        scale(grad, 1.0 / double(end - b));
        const double norm = std::sqrt(squared_norm(grad));
        if (!std::isfinite(norm)) throw NumericalError("non-finite gradient");
        rec.grad_norm += norm;
        if (config.clip_gradients && norm > config.clip_norm) scale(grad, config.clip_norm / norm);
      } catch (const NumericalError& e) {
        if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, params);
        history.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw TrainingDiverged(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")", params, history);
      }
      adam.step(params, grad, lr);
      ++steps;
    }
    rec.grad_norm /= double(steps);
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const int done = epoch + 1;
    if (config.eval_every > 0 && done % config.eval_every == 0)
      for (std::size_t c = 0; c < cohort.size(); ++c)
        history.evaluations.push_back({done, int(c), evaluate_case(cohort[c], params, config.hops)});
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && !config.checkpoint_path.empty())
      save_checkpoint(config.checkpoint_path, params);
  }
  history.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

LooResult loo_eval(const std::vector<PhantomCase>& cohort, const TrainConfig& config, int jobs) {
  if (cohort.size() < 2) throw InputError("leave-one-out needs at least 2 cases");
  config.validate();
  const int folds = int(cohort.size());
  std::vector<std::vector<HopMetrics>> rows(folds);
  std::vector<ModelParams> models(folds);
  std::vector<std::exception_ptr> errors(folds);

  TrainConfig fold_config = config;
  fold_config.checkpoint_path.clear();
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int f = next++; f < folds; f = next++) {
      try {
        std::vector<PhantomCase> train_set;
        for (int c = 0; c < folds; ++c)
          if (c != f) train_set.push_back(cohort[c]);
        auto result = train(train_set, fold_config);
        rows[f] = evaluate_case(cohort[f], result.params, config.hops);
        models[f] = std::move(result.params);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(jobs, 1, folds);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  LooResult out;
  for (int f = 0; f < folds; ++f)
    for (const auto& m : rows[f]) out.rows.push_back({f, m});
  out.models = std::move(models);
  return out;
}

}  // namespace vcor
