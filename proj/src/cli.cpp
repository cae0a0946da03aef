#include "vcor/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "vcor/io.hpp"
#include "vcor/report.hpp"

namespace vcor {
namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
};

// Runs body(i) for i in [0, n) on up to `jobs` threads; the first exception
// (by index) is rethrown after every worker finished.
template <typename F>
void parallel_for(int n, int jobs, F&& body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, std::max(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string case_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%03d", index);
  return buf;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  fs::path out;
  fs::path config;
  std::optional<int> count, landmarks;
  std::optional<double> smoothness;
  std::vector<int> dims;
  std::vector<double> spacing, amplitudes;
};

void cmd_phantom(const PhantomArgs& a, const Globals& g, std::ostream& out) {
  CohortConfig cc;
  if (!a.config.empty()) cc = cohort_config_from_json(read_json(a.config));
  if (a.count) cc.cases = *a.count;
  if (a.landmarks) cc.landmarks = *a.landmarks;
  if (a.smoothness) cc.smoothness = *a.smoothness;
  if (!a.dims.empty()) std::copy(a.dims.begin(), a.dims.end(), cc.grid.dims.begin());
  if (!a.spacing.empty()) std::copy(a.spacing.begin(), a.spacing.end(), cc.grid.spacing.begin());
  if (!a.amplitudes.empty()) cc.amplitudes = a.amplitudes;
  if (g.seed_given) cc.seed = g.seed;
  if (cc.cases < 1) throw InputError("count must be >= 1");

  std::vector<std::vector<std::string>> files(cc.cases);
  parallel_for(cc.cases, g.jobs, [&](int i) {
    files[i] = write_case(a.out / case_dir_name(i), make_cohort_case(cc, i));
  });

  json manifest;
  manifest["format"] = "vcor-cohort 1";
  manifest["config"] = to_json(cc);
  json cases = json::array();
  for (int i = 0; i < cc.cases; ++i)
    cases.push_back({{"dir", case_dir_name(i)}, {"seed", case_seed(cc.seed, i)}, {"files", files[i]}});
  manifest["cases"] = cases;
  write_text(a.out / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << cc.cases << " cases to " << a.out.string() << "\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path cohort, config, out, history;
  std::optional<int> epochs, hops;
  std::optional<double> lr;
};

TrainConfig load_train_config(const fs::path& path, const Globals& g) {
  TrainConfig tc;
  if (!path.empty()) tc = train_config_from_json(read_json(path));
  if (g.seed_given) tc.seed = g.seed;
  return tc;
}

void cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  TrainConfig tc = load_train_config(a.config, g);
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.hops) tc.hops = *a.hops;
  if (a.lr) tc.learning_rate = *a.lr;
  tc.checkpoint_path = a.out;
  tc.validate();
  const auto cohort = read_cohort(a.cohort);
  const fs::path history = a.history.empty() ? fs::path(a.out).replace_extension(".history.csv") : a.history;

  const auto on_epoch = [&](const EpochRecord& e) {
    if ((e.epoch + 1) % std::max(1, tc.eval_every) == 0 || e.epoch + 1 == tc.epochs)
      out << "epoch " << e.epoch + 1 << "/" << tc.epochs << " loss " << format_number(e.loss.total) << "\n";
  };
  try {
    const TrainResult result = train(cohort, tc, on_epoch);
    save_checkpoint(a.out, result.params);
    write_history_csv(history, result.history);
  } catch (const TrainingDiverged& e) {
    write_history_csv(history, e.history);
    throw;
  }
  out << "checkpoint " << a.out.string() << "\n";
}

// ---------------------------------------------------------------- register

struct RegisterArgs {
  fs::path checkpoint, reference, source, out;
  std::optional<int> hops;
  int ensemble = 8;
  double sigma = 0.02;
};

std::string attention_summary(const AttentionMap& att) {
  std::string csv = "source_token,reference_token,weight,entropy\n";
  for (Index r = 0; r < att.weights.rows(); ++r) {
    Index best = 0;
    const double w = att.weights.row(r).maxCoeff(&best);
    double h = 0.0;
    for (Index c = 0; c < att.weights.cols(); ++c) {
      const double p = att.weights(r, c);
      if (p > 0.0) h -= p * std::log(p);
    }
    csv += std::to_string(r) + "," + std::to_string(best) + "," + format_number(w) + "," + format_number(h) + "\n";
  }
  return csv;
}

void cmd_register(const RegisterArgs& a, const Globals& g, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.checkpoint);
  const Volume3 reference = read_volume(a.reference);
  const Volume3 source = read_volume(a.source);
  const int hops = a.hops.value_or(params.arch.hops);
  if (a.ensemble < 0) throw InputError("ensemble size must be >= 0");

  const HopTrace trace = forward(reference, source, params, hops);
  json manifest;
  manifest["hops"] = hops;
  json files = json::array();
  for (const auto& entry : trace.hops) {
    write_field(a.out / field_file(entry.hop), entry.field);
    write_volume(a.out / warped_file(entry.hop), entry.warped);
    write_text(a.out / attention_file(entry.hop), attention_summary(entry.attention));
    files.push_back({{"hop", entry.hop},
                     {"field", field_file(entry.hop)},
                     {"warped", warped_file(entry.hop)},
                     {"attention", attention_file(entry.hop)}});
  }
  manifest["files"] = files;
  if (a.ensemble > 0) {
    const EnsembleOptions opts{a.ensemble, a.sigma, g.seed};
    manifest["ensemble"] = {{"members", opts.members}, {"sigma", opts.sigma}, {"seed", opts.seed}};
    manifest["uncertainty"] = ensemble_uncertainty(reference, source, params, hops, opts);
  }
  write_text(a.out / kRegistrationManifest, manifest.dump(2) + "\n");
  out << "registered " << hops << " hops into " << a.out.string() << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path case_dir, registration, out;
  int mi_bins = 32;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const PhantomCase pc = read_case(a.case_dir);
  const json manifest = read_json(a.registration / kRegistrationManifest);
  const int hops = manifest.at("hops").get<int>();
  std::vector<double> uncertainty;
  if (manifest.contains("uncertainty")) uncertainty = manifest.at("uncertainty").get<std::vector<double>>();

  std::vector<HopMetrics> rows;
  for (int k = 1; k <= hops; ++k) {
    const DisplacementField phi = read_field(a.registration / field_file(k));
    const Volume3 warped = read_volume(a.registration / warped_file(k));
    if (!(phi.grid == pc.reference.grid)) throw InputError("registration grid differs from the case grid");
    HopMetrics m = evaluate_hop(pc, k, phi, warped, EvalOptions{a.mi_bins});
    if (std::size_t(k) <= uncertainty.size()) m.uncertainty = uncertainty[k - 1];
    rows.push_back(m);
  }
  const fs::path path = a.out.empty() ? a.registration / "metrics.csv" : a.out;
  write_metrics_csv(path, rows);
  out << "wrote " << rows.size() << " rows to " << path.string() << "\n";
}

// ---------------------------------------------------------------- bounds

struct BoundsArgs {
  std::vector<fs::path> metrics;
  std::string scheme = "both";
  fs::path scheme_config, out;
  std::string psi = "identity";
  double gain = 4.0;
};

std::vector<WeightScheme> schemes_for(const BoundsArgs& a) {
  if (!a.scheme_config.empty()) return {weight_scheme_from_json(read_json(a.scheme_config))};
  if (a.scheme == "both") return {WeightScheme::empirical(), WeightScheme::constant()};
  if (a.scheme == "empirical") return {WeightScheme::empirical()};
  if (a.scheme == "constant") return {WeightScheme::constant()};
  if (a.scheme == "empirical_brain") return {WeightScheme::empirical_brain()};
  throw InputError("unknown scheme '" + a.scheme + "'");
}

json fit_json(const ReliabilitySeries& s, double alpha) {
  const BoundFit fit = fit_bounds(s, alpha);
  json j = to_json(fit);
  j["envelopes_hold"] = envelopes_hold(s, fit);
  return j;
}

void cmd_bounds(const BoundsArgs& a, std::ostream& out) {
  const Psi psi = a.psi == "identity"   ? Psi::identity()
                  : a.psi == "logistic" ? Psi::logistic(a.gain)
                                        : throw InputError("unknown psi '" + a.psi + "'");
  const double alpha = psi.min_slope();

  std::vector<std::vector<HopMetrics>> tables;
  for (const auto& path : a.metrics) {
    tables.push_back(read_metrics_csv(path));
    for (const auto& row : tables.back())
      if (std::isnan(row.uncertainty))
        throw InputError(path.string() + ": hop " + std::to_string(row.hop) +
                         " has no uncertainty; register with --ensemble > 0");
  }

  json report;
  report["psi"] = {{"kind", a.psi}, {"gain", a.psi == "logistic" ? json(a.gain) : json(nullptr)}, {"alpha", alpha}};
  json schemes = json::array();
  for (const auto& scheme : schemes_for(a)) {
    json cases = json::array();
    std::vector<ReliabilitySeries> all;
    for (std::size_t i = 0; i < tables.size(); ++i) {
      std::vector<double> u;
      for (const auto& row : tables[i]) u.push_back(row.uncertainty);
      all.push_back(build_series(tables[i], scheme, psi, u));
      cases.push_back({{"metrics", a.metrics[i].filename().string()},
                       {"series", to_json(all.back())},
                       {"fit", fit_json(all.back(), alpha)}});
    }
    const ReliabilitySeries cohort = median_series(all);
    schemes.push_back({{"mode", mode_name(scheme.mode)},
                       {"weights", to_json(scheme)},
                       {"cohort", {{"series", to_json(cohort)}, {"fit", fit_json(cohort, alpha)}}},
                       {"cases", cases}});
  }
  report["schemes"] = schemes;
  write_text(a.out, report.dump(2) + "\n");
  out << "wrote " << a.out.string() << "\n";
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<fs::path> bounds, metrics, registrations;
  fs::path out;
};

ReliabilitySeries series_from_json(const json& j) {
  ReliabilitySeries s;
  s.first_hop = j.at("hops").at(0).get<int>();
  s.similarity = j.at("similarity").get<std::vector<double>>();
  s.confidence = j.at("confidence").get<std::vector<double>>();
  s.uncertainty = j.at("uncertainty").get<std::vector<double>>();
  s.members = j.at("members").get<int>();
  s.sigma = j.at("sigma").get<double>();
  s.validate();
  return s;
}

WeightScheme::Mode mode_from_name(const std::string& name) {
  if (name == "constant") return WeightScheme::Mode::Constant;
  if (name == "empirical") return WeightScheme::Mode::Empirical;
  throw InputError("unknown scheme mode '" + name + "'");
}

std::string indexed(const std::string& stem, std::size_t i, std::size_t n, const std::string& ext) {
  return n == 1 ? stem + ext : stem + "_" + std::to_string(i) + ext;
}

void cmd_report(const ReportArgs& a, std::ostream& out) {
  if (a.bounds.empty() && a.metrics.empty() && a.registrations.empty())
    throw InputError("report needs --bounds, --metrics or --registration inputs");
  int written = 0;

  for (std::size_t i = 0; i < a.bounds.size(); ++i) {
    const json j = read_json(a.bounds[i]);
    std::vector<SchemeSeries> series;
    try {
      for (const auto& s : j.at("schemes"))
        series.push_back({mode_from_name(s.at("mode").get<std::string>()),
                          series_from_json(s.at("cohort").at("series"))});
    } catch (const json::exception& e) {
      throw InputError(a.bounds[i].string() + ": not a bounds report (" + e.what() + ")");
    }
    write_text(a.out / indexed("reliability_series", i, a.bounds.size(), ".csv"), series_csv(series));
    ++written;
  }

  if (!a.metrics.empty()) {
    std::vector<std::vector<HopMetrics>> tables;
    for (const auto& p : a.metrics) tables.push_back(read_metrics_csv(p));
    std::string csv = "hop,cases,tre_mean_mm,dsc,ncc,mse,mi,pct_neg_jac,uncertainty\n";
    for (std::size_t r = 0; r < tables.front().size(); ++r) {
      const int hop = tables.front()[r].hop;
      std::vector<const HopMetrics*> rows;
      for (const auto& t : tables) {
        if (r >= t.size() || t[r].hop != hop) throw InputError("metrics tables cover different hops");
        rows.push_back(&t[r]);
      }
      csv += std::to_string(hop) + "," + std::to_string(rows.size());
      for (auto field : {&HopMetrics::tre_mean_mm, &HopMetrics::dsc, &HopMetrics::ncc, &HopMetrics::mse,
                         &HopMetrics::mi, &HopMetrics::pct_neg_jac, &HopMetrics::uncertainty}) {
        std::vector<double> v;
        for (const auto* row : rows)
          if (!std::isnan(row->*field)) v.push_back(row->*field);
        csv += "," + format_number(v.empty() ? HopMetrics::kMissing : median(v));
      }
      csv += "\n";
    }
    write_text(a.out / "metrics_by_hop.csv", csv);
    ++written;
  }

  for (std::size_t i = 0; i < a.registrations.size(); ++i) {
    const fs::path dir = a.out / (a.registrations.size() == 1 ? fs::path() : fs::path("registration_" + std::to_string(i)));
    const json manifest = read_json(a.registrations[i] / kRegistrationManifest);
    const int hops = manifest.at("hops").get<int>();
    for (int k = 1; k <= hops; ++k) {
      const Volume3 warped = read_volume(a.registrations[i] / warped_file(k));
      const DisplacementField phi = read_field(a.registrations[i] / field_file(k));
      const Volume3 jac = jacobian_map(phi);
      for (Plane p : {Plane::Axial, Plane::Coronal, Plane::Sagittal}) {
        const std::string tag = "_hop" + std::to_string(k) + "_" + plane_name(p);
        write_text(dir / ("warped" + tag + ".pgm"), encode_pgm(extract_slice(warped, p)));
        write_text(dir / ("jacobian" + tag + ".ppm"), encode_jacobian_ppm(extract_slice(jac, p)));
        written += 2;
      }
    }
  }
  out << "wrote " << written << " report files to " << a.out.string() << "\n";
}

// ---------------------------------------------------------------- loo

struct LooArgs {
  fs::path cohort, config, out;
  std::optional<int> epochs;
};

void cmd_loo(const LooArgs& a, const Globals& g, std::ostream& out) {
  TrainConfig tc = load_train_config(a.config, g);
  if (a.epochs) tc.epochs = *a.epochs;
  const auto cohort = read_cohort(a.cohort);
  const LooResult result = loo_eval(cohort, tc, g.jobs);
  std::string csv = "held_out,hop,tre_mean_mm,tre_std_mm,dsc,ncc,mse,mi,pct_neg_jac\n";
  for (const auto& row : result.rows) {
    const auto& m = row.metrics;
    csv += std::to_string(row.held_out) + "," + std::to_string(m.hop);
    for (double x : {m.tre_mean_mm, m.tre_std_mm, m.dsc, m.ncc, m.mse, m.mi, m.pct_neg_jac})
      csv += "," + format_number(x);
    csv += "\n";
  }
  write_text(a.out, csv);
  out << "wrote " << result.rows.size() << " rows to " << a.out.string() << "\n";
}

// ---------------------------------------------------------------- defaults

void cmd_defaults(const std::string& kind, std::ostream& out) {
  json j;
  if (kind == "train") j = to_json(TrainConfig{});
  else if (kind == "cohort") j = to_json(CohortConfig{});
  else if (kind == "arch") j = to_json(ArchConfig{});
  else if (kind == "empirical") j = to_json(WeightScheme::empirical());
  else if (kind == "constant") j = to_json(WeightScheme::constant());
  else if (kind == "empirical_brain") j = to_json(WeightScheme::empirical_brain());
  else throw InputError("unknown defaults kind '" + kind + "'");
  out << j.dump(2) << "\n";
}

}  // namespace

std::string field_file(int hop) { return "dvf_hop" + std::to_string(hop) + ".vhdr"; }
std::string warped_file(int hop) { return "warped_hop" + std::to_string(hop) + ".vhdr"; }
std::string attention_file(int hop) { return "attention_hop" + std::to_string(hop) + ".csv"; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-hop attention registration toolkit", "vcor"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--jobs", g.jobs, "Worker threads for case-level parallelism")->check(CLI::PositiveNumber);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a phantom cohort");
  phantom->add_option("--out", pa.out, "Output directory")->required();
  phantom->add_option("--config", pa.config, "Cohort config JSON")->check(CLI::ExistingFile);
  phantom->add_option("--count", pa.count, "Number of cases");
  phantom->add_option("--dims", pa.dims, "Grid dimensions")->expected(3);
  phantom->add_option("--spacing", pa.spacing, "Voxel spacing in mm")->expected(3);
  phantom->add_option("--amplitude", pa.amplitudes, "Deformation amplitudes in voxels, cycled over cases");
  phantom->add_option("--smoothness", pa.smoothness, "Gaussian smoothing of the deformation, voxels");
  phantom->add_option("--landmarks", pa.landmarks, "Landmarks per case");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a cohort");
  train_cmd->add_option("--cohort", ta.cohort, "Cohort directory")->required();
  train_cmd->add_option("--config", ta.config, "Training config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", ta.history, "History CSV (default: <out>.history.csv)");
  train_cmd->add_option("--epochs", ta.epochs, "Override epochs");
  train_cmd->add_option("--hops", ta.hops, "Override hop count");
  train_cmd->add_option("--lr", ta.lr, "Override initial learning rate");

  RegisterArgs ra;
  auto* reg = app.add_subcommand("register", "Register a pair with a checkpoint");
  reg->add_option("--checkpoint", ra.checkpoint, "Checkpoint")->required();
  reg->add_option("--reference", ra.reference, "Reference volume header")->required();
  reg->add_option("--source", ra.source, "Source volume header")->required();
  reg->add_option("--out", ra.out, "Output directory")->required();
  reg->add_option("--hops", ra.hops, "Hop count (default: the model's)");
  reg->add_option("--ensemble", ra.ensemble, "Noisy-source ensemble size for uncertainty; 0 disables")
      ->capture_default_str();
  reg->add_option("--sigma", ra.sigma, "Ensemble noise standard deviation")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a registration against its case");
  eval->add_option("--case", ea.case_dir, "Case directory")->required();
  eval->add_option("--registration", ea.registration, "Registration directory")->required();
  eval->add_option("--out", ea.out, "Metrics CSV (default: <registration>/metrics.csv)");
  eval->add_option("--mi-bins", ea.mi_bins, "Histogram bins for mutual information")->capture_default_str();

  BoundsArgs ba;
  auto* bounds = app.add_subcommand("bounds", "Confidence/uncertainty series and bound certification");
  bounds->add_option("--metrics", ba.metrics, "Metrics CSVs, one per case")->required();
  bounds->add_option("--scheme", ba.scheme, "empirical, constant, empirical_brain or both")->capture_default_str();
  bounds->add_option("--scheme-config", ba.scheme_config, "Custom weight scheme JSON")->check(CLI::ExistingFile);
  bounds->add_option("--psi", ba.psi, "identity or logistic")->capture_default_str();
  bounds->add_option("--gain", ba.gain, "Logistic gain")->capture_default_str();
  bounds->add_option("--out", ba.out, "Bounds report JSON")->required();

  ReportArgs rpa;
  auto* report = app.add_subcommand("report", "Plot-data CSVs and slice rasters");
  report->add_option("--bounds", rpa.bounds, "Bounds report JSONs");
  report->add_option("--metrics", rpa.metrics, "Metrics CSVs");
  report->add_option("--registration", rpa.registrations, "Registration directories");
  report->add_option("--out", rpa.out, "Output directory")->required();

  LooArgs la;
  auto* loo = app.add_subcommand("loo", "Leave-one-out training and evaluation");
  loo->add_option("--cohort", la.cohort, "Cohort directory")->required();
  loo->add_option("--config", la.config, "Training config JSON")->check(CLI::ExistingFile);
  loo->add_option("--out", la.out, "Per-fold, per-hop CSV")->required();
  loo->add_option("--epochs", la.epochs, "Override epochs");

  std::string kind = "train";
  auto* defaults = app.add_subcommand("defaults", "Print a default configuration");
  defaults->add_option("kind", kind, "train, cohort, arch, empirical, constant or empirical_brain")
      ->capture_default_str();

  std::vector<std::string> argv_store{"vcor"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*phantom) cmd_phantom(pa, g, out);
    else if (*train_cmd) cmd_train(ta, g, out);
    else if (*reg) cmd_register(ra, g, out);
    else if (*eval) cmd_eval(ea, out);
    else if (*bounds) cmd_bounds(ba, out);
    else if (*report) cmd_report(rpa, out);
    else if (*loo) cmd_loo(la, g, out);
    else if (*defaults) cmd_defaults(kind, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}

}  // namespace vcor
