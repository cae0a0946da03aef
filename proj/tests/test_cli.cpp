#include <doctest.h>

#include <set>
#include <sstream>

#include "vcor/cli.hpp"
#include "vcor/io.hpp"

using namespace vcor;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// One small cohort, a lr-0 checkpoint and a trained one, shared by the suite.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "vcor_test_cli";
  fs::path cohort = root / "cohort";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    TrainConfig t;
    t.epochs = 2;
    t.learning_rate = 1e-3;
    t.arch.depth = 2;
    t.arch.channels = 8;
    t.eval_every = 0;
    write_text(root / "train.json", to_json(t).dump(2));
    REQUIRE(cli({"--seed", "4", "phantom", "--out", cohort.string(), "--count", "3", "--dims", "16", "16", "16",
                 "--landmarks", "10"})
                .code == 0);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string p(const std::string& rel) const { return (root / rel).string(); }
  std::string c(const std::string& rel) const { return (cohort / rel).string(); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

// Registration of case 0 with an untrained (zero-flow) checkpoint.
fs::path zero_registration() {
  auto& w = workspace();
  const fs::path dir = w.root / "reg0";
  if (fs::exists(dir / kRegistrationManifest)) return dir;
  REQUIRE(cli({"train", "--cohort", w.cohort.string(), "--config", w.p("train.json"), "--out", w.p("zero.ckpt"),
               "--lr", "0", "--epochs", "1"})
              .code == 0);
  REQUIRE(cli({"register", "--checkpoint", w.p("zero.ckpt"), "--reference", w.c("case_000/reference.vhdr"),
               "--source", w.c("case_000/source.vhdr"), "--out", dir.string(), "--ensemble", "2"})
              .code == 0);
  return dir;
}

std::set<std::string> files_under(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) names.insert(fs::relative(e.path(), dir).generic_string());
  return names;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  const auto fa = files_under(a);
  if (fa != files_under(b)) return false;
  for (const auto& f : fa)
    if (read_text(a / f) != read_text(b / f)) return false;
  return true;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("phantom writes complete, reproducible case directories") {
  auto& w = workspace();
  const json manifest = read_json(w.cohort / "manifest.json");
  REQUIRE(manifest.at("cases").size() == 3);
  std::set<std::string> listed{"manifest.json"};
  for (const auto& c : manifest.at("cases"))
    for (const auto& f : c.at("files")) listed.insert(c.at("dir").get<std::string>() + "/" + f.get<std::string>());
  CHECK(listed == files_under(w.cohort));
  CHECK(read_cohort(w.cohort).size() == 3);

  REQUIRE(cli({"--seed", "4", "--jobs", "2", "phantom", "--out", w.p("again"), "--count", "3", "--dims", "16", "16",
               "16", "--landmarks", "10"})
              .code == 0);
  CHECK(same_tree(w.cohort, w.root / "again"));
  REQUIRE(cli({"--seed", "5", "phantom", "--out", w.p("other"), "--count", "1", "--dims", "16", "16", "16"}).code == 0);
  CHECK(read_text(w.cohort / "case_000/reference.raw") != read_text(w.root / "other/case_000/reference.raw"));
}

TEST_CASE("train reports missing inputs with exit code 2") {
  auto& w = workspace();
  const Run r = cli({"train", "--cohort", w.p("nowhere"), "--out", w.p("x.ckpt")});
  CHECK(r.code == kExitInput);
  CHECK(r.err.find("nowhere") != std::string::npos);
  CHECK(cli({"train", "--out", w.p("x.ckpt")}).code == kExitInput);
  CHECK(cli({"frobnicate"}).code == kExitInput);
  CHECK(cli({}).code == kExitInput);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("train writes a loadable checkpoint and one history row per epoch") {
  auto& w = workspace();
  const Run r = cli({"train", "--cohort", w.cohort.string(), "--config", w.p("train.json"), "--out", w.p("m.ckpt"),
                     "--epochs", "3"});
  REQUIRE(r.code == 0);
  CHECK(load_checkpoint(w.root / "m.ckpt").arch.channels == 8);
  const std::string history = read_text(w.root / "m.history.csv");
  CHECK(std::count(history.begin(), history.end(), '\n') == 1 + 3);
}

TEST_CASE("a zero-flow checkpoint registers to the source payload") {
  auto& w = workspace();
  zero_registration();
  for (int k = 1; k <= 3; ++k) {
    CHECK(read_text(w.root / "reg0" / ("warped_hop" + std::to_string(k) + ".raw")) ==
          read_text(w.cohort / "case_000/source.raw"));
    CHECK(read_field(w.root / "reg0" / field_file(k)).vectors.isZero(0.0));
    CHECK(fs::exists(w.root / "reg0" / attention_file(k)));
  }
  const json m = read_json(w.root / "reg0" / kRegistrationManifest);
  CHECK(m.at("hops") == 3);
  CHECK(m.at("uncertainty").size() == 3);

  // Evaluation of the identity equals the unregistered metrics.
  REQUIRE(cli({"eval", "--case", w.c("case_000"), "--registration", w.p("reg0")}).code == 0);
  const auto rows = read_metrics_csv(w.root / "reg0/metrics.csv");
  REQUIRE(rows.size() == 3);
  const HopMetrics base = evaluate_baseline(read_case(w.cohort / "case_000"));
  for (const auto& row : rows) {
    CHECK(row.tre_mean_mm == base.tre_mean_mm);
    CHECK(row.dsc == base.dsc);
    CHECK(row.mse == base.mse);
    CHECK(row.uncertainty == 0.0);
  }
}

TEST_CASE("register, eval and report are reproducible byte for byte") {
  auto& w = workspace();
  REQUIRE(cli({"train", "--cohort", w.cohort.string(), "--config", w.p("train.json"), "--out", w.p("t.ckpt")}).code ==
          0);
  for (const std::string run : {"a", "b"}) {
    const std::string reg = w.p("reg_" + run);
    REQUIRE(cli({"--seed", "2", "register", "--checkpoint", w.p("t.ckpt"), "--reference",
                 w.c("case_001/reference.vhdr"), "--source", w.c("case_001/source.vhdr"), "--out", reg, "--hops", "2",
                 "--ensemble", "3"})
                .code == 0);
    REQUIRE(cli({"eval", "--case", w.c("case_001"), "--registration", reg}).code == 0);
    REQUIRE(cli({"bounds", "--metrics", reg + "/metrics.csv", "--out", reg + "/bounds.json"}).code == 0);
    REQUIRE(cli({"report", "--bounds", reg + "/bounds.json", "--metrics", reg + "/metrics.csv", "--registration", reg,
                 "--out", w.p("report_" + run)})
                .code == 0);
  }
  CHECK(same_tree(w.root / "reg_a", w.root / "reg_b"));
  CHECK(same_tree(w.root / "report_a", w.root / "report_b"));
  CHECK(read_metrics_csv(w.root / "reg_a/metrics.csv").size() == 2);
  const auto report = files_under(w.root / "report_a");
  CHECK(report.count("jacobian_hop2_sagittal.ppm") == 1);
  CHECK(report.count("warped_hop1_axial.pgm") == 1);
  CHECK(report.count("reliability_series.csv") == 1);
  CHECK(report.count("metrics_by_hop.csv") == 1);
  CHECK(read_text(w.root / "report_a/warped_hop1_coronal.pgm").rfind("P5\n16 16\n255\n", 0) == 0);
}

TEST_CASE("report of an identity registration is uniformly green") {
  auto& w = workspace();
  zero_registration();
  REQUIRE(cli({"report", "--registration", w.p("reg0"), "--out", w.p("report0")}).code == 0);
  const std::string ppm = read_text(w.root / "report0/jacobian_hop1_axial.ppm");
  const std::string header = "P6\n16 16\n255\n";
  REQUIRE(ppm.size() == header.size() + 16 * 16 * 3);
  CHECK(ppm.compare(0, header.size(), header) == 0);
  for (std::size_t i = header.size(); i < ppm.size(); i += 3) {
    REQUIRE(ppm[i] == char(0));
    REQUIRE(ppm[i + 1] == char(255));
    REQUIRE(ppm[i + 2] == char(0));
  }
  CHECK(cli({"report", "--out", w.p("report_none")}).code == kExitInput);
  CHECK(cli({"report", "--registration", w.p("nothing"), "--out", w.p("report_none")}).code == kExitInput);
}

TEST_CASE("bounds certifies monotone series and flags dips by hop") {
  auto& w = workspace();
  const auto row = [](int hop, double tre, double u) {
    HopMetrics m;
    m.hop = hop;
    m.tre_mean_mm = tre;
    m.tre_std_mm = 0;
    m.dsc = 0.8;
    m.ncc = 0.9;
    m.mse = 0.01;
    m.mi = 1.5;
    m.pct_neg_jac = 0;
    m.uncertainty = u;
    return m;
  };
  write_metrics_csv(w.root / "good.csv", {row(1, 3.0, 0.4), row(2, 2.0, 0.2), row(3, 1.0, 0.1)});
  write_metrics_csv(w.root / "dip.csv", {row(1, 3.0, 0.4), row(2, 4.0, 0.5), row(3, 1.0, 0.1)});
  REQUIRE(cli({"bounds", "--metrics", w.p("good.csv"), "--out", w.p("good.json")}).code == 0);
  REQUIRE(cli({"bounds", "--metrics", w.p("dip.csv"), "--scheme", "empirical", "--psi", "logistic", "--out",
               w.p("dip.json")})
              .code == 0);
  const json good = read_json(w.root / "good.json");
  REQUIRE(good.at("schemes").size() == 2);
  CHECK(good.at("schemes")[0].at("mode") == "empirical");
  CHECK(good.at("schemes")[1].at("mode") == "constant");
  for (const auto& s : good.at("schemes")) {
    CHECK(s.at("cohort").at("fit").at("certified_confidence") == true);
    CHECK(s.at("cohort").at("fit").at("certified_uncertainty") == true);
  }
  const json dip = read_json(w.root / "dip.json");
  REQUIRE(dip.at("schemes").size() == 1);
  const json fit = dip.at("schemes")[0].at("cohort").at("fit");
  CHECK(fit.at("certified_confidence") == false);
  CHECK(fit.at("confidence_violations") == json::array({2}));
  CHECK(fit.at("uncertainty_violations") == json::array({2}));

  HopMetrics missing = row(1, 1.0, 0.0);
  missing.uncertainty = HopMetrics::kMissing;
  write_metrics_csv(w.root / "nou.csv", {missing, row(2, 0.5, 0.0)});
  CHECK(cli({"bounds", "--metrics", w.p("nou.csv"), "--out", w.p("nou.json")}).code == kExitInput);
  CHECK(cli({"bounds", "--metrics", w.p("good.csv"), "--scheme", "bogus", "--out", w.p("x.json")}).code ==
        kExitInput);
}

TEST_CASE("defaults print parseable configurations") {
  for (const std::string kind : {"train", "cohort", "arch", "empirical", "constant", "empirical_brain"}) {
    const Run r = cli({"defaults", kind});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out).is_object());
  }
  const Run t = cli({"defaults", "train"});
  CHECK(train_config_from_json(json::parse(t.out)).epochs == 200);
  CHECK(cli({"defaults", "nonsense"}).code == kExitInput);
}

TEST_CASE("numerical failures exit with code 3") {
  auto& w = workspace();
  TrainConfig t;
  t.epochs = 2;
  t.learning_rate = 1e200;
  t.arch.depth = 2;
  t.arch.channels = 8;
  t.init.zero_flow = false;
  write_text(w.root / "diverge.json", to_json(t).dump());
  const Run r = cli({"train", "--cohort", w.cohort.string(), "--config", w.p("diverge.json"), "--out", w.p("d.ckpt")});
  CHECK(r.code == kExitNumerical);
  CHECK(fs::exists(w.root / "d.ckpt"));
  CHECK(fs::exists(w.root / "d.history.csv"));
}

TEST_CASE("loo writes one row per held-out case and hop") {
  auto& w = workspace();
  REQUIRE(cli({"--jobs", "2", "loo", "--cohort", w.cohort.string(), "--config", w.p("train.json"), "--epochs", "1",
               "--out", w.p("loo.csv")})
              .code == 0);
  const std::string csv = read_text(w.root / "loo.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 4);
}

}
