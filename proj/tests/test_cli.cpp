#include <gtest/gtest.h>

#include "acfr/cli.hpp"
#include "acfr/textio.hpp"

#include <cstdlib>
#include <cstring>
#include <set>
#include <sstream>
#include <sys/wait.h>

namespace acfr {
namespace {

fs::path fresh(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("acfr_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

// A small but complete experiment; tiny so every command runs in seconds.
RunConfig small_run(double alpha = 2.0) {
  return parse_run_config(R"({
    "dataset": {"kind": "news-like", "n": 200, "d": 8, "alpha": )" + std::to_string(alpha) + R"(, "seed": 3},
    "model": {"hidden_width": 12, "repr_dim": 8, "tokens": 2, "attn_dim": 4, "value_dim": 4, "head_width": 4},
    "train": {"iterations": 30, "batch_size": 16, "inner_steps": 2, "eval_interval": 10, "lr_outcome": 1e-3},
    "eval": {"splits": ["test", "train"]},
    "seeds": [0, 1],
    "methods": ["acfr", "mlp"]
  })");
}

std::string strip_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

TEST(RunConfigParse, UnknownKeysRejected) {
  EXPECT_THROW(parse_run_config(R"({"datset": {}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"gama": 1}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"spline": {"degre": 2}}})"), ConfigError);
  try {
    parse_run_config(R"({"train": {"gama": 1}})");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gama"), std::string::npos) << e.what();
  }
}

TEST(RunConfigParse, ValuesAndDefaults) {
  const RunConfig c = small_run();
  EXPECT_EQ(c.dataset.n, 200);
  EXPECT_EQ(c.model.hidden_width, 12);
  EXPECT_EQ(c.train.inner_steps, 2);
  EXPECT_EQ(c.train.gamma, 1.0);
  EXPECT_EQ(c.train.batch_size, 16);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(c.eval.splits.size(), 2u);
  const RunConfig d = parse_run_config("{}");
  EXPECT_EQ(d.train.lr_outcome, 1e-4);
  EXPECT_EQ(d.train.inner_steps, 10);
  EXPECT_EQ(d.train.batch_size, 64);
  EXPECT_EQ(d.sweep.alphas.size(), 6u);
  EXPECT_EQ(d.sweep.realizations, 5);
}

TEST(RunConfigParse, RoundTripThroughJson) {
  const RunConfig c = small_run();
  EXPECT_EQ(run_config_json(parse_run_config(run_config_json(c))), run_config_json(c));
}

TEST(RunConfigParse, MissingCovariateFileRejected) {
  EXPECT_THROW(parse_run_config(R"({"dataset": {"covariate_file": "nope.csv"}})", fs::temp_directory_path()),
               ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"methods": ["svm"]})"), std::invalid_argument);
}

TEST(OutputDir, Precedence) {
  RunConfig c;
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(resolve_output_dir(std::nullopt, c, "train"), fs::path("acfr-out") / "train");
  ::setenv(kOutputRootEnv, "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir(std::nullopt, c, "train"), fs::path("/tmp/root") / "train");
  c.output_dir = "/tmp/cfg";
  EXPECT_EQ(resolve_output_dir(std::nullopt, c, "train"), fs::path("/tmp/cfg"));
  EXPECT_EQ(resolve_output_dir(fs::path("/tmp/flag"), c, "train"), fs::path("/tmp/flag"));
  ::unsetenv(kOutputRootEnv);
}

TEST(Generate, SplitSizesInSummary) {
  RunConfig c;
  c.dataset.n = 5000;
  c.dataset.d = 5;
  const GenerateSummary s = cmd_generate(c, fresh("gen5000"));
  EXPECT_EQ(s.train, 3400u);
  EXPECT_EQ(s.val, 600u);
  EXPECT_EQ(s.test, 1000u);
  EXPECT_NE(s.to_text().find("split = 3400/600/1000"), std::string::npos) << s.to_text();
}

TEST(Generate, RerunIsByteIdentical) {
  const RunConfig c = small_run();
  const fs::path a = fresh("gen_a"), b = fresh("gen_b");
  cmd_generate(c, a);
  cmd_generate(c, b);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(read_file(entry.path()), read_file(b / entry.path().filename())) << entry.path();
    ++files;
  }
  EXPECT_GE(files, 3u);
}

TEST(Generate, NoBiasReportsNearZeroCorrelation) {
  RunConfig c;
  c.dataset.alpha = 1.0;
  c.dataset.n = 10000;
  c.dataset.d = 10;
  c.dataset.seed = 5;
  EXPECT_NEAR(cmd_generate(c, fresh("gen_alpha1")).corr_t_optimal, 0.0, 0.03);
}

class TrainedFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fresh("trained");
    cmd_generate(small_run(), root_ / "data");
    std::ostringstream log;
    runs_ = cmd_train(small_run(), root_ / "data", root_ / "runs", log);
    log_ = log.str();
  }
  static fs::path root_;
  static std::vector<TrainedRun> runs_;
  static std::string log_;
};
fs::path TrainedFixture::root_;
std::vector<TrainedRun> TrainedFixture::runs_;
std::string TrainedFixture::log_;

TEST_F(TrainedFixture, OneRunPerMethodAndSeed) {
  ASSERT_EQ(runs_.size(), 4u);
  for (const TrainedRun& r : runs_) {
    EXPECT_TRUE(fs::exists(r.checkpoint));
    EXPECT_EQ(r.checkpoint.parent_path(), run_dir(root_ / "runs", r.method, r.seed));
    const std::string h = read_file(r.history);
    EXPECT_EQ(std::count(h.begin(), h.end(), '\n'), 31);
    EXPECT_EQ(load_checkpoint(r.checkpoint).train.seed, r.seed);
  }
}

TEST_F(TrainedFixture, MlpWithCustomAttentionWarns) {
  EXPECT_NE(log_.find("warning"), std::string::npos) << log_;
}

TEST_F(TrainedFixture, RetrainIsByteIdentical) {
  std::ostringstream log;
  const auto again = cmd_train(small_run(), root_ / "data", root_ / "runs_again", log);
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    EXPECT_EQ(read_file(again[i].checkpoint), read_file(runs_[i].checkpoint));
    EXPECT_EQ(strip_wall_ms(read_file(again[i].history)), strip_wall_ms(read_file(runs_[i].history)));
  }
}

TEST_F(TrainedFixture, OracleScoresZero) {
  const auto rows = cmd_eval({}, root_ / "data", {Split::kTest, Split::kTrain}, root_ / "oracle.csv", true);
  ASSERT_EQ(rows.size(), 2u);
  for (const MetricsRow& r : rows) {
    EXPECT_EQ(r.method, "oracle");
    EXPECT_EQ(r.mise, 0.0);
    EXPECT_EQ(r.pe, 0.0);
  }
}

TEST_F(TrainedFixture, SplitsLabeledAndAppended) {
  const fs::path report = root_ / "eval.csv";
  fs::remove(report);
  const auto rows = cmd_eval(runs_[0].checkpoint, root_ / "data", {Split::kTest, Split::kTrain}, report, false);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].split, "out-of-sample");
  EXPECT_EQ(rows[1].split, "within-sample");
  EXPECT_NE(rows[0].mise, rows[1].mise);
  cmd_eval(runs_[0].checkpoint, root_ / "data", {Split::kTest}, report, false);
  const auto parsed = parse_metrics_csv(read_file(report));
  EXPECT_EQ(parsed.size(), 3u);
  EXPECT_EQ(parsed[0].mise, rows[0].mise);
}

TEST_F(TrainedFixture, DimensionMismatchIsExplicit) {
  RunConfig other = small_run();
  other.dataset.d = 9;
  cmd_generate(other, root_ / "data9");
  EXPECT_THROW(cmd_eval(runs_[0].checkpoint, root_ / "data9", {Split::kTest}, root_ / "bad.csv", false), ShapeError);
}

TEST_F(TrainedFixture, EvalReportIsDeterministic) {
  const fs::path a = root_ / "det_a.csv", b = root_ / "det_b.csv";
  fs::remove(a);
  fs::remove(b);
  cmd_eval(runs_[1].checkpoint, root_ / "data", {Split::kTest}, a, false);
  cmd_eval(runs_[1].checkpoint, root_ / "data", {Split::kTest}, b, false);
  EXPECT_EQ(read_file(a), read_file(b));
}

TEST(Train, GammaZeroAndDisabledAdversaryGiveSameWeights) {
  const fs::path root = fresh("gamma0");
  RunConfig c = small_run();
  c.methods = {Method::kAcfr};
  c.seeds = {4};
  cmd_generate(c, root / "data");
  std::ostringstream log;
  c.train.gamma = 0.0;
  const auto a = cmd_train(c, root / "data", root / "a", log);
  c.train.adversary = false;
  const auto b = cmd_train(c, root / "data", root / "b", log);
  const Checkpoint ca = load_checkpoint(a[0].checkpoint), cb = load_checkpoint(b[0].checkpoint);
  for (const auto& [name, w] : ca.params.weights) {
    const Matrix& o = cb.params.at(name);
    EXPECT_EQ(std::memcmp(w.data(), o.data(), sizeof(double) * w.size()), 0) << name;
  }
}

TEST(Train, DivergenceSavesPartialHistory) {
  const fs::path root = fresh("diverge");
  RunConfig c = small_run();
  c.methods = {Method::kMlp};
  c.seeds = {0};
  c.train.lr_outcome = 1e4;
  c.train.iterations = 200;
  cmd_generate(c, root / "data");
  std::ostringstream log;
  EXPECT_THROW(cmd_train(c, root / "data", root / "runs", log), TrainingDiverged);
  const fs::path history = run_dir(root / "runs", Method::kMlp, 0) / "history.csv";
  ASSERT_TRUE(fs::exists(history));
  const std::string h = read_file(history);
  EXPECT_LT(std::count(h.begin(), h.end(), '\n'), 201);
}

TEST(Train, UntrainedCheckpointScoresWorse) {
  const fs::path root = fresh("untrained");
  RunConfig c = parse_run_config(R"({"dataset": {"kind": "tcga-like", "n": 500, "d": 20},
                                     "train": {"iterations": 1000}, "methods": ["acfr"]})");
  cmd_generate(c, root / "data");
  std::ostringstream log;
  const auto runs = cmd_train(c, root / "data", root / "runs", log);
  Checkpoint untrained = load_checkpoint(runs[0].checkpoint);
  untrained.params = init_params(untrained.model, untrained.train.seed);
  untrained.iteration = 0;
  save_checkpoint(untrained, root / "untrained.json");
  const auto before = cmd_eval(root / "untrained.json", root / "data", {Split::kTest}, root / "m.csv", false);
  const auto after = cmd_eval(runs[0].checkpoint, root / "data", {Split::kTest}, root / "m.csv", false);
  EXPECT_GT(before[0].mise, after[0].mise);
}

TEST(SweepBias, CardinalityAndFiles) {
  const fs::path out = fresh("sweep");
  RunConfig c = small_run();
  std::ostringstream log;
  const SweepResult r = cmd_sweep_bias(c, {1.0, 3.0}, {0, 1}, out, log);
  EXPECT_EQ(r.rows.size(), 2u * 2u * 2u * 2u);  // alphas x seeds x methods x splits
  EXPECT_TRUE(r.failures.empty());
  const auto parsed = parse_metrics_csv(read_file(out / "report.csv"));
  EXPECT_EQ(parsed.size(), r.rows.size());
  std::set<std::tuple<double, std::uint64_t, std::string, std::string>> cells;
  for (const MetricsRow& row : parsed) cells.emplace(row.alpha, row.seed, row.method, row.split);
  EXPECT_EQ(cells.size(), parsed.size());

  const fs::path again = fresh("sweep_again");
  cmd_sweep_bias(c, {1.0, 3.0}, {0, 1}, again, log);
  EXPECT_EQ(read_file(again / "report.csv"), read_file(out / "report.csv"));
  EXPECT_THROW(cmd_sweep_bias(c, {0.5}, {0}, fresh("sweep_bad"), log), std::invalid_argument);
}

TEST(SweepBias, SinglePointMatchesComposition) {
  RunConfig c = small_run(2.0);
  c.seeds = {3};
  c.eval.splits = {Split::kTest};
  std::ostringstream log;
  const SweepResult sweep = cmd_sweep_bias(c, {2.0}, {3}, fresh("sweep_single"), log);

  const fs::path root = fresh("composed");
  c.dataset.seed = 3;
  cmd_generate(c, root / "data");
  const auto runs = cmd_train(c, root / "data", root / "runs", log);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto rows = cmd_eval(runs[i].checkpoint, root / "data", {Split::kTest}, root / "m.csv", false);
    EXPECT_EQ(rows[0].mise, sweep.rows[i].mise);
    EXPECT_EQ(rows[0].pe, sweep.rows[i].pe);
  }
}

TEST(VerifyBoundsCmd, IndependentInstanceHasZeroGap) {
  const fs::path out = fresh("verify_ind");
  const VerifyReport r = cmd_verify_bounds({}, true, out);
  EXPECT_EQ(r.violations(), 0);
  EXPECT_NE(read_file(out / "bounds.txt").find("eps_cf_minus_eps_f = 0\n"), std::string::npos)
      << read_file(out / "bounds.txt");
}

TEST(VerifyBoundsCmd, RerunIsIdentical) {
  VerifyConfig v;
  v.instances = 100;
  cmd_verify_bounds(v, false, fresh("verify_a"));
  cmd_verify_bounds(v, false, fresh("verify_b"));
  EXPECT_EQ(read_file(fs::temp_directory_path() / "acfr_cli_verify_a" / "bounds.txt"),
            read_file(fs::temp_directory_path() / "acfr_cli_verify_b" / "bounds.txt"));
}

TEST(GradCheckCmd, CoversComponentsAndIsDeterministic) {
  const GradCheckReport r = cmd_grad_check(3, fresh("grad_a"));
  EXPECT_GE(r.components.size(), 6u);
  EXPECT_TRUE(r.passed());
  std::set<std::string> groups;
  for (const auto& c : r.components) groups.insert(c.name.substr(0, c.name.find('.')));
  EXPECT_EQ(groups, (std::set<std::string>{"primitive", "model", "loss"}));
  cmd_grad_check(3, fresh("grad_b"));
  EXPECT_EQ(read_file(fs::temp_directory_path() / "acfr_cli_grad_a" / "gradcheck.txt"),
            read_file(fs::temp_directory_path() / "acfr_cli_grad_b" / "gradcheck.txt"));
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(ACFR_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(ExitCodes, UsageConfigAndNumerical) {
  const fs::path root = fresh("exit");
  fs::create_directories(root);
  EXPECT_EQ(run_binary("--help"), kExitOk);
  EXPECT_EQ(run_binary(""), kExitUsage);
  EXPECT_EQ(run_binary("frobnicate"), kExitUsage);
  write_file(root / "bad.json", R"({"dataset": {"colour": 1}})");
  EXPECT_EQ(run_binary("generate --config " + (root / "bad.json").string() + " --out " + (root / "g").string()),
            kExitUsage);
  write_file(root / "ok.json", R"({"dataset": {"n": 100, "d": 4}})");
  EXPECT_EQ(run_binary("generate --config " + (root / "ok.json").string() + " --out " + (root / "g").string()),
            kExitOk);
  EXPECT_EQ(run_binary("verify-bounds --independent --out " + (root / "vi").string()), kExitOk);
  const int verify = run_binary("verify-bounds --instances 20 --out " + (root / "v").string());
  const bool violated = read_file(root / "v" / "bounds.txt").find("total_violations = 0\n") == std::string::npos;
  EXPECT_EQ(verify, violated ? kExitNumerical : kExitOk);
  write_file(root / "diverge.json",
             R"({"dataset": {"n": 100, "d": 4}, "train": {"lr_outcome": 1e4, "batch_size": 16, "iterations": 200},
                 "methods": ["mlp"]})");
  EXPECT_EQ(run_binary("train --config " + (root / "diverge.json").string() + " --data " + (root / "g").string() +
                       " --out " + (root / "t").string()),
            kExitNumerical);
  EXPECT_EQ(run_binary("grad-check --out " + (root / "gc").string()), kExitOk);
}

}  // namespace
}  // namespace acfr
