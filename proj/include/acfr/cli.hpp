#pragma once

// Commands behind the acfr executable. Each is a function of a RunConfig,
// its explicit arguments and the seed; output goes to files under out_dir.

#include "acfr/config_json.hpp"
#include "acfr/datagen.hpp"
#include "acfr/gradcheck.hpp"
#include "acfr/model.hpp"
#include "acfr/theory.hpp"
#include "acfr/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace acfr {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr const char* kOutputRootEnv = "ACFR_OUTPUT_ROOT";

struct EvalConfig {
  std::vector<Split> splits{Split::kTest};
};

struct SweepConfig {
  std::vector<double> alphas{1, 2, 3, 4, 5, 6};
  int realizations = 5;
};

struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  AdversaryFitConfig probe;
  SweepConfig sweep;
  std::string output_dir;
  std::vector<std::uint64_t> seeds{0};
  std::vector<Method> methods{Method::kAcfr, Method::kMlp};
};

// Relative paths inside the document resolve against base_dir.
RunConfig parse_run_config(std::string_view text, const fs::path& base_dir = {});
RunConfig load_run_config(const fs::path& path);
std::string run_config_json(const RunConfig& cfg);

// --out, else the config's output_dir, else $ACFR_OUTPUT_ROOT/<command>, else ./acfr-out/<command>.
fs::path resolve_output_dir(const std::optional<fs::path>& flag, const RunConfig& cfg, const std::string& command);

struct GenerateSummary {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  double alpha = 0;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  double mean_t = 0;
  double corr_t_optimal = 0;

  std::string to_text() const;
};

GenerateSummary summarize(const Dataset& data);
GenerateSummary cmd_generate(const RunConfig& cfg, const fs::path& out_dir);

struct TrainedRun {
  Method method;
  std::uint64_t seed;
  fs::path checkpoint;
  fs::path history;
};

fs::path run_dir(const fs::path& out_dir, Method method, std::uint64_t seed);

// Model config with input_dim taken from the data.
ModelConfig model_for(const RunConfig& cfg, Method method, const Dataset& data);

std::vector<TrainedRun> cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir,
                                  std::ostream& log);

// Scores a checkpoint (or the ground truth itself when oracle is set) and appends rows to report_path.
std::vector<MetricsRow> evaluate(const ModelParams& params, const ModelConfig& model, const Dataset& data,
                                 Split split, const std::string& method_label, std::uint64_t seed);
std::vector<MetricsRow> evaluate_oracle(const Dataset& data, Split split, std::uint64_t seed);
std::vector<MetricsRow> cmd_eval(const fs::path& checkpoint, const fs::path& dataset_dir,
                                 const std::vector<Split>& splits, const fs::path& report_path, bool oracle);
void append_metrics(const fs::path& report_path, std::span<const MetricsRow> rows);

struct SweepResult {
  std::vector<MetricsRow> rows;
  std::vector<std::string> failures;
};

SweepResult cmd_sweep_bias(const RunConfig& cfg, const std::vector<double>& alphas,
                           const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, std::ostream& log);

// A product joint with random losses: the case where both errors coincide.
DiscreteInstance independence_instance(std::uint64_t seed);
VerifyReport cmd_verify_bounds(const VerifyConfig& cfg, bool independent, const fs::path& out_dir);

GradCheckReport cmd_grad_check(std::uint64_t seed, const fs::path& out_dir);

}  // namespace acfr
