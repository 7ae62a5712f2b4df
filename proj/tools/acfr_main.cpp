#include "acfr/cli.hpp"
#include "acfr/textio.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace acfr;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string data;
  std::string checkpoint;
  std::vector<std::string> splits;
  bool oracle = false;
  std::vector<double> alphas;
  std::optional<int> realizations;
  int instances = 1000;
  int max_z = 8;
  int max_t = 8;
  bool independent = false;
  int count = 1;
};

std::optional<fs::path> out_flag(const Flags& f) {
  if (f.out) return fs::path(*f.out);
  return std::nullopt;
}

RunConfig config_or_default(const Flags& f) { return f.config.empty() ? RunConfig{} : load_run_config(f.config); }

int run_generate(const Flags& f) {
  RunConfig cfg = load_run_config(f.config);
  if (f.seed) cfg.dataset.seed = *f.seed;
  const fs::path out = resolve_output_dir(out_flag(f), cfg, "generate");
  std::cout << cmd_generate(cfg, out).to_text();
  return kExitOk;
}

int run_train(const Flags& f) {
  RunConfig cfg = load_run_config(f.config);
  if (f.seed) cfg.seeds = {*f.seed};
  const fs::path out = resolve_output_dir(out_flag(f), cfg, "train");
  cmd_train(cfg, f.data, out, std::cerr);
  return kExitOk;
}

int run_eval(const Flags& f) {
  const RunConfig cfg = config_or_default(f);
  std::vector<Split> splits = cfg.eval.splits;
  if (!f.splits.empty()) {
    splits.clear();
    for (const auto& s : f.splits) splits.push_back(parse_split(s));
  }
  if (!f.oracle && f.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required unless --oracle is set");
  const fs::path out = resolve_output_dir(out_flag(f), cfg, "eval");
  for (const auto& row : cmd_eval(f.checkpoint, f.data, splits, out / "metrics.csv", f.oracle)) {
    std::cout << metrics_line(row) << "\n";
  }
  return kExitOk;
}

int run_sweep(const Flags& f) {
  const RunConfig cfg = load_run_config(f.config);
  const std::vector<double> alphas = f.alphas.empty() ? cfg.sweep.alphas : f.alphas;
  const int realizations = f.realizations.value_or(cfg.sweep.realizations);
  if (realizations < 1) throw ConfigError("sweep-bias: --realizations must be at least 1");
  const std::uint64_t base = f.seed.value_or(cfg.seeds.front());
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < realizations; ++r) seeds.push_back(base + static_cast<std::uint64_t>(r));
  const fs::path out = resolve_output_dir(out_flag(f), cfg, "sweep-bias");
  const SweepResult result = cmd_sweep_bias(cfg, alphas, seeds, out, std::cerr);
  std::cout << "rows = " << result.rows.size() << "\nfailures = " << result.failures.size() << "\n";
  return kExitOk;
}

int run_verify(const Flags& f) {
  VerifyConfig vc;
  vc.instances = f.instances;
  vc.max_z = f.max_z;
  vc.max_t = f.max_t;
  vc.seed = f.seed.value_or(7);
  const fs::path out = resolve_output_dir(out_flag(f), RunConfig{}, "verify-bounds");
  const VerifyReport report = cmd_verify_bounds(vc, f.independent, out);
  std::cout << report.to_text();
  return report.violations() == 0 ? kExitOk : kExitNumerical;
}

int run_grad_check(const Flags& f) {
  if (f.count < 1) throw ConfigError("grad-check: --count must be at least 1");
  const fs::path out = resolve_output_dir(out_flag(f), RunConfig{}, "grad-check");
  bool ok = true;
  const std::uint64_t base = f.seed.value_or(0);
  for (int i = 0; i < f.count; ++i) {
    const std::uint64_t seed = base + static_cast<std::uint64_t>(i);
    const GradCheckReport report = cmd_grad_check(seed, out / ("seed-" + std::to_string(seed)));
    std::cout << report.to_text();
    ok = ok && report.passed();
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial counterfactual regression for continuous treatments"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", f.config, "run configuration (JSON)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "seed override");
    sub->add_option("--out", f.out, "output directory");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  common(gen, true);

  auto* tr = app.add_subcommand("train", "train every configured method and seed");
  common(tr, true);
  tr->add_option("--data", f.data, "dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* ev = app.add_subcommand("eval", "score a checkpoint with MISE and PE");
  common(ev, false);
  ev->add_option("--data", f.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--checkpoint", f.checkpoint, "checkpoint file");
  ev->add_option("--split", f.splits, "train | val | test (repeatable)");
  ev->add_flag("--oracle", f.oracle, "score the ground truth itself");

  auto* sw = app.add_subcommand("sweep-bias", "MISE and PE over selection-bias levels");
  common(sw, true);
  sw->add_option("--alphas", f.alphas, "alpha values")->delimiter(',');
  sw->add_option("--realizations", f.realizations, "datasets per alpha");

  auto* vb = app.add_subcommand("verify-bounds", "check the generalization bounds on random discrete instances");
  common(vb, false);
  vb->add_option("--instances", f.instances, "instance count");
  vb->add_option("--max-z", f.max_z, "largest |Z|");
  vb->add_option("--max-t", f.max_t, "largest |T|");
  vb->add_flag("--independent", f.independent, "check a single independent instance");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  common(gc, false);
  gc->add_option("--count", f.count, "number of consecutive seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return run_generate(f);
    if (*tr) return run_train(f);
    if (*ev) return run_eval(f);
    if (*sw) return run_sweep(f);
    if (*vb) return run_verify(f);
    if (*gc) return run_grad_check(f);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
