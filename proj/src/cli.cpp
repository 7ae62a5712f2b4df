#include "acfr/cli.hpp"

#include "acfr/textio.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace acfr {

using nlohmann::json;

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  RunConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "dataset") {
        cfg.dataset = dataset_spec_from_json(value, cfg.dataset);
      } else if (key == "model") {
        cfg.model = model_config_from_json(value, cfg.model);
      } else if (key == "train") {
        cfg.train = train_config_from_json(value, cfg.train);
      } else if (key == "probe") {
        cfg.probe = adversary_fit_config_from_json(value, cfg.probe);
      } else if (key == "eval") {
        if (!value.is_object()) throw ConfigError("section 'eval' must be an object");
        for (const auto& [k, v] : value.items()) {
          if (k != "splits") throw ConfigError("unknown key '" + k + "' in section 'eval'");
          cfg.eval.splits.clear();
          for (const auto& s : v) cfg.eval.splits.push_back(parse_split(s.get<std::string>()));
        }
      } else if (key == "sweep") {
        if (!value.is_object()) throw ConfigError("section 'sweep' must be an object");
        for (const auto& [k, v] : value.items()) {
          if (k == "alphas") {
            cfg.sweep.alphas = v.get<std::vector<double>>();
          } else if (k == "realizations") {
            cfg.sweep.realizations = v.get<int>();
          } else {
            throw ConfigError("unknown key '" + k + "' in section 'sweep'");
          }
        }
      } else if (key == "output_dir") {
        cfg.output_dir = value.get<std::string>();
      } else if (key == "seeds") {
        cfg.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "methods") {
        cfg.methods.clear();
        for (const auto& m : value) cfg.methods.push_back(parse_method(m.get<std::string>()));
      } else {
        throw ConfigError("unknown top-level key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  if (cfg.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  if (cfg.methods.empty()) throw ConfigError("config: methods must not be empty");
  if (cfg.eval.splits.empty()) throw ConfigError("config: eval.splits must not be empty");
  if (cfg.sweep.realizations < 1) throw ConfigError("config: sweep.realizations must be at least 1");
  if (!cfg.dataset.covariate_file.empty()) {
    fs::path p = cfg.dataset.covariate_file;
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    if (!fs::exists(p)) throw ConfigError("config: covariate file '" + p.string() + "' does not exist");
    cfg.dataset.covariate_file = p.string();
  }
  if (!cfg.output_dir.empty() && fs::path(cfg.output_dir).is_relative() && !base_dir.empty()) {
    cfg.output_dir = (base_dir / cfg.output_dir).string();
  }
  try {
    cfg.dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, path.parent_path());
}

std::string run_config_json(const RunConfig& cfg) {
  json splits = json::array();
  for (Split s : cfg.eval.splits) splits.push_back(to_string(s));
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  const json doc = {{"dataset", to_json(cfg.dataset)},
                    {"model", to_json(cfg.model)},
                    {"train", to_json(cfg.train)},
                    {"probe", to_json(cfg.probe)},
                    {"eval", {{"splits", splits}}},
                    {"sweep", {{"alphas", cfg.sweep.alphas}, {"realizations", cfg.sweep.realizations}}},
                    {"output_dir", cfg.output_dir},
                    {"seeds", cfg.seeds},
                    {"methods", methods}};
  return doc.dump(2) + "\n";
}

fs::path resolve_output_dir(const std::optional<fs::path>& flag, const RunConfig& cfg, const std::string& command) {
  if (flag) return *flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / command;
  return fs::path("acfr-out") / command;
}

std::string GenerateSummary::to_text() const {
  std::ostringstream out;
  out << "N = " << n << "\n"
      << "d = " << d << "\n"
      << "alpha = " << format_double(alpha) << "\n"
      << "split = " << train << "/" << val << "/" << test << "\n"
      << "mean_t = " << format_double(mean_t) << "\n"
      << "corr_t_optimal = " << format_double(corr_t_optimal) << "\n";
  return out.str();
}

GenerateSummary summarize(const Dataset& data) {
  GenerateSummary s;
  s.n = data.x.rows();
  s.d = data.x.cols();
  s.alpha = data.spec.alpha;
  s.train = data.split.train.size();
  s.val = data.split.val.size();
  s.test = data.split.test.size();
  s.mean_t = data.t.mean();
  const Vector opt = optimal_treatments(data);
  const Eigen::ArrayXd a = data.t.array() - data.t.mean();
  const Eigen::ArrayXd b = opt.array() - opt.mean();
  const double denom = std::sqrt((a * a).sum() * (b * b).sum());
  s.corr_t_optimal = denom > 0 ? (a * b).sum() / denom : 0.0;
  return s;
}

GenerateSummary cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
  const Dataset data = make_dataset(cfg.dataset);
  write_dataset(data, out_dir);
  return summarize(data);
}

fs::path run_dir(const fs::path& out_dir, Method method, std::uint64_t seed) {
  return out_dir / to_string(method) / ("seed-" + std::to_string(seed));
}

ModelConfig model_for(const RunConfig& cfg, Method method, const Dataset& data) {
  ModelConfig m = cfg.model;
  m.method = method;
  m.input_dim = data.x.cols();
  return m;
}

namespace {

bool attention_settings_changed(const ModelConfig& m) {
  const ModelConfig def;
  return m.attn_dim != def.attn_dim || m.value_dim != def.value_dim || m.tokens != def.tokens ||
         m.head_width != def.head_width || m.identity_query != def.identity_query;
}

}  // namespace

std::vector<TrainedRun> cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir,
                                  std::ostream& log) {
  const Dataset data = read_dataset(dataset_dir);
  std::vector<TrainedRun> runs;
  for (Method method : cfg.methods) {
    const ModelConfig model = model_for(cfg, method, data);
    model.validate();
    if (method == Method::kMlp && attention_settings_changed(model)) {
      log << "warning: method mlp ignores the attention settings in the model section\n";
    }
    for (std::uint64_t seed : cfg.seeds) {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      const fs::path dir = run_dir(out_dir, method, seed);
      TrainedRun run{method, seed, dir / "checkpoint.json", dir / "history.csv"};
      try {
        TrainResult result = train(data, model, tc);
        save_checkpoint({model, tc, std::move(result.params), tc.iterations, result.rng_state}, run.checkpoint);
        write_file(run.history, history_csv(result.history));
      } catch (const TrainingDiverged& e) {
        write_file(run.history, history_csv(e.history()));
        throw;
      }
      log << "trained " << to_string(method) << " seed " << seed << " -> " << dir.string() << "\n";
      runs.push_back(std::move(run));
    }
  }
  return runs;
}

std::vector<MetricsRow> evaluate(const ModelParams& params, const ModelConfig& model, const Dataset& data,
                                 Split split, const std::string& method_label, std::uint64_t seed) {
  if (model.input_dim != data.x.cols()) {
    throw ShapeError("eval: checkpoint expects " + std::to_string(model.input_dim) + " covariates but dataset has " +
                     std::to_string(data.x.cols()));
  }
  const auto& idx = data.indices(split);
  const std::vector<double> grid = eval_grid();
  const Matrix truth = response_grid(data, idx, grid);
  const Matrix pred = predict_grid(params, model, gather_rows(data.x, idx), grid);
  return {{method_label, seed, data.spec.alpha, split_label(split), mise(pred, truth, grid),
           policy_error(pred, truth, grid)}};
}

std::vector<MetricsRow> evaluate_oracle(const Dataset& data, Split split, std::uint64_t seed) {
  const std::vector<double> grid = eval_grid();
  const Matrix truth = response_grid(data, data.indices(split), grid);
  return {{"oracle", seed, data.spec.alpha, split_label(split), mise(truth, truth, grid),
           policy_error(truth, truth, grid)}};
}

void append_metrics(const fs::path& report_path, std::span<const MetricsRow> rows) {
  std::string existing;
  if (fs::exists(report_path)) existing = read_file(report_path);
  if (existing.empty()) existing = metrics_header() + "\n";
  for (const auto& r : rows) existing += metrics_line(r) + "\n";
  write_file(report_path, existing);
}

std::vector<MetricsRow> cmd_eval(const fs::path& checkpoint, const fs::path& dataset_dir,
                                 const std::vector<Split>& splits, const fs::path& report_path, bool oracle) {
  const Dataset data = read_dataset(dataset_dir);
  std::vector<MetricsRow> rows;
  if (oracle) {
    for (Split s : splits) {
      auto r = evaluate_oracle(data, s, data.spec.seed);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  } else {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    for (Split s : splits) {
      auto r = evaluate(ckpt.params, ckpt.model, data, s, to_string(ckpt.model.method), ckpt.train.seed);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }
  append_metrics(report_path, rows);
  return rows;
}

SweepResult cmd_sweep_bias(const RunConfig& cfg, const std::vector<double>& alphas,
                           const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, std::ostream& log) {
  if (alphas.empty()) throw ConfigError("sweep: alphas must not be empty");
  for (double a : alphas) {
    if (!(a >= 1)) throw ConfigError("sweep: alpha " + format_double(a) + " is below 1");
  }
  if (seeds.empty()) throw ConfigError("sweep: no seeds");

  SweepResult result;
  for (double alpha : alphas) {
    for (std::uint64_t seed : seeds) {
      DatasetSpec spec = cfg.dataset;
      spec.alpha = alpha;
      spec.seed = seed;
      std::optional<Dataset> data;
      try {
        data = make_dataset(spec);
      } catch (const std::exception& e) {
        result.failures.push_back("alpha=" + format_double(alpha) + " seed=" + std::to_string(seed) +
                                  " generate: " + e.what());
      }
      for (Method method : cfg.methods) {
        const std::string cell = "alpha=" + format_double(alpha) + " seed=" + std::to_string(seed) +
                                 " method=" + to_string(method);
        if (!data) {
          for (Split s : cfg.eval.splits) {
            result.rows.push_back({to_string(method), seed, alpha, split_label(s), NAN, NAN});
          }
          continue;
        }
        try {
          const ModelConfig model = model_for(cfg, method, *data);
          TrainConfig tc = cfg.train;
          tc.seed = seed;
          const TrainResult trained = train(*data, model, tc);
          for (Split s : cfg.eval.splits) {
            auto rows = evaluate(trained.params, model, *data, s, to_string(method), seed);
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
          }
          log << cell << " done\n";
        } catch (const std::exception& e) {
          result.failures.push_back(cell + ": " + e.what());
          for (Split s : cfg.eval.splits) {
            result.rows.push_back({to_string(method), seed, alpha, split_label(s), NAN, NAN});
          }
          log << cell << " failed: " << e.what() << "\n";
        }
      }
    }
  }
  write_file(out_dir / "report.csv", metrics_csv(result.rows));
  std::string failures;
  for (const auto& f : result.failures) failures += f + "\n";
  write_file(out_dir / "failures.txt", failures);
  return result;
}

DiscreteInstance independence_instance(std::uint64_t seed) {
  DiscreteInstance inst = random_instance(3, 3, seed, false);
  const Vector pz = z_marginal(inst.P);
  const Vector pt = t_marginal(inst.P);
  inst.P = pz * pt.transpose();
  inst.P /= inst.P.sum();
  return inst;
}

VerifyReport cmd_verify_bounds(const VerifyConfig& cfg, bool independent, const fs::path& out_dir) {
  VerifyReport report = independent ? verify_instance(independence_instance(cfg.seed)) : verify_bounds(cfg);
  if (independent) {
    report.cfg.seed = cfg.seed;
  }
  std::string text = report.to_text();
  if (independent) {
    const DiscreteInstance inst = independence_instance(cfg.seed);
    const ExpectedErrors e = expected_errors(inst);
    text += "eps_f = " + format_double(e.factual) + "\n";
    text += "eps_cf = " + format_double(e.counterfactual) + "\n";
    text += "eps_cf_minus_eps_f = " + format_double(e.counterfactual - e.factual) + "\n";
  }
  write_file(out_dir / "bounds.txt", text);
  return report;
}

GradCheckReport cmd_grad_check(std::uint64_t seed, const fs::path& out_dir) {
  GradCheckReport report = run_grad_checks(seed);
  write_file(out_dir / "gradcheck.txt", report.to_text());
  return report;
}

}  // namespace acfr
