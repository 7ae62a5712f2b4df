#include "acfr/config_json.hpp"

#include <functional>
#include <map>

namespace acfr {

using nlohmann::json;

namespace {

/// Dispatches each key of `j` to its handler; unknown keys are an error.
void read_section(const json& j, const std::string& section,
                  const std::map<std::string, std::function<void(const json&)>>& handlers) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + section + "." + key + "': " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> into(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

}  // namespace

json to_json(const SplineConfig& cfg) { return {{"degree", cfg.degree}, {"knots", cfg.knots}}; }

json to_json(const ModelConfig& cfg) {
  return {{"method", to_string(cfg.method)},
          {"input_dim", cfg.input_dim},
          {"hidden_width", cfg.hidden_width},
          {"hidden_layers", cfg.hidden_layers},
          {"repr_dim", cfg.repr_dim},
          {"attn_dim", cfg.attn_dim},
          {"value_dim", cfg.value_dim},
          {"tokens", cfg.tokens},
          {"head_width", cfg.head_width},
          {"identity_query", cfg.identity_query},
          {"spline", to_json(cfg.spline)}};
}

json to_json(const TrainConfig& cfg) {
  return {{"iterations", cfg.iterations},
          {"batch_size", cfg.batch_size},
          {"inner_steps", cfg.inner_steps},
          {"gamma", cfg.gamma},
          {"lr_outcome", cfg.lr_outcome},
          {"lr_adversary", cfg.lr_adversary},
          {"seed", cfg.seed},
          {"optimizer", to_string(cfg.optimizer)},
          {"eval_interval", cfg.eval_interval},
          {"adversary", cfg.adversary}};
}

json to_json(const DatasetSpec& spec) {
  return {{"kind", to_string(spec.kind)}, {"n", spec.n},         {"d", spec.d},
          {"alpha", spec.alpha},          {"noise_std", spec.noise_std}, {"seed", spec.seed},
          {"covariate_file", spec.covariate_file}};
}

json to_json(const AdversaryFitConfig& cfg) {
  return {{"hidden_width", cfg.hidden_width}, {"hidden_layers", cfg.hidden_layers}, {"lr", cfg.lr},
          {"max_steps", cfg.max_steps},       {"window", cfg.window},               {"tolerance", cfg.tolerance},
          {"seed", cfg.seed}};
}

SplineConfig spline_config_from_json(const json& j, SplineConfig cfg) {
  read_section(j, "spline", {{"degree", into(cfg.degree)}, {"knots", into(cfg.knots)}});
  return cfg;
}

ModelConfig model_config_from_json(const json& j, ModelConfig cfg) {
  read_section(j, "model",
               {{"method", [&](const json& v) { cfg.method = parse_method(v.get<std::string>()); }},
                {"input_dim", into(cfg.input_dim)},
                {"hidden_width", into(cfg.hidden_width)},
                {"hidden_layers", into(cfg.hidden_layers)},
                {"repr_dim", into(cfg.repr_dim)},
                {"attn_dim", into(cfg.attn_dim)},
                {"value_dim", into(cfg.value_dim)},
                {"tokens", into(cfg.tokens)},
                {"head_width", into(cfg.head_width)},
                {"identity_query", into(cfg.identity_query)},
                {"spline", [&](const json& v) { cfg.spline = spline_config_from_json(v, cfg.spline); }}});
  return cfg;
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
  read_section(j, "train",
               {{"iterations", into(cfg.iterations)},
                {"batch_size", into(cfg.batch_size)},
                {"inner_steps", into(cfg.inner_steps)},
                {"gamma", into(cfg.gamma)},
                {"lr_outcome", into(cfg.lr_outcome)},
                {"lr_adversary", into(cfg.lr_adversary)},
                {"seed", into(cfg.seed)},
                {"optimizer", [&](const json& v) { cfg.optimizer = parse_optimizer(v.get<std::string>()); }},
                {"eval_interval", into(cfg.eval_interval)},
                {"adversary", into(cfg.adversary)}});
  return cfg;
}

DatasetSpec dataset_spec_from_json(const json& j, DatasetSpec spec) {
  read_section(j, "dataset",
               {{"kind", [&](const json& v) { spec.kind = parse_dataset_kind(v.get<std::string>()); }},
                {"n", into(spec.n)},
                {"d", into(spec.d)},
                {"alpha", into(spec.alpha)},
                {"noise_std", into(spec.noise_std)},
                {"seed", into(spec.seed)},
                {"covariate_file", into(spec.covariate_file)}});
  return spec;
}

AdversaryFitConfig adversary_fit_config_from_json(const json& j, AdversaryFitConfig cfg) {
  read_section(j, "probe",
               {{"hidden_width", into(cfg.hidden_width)},
                {"hidden_layers", into(cfg.hidden_layers)},
                {"lr", into(cfg.lr)},
                {"max_steps", into(cfg.max_steps)},
                {"window", into(cfg.window)},
                {"tolerance", into(cfg.tolerance)},
                {"seed", into(cfg.seed)}});
  return cfg;
}

}  // namespace acfr
