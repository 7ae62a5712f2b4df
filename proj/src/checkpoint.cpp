#include "acfr/config_json.hpp"
#include "acfr/textio.hpp"
#include "acfr/trainer.hpp"

namespace acfr {

using nlohmann::json;

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json weights = json::array();
  for (const auto& [name, w] : ckpt.params.weights) {
    weights.push_back({{"name", name},
                       {"shape", {w.rows(), w.cols()}},
                       {"data", std::vector<double>(w.data(), w.data() + w.size())}});
  }
  const json doc = {{"version", kCheckpointVersion},
                    {"model", to_json(ckpt.model)},
                    {"train", to_json(ckpt.train)},
                    {"iteration", ckpt.iteration},
                    {"rng_state", ckpt.rng_state},
                    {"weights", weights}};
  return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: malformed document: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("version")) throw CheckpointError("checkpoint: missing version field");
  const std::string version = doc["version"].is_string() ? doc["version"].get<std::string>() : "";
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: version '" + version + "' is not supported (expected '" +
                          std::string(kCheckpointVersion) + "')");
  }
  Checkpoint ckpt;
  try {
    ckpt.model = model_config_from_json(doc.at("model"));
    ckpt.train = train_config_from_json(doc.at("train"));
    ckpt.iteration = doc.at("iteration").get<int>();
    ckpt.rng_state = doc.at("rng_state").get<std::string>();
    for (const auto& entry : doc.at("weights")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      const auto data = entry.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
          static_cast<std::size_t>(shape[0] * shape[1]) != data.size()) {
        throw CheckpointError("checkpoint: weight '" + name + "' data does not match its shape");
      }
      ckpt.params.weights.emplace(name, Eigen::Map<const Matrix>(data.data(), shape[0], shape[1]));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  try {
    check_params(ckpt.params, ckpt.model);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(text);
}

}  // namespace acfr
