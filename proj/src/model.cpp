#include "acfr/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace acfr {

std::string to_string(Method m) {
  switch (m) {
    case Method::kAcfr: return "acfr";
    case Method::kAcfrNoAttention: return "acfr-no-attn";
    case Method::kMlp: return "mlp";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "acfr") return Method::kAcfr;
  if (s == "acfr-no-attn") return Method::kAcfrNoAttention;
  if (s == "mlp") return Method::kMlp;
  throw std::invalid_argument("unknown method '" + std::string(s) + "' (expected acfr, acfr-no-attn or mlp)");
}

void ModelConfig::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("model: input_dim must be positive");
  if (hidden_width <= 0) throw std::invalid_argument("model: hidden_width must be positive");
  if (hidden_layers < 0) throw std::invalid_argument("model: hidden_layers must be >= 0");
  if (repr_dim <= 0 || attn_dim <= 0 || value_dim <= 0 || tokens <= 0 || head_width <= 0) {
    throw std::invalid_argument("model: repr_dim, attn_dim, value_dim, tokens and head_width must be positive");
  }
  if (repr_dim % tokens != 0) {
    throw std::invalid_argument("model: repr_dim " + std::to_string(repr_dim) + " not divisible by tokens " +
                                std::to_string(tokens));
  }
  spline.validate();
}

const Matrix& ModelParams::at(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw std::out_of_range("model: no parameter named '" + name + "'");
  return it->second;
}

Matrix& ModelParams::at(const std::string& name) {
  auto it = weights.find(name);
  if (it == weights.end()) throw std::out_of_range("model: no parameter named '" + name + "'");
  return it->second;
}

bool in_group(std::string_view name, std::string_view group) {
  return name.size() > group.size() && name.substr(0, group.size()) == group && name[group.size()] == '.';
}

namespace {

struct Shape {
  Eigen::Index rows;
  Eigen::Index cols;
};

std::string layer_name(std::string_view group, int index, std::string_view part) {
  return std::string(group) + "." + std::to_string(index) + "." + std::string(part);
}

void add_stack(std::map<std::string, Shape>& out, std::string_view group, Eigen::Index in, Eigen::Index hidden,
               int hidden_layers, Eigen::Index last) {
  Eigen::Index fan_in = in;
  for (int i = 0; i <= hidden_layers; ++i) {
    const Eigen::Index fan_out = i == hidden_layers ? last : hidden;
    out[layer_name(group, i, "weight")] = {fan_in, fan_out};
    out[layer_name(group, i, "bias")] = {1, fan_out};
    fan_in = fan_out;
  }
}

std::map<std::string, Shape> expected_shapes(const ModelConfig& cfg) {
  std::map<std::string, Shape> shapes;
  const Eigen::Index m = cfg.spline.dim();
  switch (cfg.method) {
    case Method::kAcfr:
      add_stack(shapes, "phi", cfg.input_dim, cfg.hidden_width, cfg.hidden_layers, cfg.repr_dim);
      add_stack(shapes, "pi", cfg.repr_dim, cfg.hidden_width, cfg.hidden_layers, 1);
      shapes["h.query"] = {m, cfg.attn_dim};
      shapes["h.key"] = {cfg.token_dim(), cfg.attn_dim};
      shapes["h.value"] = {cfg.token_dim(), cfg.value_dim};
      add_stack(shapes, "h", cfg.value_dim, cfg.head_width, 1, 1);
      break;
    case Method::kAcfrNoAttention:
      add_stack(shapes, "phi", cfg.input_dim, cfg.hidden_width, cfg.hidden_layers, cfg.repr_dim);
      add_stack(shapes, "pi", cfg.repr_dim, cfg.hidden_width, cfg.hidden_layers, 1);
      add_stack(shapes, "h", cfg.repr_dim + m, cfg.hidden_width, 1, 1);
      break;
    case Method::kMlp:
      add_stack(shapes, "h", cfg.input_dim + 1, cfg.hidden_width, 1, 1);
      break;
  }
  return shapes;
}

bool is_bias(const std::string& name) { return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0; }

}  // namespace

std::set<std::string> frozen_parameters(const ModelConfig& cfg) {
  if (cfg.method == Method::kAcfr && cfg.identity_query) return {"h.query"};
  return {};
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& [name, shape] : expected_shapes(cfg)) {
    Matrix w = Matrix::Zero(shape.rows, shape.cols);
    if (name == "h.query" && cfg.identity_query) {
      w = Matrix::Identity(shape.rows, shape.cols);
    } else if (!is_bias(name)) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    }
    params.weights.emplace(name, std::move(w));
  }
  return params;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
  const auto shapes = expected_shapes(cfg);
  for (const auto& [name, shape] : shapes) {
    auto it = params.weights.find(name);
    if (it == params.weights.end()) throw std::invalid_argument("model: missing parameter '" + name + "'");
    if (it->second.rows() != shape.rows || it->second.cols() != shape.cols) {
      throw std::invalid_argument("model: parameter '" + name + "' has shape " + shape_str(it->second) +
                                  ", expected [" + std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                                  "]");
    }
  }
  for (const auto& [name, w] : params.weights) {
    if (!shapes.count(name)) throw std::invalid_argument("model: unexpected parameter '" + name + "'");
  }
}

BoundParams::BoundParams(Graph& graph, const ModelParams& params) : graph_(&graph) {
  for (const auto& [name, w] : params.weights) vars_.emplace(name, graph.leaf(w));
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("model: no parameter named '" + name + "'");
  return it->second;
}

void BoundParams::rebind(const std::string& name, Var v) {
  const Var old = (*this)[name];
  if (old.rows() != v.rows() || old.cols() != v.cols()) {
    throw ShapeError("model: rebinding '" + name + "' with a different shape");
  }
  vars_.at(name) = v;
}

namespace {

Var dense(const BoundParams& p, std::string_view group, int index, Var x) {
  return add(matmul(x, p[layer_name(group, index, "weight")]), p[layer_name(group, index, "bias")]);
}

Var stack(const BoundParams& p, std::string_view group, int hidden_layers, Var x) {
  for (int i = 0; i < hidden_layers; ++i) x = relu(dense(p, group, i, x));
  return dense(p, group, hidden_layers, x);
}

Var column(Graph& g, std::span<const double> t) {
  return g.leaf(Eigen::Map<const Matrix>(t.data(), static_cast<Eigen::Index>(t.size()), 1));
}

void expect_cols(const char* what, Var v, Eigen::Index cols) {
  if (v.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                     shape_str(v.value()));
  }
}

void expect_batch(const char* what, Var v, std::span<const double> t) {
  if (static_cast<std::size_t>(v.rows()) != t.size()) {
    throw ShapeError(std::string(what) + ": batch of " + std::to_string(v.rows()) + " rows but " +
                     std::to_string(t.size()) + " treatments");
  }
}

struct AttentionParts {
  Var weights;
  Var context;
};

AttentionParts attend(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t) {
  expect_cols("outcome_attention", z, cfg.repr_dim);
  expect_batch("outcome_attention", z, t);
  Graph& g = p.graph();
  const Var embed = g.leaf(basis_matrix(t, cfg.spline));
  const Var query = matmul(embed, p["h.query"]);
  const Var tokens = reshape(z, z.rows() * cfg.tokens, cfg.token_dim());
  const Var keys = matmul(tokens, p["h.key"]);
  const Var values = matmul(tokens, p["h.value"]);
  const Var logits = scale(grouped_dot(query, keys, cfg.tokens), 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim)));
  const Var weights = row_softmax(logits);
  return {weights, grouped_mix(weights, values)};
}

}  // namespace

Var encode(const BoundParams& p, const ModelConfig& cfg, Var x) {
  expect_cols("encode", x, cfg.input_dim);
  return stack(p, "phi", cfg.hidden_layers, x);
}

Var predict_treatment(const BoundParams& p, const ModelConfig& cfg, Var z) {
  expect_cols("predict_treatment", z, cfg.repr_dim);
  return sigmoid(stack(p, "pi", cfg.hidden_layers, z));
}

Var outcome_attention(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t) {
  const Var context = attend(p, cfg, z, t).context;
  return dense(p, "h", 1, relu(dense(p, "h", 0, context)));
}

Var outcome_no_attention(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t) {
  expect_cols("outcome_no_attention", z, cfg.repr_dim);
  expect_batch("outcome_no_attention", z, t);
  const Var embed = p.graph().leaf(basis_matrix(t, cfg.spline));
  return dense(p, "h", 1, relu(dense(p, "h", 0, concat(z, embed))));
}

Var mlp_baseline(const BoundParams& p, const ModelConfig& cfg, Var x, std::span<const double> t) {
  expect_cols("mlp_baseline", x, cfg.input_dim);
  expect_batch("mlp_baseline", x, t);
  return dense(p, "h", 1, relu(dense(p, "h", 0, concat(x, column(p.graph(), t)))));
}

Var outcome_head(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t) {
  switch (cfg.method) {
    case Method::kAcfr: return outcome_attention(p, cfg, z, t);
    case Method::kAcfrNoAttention: return outcome_no_attention(p, cfg, z, t);
    case Method::kMlp: return mlp_baseline(p, cfg, z, t);
  }
  throw std::logic_error("unreachable");
}

Var predict_outcome(const BoundParams& p, const ModelConfig& cfg, Var x, std::span<const double> t) {
  if (!cfg.has_encoder()) return mlp_baseline(p, cfg, x, t);
  return outcome_head(p, cfg, encode(p, cfg, x), t);
}

Matrix encode(const ModelParams& params, const ModelConfig& cfg, const Matrix& x) {
  Graph g;
  const BoundParams p(g, params);
  return encode(p, cfg, g.leaf(x)).value();
}

Vector predict_treatment(const ModelParams& params, const ModelConfig& cfg, const Matrix& z) {
  Graph g;
  const BoundParams p(g, params);
  return predict_treatment(p, cfg, g.leaf(z)).value().col(0);
}

Vector predict_outcome(const ModelParams& params, const ModelConfig& cfg, const Matrix& x,
                       std::span<const double> t) {
  Graph g;
  const BoundParams p(g, params);
  return predict_outcome(p, cfg, g.leaf(x), t).value().col(0);
}

Matrix attention_weights(const ModelParams& params, const ModelConfig& cfg, const Matrix& z,
                         std::span<const double> t) {
  Graph g;
  const BoundParams p(g, params);
  return attend(p, cfg, g.leaf(z), t).weights.value();
}

Matrix predict_grid(const ModelParams& params, const ModelConfig& cfg, const Matrix& x,
                    std::span<const double> grid) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(grid.size()));
  const Matrix z = cfg.has_encoder() ? encode(params, cfg, x) : x;
  std::vector<double> t(static_cast<std::size_t>(x.rows()));
  for (std::size_t j = 0; j < grid.size(); ++j) {
    std::fill(t.begin(), t.end(), grid[j]);
    Graph g;
    const BoundParams p(g, params);
    out.col(static_cast<Eigen::Index>(j)) = outcome_head(p, cfg, g.leaf(z), t).value().col(0);
  }
  return out;
}

}  // namespace acfr
