#pragma once

#include "acfr/diffmath.hpp"
#include "acfr/spline.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>

namespace acfr {

enum class Method {
  kAcfr,              // encoder + adversary + cross-attention head
  kAcfrNoAttention,   // encoder + adversary + concat(z, S(t)) feedforward head
  kMlp,               // concat(x, t) feedforward baseline, no balancing
};

std::string to_string(Method m);
Method parse_method(std::string_view s);

struct ModelConfig {
  Method method = Method::kAcfr;
  Eigen::Index input_dim = 0;
  Eigen::Index hidden_width = 100;
  int hidden_layers = 1;
  Eigen::Index repr_dim = 64;
  Eigen::Index attn_dim = 32;
  Eigen::Index value_dim = 32;
  Eigen::Index tokens = 8;
  Eigen::Index head_width = 16;
  SplineConfig spline;
  // Pins the query projection to a rectangular identity and excludes it from
  // training, so the treatment embedding is used directly as the query.
  bool identity_query = false;

  Eigen::Index token_dim() const { return repr_dim / tokens; }
  bool has_encoder() const { return method != Method::kMlp; }
  void validate() const;
};

/// Named weight arrays. Prefixes: "phi." encoder, "pi." treatment predictor,
/// "h." outcome head. Layers store weight as fan_in x fan_out, bias as 1 x fan_out.
struct ModelParams {
  std::map<std::string, Matrix> weights;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool has(const std::string& name) const { return weights.count(name) != 0; }
};

bool in_group(std::string_view name, std::string_view group);

/// Parameters that are never updated by the trainer.
std::set<std::string> frozen_parameters(const ModelConfig& cfg);

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws std::invalid_argument if a weight is missing or has the wrong shape.
void check_params(const ModelParams& params, const ModelConfig& cfg);

/// ModelParams recorded as leaves of a graph.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ModelParams& params);
  Var operator[](const std::string& name) const;
  /// Swaps in another node for an existing parameter (shape must match).
  void rebind(const std::string& name, Var v);
  const std::map<std::string, Var>& vars() const { return vars_; }
  Graph& graph() const { return *graph_; }

 private:
  Graph* graph_;
  std::map<std::string, Var> vars_;
};

// Graph-level forward paths. Batches are rows.
Var encode(const BoundParams& p, const ModelConfig& cfg, Var x);
Var predict_treatment(const BoundParams& p, const ModelConfig& cfg, Var z);
Var outcome_attention(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t);
Var outcome_no_attention(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t);
Var mlp_baseline(const BoundParams& p, const ModelConfig& cfg, Var x, std::span<const double> t);
/// Outcome head selected by cfg.method, applied to an already-encoded z.
Var outcome_head(const BoundParams& p, const ModelConfig& cfg, Var z, std::span<const double> t);
/// Full x -> y_hat path for any method.
Var predict_outcome(const BoundParams& p, const ModelConfig& cfg, Var x, std::span<const double> t);

// Value-level conveniences; each builds and discards its own graph.
Matrix encode(const ModelParams& params, const ModelConfig& cfg, const Matrix& x);
Vector predict_treatment(const ModelParams& params, const ModelConfig& cfg, const Matrix& z);
Vector predict_outcome(const ModelParams& params, const ModelConfig& cfg, const Matrix& x,
                       std::span<const double> t);
/// Softmax attention weights of the cross-attention head, batch x tokens.
Matrix attention_weights(const ModelParams& params, const ModelConfig& cfg, const Matrix& z,
                         std::span<const double> t);

/// N x grid.size() matrix of predicted outcomes, unit i at every grid treatment.
Matrix predict_grid(const ModelParams& params, const ModelConfig& cfg, const Matrix& x,
                    std::span<const double> grid);

}  // namespace acfr
