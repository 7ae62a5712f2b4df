#include "acfr/gradcheck.hpp"

#include "acfr/datagen.hpp"
#include "acfr/model.hpp"
#include "acfr/textio.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <sstream>

namespace acfr {

namespace {

using Build = std::function<Var(Graph&, Var)>;

class Checker {
 public:
  explicit Checker(std::uint64_t seed) : rng_(make_stream(seed, 40)) {}

  Matrix random(Eigen::Index r, Eigen::Index c, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return m;
  }

  // Entries in [0.1, 1] with random sign, so relu never sits on its kink.
  Matrix off_kink(Eigen::Index r, Eigen::Index c) {
    Matrix m = random(r, c, 0.1, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (flip(rng_)) m.data()[i] = -m.data()[i];
    }
    return m;
  }

  std::vector<double> treatments(std::size_t n) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> t(n);
    for (double& v : t) v = dist(rng_);
    return t;
  }

  // Scalar reduction with fixed random weights, so every output entry matters.
  Var reduce(Graph& g, Var out, const Matrix& w) { return mean(mul(out, g.leaf(w))); }

  double check(const Build& build, const Matrix& at) { return grad_check<double>(build, at, kGradCheckStep); }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

ModelConfig tiny_config(Method method) {
  ModelConfig cfg;
  cfg.method = method;
  cfg.input_dim = 4;
  cfg.hidden_width = 5;
  cfg.hidden_layers = 2;
  cfg.repr_dim = 6;
  cfg.tokens = 3;
  cfg.attn_dim = 4;
  cfg.value_dim = 3;
  cfg.head_width = 5;
  return cfg;
}

// Worst error over the input and every parameter whose name starts with one of `groups`.
double check_model_path(Checker& c, const ModelParams& params, const std::vector<std::string>& groups,
                        const Matrix& input, const std::function<Var(const BoundParams&, Graph&, Var)>& forward) {
  double worst = c.check(
      [&](Graph& g, Var leaf) {
        BoundParams p(g, params);
        return forward(p, g, leaf);
      },
      input);
  for (const auto& [name, w] : params.weights) {
    const bool selected = std::any_of(groups.begin(), groups.end(), [&](const std::string& grp) {
      return in_group(name, grp);
    });
    if (!selected) continue;
    worst = std::max(worst, c.check(
                                [&, n = name](Graph& g, Var leaf) {
                                  BoundParams p(g, params);
                                  p.rebind(n, leaf);
                                  return forward(p, g, p.graph().leaf(input));
                                },
                                w));
  }
  return worst;
}

}  // namespace

double GradCheckReport::worst() const {
  double w = 0;
  for (const auto& c : components) w = std::max(w, c.worst);
  return w;
}

bool GradCheckReport::passed(double tolerance) const {
  return std::all_of(components.begin(), components.end(), [&](const auto& c) { return c.worst < tolerance; });
}

std::string GradCheckReport::to_text(double tolerance) const {
  std::ostringstream out;
  out << "grad check seed " << seed << "\n";
  for (const auto& c : components) {
    out << (c.worst < tolerance ? "ok   " : "FAIL ") << c.name << " " << format_double(c.worst) << "\n";
  }
  out << "worst " << format_double(worst()) << (passed(tolerance) ? " pass" : " fail") << "\n";
  return out.str();
}

GradCheckReport run_grad_checks(std::uint64_t seed) {
  Checker c(seed);
  GradCheckReport report;
  report.seed = seed;
  auto record = [&](std::string name, double worst) { report.components.push_back({std::move(name), worst}); };

  // Unary primitives: f(x) reduced with random weights.
  auto unary = [&](const std::string& name, const Matrix& x, Eigen::Index out_r, Eigen::Index out_c,
                   const std::function<Var(Var)>& f) {
    const Matrix w = c.random(out_r, out_c);
    record("primitive." + name, c.check([&](Graph& g, Var v) { return c.reduce(g, f(v), w); }, x));
  };
  // Binary primitives: checked against each argument in turn.
  auto binary = [&](const std::string& name, const Matrix& a, const Matrix& b, Eigen::Index out_r,
                    Eigen::Index out_c, const std::function<Var(Var, Var)>& f) {
    const Matrix w = c.random(out_r, out_c);
    const double wa = c.check([&](Graph& g, Var v) { return c.reduce(g, f(v, g.leaf(b)), w); }, a);
    const double wb = c.check([&](Graph& g, Var v) { return c.reduce(g, f(g.leaf(a), v), w); }, b);
    record("primitive." + name, std::max(wa, wb));
  };

  binary("matmul", c.random(3, 4), c.random(4, 2), 3, 2, [](Var a, Var b) { return matmul(a, b); });
  binary("add", c.random(3, 4), c.random(3, 4), 3, 4, [](Var a, Var b) { return add(a, b); });
  binary("add_broadcast", c.random(3, 4), c.random(1, 4), 3, 4, [](Var a, Var b) { return add(a, b); });
  binary("sub", c.random(3, 4), c.random(3, 4), 3, 4, [](Var a, Var b) { return sub(a, b); });
  binary("mul", c.random(3, 4), c.random(3, 4), 3, 4, [](Var a, Var b) { return mul(a, b); });
  unary("scale", c.random(3, 4), 3, 4, [](Var a) { return scale(a, -1.7); });
  unary("relu", c.off_kink(3, 4), 3, 4, [](Var a) { return relu(a); });
  unary("tanh", c.random(3, 4, -2, 2), 3, 4, [](Var a) { return tanh(a); });
  unary("sigmoid", c.random(3, 4, -3, 3), 3, 4, [](Var a) { return sigmoid(a); });
  unary("row_softmax", c.random(3, 5, -2, 2), 3, 5, [](Var a) { return row_softmax(a); });
  binary("concat", c.random(3, 2), c.random(3, 3), 3, 5, [](Var a, Var b) { return concat(a, b); });
  unary("reshape", c.random(3, 4), 6, 2, [](Var a) { return reshape(a, 6, 2); });
  unary("mean", c.random(3, 4), 1, 1, [](Var a) { return mean(a); });
  binary("squared_error", c.random(3, 4), c.random(3, 4), 1, 1, [](Var a, Var b) { return squared_error(a, b); });
  unary("transpose", c.random(3, 4), 4, 3, [](Var a) { return transpose(a); });
  binary("grouped_dot", c.random(2, 3), c.random(8, 3), 2, 4, [](Var q, Var k) { return grouped_dot(q, k, 4); });
  binary("grouped_mix", c.random(2, 4), c.random(8, 3), 2, 3, [](Var w, Var v) { return grouped_mix(w, v); });

  const Eigen::Index batch = 3;
  const ModelConfig acfr_cfg = tiny_config(Method::kAcfr);
  const ModelConfig noattn_cfg = tiny_config(Method::kAcfrNoAttention);
  const ModelConfig mlp_cfg = tiny_config(Method::kMlp);
  std::uniform_int_distribution<std::uint64_t> seeds;
  // Zero biases put dead relu units exactly on their kink; probe a generic point instead.
  auto jittered = [&](const ModelConfig& cfg) {
    ModelParams p = init_params(cfg, seeds(c.rng()));
    for (auto& [name, w] : p.weights) w += c.random(w.rows(), w.cols(), -0.3, 0.3);
    return p;
  };
  const ModelParams acfr_params = jittered(acfr_cfg);
  const ModelParams noattn_params = jittered(noattn_cfg);
  const ModelParams mlp_params = jittered(mlp_cfg);
  const Matrix x = c.random(batch, acfr_cfg.input_dim);
  const Matrix z = c.random(batch, acfr_cfg.repr_dim);
  const std::vector<double> t = c.treatments(batch);
  const Matrix y = c.random(batch, 1);
  const Matrix t_col = Eigen::Map<const Matrix>(t.data(), batch, 1);

  {
    const Matrix w = c.random(batch, acfr_cfg.repr_dim);
    record("model.encoder", check_model_path(c, acfr_params, {"phi"}, x, [&](const BoundParams& p, Graph& g, Var in) {
          return c.reduce(g, encode(p, acfr_cfg, in), w);
        }));
  }
  {
    const Matrix w = c.random(batch, 1);
    record("model.treatment_predictor",
        check_model_path(c, acfr_params, {"pi"}, z, [&](const BoundParams& p, Graph& g, Var in) {
          return c.reduce(g, predict_treatment(p, acfr_cfg, in), w);
        }));
    record("model.attention_head", check_model_path(c, acfr_params, {"h"}, z, [&](const BoundParams& p, Graph& g, Var in) {
          return c.reduce(g, outcome_attention(p, acfr_cfg, in, t), w);
        }));
    record("model.no_attention_head",
        check_model_path(c, noattn_params, {"h"}, z, [&](const BoundParams& p, Graph& g, Var in) {
          return c.reduce(g, outcome_no_attention(p, noattn_cfg, in, t), w);
        }));
    record("model.mlp_baseline", check_model_path(c, mlp_params, {"h"}, x, [&](const BoundParams& p, Graph& g, Var in) {
          return c.reduce(g, mlp_baseline(p, mlp_cfg, in, t), w);
        }));
  }
  record("loss.pred", check_model_path(c, acfr_params, {"phi", "h"}, x, [&](const BoundParams& p, Graph& g, Var in) {
        return squared_error(predict_outcome(p, acfr_cfg, in, t), g.leaf(y));
      }));
  record("loss.adv", check_model_path(c, acfr_params, {"phi", "pi"}, x, [&](const BoundParams& p, Graph& g, Var in) {
        return squared_error(predict_treatment(p, acfr_cfg, encode(p, acfr_cfg, in)), g.leaf(t_col));
      }));
  return report;
}

}  // namespace acfr
