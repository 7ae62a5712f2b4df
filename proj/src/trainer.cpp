#include "acfr/trainer.hpp"

#include "acfr/textio.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace acfr {

std::string to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "' (expected sgd or adam)");
}

void TrainConfig::validate(Eigen::Index train_size) const {
  if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (batch_size > train_size) {
    throw std::invalid_argument("train: batch_size " + std::to_string(batch_size) + " exceeds training set size " +
                                std::to_string(train_size));
  }
  if (inner_steps < 0) throw std::invalid_argument("train: inner_steps must be >= 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("train: gamma must be >= 0");
  if (!(lr_outcome > 0.0) || !(lr_adversary > 0.0)) throw std::invalid_argument("train: step sizes must be positive");
  if (eval_interval < 1) throw std::invalid_argument("train: eval_interval must be >= 1");
}

TrainingDiverged::TrainingDiverged(int iteration, double pred, double adv, TrainHistory partial)
    : NumericalError("training diverged at iteration " + std::to_string(iteration) + ": l_pred = " +
                     format_double(pred) + ", l_adv = " + format_double(adv)),
      iteration_(iteration),
      history_(std::move(partial)) {}

namespace {

double mse(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

Matrix as_column(std::span<const double> v) {
  return Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

double pred_loss(std::span<const double> y, std::span<const double> y_hat) { return mse(y, y_hat, "pred_loss"); }
double adv_loss(std::span<const double> t, std::span<const double> t_hat) { return mse(t, t_hat, "adv_loss"); }

void ParamOptimizer::apply(const std::string& name, Matrix& param, const Matrix& grad) {
  if (kind_ == Optimizer::kSgd) {
    param -= lr_ * grad;
    return;
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  Moments& mo = moments_[name];
  if (mo.steps == 0) {
    mo.m = Matrix::Zero(param.rows(), param.cols());
    mo.v = Matrix::Zero(param.rows(), param.cols());
  }
  ++mo.steps;
  mo.m = kBeta1 * mo.m + (1.0 - kBeta1) * grad;
  mo.v = kBeta2 * mo.v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(kBeta1, mo.steps);
  const double c2 = 1.0 - std::pow(kBeta2, mo.steps);
  param.array() -= lr_ * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + kEps);
}

Trainer::Trainer(ModelConfig model_cfg, TrainConfig train_cfg, ModelParams init)
    : model_cfg_(std::move(model_cfg)),
      train_cfg_(train_cfg),
      params_(std::move(init)),
      frozen_(frozen_parameters(model_cfg_)),
      outcome_opt_(train_cfg.optimizer, train_cfg.lr_outcome),
      adversary_opt_(train_cfg.optimizer, train_cfg.lr_adversary) {
  model_cfg_.validate();
  check_params(params_, model_cfg_);
}

bool Trainer::adversarial() const { return train_cfg_.adversary && model_cfg_.has_encoder(); }

StepLosses Trainer::step(const Matrix& x, std::span<const double> t, std::span<const double> y) {
  const double gamma = train_cfg_.gamma;
  const Matrix t_col = as_column(t);
  const Matrix y_col = as_column(y);
  StepLosses losses;
  losses.adv = std::numeric_limits<double>::quiet_NaN();

  if (adversarial()) {
    const Matrix z = encode(params_, model_cfg_, x);
    for (int m = 0; m < train_cfg_.inner_steps; ++m) {
      Graph g;
      const BoundParams p(g, params_);
      const Var l_adv = squared_error(predict_treatment(p, model_cfg_, g.leaf(z)), g.leaf(t_col));
      const double value = l_adv.value()(0, 0);
      if (!std::isfinite(value)) throw NumericalError("non-finite l_adv in adversary inner step " + std::to_string(m));
      const Gradients grads = g.backward(l_adv);
      for (const auto& [name, var] : p.vars()) {
        if (!in_group(name, "pi")) continue;
        adversary_opt_.apply(name, params_.at(name), Matrix(gamma * grads[var]));
      }
    }
  }

  Graph g;
  const BoundParams p(g, params_);
  const Var x_leaf = g.leaf(x);
  const Var t_leaf = g.leaf(t_col);
  Var z;
  Var y_hat;
  if (model_cfg_.has_encoder()) {
    z = encode(p, model_cfg_, x_leaf);
    y_hat = outcome_head(p, model_cfg_, z, t);
  } else {
    y_hat = mlp_baseline(p, model_cfg_, x_leaf, t);
  }
  const Var l_pred = squared_error(y_hat, g.leaf(y_col));
  losses.pred = l_pred.value()(0, 0);
  const Gradients pred_grads = g.backward(l_pred);

  std::map<std::string, Matrix> updates;
  for (const auto& [name, var] : p.vars()) {
    if (in_group(name, "phi") || in_group(name, "h")) updates.emplace(name, pred_grads[var]);
  }
  if (adversarial()) {
    const Var l_adv = squared_error(predict_treatment(p, model_cfg_, z), t_leaf);
    losses.adv = l_adv.value()(0, 0);
    const Gradients adv_grads = g.backward(l_adv);
    for (const auto& [name, var] : p.vars()) {
      if (in_group(name, "phi")) updates.at(name) -= gamma * adv_grads[var];
    }
  }
  if (!std::isfinite(losses.pred) || (adversarial() && !std::isfinite(losses.adv))) return losses;

  for (auto& [name, grad] : updates) {
    if (frozen_.count(name)) continue;
    outcome_opt_.apply(name, params_.at(name), grad);
  }
  return losses;
}

TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  return train(data, model_cfg, train_cfg, init_params(model_cfg, train_cfg.seed));
}

TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  ModelParams init) {
  const auto& train_idx = data.split.train;
  train_cfg.validate(static_cast<Eigen::Index>(train_idx.size()));
  if (model_cfg.input_dim != data.x.cols()) {
    throw std::invalid_argument("train: model input_dim " + std::to_string(model_cfg.input_dim) +
                                " does not match dataset d " + std::to_string(data.x.cols()));
  }

  Trainer trainer(model_cfg, train_cfg, std::move(init));
  std::mt19937_64 rng = make_stream(train_cfg.seed, 10);
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);

  const Matrix x_val = gather_rows(data.x, data.split.val);
  const Vector t_val = gather(data.t, data.split.val);
  const Vector y_val = gather(data.y, data.split.val);

  TrainHistory history;
  const auto b = static_cast<std::size_t>(train_cfg.batch_size);
  std::vector<Eigen::Index> batch(b);
  for (int it = 0; it < train_cfg.iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    for (auto& i : batch) i = train_idx[pick(rng)];
    const Matrix xb = gather_rows(data.x, batch);
    const Vector tb = gather(data.t, batch);
    const Vector yb = gather(data.y, batch);
    const StepLosses losses = trainer.step(xb, as_span(tb), as_span(yb));
    history.pred_loss.push_back(losses.pred);
    history.adv_loss.push_back(losses.adv);
    const bool adversarial = train_cfg.adversary && model_cfg.has_encoder();
    if (!std::isfinite(losses.pred) || (adversarial && !std::isfinite(losses.adv))) {
      history.wall_ms.push_back(0.0);
      throw TrainingDiverged(it, losses.pred, losses.adv, std::move(history));
    }
    if (it % train_cfg.eval_interval == 0 && x_val.rows() > 0) {
      const Vector pred = predict_outcome(trainer.params(), model_cfg, x_val, as_span(t_val));
      history.val_iteration.push_back(it);
      history.val_pred_loss.push_back(pred_loss(as_span(y_val), as_span(pred)));
    }
    history.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }

  std::ostringstream state;
  state << rng;
  return {trainer.params(), std::move(history), state.str()};
}

AdversaryFit fit_adversary_to_convergence(const Matrix& z, std::span<const double> t, const AdversaryFitConfig& cfg) {
  if (static_cast<std::size_t>(z.rows()) != t.size()) {
    throw ShapeError("fit_adversary: " + std::to_string(z.rows()) + " representations vs " + std::to_string(t.size()) +
                     " treatments");
  }
  if (z.rows() == 0) throw std::invalid_argument("fit_adversary: empty input");

  AdversaryFit fit;
  fit.cfg.method = Method::kAcfr;
  fit.cfg.input_dim = z.cols();
  fit.cfg.repr_dim = z.cols();
  fit.cfg.tokens = 1;
  fit.cfg.hidden_width = cfg.hidden_width;
  fit.cfg.hidden_layers = cfg.hidden_layers;
  const ModelParams all = init_params(fit.cfg, cfg.seed);
  for (const auto& [name, w] : all.weights) {
    if (in_group(name, "pi")) fit.params.weights.emplace(name, w);
  }

  ParamOptimizer opt(Optimizer::kAdam, cfg.lr);
  const Matrix t_col = as_column(t);
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.max_steps) + 1);
  for (int step = 0;; ++step) {
    Graph g;
    const BoundParams p(g, fit.params);
    const Var loss = squared_error(predict_treatment(p, fit.cfg, g.leaf(z)), g.leaf(t_col));
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw TrainingDiverged(step, std::numeric_limits<double>::quiet_NaN(), value, {});
    trace.push_back(value);
    fit.loss = value;
    fit.steps = step;
    const auto k = trace.size() - 1;
    if (step >= cfg.max_steps) break;
    if (k >= static_cast<std::size_t>(cfg.window) && trace[k - cfg.window] - value < cfg.tolerance) break;
    const Gradients grads = g.backward(loss);
    for (const auto& [name, var] : p.vars()) opt.apply(name, fit.params.at(name), grads[var]);
  }
  return fit;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "iteration,l_pred,l_adv,val_l_pred,wall_ms\n";
  std::size_t v = 0;
  for (std::size_t i = 0; i < history.pred_loss.size(); ++i) {
    out += std::to_string(i) + ',' + format_double(history.pred_loss[i]) + ',' + format_double(history.adv_loss[i]) + ',';
    if (v < history.val_iteration.size() && history.val_iteration[v] == static_cast<int>(i)) {
      out += format_double(history.val_pred_loss[v++]);
    }
    out += ',';
    if (i < history.wall_ms.size()) out += format_double(std::round(history.wall_ms[i] * 1000.0) / 1000.0);
    out += '\n';
  }
  return out;
}

}  // namespace acfr
