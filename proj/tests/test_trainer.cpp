#include <gtest/gtest.h>

#include "acfr/datagen.hpp"
#include "acfr/model.hpp"
#include "acfr/textio.hpp"
#include "acfr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>
#include <vector>

namespace acfr {
namespace {

namespace fs = std::filesystem;

std::span<const double> span_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

ModelConfig tiny_config(Method method, Eigen::Index d = 4) {
  ModelConfig cfg;
  cfg.method = method;
  cfg.input_dim = d;
  cfg.hidden_width = 5;
  cfg.hidden_layers = 2;
  cfg.repr_dim = 6;
  cfg.tokens = 3;
  cfg.attn_dim = 4;
  cfg.value_dim = 3;
  cfg.head_width = 5;
  return cfg;
}

ModelParams jittered(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_params(cfg, seed);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& [name, w] : p.weights) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] += u(rng);
  }
  return p;
}

Dataset small_news(std::uint64_t seed = 1, Eigen::Index n = 300, Eigen::Index d = 10, double alpha = 2.0) {
  return make_dataset({DatasetKind::kNewsLike, n, d, alpha, 0.2, seed, ""});
}

TEST(Losses, PredExamples) {
  const std::vector<double> y{0, 0}, ones{1, 1};
  EXPECT_EQ(pred_loss(y, y), 0.0);
  EXPECT_EQ(pred_loss(y, ones), 1.0);
  EXPECT_DOUBLE_EQ(pred_loss(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 1}), 5.0 / 3.0);
  EXPECT_THROW(pred_loss(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(pred_loss(y, std::vector<double>{1}), ShapeError);
}

TEST(Losses, AdvExamples) {
  const std::vector<double> t{0, 1};
  EXPECT_EQ(adv_loss(t, t), 0.0);
  EXPECT_DOUBLE_EQ(adv_loss(t, std::vector<double>{0.5, 0.5}), 0.25);
  EXPECT_EQ(adv_loss(std::vector<double>{0.3}, std::vector<double>{0.5}),
            adv_loss(std::vector<double>{0.5}, std::vector<double>{0.3}));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate(64));
  EXPECT_THROW(c.validate(63), std::invalid_argument);
  c.inner_steps = -1;
  EXPECT_THROW(c.validate(100), std::invalid_argument);
  c = {};
  c.gamma = -0.1;
  EXPECT_THROW(c.validate(100), std::invalid_argument);
  c = {};
  c.iterations = 0;
  EXPECT_THROW(c.validate(100), std::invalid_argument);
  EXPECT_THROW(parse_optimizer("rmsprop"), std::invalid_argument);
}

// Replays one outer iteration with separately computed gradients and plain
// SGD arithmetic, then compares against Trainer::step.
TEST(Trainer, HandSteppedSgdIteration) {
  for (Method method : {Method::kAcfr, Method::kAcfrNoAttention}) {
    const ModelConfig cfg = tiny_config(method);
    TrainConfig tc;
    tc.inner_steps = 3;
    tc.gamma = 0.7;
    tc.lr_outcome = 0.03;
    tc.lr_adversary = 0.05;
    const ModelParams init = jittered(cfg, 6);

    Matrix x(2, 4);
    x << 0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2, -0.3;
    const std::vector<double> t{0.25, 0.8};
    const std::vector<double> y{1.5, -0.7};
    const Matrix t_col = Eigen::Map<const Matrix>(t.data(), 2, 1);
    const Matrix y_col = Eigen::Map<const Matrix>(y.data(), 2, 1);

    ModelParams expect = init;
    const Matrix z = encode(expect, cfg, x);
    for (int m = 0; m < tc.inner_steps; ++m) {
      Graph g;
      const BoundParams p(g, expect);
      const Gradients grads = g.backward(squared_error(predict_treatment(p, cfg, g.leaf(z)), g.leaf(t_col)));
      for (const auto& [name, var] : p.vars()) {
        if (in_group(name, "pi")) expect.at(name) -= tc.lr_adversary * tc.gamma * grads[var];
      }
    }
    std::map<std::string, Matrix> g_pred, g_adv;
    {
      Graph g;
      const BoundParams p(g, expect);
      const Gradients grads = g.backward(squared_error(predict_outcome(p, cfg, g.leaf(x), t), g.leaf(y_col)));
      for (const auto& [name, var] : p.vars()) g_pred[name] = grads[var];
    }
    {
      Graph g;
      const BoundParams p(g, expect);
      const Var zv = encode(p, cfg, g.leaf(x));
      const Gradients grads = g.backward(squared_error(predict_treatment(p, cfg, zv), g.leaf(t_col)));
      for (const auto& [name, var] : p.vars()) g_adv[name] = grads[var];
    }
    for (auto& [name, w] : expect.weights) {
      if (in_group(name, "h")) w -= tc.lr_outcome * g_pred.at(name);
      if (in_group(name, "phi")) w -= tc.lr_outcome * (g_pred.at(name) - tc.gamma * g_adv.at(name));
    }

    Trainer trainer(cfg, tc, init);
    trainer.step(x, t, y);
    int moved = 0;
    for (const auto& [name, w] : expect.weights) {
      const Matrix& got = trainer.params().at(name);
      EXPECT_LT((got - w).cwiseAbs().maxCoeff(), 1e-12) << to_string(method) << " " << name;
      if ((got - init.at(name)).cwiseAbs().maxCoeff() > 0) ++moved;
      else ADD_FAILURE() << "unmoved " << name;
    }
    EXPECT_EQ(moved, static_cast<int>(expect.weights.size()));
  }
}

TEST(Trainer, InnerStepScaledByGamma) {
  const ModelConfig cfg = tiny_config(Method::kAcfr);
  Matrix x = Matrix::Constant(2, 4, 0.2);
  x(1, 2) = -0.5;
  const std::vector<double> t{0.1, 0.9}, y{0.0, 1.0};
  TrainConfig a;
  a.inner_steps = 1;
  a.lr_adversary = 0.1;
  a.gamma = 2.0;
  TrainConfig b = a;
  b.lr_adversary = 0.2;
  b.gamma = 1.0;
  const ModelParams init = jittered(cfg, 8);
  Trainer ta(cfg, a, init), tb(cfg, b, init);
  ta.step(x, t, y);
  tb.step(x, t, y);
  for (const auto& [name, w] : init.weights) {
    if (!in_group(name, "pi")) continue;
    EXPECT_LT((ta.params().at(name) - tb.params().at(name)).cwiseAbs().maxCoeff(), 1e-15) << name;
    EXPECT_GT((ta.params().at(name) - w).cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

TEST(Trainer, GammaZeroMatchesDisabledAdversaryBitwise) {
  const Dataset data = small_news();
  ModelConfig cfg = tiny_config(Method::kAcfr, data.x.cols());
  TrainConfig on;
  on.iterations = 40;
  on.batch_size = 16;
  on.gamma = 0.0;
  on.lr_outcome = on.lr_adversary = 1e-2;
  TrainConfig off = on;
  off.adversary = false;
  const TrainResult a = train(data, cfg, on);
  const TrainResult b = train(data, cfg, off);
  for (const auto& [name, w] : a.params.weights) {
    const Matrix& other = b.params.at(name);
    ASSERT_EQ(w.size(), other.size());
    EXPECT_EQ(std::memcmp(w.data(), other.data(), sizeof(double) * w.size()), 0) << name;
  }
  EXPECT_EQ(a.history.pred_loss, b.history.pred_loss);
}

TEST(Trainer, NoInnerStepsLeavesPredictorUntouched) {
  const Dataset data = small_news();
  const ModelConfig cfg = tiny_config(Method::kAcfr, data.x.cols());
  TrainConfig tc;
  tc.iterations = 30;
  tc.batch_size = 8;
  tc.inner_steps = 0;
  tc.lr_outcome = tc.lr_adversary = 1e-2;
  const ModelParams init = init_params(cfg, tc.seed);
  const TrainResult r = train(data, cfg, tc);
  for (const auto& [name, w] : init.weights) {
    if (in_group(name, "pi")) EXPECT_EQ(r.params.at(name), w) << name;
    if (in_group(name, "phi") && name.find("weight") != std::string::npos) EXPECT_NE(r.params.at(name), w) << name;
  }
}

TEST(Trainer, LinearToyApproachesLeastSquares) {
  const Eigen::Index n = 600, d = 5;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  Dataset data;
  data.x.resize(n, d);
  data.t.resize(n);
  data.y.resize(n);
  data.weights = sample_weight_vectors(d, 21);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.x(i, j) = normal(rng);
    data.t(i) = unif(rng);
    data.y(i) = data.x.row(i).dot(data.weights.v1) + data.t(i) + 0.2 * normal(rng);
  }
  for (Eigen::Index i = 0; i < n; ++i) (i < 500 ? data.split.train : data.split.val).push_back(i);

  Matrix design(500, d + 2);
  design << data.x.topRows(500), data.t.head(500), Vector::Ones(500);
  const Vector coef = design.colPivHouseholderQr().solve(data.y.head(500));
  const double ls_residual = (design * coef - data.y.head(500)).squaredNorm() / 500.0;

  ModelConfig cfg;
  cfg.method = Method::kMlp;
  cfg.input_dim = d;
  cfg.hidden_width = 32;
  TrainConfig tc;
  tc.gamma = 0.0;
  tc.iterations = 2000;
  tc.batch_size = 32;
  tc.optimizer = Optimizer::kAdam;
  tc.lr_outcome = 1e-3;
  const TrainResult r = train(data, cfg, tc);
  const Vector fit = predict_outcome(r.params, cfg, data.x.topRows(500), span_of(data.t.head(500)));
  const double final_loss = (fit - data.y.head(500)).squaredNorm() / 500.0;
  EXPECT_LT(final_loss, 2.0 * ls_residual) << "least squares " << ls_residual;
}

TEST(Trainer, GradientRouting) {
  const ModelConfig cfg = tiny_config(Method::kAcfr);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1), u01(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelParams params = jittered(cfg, static_cast<std::uint64_t>(trial));
    Matrix x(4, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    std::vector<double> t(4), y(4);
    for (int i = 0; i < 4; ++i) t[i] = u01(rng), y[i] = u(rng);
    Graph g;
    const BoundParams p(g, params);
    const Var z = encode(p, cfg, g.leaf(x));
    const Gradients pred = g.backward(
        squared_error(outcome_head(p, cfg, z, t), g.leaf(Eigen::Map<const Matrix>(y.data(), 4, 1))));
    const Gradients adv = g.backward(
        squared_error(predict_treatment(p, cfg, z), g.leaf(Eigen::Map<const Matrix>(t.data(), 4, 1))));
    for (const auto& [name, var] : p.vars()) {
      if (in_group(name, "h")) EXPECT_EQ(adv[var].cwiseAbs().maxCoeff(), 0.0) << name;
      if (in_group(name, "pi")) EXPECT_EQ(pred[var].cwiseAbs().maxCoeff(), 0.0) << name;
    }
  }
}

TEST(Trainer, DeterministicHistory) {
  const Dataset data = small_news();
  const ModelConfig cfg = tiny_config(Method::kAcfr, data.x.cols());
  TrainConfig tc;
  tc.iterations = 25;
  tc.batch_size = 16;
  tc.inner_steps = 2;
  tc.eval_interval = 7;
  const TrainResult a = train(data, cfg, tc);
  const TrainResult b = train(data, cfg, tc);
  EXPECT_EQ(a.history.pred_loss, b.history.pred_loss);
  EXPECT_EQ(a.history.adv_loss, b.history.adv_loss);
  EXPECT_EQ(a.history.val_pred_loss, b.history.val_pred_loss);
  EXPECT_EQ(a.rng_state, b.rng_state);
  tc.seed = 1;
  EXPECT_NE(train(data, cfg, tc).history.pred_loss, a.history.pred_loss);
}

TEST(Trainer, HistoryLengths) {
  const Dataset data = small_news();
  for (Method method : {Method::kAcfr, Method::kMlp}) {
    const ModelConfig cfg = tiny_config(method, data.x.cols());
    for (int interval : {1, 3, 7, 10, 50}) {
      TrainConfig tc;
      tc.iterations = 23;
      tc.batch_size = 8;
      tc.inner_steps = 1;
      tc.eval_interval = interval;
      const TrainResult r = train(data, cfg, tc);
      EXPECT_EQ(r.history.pred_loss.size(), 23u);
      EXPECT_EQ(r.history.adv_loss.size(), 23u);
      EXPECT_EQ(r.history.wall_ms.size(), 23u);
      EXPECT_EQ(r.history.val_pred_loss.size(), static_cast<std::size_t>((23 + interval - 1) / interval));
      EXPECT_EQ(std::isnan(r.history.adv_loss.front()), method == Method::kMlp);
      const std::string csv = history_csv(r.history);
      EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 24);
      EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,l_pred,l_adv,val_l_pred,wall_ms");
    }
  }
}

TEST(Trainer, DivergenceAbortsWithIteration) {
  const Dataset data = small_news();
  const ModelConfig cfg = tiny_config(Method::kMlp, data.x.cols());
  TrainConfig tc;
  tc.iterations = 500;
  tc.batch_size = 16;
  tc.lr_outcome = 1e3;
  try {
    train(data, cfg, tc);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_LT(e.iteration(), 500);
    EXPECT_EQ(e.history().pred_loss.size(), static_cast<std::size_t>(e.iteration() + 1));
    EXPECT_NE(std::string(e.what()).find("iteration " + std::to_string(e.iteration())), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("l_pred"), std::string::npos);
  }
}

TEST(Trainer, InputDimMismatchRejected) {
  const Dataset data = small_news();
  TrainConfig tc;
  tc.iterations = 1;
  tc.batch_size = 8;
  EXPECT_THROW(train(data, tiny_config(Method::kAcfr, 7), tc), std::invalid_argument);
}

AdversaryFitConfig quick_fit() {
  AdversaryFitConfig c;
  c.hidden_width = 8;
  c.max_steps = 4000;
  return c;
}

TEST(FitAdversary, ConditionalMeansOfTwoClusters) {
  Matrix z(40, 2);
  std::vector<double> t(40);
  for (int i = 0; i < 40; ++i) {
    const bool a = i < 20;
    z.row(i) = a ? Eigen::RowVector2d(1.0, 0.0) : Eigen::RowVector2d(0.0, 1.0);
    t[static_cast<std::size_t>(i)] = a ? (i % 2 ? 0.2 : 0.4) : (i % 2 ? 0.6 : 0.8);
  }
  const AdversaryFit fit = fit_adversary_to_convergence(z, t, quick_fit());
  const Vector pred = predict_treatment(fit.params, fit.cfg, z);
  EXPECT_NEAR(pred(0), 0.3, 0.02);
  EXPECT_NEAR(pred(39), 0.7, 0.02);
  EXPECT_NEAR(fit.loss, 0.01, 0.02);
}

TEST(FitAdversary, ConstantRepresentationPredictsMean) {
  const Matrix z = Matrix::Constant(30, 3, 0.5);
  std::vector<double> t(30);
  for (int i = 0; i < 30; ++i) t[static_cast<std::size_t>(i)] = (i % 5) / 4.0;
  const AdversaryFit fit = fit_adversary_to_convergence(z, t, quick_fit());
  EXPECT_NEAR(predict_treatment(fit.params, fit.cfg, z)(0), 0.5, 0.02);
}

TEST(FitAdversary, ConstantTreatmentIsPerfectlyPredicted) {
  Matrix z(30, 3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = std::sin(static_cast<double>(i));
  const std::vector<double> t(30, 0.37);
  EXPECT_LT(fit_adversary_to_convergence(z, t, quick_fit()).loss, 1e-3);
  EXPECT_THROW(fit_adversary_to_convergence(z, std::vector<double>(29, 0.1), quick_fit()), ShapeError);
}

TEST(FitAdversary, StopsOnPlateau) {
  const Matrix z = Matrix::Constant(20, 2, 1.0);
  const std::vector<double> t(20, 0.5);
  AdversaryFitConfig c = quick_fit();
  c.max_steps = 100000;
  EXPECT_LT(fit_adversary_to_convergence(z, t, c).steps, 100000);
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.model = tiny_config(Method::kAcfr);
  c.model.identity_query = true;
  c.train.gamma = 0.1;
  c.train.optimizer = Optimizer::kAdam;
  c.params = jittered(c.model, 2);
  c.iteration = 17;
  std::ostringstream s;
  s << make_stream(4, 10);
  c.rng_state = s.str();
  return c;
}

TEST(Checkpoint, RoundTripPreservesForwardBitwise) {
  const Checkpoint c = sample_checkpoint();
  const fs::path path = fs::temp_directory_path() / "acfr_trainer_ckpt.json";
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.iteration, 17);
  EXPECT_EQ(back.rng_state, c.rng_state);
  EXPECT_EQ(back.train.gamma, 0.1);
  EXPECT_EQ(back.train.optimizer, Optimizer::kAdam);
  EXPECT_TRUE(back.model.identity_query);
  for (const auto& [name, w] : c.params.weights) EXPECT_EQ(back.params.at(name), w) << name;

  Matrix x(3, 4);
  x << 0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8, 0.9, -1.0, 1.1, -1.2;
  const std::vector<double> t{0.0, 0.5, 1.0};
  const Vector a = predict_outcome(c.params, c.model, x, t);
  const Vector b = predict_outcome(back.params, back.model, x, t);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 3), 0);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
}

TEST(Checkpoint, TruncatedFileIsAParseError) {
  const std::string text = serialize_checkpoint(sample_checkpoint());
  EXPECT_THROW(parse_checkpoint(text.substr(0, text.size() / 2)), CheckpointError);
  EXPECT_THROW(parse_checkpoint(""), CheckpointError);
}

TEST(Checkpoint, WrongVersionNamed) {
  std::string text = serialize_checkpoint(sample_checkpoint());
  text.replace(text.find("acfr-ckpt-1"), 11, "acfr-ckpt-9");
  try {
    parse_checkpoint(text);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("acfr-ckpt-9"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("acfr-ckpt-1"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, ShapeMismatchAgainstConfig) {
  Checkpoint c = sample_checkpoint();
  c.model.hidden_width = 6;
  EXPECT_THROW(parse_checkpoint(serialize_checkpoint(c)), CheckpointError);
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "acfr_no_such_checkpoint.json"), CheckpointError);
}

// Post-hoc adversary loss on the learned representation: balancing should not
// make treatments easier to recover than the unbalanced run.
TEST(Trainer, BalancingDoesNotIncreaseTreatmentPredictability) {
  const Dataset data = small_news(4, 400, 20, 4.0);
  ModelConfig cfg;
  cfg.input_dim = data.x.cols();
  cfg.hidden_width = 32;
  cfg.repr_dim = 16;
  cfg.tokens = 4;
  cfg.attn_dim = 8;
  cfg.value_dim = 8;
  cfg.head_width = 8;
  TrainConfig tc;
  tc.iterations = 300;
  tc.batch_size = 32;
  tc.inner_steps = 5;
  const Matrix x_train = gather_rows(data.x, data.split.train);
  const Vector t_train = gather(data.t, data.split.train);
  AdversaryFitConfig fit_cfg;
  fit_cfg.max_steps = 3000;

  auto post_hoc = [&](double gamma) {
    TrainConfig c = tc;
    c.gamma = gamma;
    const TrainResult r = train(data, cfg, c);
    return fit_adversary_to_convergence(encode(r.params, cfg, x_train), span_of(t_train), fit_cfg).loss;
  };
  const double unbalanced = post_hoc(0.0);
  for (double gamma : {0.1, 1.0}) EXPECT_GE(post_hoc(gamma), unbalanced) << "gamma " << gamma;
}

}  // namespace
}  // namespace acfr
