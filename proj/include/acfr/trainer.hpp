#pragma once

#include "acfr/datagen.hpp"
#include "acfr/diffmath.hpp"
#include "acfr/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace acfr {

enum class Optimizer { kSgd, kAdam };
std::string to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view s);

struct TrainConfig {
  int iterations = 1000;            // T
  Eigen::Index batch_size = 64;     // b
  int inner_steps = 10;             // M
  double gamma = 1.0;               // trade-off between l_pred and l_adv
  double lr_outcome = 1e-4;         // eta_1, encoder and outcome head
  double lr_adversary = 1e-4;       // eta_2, treatment predictor
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kSgd;
  int eval_interval = 100;          // validation l_pred every this many iterations
  bool adversary = true;            // false skips the inner loop and the l_adv term entirely

  void validate(Eigen::Index train_size) const;
};

struct TrainHistory {
  std::vector<double> pred_loss;
  std::vector<double> adv_loss;  // NaN where no adversary is trained
  std::vector<double> wall_ms;
  std::vector<int> val_iteration;
  std::vector<double> val_pred_loss;
};

struct StepLosses {
  double pred = 0.0;
  double adv = 0.0;  // l_adv against the post-inner-loop predictor; NaN without adversary
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(int iteration, double pred, double adv, TrainHistory partial);
  int iteration() const { return iteration_; }
  const TrainHistory& history() const { return history_; }

 private:
  int iteration_;
  TrainHistory history_;
};

/// Mean squared error; throws on empty or mismatched inputs.
double pred_loss(std::span<const double> y, std::span<const double> y_hat);
double adv_loss(std::span<const double> t, std::span<const double> t_hat);

/// One optimizer state per parameter, first and second moments for Adam.
class ParamOptimizer {
 public:
  ParamOptimizer(Optimizer kind, double lr) : kind_(kind), lr_(lr) {}
  void apply(const std::string& name, Matrix& param, const Matrix& grad);

 private:
  struct Moments {
    Matrix m;
    Matrix v;
    int steps = 0;
  };
  Optimizer kind_;
  double lr_;
  std::map<std::string, Moments> moments_;
};

/// Alternating adversarial optimization. Each step() is one outer iteration:
///   1. z = phi(x_B)
///   2. M updates of the treatment predictor on l_adv(z), scaled by gamma
///   3. h   <- h   - eta_1 grad_h l_pred
///      phi <- phi - eta_1 (grad_phi l_pred - gamma grad_phi l_adv)
/// with l_adv in step 3 evaluated against the predictor produced by step 2.
/// For the MLP baseline only the outcome update runs.
class Trainer {
 public:
  Trainer(ModelConfig model_cfg, TrainConfig train_cfg, ModelParams init);

  StepLosses step(const Matrix& x, std::span<const double> t, std::span<const double> y);

  const ModelParams& params() const { return params_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  const TrainConfig& train_config() const { return train_cfg_; }

 private:
  bool adversarial() const;

  ModelConfig model_cfg_;
  TrainConfig train_cfg_;
  ModelParams params_;
  std::set<std::string> frozen_;
  ParamOptimizer outcome_opt_;
  ParamOptimizer adversary_opt_;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  std::string rng_state;  // minibatch sampler state after the last iteration
};

/// Initializes from train_cfg.seed and runs train_cfg.iterations outer
/// iterations on uniformly sampled (with replacement) training minibatches.
TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg);
TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  ModelParams init);

struct AdversaryFitConfig {
  Eigen::Index hidden_width = 32;  // unused at hidden_layers = 0
  int hidden_layers = 0;           // linear probe with sigmoid link
  double lr = 1e-2;                // Adam, full batch
  int max_steps = 5000;
  int window = 100;
  double tolerance = 1e-7;    // stop once the loss improved less than this over `window` steps
  std::uint64_t seed = 0;
};

struct AdversaryFit {
  ModelConfig cfg;     // predictor-only config (repr_dim = z.cols())
  ModelParams params;  // "pi." weights
  double loss = 0.0;
  int steps = 0;
};

/// Trains a fresh treatment predictor on frozen representations.
AdversaryFit fit_adversary_to_convergence(const Matrix& z, std::span<const double> t, const AdversaryFitConfig& cfg);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointVersion = "acfr-ckpt-1";

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ModelParams params;
  int iteration = 0;
  std::string rng_state;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// "iteration,l_pred,l_adv,val_l_pred,wall_ms" rows; val_l_pred is empty off the eval schedule.
std::string history_csv(const TrainHistory& history);

}  // namespace acfr
