#pragma once

// Counterfactual metrics on the treatment grid and a brute-force checker
// for the generalization bounds on finite (z, t) instances.

#include "acfr/datagen.hpp"
#include "acfr/diffmath.hpp"
#include "acfr/trainer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace acfr {

inline constexpr double kBoundTolerance = 1e-12;

double mise(const Matrix& pred, const Matrix& truth, std::span<const double> grid);
double policy_error(const Matrix& pred, const Matrix& truth, std::span<const double> grid);

// Both in nats. P and Q may be any shape; they are compared cellwise.
double discrete_kl(const Matrix& p, const Matrix& q);

struct MutualInfo {
  double I = 0;
  double H_T = 0;
  double H_T_given_Z = 0;
};
MutualInfo mutual_info(const Matrix& p_zt);

Vector z_marginal(const Matrix& p_zt);  // length |Z|
Vector t_marginal(const Matrix& p_zt);  // length |T|
Matrix marginal_product(const Matrix& p_zt);

struct DiscreteInstance {
  Matrix P;     // |Z| x |T| joint
  Matrix loss;  // ell(z, t)
  double C = 1;
  std::optional<Matrix> mu;
  std::optional<Matrix> h;

  void validate() const;
  std::string to_string() const;
};

double factual_error(const DiscreteInstance& inst, Eigen::Index t);
double counterfactual_error(const DiscreteInstance& inst, Eigen::Index t);

struct ExpectedErrors {
  double factual = 0;
  double counterfactual = 0;
};
ExpectedErrors expected_errors(const DiscreteInstance& inst);

struct Prop1Check {
  double lhs = 0;
  double rhs = 0;          // KL(P || Pz Pt)
  double rhs_reverse = 0;  // KL(Pz Pt || P)
  double kl = 0;
  double kl_reverse = 0;
  bool holds = false;
  bool both_kl_directions = false;
};
Prop1Check check_prop1(const DiscreteInstance& inst);

struct BoundCheck {
  double lhs = 0;
  double rhs = 0;
  bool holds = false;
  double slack() const { return rhs - lhs; }
};
BoundCheck check_lemma1(const DiscreteInstance& inst, Eigen::Index t);

double pehe(const DiscreteInstance& inst, Eigen::Index t1, Eigen::Index t2);
BoundCheck check_prop2(const DiscreteInstance& inst, Eigen::Index t1, Eigen::Index t2);

struct PinskerCheck {
  double tv_sum = 0;
  double kl_bound = 0;
  bool holds = false;
};
PinskerCheck pinsker_check(const Matrix& p, const Matrix& q);

DiscreteInstance random_instance(Eigen::Index nz, Eigen::Index nt, std::uint64_t seed, bool with_response_tables);

struct VerifyConfig {
  int instances = 1000;
  Eigen::Index max_z = 8;
  Eigen::Index max_t = 8;
  std::uint64_t seed = 7;
};

struct CheckSummary {
  std::string name;
  long checked = 0;
  long violations = 0;
  double min_slack = 0;
  std::string counterexample;  // first violating instance
};

struct VerifyReport {
  VerifyConfig cfg;
  std::vector<CheckSummary> checks;
  long violations() const;
  std::string to_text() const;
};

VerifyReport verify_bounds(const VerifyConfig& cfg);
// Runs every check on one given instance; used for hand-built cases.
VerifyReport verify_instance(const DiscreteInstance& inst);

// 1 - holdout MSE / holdout Var(t) of a freshly fitted treatment predictor.
double balance_probe(const Matrix& z, std::span<const double> t, const AdversaryFitConfig& cfg = {});

struct MetricsRow {
  std::string method;
  std::uint64_t seed = 0;
  double alpha = 0;
  std::string split;
  double mise = 0;
  double pe = 0;
};

std::string split_label(Split s);
std::string metrics_header();
std::string metrics_line(const MetricsRow& row);
std::string metrics_csv(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

}  // namespace acfr
