#include "acfr/theory.hpp"

#include "acfr/textio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace acfr {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " does not match " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void require_grid(const Matrix& m, std::span<const double> grid, const char* what) {
  if (static_cast<std::size_t>(m.cols()) != grid.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(m.cols()) + " columns but grid has " +
                     std::to_string(grid.size()) + " points");
  }
  if (grid.size() < 2) throw ShapeError(std::string(what) + ": grid needs at least two points");
}

Eigen::Index argmax_first(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = j;
  }
  return best;
}

double entropy(const Vector& p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

Vector column(const Matrix& m, Eigen::Index j) { return m.col(j); }

}  // namespace

double mise(const Matrix& pred, const Matrix& truth, std::span<const double> grid) {
  require_same_shape(pred, truth, "mise");
  require_grid(pred, grid, "mise");
  if (pred.rows() == 0) throw ShapeError("mise: no units");
  const Matrix sq = (pred - truth).array().square().matrix();
  double total = 0;
  for (Eigen::Index i = 0; i < sq.rows(); ++i) {
    double integral = 0;
    for (std::size_t j = 1; j < grid.size(); ++j) {
      integral += 0.5 * (grid[j] - grid[j - 1]) * (sq(i, j - 1) + sq(i, j));
    }
    total += integral;
  }
  return total / static_cast<double>(sq.rows());
}

double policy_error(const Matrix& pred, const Matrix& truth, std::span<const double> grid) {
  require_same_shape(pred, truth, "policy_error");
  require_grid(pred, grid, "policy_error");
  if (pred.rows() == 0) throw ShapeError("policy_error: no units");
  double total = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    const double gap = truth(i, argmax_first(truth.row(i))) - truth(i, argmax_first(pred.row(i)));
    total += gap * gap;
  }
  return total / static_cast<double>(truth.rows());
}

double discrete_kl(const Matrix& p, const Matrix& q) {
  require_same_shape(p, q, "discrete_kl");
  double kl = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double pv = p(i, j);
      if (pv == 0) continue;
      if (q(i, j) <= 0) {
        throw std::domain_error("discrete_kl: Q(" + std::to_string(i) + "," + std::to_string(j) +
                                ") = 0 where P = " + format_double(pv));
      }
      kl += pv * std::log(pv / q(i, j));
    }
  }
  return std::max(kl, 0.0);  // Gibbs; a negative sum is rounding
}

Vector z_marginal(const Matrix& p_zt) { return p_zt.rowwise().sum(); }
Vector t_marginal(const Matrix& p_zt) { return p_zt.colwise().sum().transpose(); }
Matrix marginal_product(const Matrix& p_zt) { return z_marginal(p_zt) * t_marginal(p_zt).transpose(); }

MutualInfo mutual_info(const Matrix& p_zt) {
  MutualInfo mi;
  mi.I = discrete_kl(p_zt, marginal_product(p_zt));
  mi.H_T = entropy(t_marginal(p_zt));
  mi.H_T_given_Z = mi.H_T - mi.I;
  return mi;
}

void DiscreteInstance::validate() const {
  if (P.rows() < 1 || P.cols() < 1) throw std::invalid_argument("instance: empty joint table");
  require_same_shape(P, loss, "instance loss table");
  if ((P.array() < 0).any()) throw std::invalid_argument("instance: negative probability");
  if (std::abs(P.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("instance: joint sums to " + format_double(P.sum()));
  }
  if (!(C > 0)) throw std::invalid_argument("instance: C must be positive");
  for (Eigen::Index i = 0; i < loss.rows(); ++i) {
    for (Eigen::Index j = 0; j < loss.cols(); ++j) {
      if (!(loss(i, j) >= 0) || loss(i, j) / C > 1) {
        throw std::invalid_argument("instance: loss(" + std::to_string(i) + "," + std::to_string(j) + ") = " +
                                    format_double(loss(i, j)) + " outside [0, C]");
      }
    }
  }
  if (mu.has_value() != h.has_value()) throw std::invalid_argument("instance: mu and h must come together");
  if (mu) {
    require_same_shape(P, *mu, "instance mu table");
    require_same_shape(P, *h, "instance h table");
    const double gap = (loss - (*mu - *h).array().square().matrix()).cwiseAbs().maxCoeff();
    if (gap > 1e-12) throw std::invalid_argument("instance: loss is not (mu - h)^2");
  }
}

std::string DiscreteInstance::to_string() const {
  std::ostringstream out;
  auto table = [&](const char* name, const Matrix& m) {
    out << name << " =";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out << (i ? " ;" : "");
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << ' ' << format_double(m(i, j));
    }
    out << '\n';
  };
  out << "C = " << format_double(C) << '\n';
  table("P", P);
  table("loss", loss);
  if (mu) table("mu", *mu);
  if (h) table("h", *h);
  return out.str();
}

double factual_error(const DiscreteInstance& inst, Eigen::Index t) {
  if (t < 0 || t >= inst.P.cols()) throw std::out_of_range("factual_error: treatment index out of range");
  const double pt = inst.P.col(t).sum();
  if (!(pt > 0)) throw std::domain_error("factual_error: treatment " + std::to_string(t) + " has zero probability");
  return inst.loss.col(t).dot(inst.P.col(t)) / pt;
}

double counterfactual_error(const DiscreteInstance& inst, Eigen::Index t) {
  if (t < 0 || t >= inst.P.cols()) throw std::out_of_range("counterfactual_error: treatment index out of range");
  return inst.loss.col(t).dot(z_marginal(inst.P));
}

ExpectedErrors expected_errors(const DiscreteInstance& inst) {
  return {inst.loss.cwiseProduct(inst.P).sum(), inst.loss.cwiseProduct(marginal_product(inst.P)).sum()};
}

Prop1Check check_prop1(const DiscreteInstance& inst) {
  inst.validate();
  const ExpectedErrors e = expected_errors(inst);
  const Matrix prod = marginal_product(inst.P);
  Prop1Check r;
  r.kl = discrete_kl(inst.P, prod);
  r.kl_reverse = discrete_kl(prod, inst.P);
  r.lhs = e.counterfactual;
  r.rhs = e.factual + inst.C * std::sqrt(2 * r.kl);
  r.rhs_reverse = e.factual + inst.C * std::sqrt(2 * r.kl_reverse);
  r.holds = r.lhs <= r.rhs + kBoundTolerance;
  r.both_kl_directions = r.holds && r.lhs <= r.rhs_reverse + kBoundTolerance;
  return r;
}

namespace {

double kl_marginal_vs_conditional(const DiscreteInstance& inst, Eigen::Index t) {
  const Vector pz = z_marginal(inst.P);
  const Vector cond = column(inst.P, t) / inst.P.col(t).sum();
  return discrete_kl(pz, cond);
}

}  // namespace

BoundCheck check_lemma1(const DiscreteInstance& inst, Eigen::Index t) {
  inst.validate();
  BoundCheck r;
  r.lhs = counterfactual_error(inst, t);
  r.rhs = factual_error(inst, t) + inst.C * std::sqrt(2 * kl_marginal_vs_conditional(inst, t));
  r.holds = r.lhs <= r.rhs + kBoundTolerance;
  return r;
}

double pehe(const DiscreteInstance& inst, Eigen::Index t1, Eigen::Index t2) {
  if (!inst.mu || !inst.h) throw std::invalid_argument("pehe: instance has no response tables");
  const Matrix& mu = *inst.mu;
  const Matrix& h = *inst.h;
  if (t1 < 0 || t2 < 0 || t1 >= mu.cols() || t2 >= mu.cols()) throw std::out_of_range("pehe: treatment index");
  const Vector diff = (mu.col(t1) - mu.col(t2)) - (h.col(t1) - h.col(t2));
  return diff.array().square().matrix().dot(z_marginal(inst.P));
}

BoundCheck check_prop2(const DiscreteInstance& inst, Eigen::Index t1, Eigen::Index t2) {
  inst.validate();
  BoundCheck r;
  r.lhs = pehe(inst, t1, t2);
  r.rhs = factual_error(inst, t1) + factual_error(inst, t2) +
          inst.C * (std::sqrt(2 * kl_marginal_vs_conditional(inst, t1)) +
                    std::sqrt(2 * kl_marginal_vs_conditional(inst, t2)));
  r.holds = r.lhs <= r.rhs + kBoundTolerance;
  return r;
}

PinskerCheck pinsker_check(const Matrix& p, const Matrix& q) {
  PinskerCheck r;
  r.kl_bound = std::sqrt(2 * discrete_kl(p, q));
  r.tv_sum = (p - q).cwiseAbs().sum();
  r.holds = r.tv_sum <= r.kl_bound + kBoundTolerance;
  return r;
}

DiscreteInstance random_instance(Eigen::Index nz, Eigen::Index nt, std::uint64_t seed, bool with_response_tables) {
  if (nz < 2 || nt < 2) throw std::invalid_argument("random_instance: sizes must be at least 2");
  auto rng = make_stream(seed, with_response_tables ? 2 : 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // open interval for the exponential draw
  auto positive = [&] {
    double u;
    do u = unit(rng);
    while (u <= 0);
    return u;
  };

  DiscreteInstance inst;
  inst.P.resize(nz, nt);
  for (Eigen::Index i = 0; i < inst.P.size(); ++i) inst.P.data()[i] = -std::log(positive());
  inst.P /= inst.P.sum();

  if (with_response_tables) {
    inst.mu = Matrix(nz, nt);
    inst.h = Matrix(nz, nt);
    for (Eigen::Index i = 0; i < inst.P.size(); ++i) {
      inst.mu->data()[i] = unit(rng);
      inst.h->data()[i] = unit(rng);
    }
    inst.loss = (*inst.mu - *inst.h).array().square().matrix();
    inst.C = inst.loss.maxCoeff();
    if (!(inst.C > 0)) inst.C = 1;
  } else {
    std::uniform_real_distribution<double> c_dist(0.5, 2.0);
    inst.C = c_dist(rng);
    inst.loss.resize(nz, nt);
    for (Eigen::Index i = 0; i < inst.loss.size(); ++i) inst.loss.data()[i] = inst.C * unit(rng);
  }
  return inst;
}

long VerifyReport::violations() const {
  long v = 0;
  for (const auto& c : checks) v += c.violations;
  return v;
}

std::string VerifyReport::to_text() const {
  std::ostringstream out;
  out << "bound verification\n";
  out << "seed = " << cfg.seed << "\n";
  out << "instances = " << cfg.instances << "\n";
  out << "max_z = " << cfg.max_z << "\n";
  out << "max_t = " << cfg.max_t << "\n";
  for (const auto& c : checks) {
    out << c.name << ": checked = " << c.checked << ", violations = " << c.violations
        << ", min_slack = " << format_double(c.min_slack) << "\n";
  }
  out << "total_violations = " << violations() << "\n";
  for (const auto& c : checks) {
    if (!c.counterexample.empty()) out << "counterexample (" << c.name << "):\n" << c.counterexample;
  }
  return out.str();
}

namespace {

struct Tally {
  CheckSummary s;
  explicit Tally(std::string name) {
    s.name = std::move(name);
    s.min_slack = std::numeric_limits<double>::infinity();
  }
  void add(double slack, bool holds, const DiscreteInstance& inst, const std::string& where) {
    ++s.checked;
    s.min_slack = std::min(s.min_slack, slack);
    if (!holds) {
      ++s.violations;
      if (s.counterexample.empty()) s.counterexample = where + "\n" + inst.to_string();
    }
  }
};

struct Tallies {
  Tally prop1{"prop1"};
  Tally prop1_reverse{"prop1_reverse_kl"};
  Tally lemma1{"lemma1"};
  Tally prop2{"prop2"};
  Tally prop2_doubled{"prop2_doubled"};  // same right-hand side times 2
  Tally pinsker{"pinsker"};
  Tally pinsker_reverse{"pinsker_reverse"};

  void run_plain(const DiscreteInstance& inst, const std::string& tag) {
    const Prop1Check p1 = check_prop1(inst);
    prop1.add(p1.rhs - p1.lhs, p1.holds, inst, tag);
    prop1_reverse.add(p1.rhs_reverse - p1.lhs, p1.lhs <= p1.rhs_reverse + kBoundTolerance, inst, tag);
    for (Eigen::Index t = 0; t < inst.P.cols(); ++t) {
      const BoundCheck l = check_lemma1(inst, t);
      lemma1.add(l.slack(), l.holds, inst, tag + " t=" + std::to_string(t));
    }
    const Matrix prod = marginal_product(inst.P);
    const PinskerCheck a = pinsker_check(inst.P, prod);
    pinsker.add(a.kl_bound - a.tv_sum, a.holds, inst, tag);
    const PinskerCheck b = pinsker_check(prod, inst.P);
    pinsker_reverse.add(b.kl_bound - b.tv_sum, b.holds, inst, tag);
  }

  void run_tables(const DiscreteInstance& inst, const std::string& tag) {
    for (Eigen::Index t1 = 0; t1 < inst.P.cols(); ++t1) {
      for (Eigen::Index t2 = t1 + 1; t2 < inst.P.cols(); ++t2) {
        const BoundCheck c = check_prop2(inst, t1, t2);
        const std::string where = tag + " t1=" + std::to_string(t1) + " t2=" + std::to_string(t2);
        prop2.add(c.slack(), c.holds, inst, where);
        prop2_doubled.add(2 * c.rhs - c.lhs, c.lhs <= 2 * c.rhs + kBoundTolerance, inst, where);
      }
    }
  }

  std::vector<CheckSummary> summaries() const {
    std::vector<CheckSummary> out;
    for (const Tally* t : {&prop1, &prop1_reverse, &lemma1, &prop2, &prop2_doubled, &pinsker, &pinsker_reverse}) {
      if (t->s.checked > 0) out.push_back(t->s);
    }
    return out;
  }
};

}  // namespace

VerifyReport verify_bounds(const VerifyConfig& cfg) {
  if (cfg.instances < 1) throw std::invalid_argument("verify_bounds: instance count must be at least 1");
  if (cfg.max_z < 2 || cfg.max_t < 2) throw std::invalid_argument("verify_bounds: sizes must be at least 2");
  auto rng = make_stream(cfg.seed, 30);
  std::uniform_int_distribution<Eigen::Index> zdist(2, cfg.max_z), tdist(2, cfg.max_t);
  Tallies tallies;
  for (int i = 0; i < cfg.instances; ++i) {
    const Eigen::Index nz = zdist(rng), nt = tdist(rng);
    const std::uint64_t inst_seed = rng();
    const std::string tag = "instance " + std::to_string(i);
    tallies.run_plain(random_instance(nz, nt, inst_seed, false), tag);
    tallies.run_tables(random_instance(nz, nt, inst_seed, true), tag);
  }
  VerifyReport report;
  report.cfg = cfg;
  report.checks = tallies.summaries();
  return report;
}

VerifyReport verify_instance(const DiscreteInstance& inst) {
  Tallies tallies;
  tallies.run_plain(inst, "instance 0");
  if (inst.mu) tallies.run_tables(inst, "instance 0");
  VerifyReport report;
  report.cfg.instances = 1;
  report.cfg.max_z = inst.P.rows();
  report.cfg.max_t = inst.P.cols();
  report.checks = tallies.summaries();
  return report;
}

double balance_probe(const Matrix& z, std::span<const double> t, const AdversaryFitConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(t.size());
  if (z.rows() != n) throw ShapeError("balance_probe: representation rows do not match treatments");
  if (n < 50) throw std::invalid_argument("balance_probe: need at least 50 samples");
  const double mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(n);
  double var = 0;
  for (double v : t) var += (v - mean) * (v - mean);
  if (!(var > 0)) throw std::domain_error("balance_probe: treatment has zero variance");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto rng = make_stream(cfg.seed, 20);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_fit = static_cast<std::size_t>(7 * n / 10);
  const std::span<const Eigen::Index> fit_idx(order.data(), n_fit);
  const std::span<const Eigen::Index> hold_idx(order.data() + n_fit, order.size() - n_fit);

  const Vector tv = Eigen::Map<const Vector>(t.data(), n);
  const Vector t_fit = gather(tv, fit_idx);
  const Vector t_hold = gather(tv, hold_idx);
  const double hold_mean = t_hold.mean();
  const double hold_var = (t_hold.array() - hold_mean).square().mean();
  if (!(hold_var > 0)) throw std::domain_error("balance_probe: holdout treatment has zero variance");

  const AdversaryFit fit =
      fit_adversary_to_convergence(gather_rows(z, fit_idx), std::span<const double>(t_fit.data(), t_fit.size()), cfg);
  const Vector pred = predict_treatment(fit.params, fit.cfg, gather_rows(z, hold_idx));
  const double mse = (pred - t_hold).array().square().mean();
  return 1.0 - mse / hold_var;
}

std::string split_label(Split s) {
  switch (s) {
    case Split::kTest: return "out-of-sample";
    case Split::kTrain: return "within-sample";
    case Split::kVal: return "validation";
  }
  throw std::invalid_argument("split_label: bad split");
}

std::string metrics_header() { return "method,seed,alpha,split,mise,pe"; }

std::string metrics_line(const MetricsRow& row) {
  return row.method + "," + std::to_string(row.seed) + "," + format_double(row.alpha) + "," + row.split + "," +
         format_double(row.mise) + "," + format_double(row.pe);
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = metrics_header() + "\n";
  for (const auto& r : rows) out += metrics_line(r) + "\n";
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsRow> rows;
  std::size_t pos = 0;
  bool header = true;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (header) {
      if (line != metrics_header()) throw std::runtime_error("metrics: unexpected header");
      header = false;
      continue;
    }
    const auto f = split_tokens(line, ",");
    if (f.size() != 6) throw std::runtime_error("metrics: line " + std::to_string(line_no) + " needs 6 fields");
    MetricsRow r;
    r.method = std::string(f[0]);
    r.seed = static_cast<std::uint64_t>(parse_int(f[1], "seed"));
    r.alpha = parse_double(f[2], "alpha");
    r.split = std::string(f[3]);
    r.mise = parse_double(f[4], "mise");
    r.pe = parse_double(f[5], "pe");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace acfr
