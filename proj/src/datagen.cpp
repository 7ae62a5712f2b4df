#include "acfr/datagen.hpp"

#include "acfr/textio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace acfr {

std::string to_string(DatasetKind k) { return k == DatasetKind::kTcgaLike ? "tcga-like" : "news-like"; }

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "tcga-like") return DatasetKind::kTcgaLike;
  if (s == "news-like") return DatasetKind::kNewsLike;
  throw std::invalid_argument("unknown dataset kind '" + std::string(s) + "' (expected tcga-like or news-like)");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

void DatasetSpec::validate() const {
  if (!(alpha >= 1.0)) throw std::invalid_argument("dataset: alpha must be >= 1, got " + format_double(alpha));
  if (!(noise_std >= 0.0)) throw std::invalid_argument("dataset: noise_std must be >= 0");
  if (covariate_file.empty()) {
    if (n < 10) throw std::invalid_argument("dataset: n must be >= 10");
    if (d < 2) throw std::invalid_argument("dataset: d must be >= 2");
  }
}

const std::vector<Eigen::Index>& Dataset::indices(Split s) const {
  switch (s) {
    case Split::kTrain: return split.train;
    case Split::kVal: return split.val;
    case Split::kTest: return split.test;
  }
  throw std::logic_error("unreachable");
}

Projections Dataset::project(Eigen::Index row) const { return acfr::project(x.row(row), weights); }

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

WeightVectors sample_weight_vectors(Eigen::Index d, std::uint64_t seed) {
  if (d < 2) throw std::invalid_argument("weight vectors: d must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = normal(rng);
    return Vector(v / v.norm());
  };
  WeightVectors w;
  w.v1 = draw();
  w.v2 = draw();
  w.v3 = draw();
  return w;
}

Matrix generate_covariates(const DatasetSpec& spec) {
  std::mt19937_64 rng = make_stream(spec.seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(spec.n, spec.d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::abs(normal(rng));
  return x;
}

Matrix load_covariates(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_tokens(line, ",;\t \r");
    if (tokens.empty()) continue;
    std::vector<double> row;
    row.reserve(tokens.size());
    try {
      for (auto tok : tokens) row.push_back(parse_double(tok, "covariate"));
    } catch (const std::invalid_argument& e) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(rows.front().size()) + " columns, got " +
                                  std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument(path.string() + ": no covariate rows");
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rows[i][j];
  }
  return x;
}

Matrix preprocess(const Matrix& raw) {
  if (raw.rows() == 0 || raw.cols() == 0) throw std::invalid_argument("preprocess: empty covariate matrix");
  const Eigen::RowVectorXd mean = raw.colwise().mean();
  Matrix x = raw.rowwise() - mean;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
    if (!(sd > 0.0)) throw std::invalid_argument("preprocess: column " + std::to_string(j) + " has zero variance");
    x.col(j) /= sd;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (!(norm > 0.0)) throw std::invalid_argument("preprocess: row " + std::to_string(i) + " is all zero");
    x.row(i) /= norm;
  }
  return x;
}

Projections project(const Eigen::Ref<const Eigen::RowVectorXd>& x, const WeightVectors& w) {
  if (x.size() != w.v1.size()) {
    throw ShapeError("project: covariate length " + std::to_string(x.size()) + " vs weight length " +
                     std::to_string(w.v1.size()));
  }
  return {x.dot(w.v1.transpose()), x.dot(w.v2.transpose()), x.dot(w.v3.transpose())};
}

double optimal_treatment(const Projections& p, DatasetKind kind) {
  // tcga: dy/dt = 10 (12 b - 24 c t) vanishes at b / (2c).
  // news: sin(b/c * pi t) first peaks at c / (2b).
  const double num = kind == DatasetKind::kTcgaLike ? p.b : p.c;
  const double den = 2.0 * (kind == DatasetKind::kTcgaLike ? p.c : p.b);
  if (den == 0.0) return num > 0.0 ? 1.0 : kMinOptimalTreatment;
  const double ratio = num / den;
  if (!(ratio > kMinOptimalTreatment)) return kMinOptimalTreatment;
  return std::min(ratio, 1.0);
}

double optimal_treatment(const Eigen::Ref<const Eigen::RowVectorXd>& x, const WeightVectors& w, DatasetKind kind) {
  return optimal_treatment(project(x, w), kind);
}

double assignment_beta(double alpha, double t_star) {
  return std::max((alpha - 1.0) / t_star + 2.0 - alpha, kMinBeta);
}

double sample_beta(double a, double b, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double u = ga(rng);
  const double v = gb(rng);
  if (!(u + v > 0.0)) return a / (a + b);
  return std::clamp(u / (u + v), 0.0, 1.0);
}

double assign_treatment(const Projections& p, double alpha, DatasetKind kind, std::mt19937_64& rng) {
  if (!(alpha >= 1.0)) throw std::invalid_argument("assign_treatment: alpha must be >= 1");
  return sample_beta(alpha, assignment_beta(alpha, optimal_treatment(p, kind)), rng);
}

double assign_treatment(const Eigen::Ref<const Eigen::RowVectorXd>& x, const WeightVectors& w, double alpha,
                        DatasetKind kind, std::mt19937_64& rng) {
  return assign_treatment(project(x, w), alpha, kind, rng);
}

double outcome(const Projections& p, double t, DatasetKind kind) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::out_of_range("outcome: treatment " + format_double(t) + " outside [0, 1]");
  if (kind == DatasetKind::kTcgaLike) return 10.0 * (p.a + 12.0 * p.b * t - 12.0 * p.c * t * t);
  if (p.c == 0.0) throw std::domain_error("outcome: v3'x is zero for a news-like unit");
  return 10.0 * (p.a + std::sin(p.b / p.c * std::numbers::pi * t));
}

double outcome(const Eigen::Ref<const Eigen::RowVectorXd>& x, double t, const WeightVectors& w, DatasetKind kind) {
  return outcome(project(x, w), t, kind);
}

SplitIndices make_split(Eigen::Index n, std::mt19937_64& rng) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  // Fisher-Yates with an explicit uniform draw so the order does not depend
  // on the standard library's shuffle implementation.
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(68 * n / 100);
  const auto n_val = static_cast<std::size_t>(12 * n / 100);
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test.assign(perm.begin() + n_train + n_val, perm.end());
  return s;
}

Dataset make_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  Matrix raw;
  if (spec.covariate_file.empty()) {
    raw = generate_covariates(spec);
  } else {
    raw = load_covariates(spec.covariate_file);
    if (raw.rows() < 10 || raw.cols() < 2) throw std::invalid_argument("dataset: covariate file needs >= 10 rows, >= 2 columns");
    data.spec.n = raw.rows();
    data.spec.d = raw.cols();
  }
  data.x = preprocess(raw);
  data.weights = sample_weight_vectors(data.spec.d, make_stream(spec.seed, 2)());

  const Eigen::Index n = data.spec.n;
  std::mt19937_64 treat_rng = make_stream(spec.seed, 3);
  std::mt19937_64 noise_rng = make_stream(spec.seed, 4);
  std::normal_distribution<double> noise(0.0, 1.0);
  data.t.resize(n);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Projections p = data.project(i);
    data.t(i) = assign_treatment(p, spec.alpha, spec.kind, treat_rng);
    const double eps = spec.noise_std > 0.0 ? spec.noise_std * noise(noise_rng) : 0.0;
    data.y(i) = outcome(p, data.t(i), spec.kind) + eps;
  }
  std::mt19937_64 split_rng = make_stream(spec.seed, 5);
  data.split = make_split(n, split_rng);
  return data;
}

std::vector<double> eval_grid() {
  std::vector<double> grid(65);
  for (int j = 0; j <= 64; ++j) grid[static_cast<std::size_t>(j)] = j / 64.0;
  return grid;
}

Matrix response_grid(const Dataset& data, std::span<const Eigen::Index> indices, std::span<const double> grid) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Eigen::Index i = indices[r];
    if (i < 0 || i >= data.x.rows()) throw std::out_of_range("response_grid: index " + std::to_string(i) + " out of range");
    const Projections p = data.project(i);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = outcome(p, grid[j], data.spec.kind);
    }
  }
  return out;
}

Vector optimal_treatments(const Dataset& data) {
  Vector out(data.x.rows());
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) out(i) = optimal_treatment(data.project(i), data.spec.kind);
  return out;
}

Matrix gather_rows(const Matrix& x, std::span<const Eigen::Index> indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(indices[r]);
  return out;
}

Vector gather(const Vector& v, std::span<const Eigen::Index> indices) {
  Vector out(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t r = 0; r < indices.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(indices[r]);
  return out;
}

// ---------------------------------------------------------------------------
// Directory format
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kDatasetFormat = "acfr-dataset-1";

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v(i));
  }
  return out;
}

std::string join(const std::vector<Eigen::Index>& v) {
  std::string out;
  for (auto i : v) {
    out += ' ';
    out += std::to_string(i);
  }
  return out;
}

Vector parse_vector(std::string_view s, std::string_view what) {
  const auto tokens = split_tokens(s, " \t");
  Vector v(static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) v(static_cast<Eigen::Index>(i)) = parse_double(tokens[i], what);
  return v;
}

}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::string cov;
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
      if (j) cov += ',';
      cov += format_double(data.x(i, j));
    }
    cov += '\n';
  }
  write_file(dir / "covariates.csv", cov);

  std::string fac;
  for (Eigen::Index i = 0; i < data.t.size(); ++i) {
    fac += std::to_string(i) + ',' + format_double(data.t(i)) + ',' + format_double(data.y(i)) + '\n';
  }
  write_file(dir / "factual.csv", fac);

  write_file(dir / "splits.txt", "train" + join(data.split.train) + "\nval" + join(data.split.val) + "\ntest" +
                                     join(data.split.test) + "\n");

  std::ostringstream meta;
  meta << "format = " << kDatasetFormat << '\n'
       << "kind = " << to_string(data.spec.kind) << '\n'
       << "n = " << data.spec.n << '\n'
       << "d = " << data.spec.d << '\n'
       << "alpha = " << format_double(data.spec.alpha) << '\n'
       << "noise_std = " << format_double(data.spec.noise_std) << '\n'
       << "seed = " << data.spec.seed << '\n'
       << "covariate_file = " << data.spec.covariate_file << '\n'
       << "v1 = " << join(data.weights.v1) << '\n'
       << "v2 = " << join(data.weights.v2) << '\n'
       << "v3 = " << join(data.weights.v3) << '\n';
  write_file(dir / "meta.txt", meta.str());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset data;
  {
    std::istringstream in(read_file(dir / "meta.txt"));
    std::string line;
    bool versioned = false;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("meta.txt: malformed line '" + line + "'");
      const std::string key(trim(std::string_view(line).substr(0, eq)));
      const std::string_view val = trim(std::string_view(line).substr(eq + 1));
      if (key == "format") {
        if (val != kDatasetFormat) throw std::invalid_argument("meta.txt: unsupported format '" + std::string(val) + "'");
        versioned = true;
      } else if (key == "kind") {
        data.spec.kind = parse_dataset_kind(val);
      } else if (key == "n") {
        data.spec.n = parse_int(val, "n");
      } else if (key == "d") {
        data.spec.d = parse_int(val, "d");
      } else if (key == "alpha") {
        data.spec.alpha = parse_double(val, "alpha");
      } else if (key == "noise_std") {
        data.spec.noise_std = parse_double(val, "noise_std");
      } else if (key == "seed") {
        data.spec.seed = static_cast<std::uint64_t>(std::stoull(std::string(val)));
      } else if (key == "covariate_file") {
        data.spec.covariate_file = std::string(val);
      } else if (key == "v1") {
        data.weights.v1 = parse_vector(val, "v1");
      } else if (key == "v2") {
        data.weights.v2 = parse_vector(val, "v2");
      } else if (key == "v3") {
        data.weights.v3 = parse_vector(val, "v3");
      } else {
        throw std::invalid_argument("meta.txt: unknown key '" + key + "'");
      }
    }
    if (!versioned) throw std::invalid_argument("meta.txt: missing format line");
  }
  const Eigen::Index n = data.spec.n;
  const Eigen::Index d = data.spec.d;
  if (data.weights.v1.size() != d || data.weights.v2.size() != d || data.weights.v3.size() != d) {
    throw std::invalid_argument("meta.txt: weight vectors do not have d entries");
  }

  data.x = load_covariates(dir / "covariates.csv");
  if (data.x.rows() != n || data.x.cols() != d) {
    throw std::invalid_argument("covariates.csv: shape " + shape_str(data.x) + " disagrees with meta.txt");
  }

  data.t.resize(n);
  data.y.resize(n);
  {
    std::istringstream in(read_file(dir / "factual.csv"));
    std::string line;
    Eigen::Index count = 0;
    while (std::getline(in, line)) {
      const auto tok = split_tokens(line, ",");
      if (tok.empty()) continue;
      if (tok.size() != 3) throw std::invalid_argument("factual.csv: expected index,t,y in '" + line + "'");
      const long long i = parse_int(tok[0], "index");
      if (i < 0 || i >= n) throw std::invalid_argument("factual.csv: index out of range in '" + line + "'");
      data.t(i) = parse_double(tok[1], "t");
      data.y(i) = parse_double(tok[2], "y");
      ++count;
    }
    if (count != n) throw std::invalid_argument("factual.csv: expected " + std::to_string(n) + " rows");
  }

  {
    std::istringstream in(read_file(dir / "splits.txt"));
    std::string line;
    while (std::getline(in, line)) {
      const auto tok = split_tokens(line, " \t");
      if (tok.empty()) continue;
      std::vector<Eigen::Index> idx;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const long long i = parse_int(tok[k], "split index");
        if (i < 0 || i >= n) throw std::invalid_argument("splits.txt: index out of range");
        idx.push_back(i);
      }
      switch (parse_split(tok[0])) {
        case Split::kTrain: data.split.train = std::move(idx); break;
        case Split::kVal: data.split.val = std::move(idx); break;
        case Split::kTest: data.split.test = std::move(idx); break;
      }
    }
    if (data.split.train.size() + data.split.val.size() + data.split.test.size() != static_cast<std::size_t>(n)) {
      throw std::invalid_argument("splits.txt: splits do not cover all units");
    }
  }
  return data;
}

}  // namespace acfr
