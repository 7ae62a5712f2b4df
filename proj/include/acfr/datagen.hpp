#pragma once

#include "acfr/diffmath.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acfr {

enum class DatasetKind {
  kTcgaLike,  // y = 10 (v1'x + 12 v2'x t - 12 v3'x t^2)
  kNewsLike,  // y = 10 (v1'x + sin(v2'x / v3'x * pi t))
};

std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kNewsLike;
  Eigen::Index n = 2000;
  Eigen::Index d = 100;
  double alpha = 2.0;       // Beta shape controlling selection bias; 1 means none
  double noise_std = 0.2;   // additive Gaussian noise on factual outcomes
  std::uint64_t seed = 0;
  std::string covariate_file;  // optional; overrides n and d when set

  void validate() const;
};

/// Unit-norm directions defining the response surfaces and the assignment bias.
struct WeightVectors {
  Vector v1;
  Vector v2;
  Vector v3;
};

/// (v1'x, v2'x, v3'x) for one unit; every response and assignment formula
/// depends on x only through these.
struct Projections {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

struct SplitIndices {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val;
  std::vector<Eigen::Index> test;
};

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split parse_split(std::string_view s);

struct Dataset {
  DatasetSpec spec;
  Matrix x;  // N x d, unit-norm rows
  Vector t;  // N, in [0, 1]
  Vector y;  // N, factual outcomes
  SplitIndices split;
  WeightVectors weights;

  const std::vector<Eigen::Index>& indices(Split s) const;
  Projections project(Eigen::Index row) const;
};

inline constexpr double kMinOptimalTreatment = 0.05;
inline constexpr double kMinBeta = 0.05;

/// Deterministic sub-stream of a seed; distinct streams are statistically independent.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

WeightVectors sample_weight_vectors(Eigen::Index d, std::uint64_t seed);

/// |N(0, 1)| entries, N x d.
Matrix generate_covariates(const DatasetSpec& spec);

/// Reads delimiter-separated numeric rows (comma, semicolon, tab or space),
/// skipping a leading header line if it does not parse as numbers.
Matrix load_covariates(const std::filesystem::path& path);

/// Column standardization (population std) followed by unit-norm rows.
Matrix preprocess(const Matrix& raw);

Projections project(const Eigen::Ref<const Eigen::RowVectorXd>& x, const WeightVectors& w);

/// Outcome-maximizing treatment, clamped to [kMinOptimalTreatment, 1].
double optimal_treatment(const Projections& p, DatasetKind kind);
double optimal_treatment(const Eigen::Ref<const Eigen::RowVectorXd>& x, const WeightVectors& w, DatasetKind kind);

/// Beta shape beta = (alpha - 1) / t* + 2 - alpha, clamped below at kMinBeta,
/// which puts the mode of Beta(alpha, beta) at t* for alpha > 1.
double assignment_beta(double alpha, double t_star);

/// Ratio of two Gamma draws.
double sample_beta(double a, double b, std::mt19937_64& rng);

double assign_treatment(const Projections& p, double alpha, DatasetKind kind, std::mt19937_64& rng);
double assign_treatment(const Eigen::Ref<const Eigen::RowVectorXd>& x, const WeightVectors& w, double alpha,
                        DatasetKind kind, std::mt19937_64& rng);

/// Noiseless potential outcome mu(x, t).
double outcome(const Projections& p, double t, DatasetKind kind);
double outcome(const Eigen::Ref<const Eigen::RowVectorXd>& x, double t, const WeightVectors& w, DatasetKind kind);

/// Shuffled floor(0.68 N) / floor(0.12 N) / remainder partition.
SplitIndices make_split(Eigen::Index n, std::mt19937_64& rng);

Dataset make_dataset(const DatasetSpec& spec);

/// The 65 evaluation treatments j / 64, j = 0..64.
std::vector<double> eval_grid();

/// |indices| x |grid| matrix of mu(x_i, grid_j).
Matrix response_grid(const Dataset& data, std::span<const Eigen::Index> indices, std::span<const double> grid);

/// Per-unit optimal treatments t*.
Vector optimal_treatments(const Dataset& data);

/// Rows of x and entries of t, y at the given indices.
Matrix gather_rows(const Matrix& x, std::span<const Eigen::Index> indices);
Vector gather(const Vector& v, std::span<const Eigen::Index> indices);

// On-disk layout of a dataset directory:
//   covariates.csv  comma-separated rows of the preprocessed covariates
//   factual.csv     "index,t,y" per unit
//   splits.txt      "train i i ...", "val ...", "test ..." lines
//   meta.txt        "key = value" lines: spec echo and v1, v2, v3
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace acfr
