#include <gtest/gtest.h>

#include "acfr/spline.hpp"

#include <cmath>
#include <random>

namespace acfr {
namespace {

TEST(Spline, DefaultDimension) { EXPECT_EQ(SplineConfig{}.dim(), 5); }

TEST(Spline, AtZeroOnlyConstantTerm) {
  const Vector s = basis_eval(0.0, SplineConfig{});
  Vector expected(5);
  expected << 1, 0, 0, 0, 0;
  EXPECT_EQ(s, expected);
}

TEST(Spline, AtHalf) {
  const Vector s = basis_eval(0.5, SplineConfig{});
  EXPECT_DOUBLE_EQ(s(0), 1.0);
  EXPECT_DOUBLE_EQ(s(1), 0.5);
  EXPECT_DOUBLE_EQ(s(2), 0.25);
  EXPECT_NEAR(s(3), 1.0 / 36.0, 1e-15);
  EXPECT_EQ(s(4), 0.0);
}

TEST(Spline, AtOne) {
  const Vector s = basis_eval(1.0, SplineConfig{});
  EXPECT_DOUBLE_EQ(s(1), 1.0);
  EXPECT_DOUBLE_EQ(s(2), 1.0);
  EXPECT_NEAR(s(3), 4.0 / 9.0, 1e-15);
  EXPECT_NEAR(s(4), 1.0 / 9.0, 1e-15);
}

TEST(Spline, OutOfRangeTreatmentThrows) {
  EXPECT_THROW(basis_eval(-0.01, SplineConfig{}), std::out_of_range);
  EXPECT_THROW(basis_eval(1.01, SplineConfig{}), std::out_of_range);
  EXPECT_THROW(basis_eval(std::nan(""), SplineConfig{}), std::out_of_range);
}

TEST(Spline, InvalidConfigsRejected) {
  EXPECT_THROW((SplineConfig{0, {0.5}}.validate()), std::invalid_argument);
  EXPECT_THROW((SplineConfig{2, {0.6, 0.4}}.validate()), std::invalid_argument);
  EXPECT_THROW((SplineConfig{2, {0.0, 0.5}}.validate()), std::invalid_argument);
  EXPECT_THROW((SplineConfig{2, {0.5, 1.0}}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((SplineConfig{3, {0.25, 0.5, 0.75}}.validate()));
}

TEST(SplineMatrix, RepeatedRows) {
  const std::vector<double> ts{0.0, 0.0};
  const Matrix m = basis_matrix(ts, SplineConfig{});
  ASSERT_EQ(m.rows(), 2);
  EXPECT_EQ(m.row(0), m.row(1));
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m.row(0).tail(4).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SplineMatrix, SingleRowMatchesBasisEval) {
  const std::vector<double> ts{0.5};
  EXPECT_EQ(Vector(basis_matrix(ts, SplineConfig{}).row(0).transpose()), basis_eval(0.5, SplineConfig{}));
}

TEST(SplineMatrix, EmptyInput) {
  const Matrix m = basis_matrix({}, SplineConfig{});
  EXPECT_EQ(m.rows(), 0);
  EXPECT_EQ(m.cols(), 5);
}

TEST(SplineMatrix, ErrorNamesRow) {
  const std::vector<double> ts{0.2, 1.5};
  try {
    basis_matrix(ts, SplineConfig{});
    FAIL();
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(SplineProperty, SmoothAcrossKnots) {
  for (int degree : {2, 3, 4}) {
    const SplineConfig cfg{degree, {0.2, 0.4, 0.6, 0.8}};
    for (double k : cfg.knots) {
      const Vector lo = basis_eval(k - 1e-7, cfg);
      const Vector hi = basis_eval(k + 1e-7, cfg);
      EXPECT_LT((hi - lo).cwiseAbs().maxCoeff(), 1e-5);
      // one-sided slopes agree
      const Vector dlo = (basis_eval(k, cfg) - basis_eval(k - 1e-6, cfg)) / 1e-6;
      const Vector dhi = (basis_eval(k + 1e-6, cfg) - basis_eval(k, cfg)) / 1e-6;
      EXPECT_LT((dhi - dlo).cwiseAbs().maxCoeff(), 1e-4);
    }
  }
}

TEST(SplineProperty, TruncatedTermsZeroThenIncreasing) {
  const SplineConfig cfg{3, {0.25, 0.5, 0.75}};
  const int p = cfg.degree;
  std::vector<double> grid;
  for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);
  for (std::size_t q = 0; q < cfg.knots.size(); ++q) {
    const Eigen::Index col = p + 1 + static_cast<Eigen::Index>(q);
    double prev = -1;
    for (double t : grid) {
      const double v = basis_eval(t, cfg)(col);
      if (t <= cfg.knots[q]) {
        EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_GT(v, prev);
      }
      prev = v;
    }
  }
}

TEST(SplineProperty, DimensionIsDegreePlusOnePlusKnots) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int degree = 1; degree <= 4; ++degree) {
    for (std::size_t q = 0; q <= 4; ++q) {
      SplineConfig cfg{degree, {}};
      for (std::size_t i = 0; i < q; ++i) cfg.knots.push_back((i + 1.0) / (q + 1.0));
      EXPECT_EQ(basis_eval(unit(rng), cfg).size(), degree + 1 + static_cast<Eigen::Index>(q));
    }
  }
}

}  // namespace
}  // namespace acfr
