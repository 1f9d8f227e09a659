#include <doctest.h>

#include <microseq/warping.hpp>

#include "oracles.hpp"

#include <cmath>

using namespace microseq;
using namespace microseq::warping;

TEST_SUITE_BEGIN("warping");

TEST_CASE("pairwise cost matrix basics") {
  Matrix a(2, 1);
  a << 0, 1;
  const Matrix c = pairwise_cost_matrix(a, a);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(0, 1) == 1.0);
  CHECK(c(1, 0) == 1.0);
  CHECK(c(1, 1) == 0.0);

  Matrix zero_row = Matrix::Zero(1, 3);
  Matrix b(2, 3);
  b << 1, 2, 3, -1, 0, 2;
  const Matrix cz = pairwise_cost_matrix(zero_row, b);
  CHECK(cz(0, 0) == doctest::Approx(14.0).epsilon(1e-12));
  CHECK(cz(0, 1) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("pairwise cost matrix matches the double-loop oracle") {
  Rng rng(41);
  const Matrix a = oracles::random_matrix(4, 3, rng);
  const Matrix b = oracles::random_matrix(5, 3, rng);
  const Matrix c = pairwise_cost_matrix(a, b);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 5; ++j)
      CHECK(std::abs(c(i, j) - oracles::sq_dist(a, i, b, j)) <= 1e-12);
}

TEST_CASE("pairwise cost matrix rejects mismatched columns") {
  CHECK_THROWS_AS(pairwise_cost_matrix(Matrix::Zero(2, 3), Matrix::Zero(2, 4)), Error);
}

TEST_CASE("soft-DTW of a single identical frame is exactly zero") {
  Matrix a(1, 1);
  a << 5.0;
  for (const double gamma : {1e-4, 0.1, 1.0, 10.0}) {
    SoftDtwConfig cfg{gamma};
    CHECK(softdtw_value(a, a, cfg).value == 0.0);
  }
}

TEST_CASE("soft-DTW approaches the hard alignment cost as gamma -> 0") {
  Matrix a(3, 1), b(2, 1);
  a << 0, 1, 2;
  b << 0, 2;
  CHECK(hard_dtw(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  const double v = softdtw_value(a, b, SoftDtwConfig{1e-4}).value;
  CHECK(std::abs(v - 1.0) <= 1e-3);
}

TEST_CASE("soft-DTW value never exceeds hard DTW") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Index>(rng.uniform_int(1, 8));
    const auto m = static_cast<Index>(rng.uniform_int(1, 8));
    const Matrix a = oracles::random_matrix(n, 3, rng);
    const Matrix b = oracles::random_matrix(m, 3, rng);
    CHECK(softdtw_value(a, b, SoftDtwConfig{1.0}).value <= hard_dtw(a, b) + 1e-12);
  }
}

TEST_CASE("soft-DTW is symmetric and the fast path matches the table path") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = static_cast<Index>(rng.uniform_int(1, 7));
    const auto m = static_cast<Index>(rng.uniform_int(1, 7));
    const Matrix a = oracles::random_matrix(n, 2, rng);
    const Matrix b = oracles::random_matrix(m, 2, rng);
    const SoftDtwConfig cfg{0.3};
    const double ab = softdtw_value(a, b, cfg).value;
    const double ba = softdtw_value(b, a, cfg).value;
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(softdtw_distance(a, b, cfg) == doctest::Approx(ab).epsilon(1e-12));
  }
}

TEST_CASE("hard DTW equals exhaustive path enumeration") {
  Rng rng(13);
  for (int trial = 0; trial < 12; ++trial) {
    const auto n = static_cast<Index>(rng.uniform_int(1, 6));
    const auto m = static_cast<Index>(rng.uniform_int(1, 6));
    const Matrix a = oracles::random_matrix(n, 2, rng);
    const Matrix b = oracles::random_matrix(m, 2, rng);
    CHECK(hard_dtw(a, b) == doctest::Approx(oracles::dtw_enumerate(a, b)).epsilon(1e-12));
  }
  Matrix self = oracles::random_matrix(5, 3, rng);
  CHECK(hard_dtw(self, self) == 0.0);
}

TEST_CASE("soft-DTW gradient matches central finite differences") {
  Rng rng(17);
  Matrix a = oracles::random_matrix(5, 3, rng);
  const Matrix b = oracles::random_matrix(4, 3, rng);
  const SoftDtwConfig cfg{1.0};
  const auto res = softdtw_gradient(a, b, cfg);
  REQUIRE(res.grad_first.rows() == 5);
  REQUIRE(res.grad_first.cols() == 3);

  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      const double fd = oracles::central_diff(
          [&] { return softdtw_value(a, b, cfg).value; }, a(i, j));
      CHECK(oracles::rel_err(res.grad_first(i, j), fd) <= 1e-4);
    }
  }
}

TEST_CASE("gradient vanishes for identical inputs at small gamma") {
  Rng rng(19);
  const Matrix a = oracles::random_matrix(4, 2, rng);
  const auto res = softdtw_gradient(a, a, SoftDtwConfig{1e-3});
  CHECK(res.grad_first.norm() <= 1e-6);
  // finite-difference probe agrees that the surface is flat here
  Matrix probe = a;
  const double fd = oracles::central_diff(
      [&] { return softdtw_value(probe, a, SoftDtwConfig{1e-3}).value; }, probe(1, 1));
  CHECK(std::abs(fd) <= 1e-5);
}

TEST_CASE("gradient of all-zero inputs is exactly zero") {
  const Matrix a = Matrix::Zero(4, 3);
  const Matrix b = Matrix::Zero(6, 3);
  const auto res = softdtw_gradient(a, b, SoftDtwConfig{0.5});
  CHECK(res.grad_first.norm() == 0.0);
}

TEST_CASE("soft-DTW tracks hard DTW on random pairs") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<Index>(rng.uniform_int(1, 8));
    const auto m = static_cast<Index>(rng.uniform_int(1, 8));
    const auto c = static_cast<Index>(rng.uniform_int(1, 4));
    const Matrix a = oracles::random_matrix(n, c, rng);
    const Matrix b = oracles::random_matrix(m, c, rng);
    const double hard = hard_dtw(a, b);
    const double soft = softdtw_value(a, b, SoftDtwConfig{1e-4}).value;
    CHECK(std::abs(soft - hard) <= 1e-3 * (1.0 + hard));
  }
}

TEST_CASE("beta_cdf endpoints and uniform case") {
  CHECK(beta_cdf(0.0, 3, 20) == 0.0);
  CHECK(beta_cdf(1.0, 3, 20) == 1.0);
  CHECK(beta_cdf(0.3, 1, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(beta_cdf(-0.1, 3, 20), Error);
  CHECK_THROWS_AS(beta_cdf(1.1, 3, 20), Error);
  CHECK_THROWS_AS(beta_cdf(0.5, 0, 20), Error);
}

TEST_CASE("beta_cdf agrees with adaptive quadrature") {
  CHECK(std::abs(beta_cdf(0.25, 3, 20) - 0.9393505716678874) <= 1e-12);
  for (int i = 0; i <= 100; ++i) {
    const double x = static_cast<double>(i) / 100.0;
    const double quad = oracles::beta_cdf_quadrature(x, 3, 20);
    CHECK(std::abs(beta_cdf(x, 3, 20) - quad) <= 1e-10);
  }
  for (int i = 0; i <= 20; ++i) {
    const double x = static_cast<double>(i) / 20.0;
    CHECK(std::abs(beta_cdf(x, 5, 2) - oracles::beta_cdf_quadrature(x, 5, 2)) <= 1e-10);
  }
}

TEST_CASE("beta_cdf is monotone non-decreasing") {
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double cur = beta_cdf(static_cast<double>(i) / 1000.0, 3, 20);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("constant target puts all mass on the target class") {
  const auto t = build_target_sequence(3, 2, 1, TargetKind::constant);
  REQUIRE(t.values.rows() == 3);
  for (Index i = 0; i < 3; ++i) {
    CHECK(t.values(i, 0) == 0.0);
    CHECK(t.values(i, 1) == 1.0);
  }
}

TEST_CASE("implicit target ramps the class column along the Beta CDF") {
  const auto t = build_target_sequence(25, 2, 1, TargetKind::implicit);
  double prev = -1.0;
  for (Index i = 0; i < 25; ++i) {
    const double expected =
        oracles::beta_cdf_quadrature(static_cast<double>(i + 1) / 25.0, 3, 20);
    CHECK(std::abs(t.values(i, 1) - expected) <= 1e-10);
    CHECK(t.values(i, 1) >= prev);
    CHECK(t.values.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    prev = t.values(i, 1);
  }
  CHECK(t.values(24, 1) == 1.0);
}

TEST_CASE("class-0 targets are constant regardless of the requested kind") {
  const auto t = build_target_sequence(5, 3, 0, TargetKind::implicit);
  CHECK(t.kind == TargetKind::constant);
  for (Index i = 0; i < 5; ++i) CHECK(t.values(i, 0) == 1.0);
}

TEST_CASE("target rows stay on the probability simplex") {
  for (const int cls : {0, 1, 2}) {
    for (const auto kind : {TargetKind::constant, TargetKind::implicit}) {
      const auto t = build_target_sequence(40, 3, cls, kind);
      for (Index i = 0; i < t.values.rows(); ++i) {
        CHECK(t.values.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(t.values.row(i).minCoeff() >= 0.0);
        CHECK(t.values.row(i).maxCoeff() <= 1.0);
      }
    }
  }
}

TEST_CASE("ideal reference equals the target when lengths agree") {
  const auto target = build_target_sequence(8, 2, 1, TargetKind::implicit);
  const auto ideal = build_ideal_reference(8, 2, 1, TargetKind::implicit);
  CHECK((target.values - ideal.values).norm() == 0.0);
  const auto same = softdtw_value(ideal.values, target.values, SoftDtwConfig{0.1});
  const auto self = softdtw_value(target.values, target.values, SoftDtwConfig{0.1});
  CHECK(same.value == doctest::Approx(self.value).epsilon(1e-12));
}

TEST_CASE("target construction rejects bad classes") {
  CHECK_THROWS_AS(build_target_sequence(5, 2, 2, TargetKind::constant), Error);
  CHECK_THROWS_AS(build_target_sequence(5, 2, -1, TargetKind::constant), Error);
  CHECK_THROWS_AS(build_target_sequence(0, 2, 1, TargetKind::constant), Error);
}

TEST_CASE("gamma validation") {
  Matrix a = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(softdtw_value(a, a, SoftDtwConfig{0.0}), Error);
  CHECK_THROWS_AS(softdtw_value(a, a, SoftDtwConfig{-1.0}), Error);
  CHECK_THROWS_AS(softdtw_value(a, a, SoftDtwConfig{1e7}), Error);
}

TEST_SUITE_END();
