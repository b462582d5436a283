#include "fwerk/fwer.hpp"

#include <cmath>

#include <doctest.h>

#include "fwerk/errors.hpp"
#include "fwerk/mvn.hpp"

using namespace fwerk;
using mvn::BoxProblem;
using mvn::box2_miss;
using mvn::box_k_miss;
using mvn::norm_inv;

namespace {

// AR1 band: entry(j, delta) = rho^delta within one block.
BandedCorrelation ar1_test_band(std::int64_t m, int bandwidth, double rho) {
  BandedCorrelation band(m, bandwidth);
  for (std::int64_t j = 0; j < m; ++j) {
    for (int d = 1; d < bandwidth && j + d < m; ++d) {
      band.set_entry(j, d, std::pow(rho, d));
    }
  }
  return band;
}

}  // namespace

TEST_SUITE("fwer") {

TEST_CASE("bonferroni and sidak closed forms") {
  const auto b1 = bonferroni(672972, 0.05);
  CHECK(b1.alpha_loc == 0.05 / 672972);
  CHECK(b1.alpha_loc == doctest::Approx(7.43e-8).epsilon(5e-3));
  CHECK(b1.c == doctest::Approx(5.3804562457379565284).epsilon(1e-12));
  CHECK(b1.order == 0);
  CHECK(b1.iterations == 0);

  const auto s1 = sidak(672972, 0.05);
  CHECK(s1.alpha_loc == -std::expm1(std::log1p(-0.05) / 672972));
  CHECK(s1.alpha_loc == doctest::Approx(7.62e-8).epsilon(5e-3));
  CHECK(s1.alpha_loc > b1.alpha_loc);
  CHECK(s1.m_eff == doctest::Approx(672972.0).epsilon(1e-12));
  CHECK(s1.order == 1);

  CHECK(bonferroni(123497, 0.05).alpha_loc == doctest::Approx(4.05e-7).epsilon(5e-3));
  CHECK(sidak(123497, 0.05).alpha_loc == doctest::Approx(4.15e-7).epsilon(5e-3));

  // Degenerate family of one: everything collapses to alpha itself.
  CHECK(bonferroni(1, 0.05).alpha_loc == 0.05);
  CHECK(sidak(1, 0.05).alpha_loc == doctest::Approx(0.05).epsilon(1e-15));
}

TEST_CASE("effective test count") {
  CHECK(effective_tests(0.05, 8.62e-8) == doctest::Approx(595049.793234449).epsilon(1e-12));
  CHECK(effective_tests(0.05, 0.05) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(effective_tests(0.0, 0.01), validation_error);
  CHECK_THROWS_AS(effective_tests(0.05, 1.0), validation_error);
}

TEST_CASE("input validation") {
  const auto band = ar1_test_band(8, 3, 0.5);
  CHECK_THROWS_AS(gamma_k(band, 0, 0.01), validation_error);
  CHECK_THROWS_AS(gamma_k(band, 4, 0.01), validation_error);  // order above bandwidth
  CHECK_THROWS_AS(gamma_k(band, 2, 0.0), validation_error);
  CHECK_THROWS_AS(gamma_k(band, 2, 1.0), validation_error);
  const auto wide = ar1_test_band(10, 8, 0.3);
  CHECK_THROWS_AS(gamma_k(wide, 7, 0.01), validation_error);  // order above the cap of 6
  CHECK_NOTHROW(gamma_k(wide, 6, 0.01));
  CHECK_THROWS_AS(solve_alpha_loc(band, 2, 0.0), validation_error);
  CHECK_THROWS_AS(bonferroni(0, 0.05), validation_error);
  CHECK_THROWS_AS(adjust_pvalues(band, 2, Eigen::VectorXd::Constant(7, 0.5)),
                  validation_error);
  Eigen::VectorXd bad = Eigen::VectorXd::Constant(8, 0.5);
  bad(3) = 1.5;
  CHECK_THROWS_AS(adjust_pvalues(band, 2, bad), validation_error);
}

TEST_CASE("independent markers reduce to the Sidak form at every order") {
  const BandedCorrelation band(12, 3);  // all entries zero
  const double a = 0.004;
  const double sidak_ln = 12.0 * std::log1p(-a);
  CHECK(gamma_k(band, 1, a) == sidak_ln);
  CHECK(gamma_k(band, 2, a) == sidak_ln);
  CHECK(gamma_k(band, 3, a) == sidak_ln);

  const auto solved = solve_alpha_loc(band, 3, 0.05);
  CHECK(solved.alpha_loc == doctest::Approx(sidak(12, 0.05).alpha_loc).epsilon(1e-9));
  CHECK(solved.iterations > 0);

  // order 1 short-circuits to the closed form even on a correlated band.
  const auto o1 = solve_alpha_loc(ar1_test_band(12, 3, 0.8), 1, 0.05);
  CHECK(o1.alpha_loc == sidak(12, 0.05).alpha_loc);
  CHECK(o1.iterations == 0);
}

TEST_CASE("hand-assembled order-2 and order-3 values at m = 3") {
  BandedCorrelation band(3, 3);
  band.set_entry(0, 1, 0.55);
  band.set_entry(1, 1, -0.3);
  band.set_entry(0, 2, 0.2);
  const double a = 0.015;
  const double c = -norm_inv(0.5 * a);

  const double hand2 = std::log1p(-box2_miss(0.55, c)) + std::log1p(-box2_miss(-0.3, c)) -
                       std::log1p(-a);
  CHECK(gamma_k(band, 2, a) == doctest::Approx(hand2).epsilon(1e-13));

  BoxProblem full;
  full.correlation = Eigen::MatrixXd::Identity(3, 3);
  full.correlation(0, 1) = full.correlation(1, 0) = 0.55;
  full.correlation(1, 2) = full.correlation(2, 1) = -0.3;
  full.correlation(0, 2) = full.correlation(2, 0) = 0.2;
  full.half_width = c;
  const double hand3 = std::log1p(-box_k_miss(full));
  CHECK(gamma_k(band, 3, a) == doctest::Approx(hand3).epsilon(1e-15));

  // At the order-m solution the full joint misses exactly alpha.
  const auto res = solve_alpha_loc(band, 3, 0.05);
  CHECK(-std::expm1(res.ln_gamma) == doctest::Approx(0.05).epsilon(1e-8));
  full.half_width = res.c;
  CHECK(box_k_miss(full) == doctest::Approx(0.05).epsilon(1e-7));
}

TEST_CASE("ar1 chain matches the high-precision reference") {
  const auto band = ar1_test_band(5, 3, 0.6);
  // 22-digit reference: nested adaptive quadrature over the chain factorization.
  CHECK(gamma_k(band, 2, 0.01) ==
        doctest::Approx(-0.044450505190790299558).epsilon(1e-11));
  CHECK(gamma_k(band, 3, 0.01) == doctest::Approx(-0.04392025351980682706).epsilon(1e-8));

  const auto o2 = solve_alpha_loc(band, 2, 0.05);
  const auto o3 = solve_alpha_loc(band, 3, 0.05);
  CHECK(o2.alpha_loc == doctest::Approx(0.011589977935218369503).epsilon(1e-8));
  CHECK(o3.alpha_loc == doctest::Approx(0.011741062288927013824).epsilon(1e-8));
  CHECK(sidak(5, 0.05).alpha_loc ==
        doctest::Approx(0.010206218313011495769).epsilon(1e-12));

  CHECK(bonferroni(5, 0.05).alpha_loc < sidak(5, 0.05).alpha_loc);
  CHECK(sidak(5, 0.05).alpha_loc < o2.alpha_loc);
  CHECK(o2.alpha_loc < o3.alpha_loc);

  CHECK(o2.bracket_lo == o2.alpha_loc);
  CHECK(o2.bracket_hi - o2.bracket_lo <= 1.01e-10 * o2.bracket_lo);
  CHECK(o2.iterations > 10);
  CHECK(o2.iterations <= 200);
  CHECK(o2.alpha_loc >= 0.05 / 5);
  CHECK(o2.alpha_loc <= 0.05);
  CHECK(o2.m_eff > 1.0);
  CHECK(o2.m_eff < 5.0);
  CHECK(o2.c == -norm_inv(0.5 * o2.alpha_loc));
}

TEST_CASE("log gamma factorizes over blocks bitwise") {
  BandedCorrelation whole(7, 3);
  const double r1 = 0.7, r2 = 0.4;
  whole.set_entry(0, 1, r1);
  whole.set_entry(1, 1, r1);
  whole.set_entry(2, 1, r1);
  whole.set_entry(0, 2, r1 * r1);
  whole.set_entry(1, 2, r1 * r1);
  whole.set_entry(4, 1, r2);
  whole.set_entry(5, 1, r2);
  whole.set_entry(4, 2, r2 * r2);
  whole.set_block_starts({0, 4});

  const auto left = ar1_test_band(4, 3, r1);
  const auto right = ar1_test_band(3, 3, r2);

  const double a = 0.02;
  for (int k = 1; k <= 3; ++k) {
    CHECK(gamma_k(whole, k, a) == gamma_k(left, k, a) + gamma_k(right, k, a));
  }
  // 22-digit reference for the order-2 value of the combined band.
  CHECK(gamma_k(whole, 2, a) == doctest::Approx(-0.12326107537449170968).epsilon(1e-11));
}

TEST_CASE("approximation tightens with the order on a positive ar1 band") {
  const auto band = ar1_test_band(10, 5, 0.7);
  const double a = 0.01;
  const double g1 = gamma_k(band, 1, a);
  const double g2 = gamma_k(band, 2, a);
  const double g3 = gamma_k(band, 3, a);
  const double g4 = gamma_k(band, 4, a);
  CHECK(g1 < g2);
  CHECK(g2 < g3);
  CHECK(g3 < g4);
  CHECK(g2 - g1 > 1e-4);  // the first step is the big one
  CHECK(g3 - g2 > 1e-6);
}

TEST_CASE("adjusted p-values") {
  const auto band = ar1_test_band(6, 3, 0.5);
  Eigen::VectorXd p(6);
  p << 0.001, 0.03, 0.2, 0.6, 0.97, 1.0;
  const auto adj = adjust_pvalues(band, 2, p);
  for (int j = 0; j < 6; ++j) {
    CHECK(adj(j) >= p(j));
    CHECK(adj(j) <= 1.0);
    if (j > 0) CHECK(adj(j) >= adj(j - 1));  // monotone in p
  }
  CHECK(adj(5) == 1.0);
  CHECK(adj(0) == doctest::Approx(-std::expm1(gamma_k(band, 2, 0.001))).epsilon(1e-15));

  // Rejection by adjusted p at alpha agrees with the alpha_loc threshold.
  const auto res = solve_alpha_loc(band, 2, 0.05);
  for (int j = 0; j < 6; ++j) {
    CHECK((p(j) < res.alpha_loc) == (adj(j) <= 0.05));
  }

  // Independent band: exactly the Sidak adjustment.
  const BandedCorrelation indep(6, 3);
  const auto sadj = adjust_pvalues(indep, 3, p);
  for (int j = 0; j < 6; ++j) {
    CHECK(sadj(j) == doctest::Approx(-std::expm1(6.0 * std::log1p(-p(j)))).epsilon(1e-15));
  }
  CHECK(adjust_pvalues(indep, 3, Eigen::VectorXd::Zero(6))(0) == 0.0);
}

}  // TEST_SUITE
