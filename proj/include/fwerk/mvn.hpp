#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace fwerk::mvn {

// Standard normal density, CDF, and survival function.  phi_bar(x) = P(Z > x)
// stays accurate far into the tail (erfc based).
double norm_pdf(double x);
double norm_cdf(double x);
double norm_sf(double x);

// Inverse CDF.  Wichura's rational approximation plus one Newton step; the
// round trip |norm_cdf(norm_inv(p)) - p| stays below 1e-14 across
// [1e-300, 1 - 1e-16].
double norm_inv(double p);

// P(|Z1| < c, |Z2| < c) for a standard bivariate pair with correlation r.
// Deterministic adaptive quadrature, absolute error < 1e-13.  Even in r;
// r = +-1 and c <= 0 handled exactly.
double box2(double r, double c);

// 1 - box2(r, c) computed without cancellation.  For weakly correlated pairs
// and genome-wide cutoffs box2 is within 1e-7 of one, and downstream code
// feeds this straight into log1p.
double box2_miss(double r, double c);

// Central orthant-box problem: P(|Z_i| < half_width for all i) under the
// given correlation matrix.
struct BoxProblem {
  Eigen::MatrixXd correlation;
  double half_width = 0.0;
};

// Deterministic evaluation for dimension <= 6 (higher dimensions are the
// Monte Carlo routine's job).  Dimensions 1-2 are closed form / box2; 3-6 use
// nested Gauss-Legendre quadrature through the Cholesky factor.
double box_k(const BoxProblem& problem);

// 1 - box_k without cancellation; this is what the product-type approximation
// actually consumes.
double box_k_miss(const BoxProblem& problem);

struct McEstimate {
  double estimate = 0.0;   // probability that all coordinates land in the box
  double std_error = 0.0;  // across independent randomizations
  std::int64_t samples = 0;
  int randomizations = 0;
};

// Randomized quasi-Monte Carlo estimate of the full joint box probability via
// the separation-of-variables transform.  Deterministic for a fixed seed and
// independent of the thread count (each randomization owns a derived seed).
McEstimate box_mc(const Eigen::MatrixXd& correlation, double half_width,
                  std::int64_t samples, std::uint64_t seed, int threads = 1);

}  // namespace fwerk::mvn
