#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "fwerk/glm_score.hpp"

namespace fwerk {

// A calibrated local significance level.  order 0 is Bonferroni, order 1 the
// Sidak level (an order-1 product approximation), order k >= 2 solves
// 1 - gamma_k(alpha_loc) = alpha by bisection.
struct FwerResult {
  int order = 0;
  double alpha = 0.0;
  double alpha_loc = 0.0;
  double c = 0.0;         // two-sided critical value, alpha_loc = 2 Phi(-c)
  double ln_gamma = 0.0;  // ln gamma at alpha_loc (order-1 value for closed forms)
  double m_eff = 0.0;     // effective number of independent tests
  int iterations = 0;     // bisection steps (0 for closed forms)
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
};

FwerResult bonferroni(std::int64_t m, double alpha);
FwerResult sidak(std::int64_t m, double alpha);

// ln(1-alpha) / ln(1-alpha_loc): the number of independent tests that would
// make the Sidak level equal alpha_loc.
double effective_tests(double alpha, double alpha_loc);

// Natural log of the order-k product approximation gamma_k to the joint
// non-rejection probability P(max_j |T_j| < c) at per-marker level alpha_loc:
// within each block, a telescoping product of k-window probabilities over
// (k-1)-window overlaps; blocks multiply (their logs add in block order).
// Requires 1 <= k <= min(bandwidth, 6); blocks shorter than k use their full
// joint probability.
double gamma_k(const BandedCorrelation& band, int k, double alpha_loc);

// Solves 1 - gamma_k(a) = alpha for a by bisection on [alpha/m, alpha] to a
// relative bracket width of 1e-10, returning the conservative lower endpoint.
// gamma_k must be non-increasing across the evaluated points (numeric_error
// otherwise).  k = 1 short-circuits to the closed-form Sidak level.
FwerResult solve_alpha_loc(const BandedCorrelation& band, int k, double alpha);

// Per-marker adjusted p-values 1 - gamma_k evaluated at the unadjusted p,
// clamped to [p, 1] to absorb quadrature noise.  Rejecting p_adj <= alpha
// matches the alpha_loc rule away from bisection-width ties.
Eigen::VectorXd adjust_pvalues(const BandedCorrelation& band, int k,
                               const Eigen::VectorXd& p_unadjusted);

}  // namespace fwerk
