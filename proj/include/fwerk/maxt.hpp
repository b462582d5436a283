#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fwerk/dataset.hpp"
#include "fwerk/glm_score.hpp"

namespace fwerk {

// Order-statistic confidence interval for the (1 - alpha) quantile of the
// max-statistic distribution: the minimal-width window of binomial(b,
// 1 - alpha) mass at least `confidence`, mapped to the sorted max statistics.
// rank_lo/rank_hi are 1-based order-statistic ranks; the alpha_loc bounds are
// 2 Phi(-c) of the opposite c bound.
struct MaxtCi {
  double lower_c = 0.0;
  double upper_c = 0.0;
  double lower_alpha_loc = 0.0;  // 2 Phi(-upper_c)
  double upper_alpha_loc = 0.0;  // 2 Phi(-lower_c)
  std::int64_t rank_lo = 0;
  std::int64_t rank_hi = 0;
  double mass = 0.0;  // binomial mass actually covered by the rank window
};

MaxtCi maxt_ci(const Eigen::VectorXd& max_stats, double alpha, double confidence = 0.95);

// Permutation distribution of the maximum absolute score statistic under
// response resampling.
struct PermutationRun {
  Eigen::VectorXd max_stats;   // max_j |T_j| per permutation, in draw order
  double c_hat = 0.0;          // ceil((1 - alpha) b)-th smallest max statistic
  double alpha_loc_hat = 0.0;  // 2 Phi(-c_hat)
  double alpha = 0.0;
  MaxtCi ci;                   // 95% interval for the cutoff
  std::int64_t b = 0;
  std::uint64_t seed = 0;
  bool stratified = false;
};

// maxT calibration: permutes the response b times (within strata when given),
// recomputing all m statistics per draw through one matrix product against
// the fixed null fit.  That shortcut is exact only when the null fit is
// invariant under the permutations, so every covariate column must be
// constant within each stratum (validation_error otherwise).  Requires
// b >= 100 and imputed genotypes.  Deterministic for a given seed regardless
// of the thread count: permutations are seeded per 64-draw batch.
PermutationRun run_maxt(const Dataset& data, Family family, double alpha, std::int64_t b,
                        std::uint64_t seed, const std::vector<int>& strata = {},
                        int threads = 1);

// The exact permutations a run with this seed uses (batching included);
// exposed so results can be replayed or checked independently.
std::vector<std::vector<std::int64_t>> permutation_indices(std::uint64_t seed, std::int64_t b,
                                                           std::int64_t n,
                                                           const std::vector<int>& strata = {});

}  // namespace fwerk
