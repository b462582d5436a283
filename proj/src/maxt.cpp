#include "fwerk/maxt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "fwerk/errors.hpp"
#include "fwerk/numerics.hpp"
#include "fwerk/rng.hpp"

namespace fwerk {

namespace {

constexpr std::int64_t kBatch = 64;  // permutations per gemm / per RNG stream

std::vector<std::vector<std::int64_t>> stratum_groups(std::int64_t n,
                                                      const std::vector<int>& strata) {
  if (strata.empty()) {
    std::vector<std::int64_t> all(n);
    for (std::int64_t i = 0; i < n; ++i) all[i] = i;
    return {std::move(all)};
  }
  if (static_cast<std::int64_t>(strata.size()) != n) {
    throw validation_error("strata labels do not match the number of individuals");
  }
  std::map<int, std::vector<std::int64_t>> by_label;
  for (std::int64_t i = 0; i < n; ++i) by_label[strata[i]].push_back(i);
  std::vector<std::vector<std::int64_t>> groups;
  groups.reserve(by_label.size());
  for (auto& [label, rows] : by_label) {
    (void)label;
    groups.push_back(std::move(rows));
  }
  return groups;
}

// One within-stratum shuffle; the caller supplies an identity-initialized
// index vector that is re-randomized in place.
void fill_permutation(Rng& rng, const std::vector<std::vector<std::int64_t>>& groups,
                      std::vector<std::int64_t>& perm) {
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
  for (const auto& rows : groups) {
    for (std::int64_t i = static_cast<std::int64_t>(rows.size()) - 1; i > 0; --i) {
      const std::int64_t j = rng.uniform_int(0, i);
      std::swap(perm[rows[i]], perm[rows[j]]);
    }
  }
}

}  // namespace

std::vector<std::vector<std::int64_t>> permutation_indices(std::uint64_t seed, std::int64_t b,
                                                           std::int64_t n,
                                                           const std::vector<int>& strata) {
  const auto groups = stratum_groups(n, strata);
  std::vector<std::vector<std::int64_t>> out(b);
  std::vector<std::int64_t> perm(n);
  for (std::int64_t batch = 0; batch * kBatch < b; ++batch) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(batch)));
    const std::int64_t hi = std::min(b, (batch + 1) * kBatch);
    for (std::int64_t p = batch * kBatch; p < hi; ++p) {
      fill_permutation(rng, groups, perm);
      out[p] = perm;
    }
  }
  return out;
}

PermutationRun run_maxt(const Dataset& data, Family family, double alpha, std::int64_t b,
                        std::uint64_t seed, const std::vector<int>& strata, int threads) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw validation_error("alpha must lie strictly between 0 and 1");
  }
  if (b < 100) throw validation_error("maxT needs at least 100 permutations");
  const auto n = data.n();
  const auto m = data.m();
  const auto groups = stratum_groups(n, strata);

  // The single-fit shortcut requires the null fit to be permutation
  // invariant, which holds exactly when covariates are stratum constant.
  for (const auto& rows : groups) {
    for (int col = 1; col < data.d(); ++col) {
      const double first = data.covariates()(rows.front(), col);
      for (const auto i : rows) {
        if (data.covariates()(i, col) != first) {
          throw validation_error(
              "covariate column " + std::to_string(col) +
              " varies within a permutation stratum; maxT requires stratum-constant "
              "covariates (or strata that encode them)");
        }
      }
    }
  }

  const NullFit fit = fit_null(data, family);
  const ScoreStatistics stats = score_statistics(data, fit, threads);
  double phi = fit.dispersion_hat;
  if (family == Family::normal && data.d() == 1) {
    phi = fit.residuals.squaredNorm() / static_cast<double>(n);
  }

  // T_j(perm) = z_j . y_perm - offset_j with z_j = g_j / (phi sqrt(var_j)),
  // so a whole batch of permutations is one m x batch matrix product.
  Eigen::MatrixXd z = data.genotypes();
  for (Eigen::Index j = 0; j < m; ++j) {
    z.col(j) /= phi * std::sqrt(stats.var_diag(j));
  }
  const Eigen::VectorXd offset = z.transpose() * fit.mu_hat;

  PermutationRun run;
  run.alpha = alpha;
  run.b = b;
  run.seed = seed;
  run.max_stats.resize(b);
  const std::int64_t batches = (b + kBatch - 1) / kBatch;

  parallel_for(batches, threads, [&](std::int64_t lob, std::int64_t hib) {
    std::vector<std::int64_t> perm(n);
    Eigen::MatrixXd y_perm(n, kBatch);
    Eigen::MatrixXd t(m, kBatch);
    for (std::int64_t batch = lob; batch < hib; ++batch) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(batch)));
      const std::int64_t lo = batch * kBatch;
      const std::int64_t hi = std::min(b, lo + kBatch);
      const std::int64_t nb = hi - lo;
      for (std::int64_t p = 0; p < nb; ++p) {
        fill_permutation(rng, groups, perm);
        for (std::int64_t i = 0; i < n; ++i) y_perm(i, p) = data.phenotype()(perm[i]);
      }
      t.leftCols(nb).noalias() = z.transpose() * y_perm.leftCols(nb);
      for (std::int64_t p = 0; p < nb; ++p) {
        run.max_stats(lo + p) = (t.col(p).head(m) - offset).cwiseAbs().maxCoeff();
      }
    }
  });

  Eigen::VectorXd sorted = run.max_stats;
  std::sort(sorted.data(), sorted.data() + b);
  const auto rank = static_cast<std::int64_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(b)));
  run.c_hat = sorted(std::clamp<std::int64_t>(rank, 1, b) - 1);
  run.alpha_loc_hat = std::erfc(run.c_hat * 0.70710678118654752440);
  run.stratified = !strata.empty();
  run.ci = maxt_ci(run.max_stats, alpha, 0.95);
  return run;
}

MaxtCi maxt_ci(const Eigen::VectorXd& max_stats, double alpha, double confidence) {
  const std::int64_t b = max_stats.size();
  if (b < 100) throw validation_error("confidence interval needs at least 100 permutations");
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw validation_error("alpha must lie strictly between 0 and 1");
  }
  if (!(confidence > 0.0) || !(confidence < 1.0)) {
    throw validation_error("confidence must lie strictly between 0 and 1");
  }
  const double p = 1.0 - alpha;
  const double lg_all = std::lgamma(static_cast<double>(b) + 1.0);
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  const auto lpmf = [&](std::int64_t i) {
    if (i < 0 || i > b) return -std::numeric_limits<double>::infinity();
    const double di = static_cast<double>(i);
    return lg_all - std::lgamma(di + 1.0) - std::lgamma(static_cast<double>(b - i) + 1.0) +
           di * lp + static_cast<double>(b - i) * lq;
  };

  // Greedy outward expansion from the mode: minimal-width window for a
  // unimodal pmf.  Ties expand both sides at once.
  std::int64_t lo = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor((static_cast<double>(b) + 1.0) * p)), 0, b);
  std::int64_t hi = lo;
  double mass = std::exp(lpmf(lo));
  while (mass < confidence && (lo > 0 || hi < b)) {
    const double below = lpmf(lo - 1);
    const double above = lpmf(hi + 1);
    if (below > above) {
      mass += std::exp(below);
      --lo;
    } else if (above > below) {
      mass += std::exp(above);
      ++hi;
    } else {
      if (lo > 0) {
        mass += std::exp(below);
        --lo;
      }
      if (hi < b) {
        mass += std::exp(above);
        ++hi;
      }
    }
  }

  if (lo < 1 || hi + 1 > b) {
    throw validation_error("too few permutations for the requested confidence level");
  }
  MaxtCi ci;
  ci.mass = mass;
  ci.rank_lo = lo;
  ci.rank_hi = hi + 1;
  Eigen::VectorXd sorted = max_stats;
  std::sort(sorted.data(), sorted.data() + b);
  ci.lower_c = sorted(ci.rank_lo - 1);
  ci.upper_c = sorted(ci.rank_hi - 1);
  ci.lower_alpha_loc = std::erfc(ci.upper_c * 0.70710678118654752440);
  ci.upper_alpha_loc = std::erfc(ci.lower_c * 0.70710678118654752440);
  return ci;
}

}  // namespace fwerk
