#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fwerk/dataset.hpp"

namespace fwerk {

// Null-model fit (genetic effects zero): mu_hat and the variance-function
// diagonal lambda = phi * b''(eta), i.e. Var(Y_i) at the fit.  For the normal
// family lambda is the constant dispersion (RSS/(n-d)); for logistic it is
// mu(1-mu) with dispersion fixed at 1.
struct NullFit {
  Family family = Family::normal;
  Eigen::VectorXd coefficients;  // d
  Eigen::VectorXd mu_hat;        // n
  Eigen::VectorXd lambda_diag;   // n
  Eigen::VectorXd residuals;     // y - mu_hat
  double dispersion_hat = 1.0;
  int iterations = 0;
  bool converged = false;
};

// Least squares (normal) or IRLS with step-halving (logistic).  Throws
// numeric_error on non-convergence, perfect separation, or a degenerate
// (zero-residual-variance) normal fit.
NullFit fit_null(const Dataset& data, Family family);

struct ScoreStatistics {
  Eigen::VectorXd score;         // x_j' (y - mu_hat) / dispersion
  Eigen::VectorXd var_diag;      // x_j' (L - L Xe (Xe'L Xe)^-1 Xe'L) x_j / dispersion^2
  Eigen::VectorXd t;             // score / sqrt(var_diag)
  Eigen::VectorXd p_unadjusted;  // 2 Phi(-|t|)
};

// Per-marker standardized score statistics.  The intercept-only normal path
// uses the n-denominator variance estimate so t_j is exactly sqrt(n) times
// the Pearson correlation of marker and phenotype; with covariates the
// RSS/(n-d) estimate from the fit is used.
ScoreStatistics score_statistics(const Dataset& data, const NullFit& fit, int threads = 1);

enum class CorrelationMode { exact, genotype_only };

// Correlations of the score statistics restricted to a diagonal band: slots
// delta = 1..bandwidth-1 per marker.  Entries that would cross a block
// boundary are exactly zero.
class BandedCorrelation {
 public:
  BandedCorrelation(std::int64_t m, int bandwidth);

  std::int64_t m() const { return m_; }
  int bandwidth() const { return bandwidth_; }
  const std::vector<std::int64_t>& block_starts() const { return block_starts_; }

  // cor(T_j, T_{j+delta}); zero past the band, the matrix edge, or a block
  // boundary.
  double entry(std::int64_t j, int delta) const {
    if (delta < 1 || delta >= bandwidth_ || j + delta >= m_) return 0.0;
    return entries_[static_cast<std::size_t>(j) * (bandwidth_ - 1) + delta - 1];
  }
  void set_entry(std::int64_t j, int delta, double value);

  // Dense window completed with a unit diagonal; size <= bandwidth.
  Eigen::MatrixXd window(std::int64_t start, int size) const;

  // Declares block boundaries (sorted, starting with 0) and zeroes every
  // entry that crosses one.
  void set_block_starts(std::vector<std::int64_t> starts);
  std::int64_t block_end(std::size_t block_index) const;

  void save_tsv(const std::string& path) const;
  static BandedCorrelation load_tsv(const std::string& path);

  bool operator==(const BandedCorrelation& other) const;

 private:
  std::int64_t m_ = 0;
  int bandwidth_ = 1;
  std::vector<double> entries_;              // (bandwidth-1) slots per marker
  std::vector<std::int64_t> block_starts_;   // sorted, begins with 0
};

// Band of cor(T_j, T_k) for |j-k| < bandwidth.  exact mode residualizes the
// genotype columns against the weighted covariates (no n x n or m x m matrix
// is ever formed); genotype_only ignores fit and covariates and uses plain
// Pearson correlation of the genotype columns, which is exact for an
// intercept-only model only.
BandedCorrelation correlation_band(const Dataset& data, const NullFit& fit, int bandwidth,
                                   CorrelationMode mode = CorrelationMode::exact,
                                   int threads = 1);

// Cuts the band into independent blocks: always at chromosome changes, and
// additionally between j and j+1 when every band entry spanning that gap is
// strictly below threshold in absolute value.
BandedCorrelation detect_blocks(const BandedCorrelation& band,
                                const std::vector<MarkerPosition>& positions,
                                double threshold);

}  // namespace fwerk
