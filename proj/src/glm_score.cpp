#include "fwerk/glm_score.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>

#include "fwerk/errors.hpp"
#include "fwerk/mvn.hpp"
#include "fwerk/numerics.hpp"

namespace fwerk {

namespace {

constexpr int kIrlsMaxIter = 50;
constexpr double kIrlsTol = 1e-10;       // max-norm of the score vector
constexpr double kSeparationEps = 1e-10; // fitted probability this close to 0/1

double log1pexp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ll += y(i) * eta(i) - log1pexp(eta(i));
  return ll;
}

NullFit fit_normal(const Dataset& data) {
  const auto& x = data.covariates();
  const auto& y = data.phenotype();
  NullFit fit;
  fit.family = Family::normal;
  fit.coefficients = x.colPivHouseholderQr().solve(y);
  fit.mu_hat = x * fit.coefficients;
  fit.residuals = y - fit.mu_hat;
  const double rss = fit.residuals.squaredNorm();
  const auto dof = data.n() - data.d();
  fit.dispersion_hat = rss / static_cast<double>(dof);
  if (!(fit.dispersion_hat > 0.0)) {
    throw numeric_error("null model leaves zero residual variance");
  }
  fit.lambda_diag = Eigen::VectorXd::Constant(data.n(), fit.dispersion_hat);
  fit.iterations = 0;
  fit.converged = true;
  return fit;
}

NullFit fit_logistic(const Dataset& data) {
  const auto& x = data.covariates();
  const auto& y = data.phenotype();
  const auto n = data.n();
  bool any0 = false, any1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) == 0.0) {
      any0 = true;
    } else if (y(i) == 1.0) {
      any1 = true;
    } else {
      throw validation_error("logistic phenotype must be 0 or 1");
    }
  }
  if (!any0 || !any1) throw validation_error("logistic phenotype needs both classes");

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(data.d());
  const double ybar = y.mean();
  beta(0) = std::log(ybar / (1.0 - ybar));  // intercept warm start
  Eigen::VectorXd eta = x * beta;
  double ll = logistic_loglik(y, eta);
  Eigen::VectorXd mu(n), w(n);

  NullFit fit;
  fit.family = Family::logistic;
  for (int iter = 1; iter <= kIrlsMaxIter; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Eigen::VectorXd score = x.transpose() * (y - mu);
    fit.iterations = iter;
    if (score.lpNorm<Eigen::Infinity>() < kIrlsTol) {
      fit.converged = true;
      break;
    }
    const Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) {
      throw numeric_error("singular information matrix in IRLS");
    }
    Eigen::VectorXd step = ldlt.solve(score);
    // Step halving: never accept a likelihood decrease.
    double ll_new = 0.0;
    Eigen::VectorXd eta_new;
    int halvings = 0;
    for (;; ++halvings) {
      eta_new = eta + x * step;
      ll_new = logistic_loglik(y, eta_new);
      if (ll_new >= ll - 1e-12 || halvings >= 30) break;
      step *= 0.5;
    }
    beta += step;
    eta = eta_new;
    ll = ll_new;
  }
  for (Eigen::Index i = 0; i < n; ++i) mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
  // On separable data the score also shrinks to zero while the coefficients
  // diverge, so test the fitted probabilities before trusting convergence.
  if (mu.minCoeff() < kSeparationEps || mu.maxCoeff() > 1.0 - kSeparationEps) {
    throw numeric_error("perfect separation: fitted probabilities reached 0/1");
  }
  if (!fit.converged) {
    throw numeric_error("IRLS did not converge in " + std::to_string(kIrlsMaxIter) +
                        " iterations");
  }
  fit.coefficients = beta;
  fit.mu_hat = mu;
  fit.residuals = y - mu;
  fit.lambda_diag = mu.array() * (1.0 - mu.array());
  fit.dispersion_hat = 1.0;
  return fit;
}

// Residualizes genotype columns against the (weight-scaled) covariates:
// q_j = W^{1/2} x_j - W^{1/2} Xe (Xe' W Xe)^{-1} Xe' W x_j, so q_j . q_k is
// the banded-covariance kernel of Eq-style score covariances without ever
// touching an n x n projection matrix.
class Residualizer {
 public:
  Residualizer(const Eigen::MatrixXd& xe, const Eigen::VectorXd& weights) {
    sqrt_w_ = weights.cwiseSqrt();
    b_ = sqrt_w_.asDiagonal() * xe;
    a_llt_.compute(b_.transpose() * b_);
    if (a_llt_.info() != Eigen::Success) {
      throw numeric_error("weighted covariate Gram matrix is not positive definite");
    }
  }

  void residualize(const Eigen::VectorXd& marker, Eigen::VectorXd& q) const {
    q = sqrt_w_.cwiseProduct(marker);
    q.noalias() -= b_ * a_llt_.solve(b_.transpose() * q);
  }

 private:
  Eigen::VectorXd sqrt_w_;
  Eigen::MatrixXd b_;
  Eigen::LLT<Eigen::MatrixXd> a_llt_;
};

void require_complete(const Dataset& data, const char* what) {
  if (data.has_missing()) {
    throw validation_error(std::string("impute missing genotypes before computing ") + what);
  }
}

}  // namespace

NullFit fit_null(const Dataset& data, Family family) {
  return family == Family::normal ? fit_normal(data) : fit_logistic(data);
}

ScoreStatistics score_statistics(const Dataset& data, const NullFit& fit, int threads) {
  require_complete(data, "score statistics");
  if (!fit.converged) throw validation_error("null fit did not converge");
  const auto n = data.n();
  const auto m = data.m();

  // Normal: unit working weights; the dispersion enters once below.  The
  // intercept-only path switches to the n-denominator estimate, which makes
  // t exactly sqrt(n) times the Pearson correlation.
  double phi = fit.dispersion_hat;
  Eigen::VectorXd weights;
  if (fit.family == Family::normal) {
    if (data.d() == 1) {
      phi = fit.residuals.squaredNorm() / static_cast<double>(n);
    }
    weights = Eigen::VectorXd::Ones(n);
  } else {
    weights = fit.lambda_diag;
  }
  const Residualizer resid(data.covariates(), weights);
  const double var_scale = fit.family == Family::normal ? phi : 1.0;
  const double eps = 1e-12 * static_cast<double>(n);

  ScoreStatistics out;
  out.score.resize(m);
  out.var_diag.resize(m);
  out.t.resize(m);
  out.p_unadjusted.resize(m);
  std::atomic<std::int64_t> degenerate{-1};
  parallel_for(m, threads, [&](std::int64_t lo, std::int64_t hi) {
    Eigen::VectorXd q(n);
    for (std::int64_t j = lo; j < hi; ++j) {
      resid.residualize(data.genotypes().col(j), q);
      const double v_raw = q.squaredNorm();
      if (v_raw <= eps) {
        std::int64_t expected = -1;
        degenerate.compare_exchange_strong(expected, j);
        continue;
      }
      out.score(j) = data.genotypes().col(j).dot(fit.residuals) / phi;
      out.var_diag(j) = v_raw / var_scale;
      out.t(j) = out.score(j) / std::sqrt(out.var_diag(j));
      out.p_unadjusted(j) = std::erfc(std::abs(out.t(j)) * 0.70710678118654752440);
    }
  });
  if (degenerate.load() >= 0) {
    throw numeric_error("marker " + data.marker_ids()[degenerate.load()] +
                        " has degenerate variance after covariate projection");
  }
  return out;
}

BandedCorrelation::BandedCorrelation(std::int64_t m, int bandwidth)
    : m_(m), bandwidth_(bandwidth), block_starts_{0} {
  if (m < 1) throw validation_error("banded correlation needs at least one marker");
  if (bandwidth < 1 || bandwidth > 1024) {
    throw validation_error("bandwidth must be in [1, 1024]");
  }
  entries_.assign(static_cast<std::size_t>(m) * (bandwidth - 1), 0.0);
}

void BandedCorrelation::set_entry(std::int64_t j, int delta, double value) {
  if (j < 0 || delta < 1 || delta >= bandwidth_ || j + delta >= m_) {
    throw validation_error("band entry (" + std::to_string(j) + ", +" +
                           std::to_string(delta) + ") outside stored band");
  }
  if (std::abs(value) > 1.0 + 1e-8 || !std::isfinite(value)) {
    throw validation_error("correlation entry outside [-1, 1]");
  }
  const auto b = std::upper_bound(block_starts_.begin(), block_starts_.end(), j) -
                 block_starts_.begin();
  if (block_end(b - 1) <= j + delta && value != 0.0) {
    throw validation_error("nonzero entry would cross a block boundary");
  }
  entries_[static_cast<std::size_t>(j) * (bandwidth_ - 1) + delta - 1] =
      std::clamp(value, -1.0, 1.0);
}

Eigen::MatrixXd BandedCorrelation::window(std::int64_t start, int size) const {
  if (size < 1 || size > bandwidth_ || start < 0 || start + size > m_) {
    throw validation_error("window does not fit inside the stored band");
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(size, size);
  for (int i = 0; i < size; ++i) {
    for (int k = i + 1; k < size; ++k) {
      w(i, k) = w(k, i) = entry(start + i, k - i);
    }
  }
  return w;
}

void BandedCorrelation::set_block_starts(std::vector<std::int64_t> starts) {
  if (starts.empty() || starts.front() != 0) {
    throw validation_error("block starts must begin with 0");
  }
  for (std::size_t i = 1; i < starts.size(); ++i) {
    if (starts[i] <= starts[i - 1] || starts[i] >= m_) {
      throw validation_error("block starts must be strictly increasing and below m");
    }
  }
  block_starts_ = std::move(starts);
  for (std::size_t b = 0; b + 1 < block_starts_.size(); ++b) {
    const std::int64_t end = block_starts_[b + 1];
    for (std::int64_t j = std::max<std::int64_t>(0, end - bandwidth_ + 1); j < end; ++j) {
      for (int delta = static_cast<int>(end - j); delta < bandwidth_ && j + delta < m_;
           ++delta) {
        entries_[static_cast<std::size_t>(j) * (bandwidth_ - 1) + delta - 1] = 0.0;
      }
    }
  }
}

std::int64_t BandedCorrelation::block_end(std::size_t block_index) const {
  return block_index + 1 < block_starts_.size() ? block_starts_[block_index + 1] : m_;
}

bool BandedCorrelation::operator==(const BandedCorrelation& other) const {
  return m_ == other.m_ && bandwidth_ == other.bandwidth_ && entries_ == other.entries_ &&
         block_starts_ == other.block_starts_;
}

void BandedCorrelation::save_tsv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "#m=" << m_ << " bandwidth=" << bandwidth_ << " blocks=";
  for (std::size_t b = 0; b < block_starts_.size(); ++b) {
    if (b) out << ',';
    out << block_starts_[b];
  }
  out << '\n';
  for (std::int64_t j = 0; j < m_; ++j) {
    const auto block = std::upper_bound(block_starts_.begin(), block_starts_.end(), j) -
                       block_starts_.begin();
    const std::int64_t end = block_end(block - 1);
    for (int delta = 1; delta < bandwidth_ && j + delta < end; ++delta) {
      out << j << '\t' << delta << '\t'
          << format_double(entries_[static_cast<std::size_t>(j) * (bandwidth_ - 1) + delta - 1])
          << '\n';
    }
  }
}

BandedCorrelation BandedCorrelation::load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("#m=", 0) != 0) {
    throw validation_error("missing band header in " + path);
  }
  const auto toks = split_ws(std::string_view(header).substr(1));
  std::int64_t m = -1;
  int bandwidth = -1;
  std::vector<std::int64_t> blocks;
  for (auto tok : toks) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) {
      throw validation_error("malformed band header token in " + path);
    }
    const auto key = tok.substr(0, eq);
    const auto val = tok.substr(eq + 1);
    if (key == "m") {
      m = parse_int(val, path);
    } else if (key == "bandwidth") {
      bandwidth = static_cast<int>(parse_int(val, path));
    } else if (key == "blocks") {
      std::size_t pos = 0;
      while (pos <= val.size()) {
        const auto comma = val.find(',', pos);
        const auto piece = val.substr(pos, comma == std::string_view::npos ? val.size() - pos
                                                                           : comma - pos);
        blocks.push_back(parse_int(piece, path));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
    } else {
      throw validation_error("unknown band header key in " + path);
    }
  }
  if (m < 1 || bandwidth < 1) throw validation_error("incomplete band header in " + path);
  BandedCorrelation band(m, bandwidth);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto row = split_ws(line);
    if (row.size() != 3) throw validation_error("malformed band row in " + path);
    band.set_entry(parse_int(row[0], path), static_cast<int>(parse_int(row[1], path)),
                   parse_double(row[2], path));
  }
  band.set_block_starts(std::move(blocks));
  return band;
}

BandedCorrelation correlation_band(const Dataset& data, const NullFit& fit, int bandwidth,
                                   CorrelationMode mode, int threads) {
  require_complete(data, "the correlation band");
  const auto n = data.n();
  const auto m = data.m();
  BandedCorrelation band(m, bandwidth);
  if (bandwidth == 1 || m == 1) return band;

  const bool exact = mode == CorrelationMode::exact;
  Eigen::VectorXd weights;
  if (exact) {
    weights = fit.family == Family::normal ? Eigen::VectorXd::Ones(n) : fit.lambda_diag;
  }
  // Genotype-only mode is Pearson correlation of the raw columns, i.e. plain
  // centering, which is the same projection with an intercept-only design.
  const Residualizer resid =
      exact ? Residualizer(data.covariates(), weights)
            : Residualizer(Eigen::MatrixXd::Ones(n, 1), Eigen::VectorXd::Ones(n));

  const double eps = 1e-12 * static_cast<double>(n);
  const int lag = bandwidth - 1;
  std::atomic<std::int64_t> degenerate{-1};

  // Each chunk owns the entries whose left index falls in [lo, hi).  It
  // recomputes the up-to-lag columns past hi that those entries touch, so
  // every entry is produced exactly once from chunk-independent q vectors and
  // the result does not depend on the thread count.
  parallel_for(m, threads, [&](std::int64_t lo, std::int64_t hi) {
    Eigen::MatrixXd ring(n, lag);
    Eigen::VectorXd vbuf(lag);
    Eigen::VectorXd q(n);
    const std::int64_t stop = std::min<std::int64_t>(m, hi + lag);
    for (std::int64_t j = lo; j < stop; ++j) {
      resid.residualize(data.genotypes().col(j), q);
      const double vj = q.squaredNorm();
      if (vj <= eps) {
        std::int64_t expected = -1;
        degenerate.compare_exchange_strong(expected, j);
        return;
      }
      for (int delta = 1; delta <= lag; ++delta) {
        const std::int64_t prev = j - delta;
        if (prev < lo) break;
        if (prev >= hi) continue;
        const double r = ring.col(prev % lag).dot(q) / std::sqrt(vbuf(prev % lag) * vj);
        band.set_entry(prev, delta, std::clamp(r, -1.0, 1.0));
      }
      ring.col(j % lag) = q;
      vbuf(j % lag) = vj;
    }
  });
  if (degenerate.load() >= 0) {
    throw numeric_error("marker " + data.marker_ids()[degenerate.load()] +
                        " has degenerate variance after covariate projection");
  }
  return band;
}

BandedCorrelation detect_blocks(const BandedCorrelation& band,
                                const std::vector<MarkerPosition>& positions,
                                double threshold) {
  if (static_cast<std::int64_t>(positions.size()) != band.m()) {
    throw validation_error("positions do not match band size");
  }
  BandedCorrelation cut = band;
  std::vector<std::int64_t> starts{0};
  for (std::int64_t g = 1; g < band.m(); ++g) {
    bool boundary = positions[g].chrom != positions[g - 1].chrom;
    if (!boundary && threshold > 0.0) {
      bool all_below = true;
      for (std::int64_t j = std::max<std::int64_t>(0, g - band.bandwidth() + 1); j < g;
           ++j) {
        for (int delta = static_cast<int>(g - j); delta < band.bandwidth(); ++delta) {
          if (std::abs(band.entry(j, delta)) >= threshold) {
            all_below = false;
            break;
          }
        }
        if (!all_below) break;
      }
      boundary = all_below;
    }
    if (boundary) starts.push_back(g);
  }
  cut.set_block_starts(std::move(starts));
  return cut;
}

}  // namespace fwerk
