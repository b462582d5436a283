#include "fwerk/mvn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fwerk/errors.hpp"
#include "fwerk/numerics.hpp"
#include "fwerk/rng.hpp"

namespace fwerk::mvn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Beyond this many standard deviations the normal density is < 1e-16 of the
// central value; conditional integrals are truncated here.
constexpr double kTailCut = 8.5;

// Windows whose smallest eigenvalue is below this are rejected outright;
// anything between -kRepairLimit and 0 is treated as round-off and clipped.
constexpr double kRepairLimit = 1e-6;
constexpr double kEigenFloor = 1e-10;

}  // namespace

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double norm_sf(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

// Wichura's PPND16 (Applied Statistics 37, 1988) with a single Newton
// correction on top.  Good to full double precision over the supported range.
double norm_inv(double p) {
  if (!(p > 0.0) || !(p < 1.0)) {
    throw validation_error("norm_inv requires p in (0, 1)");
  }
  const double q = p - 0.5;
  double x;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q *
        (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
              6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
            1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
          1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
        (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
              3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
            5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
          4.2313330701600911252e+1) * r + 1.0);
  } else {
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
      r -= 1.6;
      x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
              3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
    } else {
      r -= 5.0;
      x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
    }
    if (q < 0.0) x = -x;
  }
  const double dens = norm_pdf(x);
  if (dens > 0.0) {
    // One Newton step.  The residual Phi(x) - p is formed through whichever
    // tail is small so it stays meaningful deep in either tail.
    const double err = p < 0.5 ? norm_cdf(x) - p : (1.0 - p) - norm_sf(x);
    x -= err / dens;
  }
  return x;
}

namespace {

struct GlRule {
  std::vector<double> node;    // on [-1, 1]
  std::vector<double> weight;
};

// Nodes/weights of the n-point Gauss-Legendre rule via Newton iteration on
// the Legendre polynomial (the usual gauleg construction).
GlRule make_gl(int n) {
  GlRule rule;
  rule.node.resize(n);
  rule.weight.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    rule.node[i] = -z;
    rule.node[n - 1 - i] = z;
    rule.weight[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    rule.weight[n - 1 - i] = rule.weight[i];
  }
  return rule;
}

const GlRule& gl_rule(int n) {
  static const GlRule r15 = make_gl(15);
  static const GlRule r31 = make_gl(31);
  static const GlRule r32 = make_gl(32);
  static const GlRule r64 = make_gl(64);
  switch (n) {
    case 15: return r15;
    case 31: return r31;
    case 32: return r32;
    default: return r64;
  }
}

template <class F>
double gl_integrate(const F& f, double a, double b, int n) {
  const GlRule& rule = gl_rule(n);
  const double mid = 0.5 * (a + b);
  const double hw = 0.5 * (b - a);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += rule.weight[i] * f(mid + hw * rule.node[i]);
  }
  return acc * hw;
}

// I(r, c) = int_{-c}^{c} 2 phi(x) Phi((r x - c)/s) dx with s = sqrt(1 - r^2).
// Then P(|Z1|<c, |Z2|<c) = erf(c/sqrt 2) - I and the complement is
// erfc(c/sqrt 2) + I; both identities follow from splitting the inner
// interval at its endpoints and exploiting symmetry in x -> -x.
double box2_integral(double r, double c) {
  const double s = std::sqrt((1.0 - r) * (1.0 + r));
  const auto f = [r, c, s](double x) {
    return 2.0 * norm_pdf(x) * norm_cdf((r * x - c) / s);
  };
  struct Panel {
    double a, b;
  };
  std::vector<Panel> stack{{-c, c}};
  NeumaierSum total;
  const double span = 2.0 * c;
  int processed = 0;
  while (!stack.empty()) {
    const Panel p = stack.back();
    stack.pop_back();
    if (++processed > 200000) {
      throw numeric_error("bivariate box quadrature failed to converge");
    }
    const double coarse = gl_integrate(f, p.a, p.b, 15);
    const double fine = gl_integrate(f, p.a, p.b, 31);
    const double width = p.b - p.a;
    if (std::abs(fine - coarse) <= 1e-14 * width / span || width < 1e-12 * span) {
      total.add(fine);
    } else {
      const double mid = 0.5 * (p.a + p.b);
      stack.push_back({p.a, mid});
      stack.push_back({mid, p.b});
    }
  }
  return total.value();
}

}  // namespace

double box2(double r, double c) {
  if (c <= 0.0) return 0.0;
  r = std::abs(r);  // (Z1, Z2) -> (Z1, -Z2) flips the sign of r
  if (r > 1.0 + 1e-12) throw validation_error("correlation outside [-1, 1]");
  if (r >= 1.0) return 1.0 - std::erfc(c * kInvSqrt2);
  return std::erf(c * kInvSqrt2) - box2_integral(r, c);
}

double box2_miss(double r, double c) {
  if (c <= 0.0) return 1.0;
  r = std::abs(r);
  if (r > 1.0 + 1e-12) throw validation_error("correlation outside [-1, 1]");
  if (r >= 1.0) return std::erfc(c * kInvSqrt2);
  return std::erfc(c * kInvSqrt2) + box2_integral(r, c);
}

namespace {

// Cholesky factor of a correlation matrix, clipping slightly negative
// eigenvalues (imputation and clamping round-off can push a window a hair
// outside the PSD cone).  Genuinely indefinite inputs are an error.
Eigen::MatrixXd cholesky_psd(Eigen::MatrixXd r) {
  const auto n = r.rows();
  if (n != r.cols() || n < 1) {
    throw validation_error("correlation matrix must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(r(i, i) - 1.0) > 1e-8) {
      throw validation_error("correlation matrix diagonal must be 1");
    }
    r(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(r(i, j) - r(j, i)) > 1e-10) {
        throw validation_error("correlation matrix must be symmetric");
      }
      const double v = 0.5 * (r(i, j) + r(j, i));
      if (std::abs(v) > 1.0 + 1e-8) {
        throw validation_error("correlation entry outside [-1, 1]");
      }
      r(i, j) = r(j, i) = std::clamp(v, -1.0, 1.0);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  if (llt.info() == Eigen::Success) {
    return llt.matrixL();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  if (es.info() != Eigen::Success) {
    throw numeric_error("eigendecomposition of correlation matrix failed");
  }
  const double lambda_min = es.eigenvalues().minCoeff();
  if (lambda_min < -kRepairLimit) {
    throw numeric_error("correlation matrix is indefinite (min eigenvalue " +
                        format_double(lambda_min) + ")");
  }
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(kEigenFloor);
  Eigen::MatrixXd fixed =
      es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::VectorXd d = fixed.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      fixed(i, j) /= d(i) * d(j);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> retry(fixed);
  if (retry.info() != Eigen::Success) {
    throw numeric_error("correlation matrix repair failed");
  }
  return retry.matrixL();
}

// Recursive conditional quadrature, complement form.  With L the Cholesky
// factor, level i contributes an exactly-known escape mass
// Phi(lo_i) + Phi(-hi_i) plus the density-weighted escape of deeper levels;
// keeping the analytic part outside the quadrature avoids evaluating a
// quantity that is 1 - O(1e-7) through its complement.
class BoxQuadrature {
 public:
  BoxQuadrature(const Eigen::MatrixXd& chol, double c, int nodes)
      : l_(chol), c_(c), nodes_(nodes), dim_(static_cast<int>(chol.rows())),
        shift_(Eigen::VectorXd::Zero(chol.rows())) {}

  double miss() { return level(0); }

 private:
  double level(int i) {
    const double lii = l_(i, i);
    const double lo = (-c_ - shift_(i)) / lii;
    const double hi = (c_ - shift_(i)) / lii;
    double out = norm_cdf(lo) + norm_sf(hi);
    if (i == dim_ - 1) return out;
    const double a = std::max(lo, -kTailCut);
    const double b = std::min(hi, kTailCut);
    if (a >= b) return out;
    const GlRule& rule = gl_rule(nodes_);
    const double mid = 0.5 * (a + b);
    const double hw = 0.5 * (b - a);
    const Eigen::VectorXd saved = shift_.segment(i + 1, dim_ - i - 1);
    double acc = 0.0;
    for (int q = 0; q < nodes_; ++q) {
      const double u = mid + hw * rule.node[q];
      for (int j = i + 1; j < dim_; ++j) shift_(j) = saved(j - i - 1) + l_(j, i) * u;
      acc += rule.weight[q] * norm_pdf(u) * level(i + 1);
    }
    shift_.segment(i + 1, dim_ - i - 1) = saved;
    return out + acc * hw;
  }

  const Eigen::MatrixXd& l_;
  double c_;
  int nodes_;
  int dim_;
  Eigen::VectorXd shift_;
};

double box_k_miss_impl(const BoxProblem& problem) {
  const int dim = static_cast<int>(problem.correlation.rows());
  if (dim < 1 || dim > 6) {
    throw validation_error("deterministic box probability supports dimensions 1-6");
  }
  const double c = problem.half_width;
  if (c <= 0.0) return 1.0;
  if (dim == 1) return std::erfc(c * kInvSqrt2);
  if (dim == 2) return box2_miss(problem.correlation(1, 0), c);
  const Eigen::MatrixXd chol = cholesky_psd(problem.correlation);
  const int nodes = dim <= 4 ? 64 : 32;
  BoxQuadrature quad(chol, c, nodes);
  return quad.miss();
}

}  // namespace

double box_k(const BoxProblem& problem) { return 1.0 - box_k_miss_impl(problem); }

double box_k_miss(const BoxProblem& problem) { return box_k_miss_impl(problem); }

namespace {

// First n primes (enough for one lattice generator per dimension).
std::vector<std::int64_t> first_primes(int n) {
  std::vector<std::int64_t> primes;
  primes.reserve(n);
  std::int64_t limit = 16;
  while (static_cast<int>(primes.size()) < n) {
    limit *= 4;
    primes.clear();
    std::vector<bool> composite(limit + 1, false);
    for (std::int64_t p = 2; p <= limit && static_cast<int>(primes.size()) < n; ++p) {
      if (composite[p]) continue;
      primes.push_back(p);
      for (std::int64_t q = p * p; q <= limit; q += p) composite[q] = true;
    }
  }
  return primes;
}

}  // namespace

McEstimate box_mc(const Eigen::MatrixXd& correlation, double half_width,
                  std::int64_t samples, std::uint64_t seed, int threads) {
  const int m = static_cast<int>(correlation.rows());
  if (m < 1) throw validation_error("box_mc needs a non-empty correlation matrix");
  constexpr int kRand = 16;
  if (samples < 1000) throw validation_error("box_mc needs at least 1000 samples");
  McEstimate out;
  out.randomizations = kRand;
  const std::int64_t per_rand = samples / kRand;
  out.samples = per_rand * kRand;
  if (half_width <= 0.0) return out;

  const Eigen::MatrixXd chol = cholesky_psd(correlation);
  // Exact zeros survive the factorization for banded inputs; skipping them
  // keeps the per-sample cost proportional to the bandwidth.
  std::vector<int> row_start(m, 0);
  for (int i = 0; i < m; ++i) {
    int j = 0;
    while (j < i && chol(i, j) == 0.0) ++j;
    row_start[i] = j;
  }

  // Kronecker lattice: coordinate j advances by frac(sqrt(p_j)) per sample,
  // with an independent uniform shift per randomization.
  std::vector<double> alpha(std::max(0, m - 1));
  if (m > 1) {
    const auto primes = first_primes(m - 1);
    for (int j = 0; j + 1 < m; ++j) {
      double a = std::sqrt(static_cast<double>(primes[j]));
      alpha[j] = a - std::floor(a);
    }
  }

  const double c = half_width;
  std::vector<double> rand_mean(kRand, 0.0);
  parallel_for(kRand, threads, [&](std::int64_t r0, std::int64_t r1) {
    std::vector<double> u(std::max(0, m - 1));
    Eigen::VectorXd y(m);
    for (std::int64_t r = r0; r < r1; ++r) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      for (int j = 0; j + 1 < m; ++j) u[j] = rng.uniform();
      NeumaierSum acc;
      for (std::int64_t s = 0; s < per_rand; ++s) {
        double f = 1.0;
        for (int j = 0; j < m; ++j) {
          double shift = 0.0;
          for (int l = row_start[j]; l < j; ++l) shift += chol(j, l) * y(l);
          const double ljj = chol(j, j);
          const double below = norm_cdf((-c - shift) / ljj);
          const double above = norm_sf((c - shift) / ljj);
          const double inside = 1.0 - below - above;
          if (inside <= 0.0) {
            f = 0.0;
            break;
          }
          f *= inside;
          if (j + 1 < m) {
            double z = below + u[j] * inside;
            z = std::clamp(z, 1e-300, 1.0 - 1e-16);
            y(j) = norm_inv(z);
          }
        }
        acc.add(f);
        for (int j = 0; j + 1 < m; ++j) {
          u[j] += alpha[j];
          if (u[j] >= 1.0) u[j] -= 1.0;
        }
      }
      rand_mean[r] = acc.value() / static_cast<double>(per_rand);
    }
  });

  double mean = 0.0;
  for (double v : rand_mean) mean += v;
  mean /= kRand;
  double var = 0.0;
  for (double v : rand_mean) var += (v - mean) * (v - mean);
  out.estimate = mean;
  out.std_error = std::sqrt(var / (kRand * (kRand - 1.0)));
  return out;
}

}  // namespace fwerk::mvn
