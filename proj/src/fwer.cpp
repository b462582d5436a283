#include "fwerk/fwer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>

#include "fwerk/errors.hpp"
#include "fwerk/mvn.hpp"
#include "fwerk/numerics.hpp"

namespace fwerk {

using mvn::BoxProblem;
using mvn::box_k_miss;
using mvn::norm_inv;

namespace {

constexpr double kBisectRelWidth = 1e-10;
constexpr int kBisectMaxIter = 200;
// gamma_k is monotone in the local level up to quadrature noise in the window
// probabilities; violations beyond this are treated as a numerical failure.
constexpr double kMonotoneSlack = 1e-9;

double critical_value(double alpha_loc) { return -norm_inv(0.5 * alpha_loc); }

void check_level(double alpha, const char* what) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw validation_error(std::string(what) + " must lie strictly between 0 and 1");
  }
}

void check_order(const BandedCorrelation& band, int k) {
  if (k < 1) throw validation_error("approximation order must be at least 1");
  if (k > band.bandwidth()) {
    throw validation_error("order " + std::to_string(k) + " exceeds the stored bandwidth " +
                           std::to_string(band.bandwidth()));
  }
  if (k > 6) throw validation_error("approximation order is capped at 6");
}

// Memoizes ln P(window) keyed on the window's entry bit patterns, so repeated
// structure (AR1 bands, equicorrelated blocks) costs one quadrature each.
using WindowMemo = std::unordered_map<std::string, double>;

double ln_window(const BandedCorrelation& band, std::int64_t start, int size, double c,
                 double ln_single, WindowMemo& memo) {
  if (size == 1) return ln_single;
  double entries[15];
  int ne = 0;
  bool zero = true;
  for (int i = 0; i < size; ++i) {
    for (int d = 1; i + d < size; ++d) {
      entries[ne] = band.entry(start + i, d);
      if (entries[ne] != 0.0) zero = false;
      ++ne;
    }
  }
  if (zero) return static_cast<double>(size) * ln_single;
  std::string key(1, static_cast<char>(size));
  key.append(reinterpret_cast<const char*>(entries), ne * sizeof(double));
  const auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  BoxProblem prob;
  prob.correlation = band.window(start, size);
  prob.half_width = c;
  const double value = std::log1p(-box_k_miss(prob));
  memo.emplace(std::move(key), value);
  return value;
}

bool block_is_independent(const BandedCorrelation& band, std::int64_t lo, std::int64_t hi) {
  for (std::int64_t j = lo; j < hi; ++j) {
    for (int d = 1; d < band.bandwidth() && j + d < hi; ++d) {
      if (band.entry(j, d) != 0.0) return false;
    }
  }
  return true;
}

double block_ln_gamma(const BandedCorrelation& band, std::int64_t lo, std::int64_t hi, int k,
                      double c, double ln_single, WindowMemo& memo) {
  const std::int64_t len = hi - lo;
  const int keff = static_cast<int>(std::min<std::int64_t>(k, len));
  if (keff == 1 || block_is_independent(band, lo, hi)) {
    return static_cast<double>(len) * ln_single;
  }
  // gamma = P(first k-window) * prod over later starts of
  // P(k-window) / P(its leading (k-1)-window); one compensated add per start.
  NeumaierSum sum;
  for (std::int64_t i = lo; i + keff <= hi; ++i) {
    double term = ln_window(band, i, keff, c, ln_single, memo);
    if (i > lo) term -= ln_window(band, i, keff - 1, c, ln_single, memo);
    sum.add(term);
  }
  return sum.value();
}

double ln_gamma_impl(const BandedCorrelation& band, int k, double alpha_loc,
                     WindowMemo& memo) {
  const double c = critical_value(alpha_loc);
  const double ln_single = std::log1p(-alpha_loc);
  // Plain left-to-right accumulation so the total factorizes bitwise over
  // blocks.
  double total = 0.0;
  for (std::size_t b = 0; b < band.block_starts().size(); ++b) {
    total +=
        block_ln_gamma(band, band.block_starts()[b], band.block_end(b), k, c, ln_single, memo);
  }
  return total;
}

FwerResult closed_form(int order, std::int64_t m, double alpha, double alpha_loc) {
  FwerResult res;
  res.order = order;
  res.alpha = alpha;
  res.alpha_loc = alpha_loc;
  res.c = critical_value(alpha_loc);
  res.ln_gamma = static_cast<double>(m) * std::log1p(-alpha_loc);
  res.m_eff = effective_tests(alpha, alpha_loc);
  res.iterations = 0;
  res.bracket_lo = res.bracket_hi = alpha_loc;
  return res;
}

}  // namespace

FwerResult bonferroni(std::int64_t m, double alpha) {
  if (m < 1) throw validation_error("family size must be at least 1");
  check_level(alpha, "alpha");
  return closed_form(0, m, alpha, alpha / static_cast<double>(m));
}

FwerResult sidak(std::int64_t m, double alpha) {
  if (m < 1) throw validation_error("family size must be at least 1");
  check_level(alpha, "alpha");
  return closed_form(1, m, alpha, -std::expm1(std::log1p(-alpha) / static_cast<double>(m)));
}

double effective_tests(double alpha, double alpha_loc) {
  check_level(alpha, "alpha");
  check_level(alpha_loc, "alpha_loc");
  return std::log1p(-alpha) / std::log1p(-alpha_loc);
}

double gamma_k(const BandedCorrelation& band, int k, double alpha_loc) {
  check_order(band, k);
  check_level(alpha_loc, "alpha_loc");
  WindowMemo memo;
  return ln_gamma_impl(band, k, alpha_loc, memo);
}

FwerResult solve_alpha_loc(const BandedCorrelation& band, int k, double alpha) {
  check_order(band, k);
  check_level(alpha, "alpha");
  const std::int64_t m = band.m();
  if (k == 1) {
    FwerResult res = sidak(m, alpha);
    return res;
  }

  const double target = std::log1p(-alpha);
  std::map<double, double> evals;
  const auto eval = [&](double a) {
    WindowMemo memo;
    const double v = ln_gamma_impl(band, k, a, memo);
    evals.emplace(a, v);
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& [pa, pv] : evals) {
      (void)pa;
      if (pv > prev + kMonotoneSlack) {
        throw numeric_error("gamma_k is not monotone across the evaluated local levels");
      }
      prev = pv;
    }
    return v;
  };

  double lo = alpha / static_cast<double>(m);
  double hi = alpha;
  double lo_val = eval(lo);
  const double hi_val = eval(hi);
  if (lo_val < target - kMonotoneSlack) {
    throw numeric_error("order-k approximation fell below its Bonferroni bracket");
  }
  FwerResult res;
  res.order = k;
  res.alpha = alpha;
  if (hi_val >= target) {
    // The whole bracket is feasible (m = 1, or fully degenerate dependence).
    lo = hi;
    lo_val = hi_val;
  }
  int iterations = 0;
  while (hi - lo > kBisectRelWidth * lo && iterations < kBisectMaxIter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double v = eval(mid);
    ++iterations;
    if (v >= target) {
      lo = mid;
      lo_val = v;
    } else {
      hi = mid;
    }
  }
  res.alpha_loc = lo;
  res.c = critical_value(lo);
  res.ln_gamma = lo_val;
  res.m_eff = effective_tests(alpha, lo);
  res.iterations = iterations;
  res.bracket_lo = lo;
  res.bracket_hi = hi;
  return res;
}

Eigen::VectorXd adjust_pvalues(const BandedCorrelation& band, int k,
                               const Eigen::VectorXd& p_unadjusted) {
  check_order(band, k);
  if (p_unadjusted.size() != band.m()) {
    throw validation_error("p-value vector does not match the band's marker count");
  }
  Eigen::VectorXd adj(p_unadjusted.size());
  for (Eigen::Index j = 0; j < p_unadjusted.size(); ++j) {
    const double p = p_unadjusted(j);
    if (!(p >= 0.0) || !(p <= 1.0)) {
      throw validation_error("p-values must lie in [0, 1]");
    }
    if (p == 0.0) {
      adj(j) = 0.0;
      continue;
    }
    if (p >= 1.0 - 1e-12) {
      adj(j) = 1.0;
      continue;
    }
    WindowMemo memo;
    const double ln_g = ln_gamma_impl(band, k, p, memo);
    adj(j) = std::clamp(-std::expm1(ln_g), p, 1.0);
  }
  return adj;
}

}  // namespace fwerk
