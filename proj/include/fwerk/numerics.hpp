#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

#include "fwerk/errors.hpp"

namespace fwerk {

// Compensated (Neumaier) accumulator.  Used wherever we sum many small
// log-probabilities; the correction term keeps the result stable when the
// running sum is orders of magnitude larger than the increments.
class NeumaierSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Shortest round-trip decimal representation.  Every TSV we write uses this so
// that load(save(x)) reproduces x bit for bit.
inline std::string format_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view tok, const std::string& context) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw validation_error("cannot parse number '" + std::string(tok) + "' in " + context);
  }
  if (!std::isfinite(x)) {
    throw validation_error("non-finite value '" + std::string(tok) + "' in " + context);
  }
  return x;
}

inline std::int64_t parse_int(std::string_view tok, const std::string& context) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw validation_error("cannot parse integer '" + std::string(tok) + "' in " + context);
  }
  return v;
}

// Splits [0, total) into contiguous chunks, one worker thread per chunk.  Each
// worker writes only to its own slots, so results do not depend on the thread
// count.  threads <= 1 (or a tiny range) runs inline.
inline void parallel_for(std::int64_t total, int threads,
                         const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  const std::int64_t chunk_count =
      std::min<std::int64_t>(threads, total > 0 ? total : 1);
  if (chunk_count <= 1 || total < 2) {
    body(0, total);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunk_count));
  const std::int64_t step = (total + chunk_count - 1) / chunk_count;
  for (std::int64_t c = 0; c < chunk_count; ++c) {
    const std::int64_t lo = c * step;
    const std::int64_t hi = std::min(total, lo + step);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

// Tokenize a line on tabs/spaces (runs collapse).
inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != '\t' && line[j] != ' ' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace fwerk
