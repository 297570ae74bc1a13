#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "simac/rng.hpp"

namespace simac::attack {

/// Admissible timesteps as sorted, disjoint, non-empty half-open intervals.
class TimestepPool {
 public:
  using Interval = std::pair<int, int>;

  TimestepPool() = default;
  explicit TimestepPool(int T) {
    if (T < 1) throw std::invalid_argument("TimestepPool: T must be positive");
    intervals_.push_back({0, T});
  }
  explicit TimestepPool(std::vector<Interval> intervals) : intervals_(std::move(intervals)) { validate(); }

  const std::vector<Interval>& intervals() const { return intervals_; }

  long length() const {
    long n = 0;
    for (auto& [lo, hi] : intervals_) n += hi - lo;
    return n;
  }
  bool empty() const { return intervals_.empty(); }

  bool contains(int t) const {
    for (auto& [lo, hi] : intervals_)
      if (t >= lo && t < hi) return true;
    return false;
  }

  /// k-th admissible timestep in ascending order.
  int nth(long k) const {
    if (k < 0) throw std::out_of_range("TimestepPool::nth: negative index");
    for (auto& [lo, hi] : intervals_) {
      if (k < hi - lo) return lo + static_cast<int>(k);
      k -= hi - lo;
    }
    throw std::out_of_range("TimestepPool::nth: index beyond pool length");
  }

  /// Number of pool members inside [lo, hi).
  long overlap(int lo, int hi) const {
    long n = 0;
    for (auto& [a, b] : intervals_) n += std::max(0, std::min(b, hi) - std::max(a, lo));
    return n;
  }

  /// Removes [lo, hi) from the pool.
  void remove(int lo, int hi) {
    std::vector<Interval> out;
    for (auto& [a, b] : intervals_) {
      if (b <= lo || a >= hi) {
        out.push_back({a, b});
        continue;
      }
      if (a < lo) out.push_back({a, lo});
      if (b > hi) out.push_back({hi, b});
    }
    intervals_ = std::move(out);
  }

  int sample(Rng& rng) const {
    if (empty()) throw std::logic_error("TimestepPool::sample on empty pool");
    return nth(rng.integer(0, length() - 1));
  }

  /// Up to k distinct members chosen uniformly without replacement, in draw order.
  std::vector<int> sample_distinct(std::size_t k, Rng& rng) const {
    const long n = length();
    std::vector<int> out;
    if (static_cast<long>(k) >= n) {
      for (long i = 0; i < n; ++i) out.push_back(nth(i));
      return out;
    }
    std::vector<long> picked;
    while (out.size() < k) {
      const long idx = rng.integer(0, n - 1);
      if (std::find(picked.begin(), picked.end(), idx) != picked.end()) continue;
      picked.push_back(idx);
      out.push_back(nth(idx));
    }
    return out;
  }

  std::string to_string() const {
    std::string s;
    for (auto& [lo, hi] : intervals_) {
      if (!s.empty()) s += ';';
      s += "[" + std::to_string(lo) + "," + std::to_string(hi) + ")";
    }
    return s;
  }

  friend bool operator==(const TimestepPool&, const TimestepPool&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < intervals_.size(); ++i) {
      auto [lo, hi] = intervals_[i];
      if (lo >= hi) throw std::invalid_argument("TimestepPool: empty interval");
      if (i > 0 && intervals_[i - 1].second > lo)
        throw std::invalid_argument("TimestepPool: intervals must be sorted and disjoint");
    }
  }

  std::vector<Interval> intervals_;
};

}  // namespace simac::attack
