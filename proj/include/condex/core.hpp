#pragma once

// Shared vocabulary types: coordinates, errors, seeded generators and a small
// deterministic parallel loop.

#include <Eigen/Dense>

#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace condex {

using Point = Eigen::RowVector2d;
using Locations = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

using Rng = std::mt19937_64;

/// Generator for stream `stream` of `seed`. Distinct (seed, stream) pairs give
/// independent-looking streams; used to partition draws across workers.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

inline double distance(const Point& a, const Point& b) { return (a - b).norm(); }

/// Rows `idx` of `locs`, in that order.
inline Locations select_rows(const Locations& locs, const std::vector<int>& idx) {
  Locations out(static_cast<Eigen::Index>(idx.size()), 2);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = locs.row(idx[k]);
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers write into
/// pre-sized per-index slots, so results never depend on the worker count.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nw = std::min(workers, n);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(nw);
  for (int w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += nw) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace condex
