#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dpdd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy. The CLI maps these onto distinct exit codes, so library
// code should pick the narrowest type that applies.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct CalibrationError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

inline void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericalError(std::string(what) + " is not finite");
}

inline void check_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + " contains non-finite values");
}

// Runs fn(0..n-1), chunked across `workers` threads when workers > 1.
// Work items must be independent; ordering across items is unspecified.
inline void parallel_for(Index n, int workers, const std::function<void(Index)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const int t = static_cast<int>(std::min<Index>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(t);
  std::exception_ptr err;
  std::mutex err_mu;
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < n; i += t) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

struct ImageShape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index pixels() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

}  // namespace dpdd
