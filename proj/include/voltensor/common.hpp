#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace voltensor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised for contract violations (bad dimensions, infeasible problems, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-fatal diagnostics collected by operations that can degrade gracefully.
struct Warnings {
  std::vector<std::string> messages;

  /// Exact repeats are dropped.
  void add(std::string msg) {
    for (const auto& m : messages)
      if (m == msg) return;
    messages.push_back(std::move(msg));
  }
  bool empty() const { return messages.empty(); }
  bool contains(const std::string& needle) const {
    for (const auto& m : messages)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
};

inline void warn(Warnings* w, std::string msg) {
  if (w != nullptr) w->add(std::move(msg));
}

/// SplitMix64 mix of (master, stream, index); used to give every day and
/// every random component its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                          std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<int>(mean)(engine_);
  }
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Symmetric part (M + M^T) / 2.
inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

bool is_positive_definite(const Matrix& m);

/// Eigenvalues clipped from below at `floor`; the result is symmetric.
Matrix eigenvalue_floor(const Matrix& m, double floor);

/// Factor L (p x k) with L L^T = m for a symmetric PSD m; columns belonging to
/// eigenvalues below a relative tolerance are dropped. Throws if m has a
/// materially negative eigenvalue.
Matrix psd_square_root_factor(const Matrix& m);

}  // namespace voltensor
