#pragma once

// Order-3 tensors: storage, matricization, mode products and Tucker
// reconstruction.

#include "voltensor/common.hpp"

#include <array>
#include <filesystem>
#include <span>

namespace voltensor {

/// Dense order-3 tensor of size d1 x d2 x d3 stored slice-major: the frontal
/// slices (., ., l) are contiguous column-major d1 x d2 blocks.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3, double fill = 0.0);

  /// Builds a tensor whose l-th frontal slice is slices[l].
  static Tensor3 from_slices(std::span<const Matrix> slices);

  Eigen::Index dim(int mode) const { return dims_.at(static_cast<std::size_t>(mode - 1)); }
  std::array<Eigen::Index, 3> dims() const { return dims_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(data_.size()); }

  double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index l) {
    return data_[static_cast<std::size_t>(i + dims_[0] * (j + dims_[1] * l))];
  }
  double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index l) const {
    return data_[static_cast<std::size_t>(i + dims_[0] * (j + dims_[1] * l))];
  }

  Eigen::Map<Matrix> slice(Eigen::Index l);
  Eigen::Map<const Matrix> slice(Eigen::Index l) const;
  void set_slice(Eigen::Index l, const Matrix& m);

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double frobenius_norm() const;
  bool all_finite() const;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::array<Eigen::Index, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

/// A stack of daily p x p volatility matrices (p x p x D).
using VolTensor = Tensor3;

/// Checks finiteness and slice symmetry (relative tolerance) of a VolTensor.
void validate_vol_tensor(const VolTensor& t, double symmetry_tol = 1e-10);

/// Mode-k unfolding. Mode 1: d1 x d2 d3 with column i2 + i3 d2; mode 2:
/// d2 x d1 d3 with column i1 + i3 d1; mode 3: d3 x d1 d2 with column i1 + i2 d1.
Matrix matricize(const Tensor3& t, int mode);

/// Inverse of matricize for the given target dimensions.
Tensor3 fold(const Matrix& m, int mode, const std::array<Eigen::Index, 3>& dims);

/// t x_mode a, i.e. matricize(result, mode) == a * matricize(t, mode).
Tensor3 mode_product(const Tensor3& t, const Matrix& a, int mode);

struct TuckerFactors {
  Tensor3 core;      // r1 x r1 x r2
  Matrix loading_q;  // p x r1
  Matrix loading_v;  // D x r2
};

/// core x1 Q x2 Q x3 V.
VolTensor tucker_reconstruct(const TuckerFactors& f);

/// Flips column signs so the largest-magnitude entry of every column is
/// positive (ties go to the lowest row index).
void normalize_column_signs(Matrix& m);

/// r leading left singular vectors of m, sign-normalized. Repeated singular
/// values at the cut and rank deficiency are reported through `warnings`.
Matrix leading_left_singular_vectors(const Matrix& m, Eigen::Index r,
                                     Warnings* warnings = nullptr);

/// Singular values of m in decreasing order.
Vector singular_values(const Matrix& m);

/// Cosines of the principal angles between col(a) and col(b) are the singular
/// values of a^T b for orthonormal a, b; this returns the largest angle.
double max_principal_angle(const Matrix& a, const Matrix& b);

// Serialization: a single JSON header line
//   {"dims":[d1,d2,d3],"layout":"slice-major","dtype":"float64-le"}\n
// followed by d1*d2*d3 little-endian doubles in storage order.
void write_tensor(const Tensor3& t, const std::filesystem::path& path);
Tensor3 read_tensor(const std::filesystem::path& path);

}  // namespace voltensor
