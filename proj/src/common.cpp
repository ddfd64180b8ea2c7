#include "voltensor/common.hpp"

#include <algorithm>
#include <cmath>

namespace voltensor {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                          std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ index);
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  // Fill column by column so the draw order is well defined.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal();
  return out;
}

bool is_positive_definite(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) return false;
  // LLT succeeds on some numerically singular inputs; require a pivot margin.
  const double scale = m.diagonal().cwiseAbs().maxCoeff();
  const double min_pivot = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
  return min_pivot * min_pivot > 1e-12 * std::max(scale, 1e-300);
}

Matrix eigenvalue_floor(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector vals = es.eigenvalues().cwiseMax(floor);
  return symmetrize(es.eigenvectors() * vals.asDiagonal() *
                    es.eigenvectors().transpose());
}

Matrix psd_square_root_factor(const Matrix& m) {
  const Eigen::Index p = m.rows();
  if (p != m.cols()) throw Error("psd_square_root_factor: matrix is not square");
  if (p == 0) return Matrix(0, 0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  const Vector& vals = es.eigenvalues();
  const double top = std::max(vals.cwiseAbs().maxCoeff(), 0.0);
  const double tol = 1e-10 * top;
  if (vals.minCoeff() < -std::max(tol, 1e-14))
    throw Error("psd_square_root_factor: matrix is not positive semidefinite (min eigenvalue " +
                std::to_string(vals.minCoeff()) + ")");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < p; ++k)
    if (vals(k) > tol && vals(k) > 0.0) keep.push_back(k);
  Matrix out(p, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c)
    out.col(static_cast<Eigen::Index>(c)) =
        es.eigenvectors().col(keep[c]) * std::sqrt(vals(keep[c]));
  return out;
}

}  // namespace voltensor
