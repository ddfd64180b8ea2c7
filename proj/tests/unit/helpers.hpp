#pragma once

#include "voltensor/tensor.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace th {

using voltensor::Matrix;
using voltensor::Vector;

inline Matrix random_orthonormal(Eigen::Index rows, Eigen::Index cols, voltensor::Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(rows, cols));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

inline Matrix random_spd(Eigen::Index p, voltensor::Rng& rng, double ridge = 0.5) {
  const Matrix a = rng.normal_matrix(p, p);
  return a * a.transpose() / static_cast<double>(p) + ridge * Matrix::Identity(p, p);
}

inline voltensor::Tensor3 random_tensor(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3,
                                        voltensor::Rng& rng) {
  voltensor::Tensor3 t(d1, d2, d3);
  for (double& x : t.data()) x = rng.normal();
  return t;
}

inline double max_abs_diff(const voltensor::Tensor3& a, const voltensor::Tensor3& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k)
    m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("voltensor_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace th
