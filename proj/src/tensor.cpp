#include "voltensor/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace voltensor {

namespace {

void check_mode(int mode) {
  if (mode < 1 || mode > 3)
    throw Error("tensor mode must be 1, 2 or 3 (got " + std::to_string(mode) + ")");
}

std::string dims_str(const std::array<Eigen::Index, 3>& d) {
  std::ostringstream os;
  os << d[0] << "x" << d[1] << "x" << d[2];
  return os.str();
}

}  // namespace

Tensor3::Tensor3(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3, double fill)
    : dims_{d1, d2, d3} {
  if (d1 < 0 || d2 < 0 || d3 < 0) throw Error("Tensor3: negative dimension");
  data_.assign(static_cast<std::size_t>(d1 * d2 * d3), fill);
}

Tensor3 Tensor3::from_slices(std::span<const Matrix> slices) {
  if (slices.empty()) return {};
  const auto rows = slices.front().rows();
  const auto cols = slices.front().cols();
  Tensor3 out(rows, cols, static_cast<Eigen::Index>(slices.size()));
  for (std::size_t l = 0; l < slices.size(); ++l) {
    if (slices[l].rows() != rows || slices[l].cols() != cols)
      throw Error("Tensor3::from_slices: slice " + std::to_string(l) +
                  " has inconsistent shape");
    out.set_slice(static_cast<Eigen::Index>(l), slices[l]);
  }
  return out;
}

Eigen::Map<Matrix> Tensor3::slice(Eigen::Index l) {
  return {data_.data() + l * dims_[0] * dims_[1], dims_[0], dims_[1]};
}

Eigen::Map<const Matrix> Tensor3::slice(Eigen::Index l) const {
  return {data_.data() + l * dims_[0] * dims_[1], dims_[0], dims_[1]};
}

void Tensor3::set_slice(Eigen::Index l, const Matrix& m) {
  if (m.rows() != dims_[0] || m.cols() != dims_[1])
    throw Error("Tensor3::set_slice: shape mismatch");
  slice(l) = m;
}

double Tensor3::frobenius_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void validate_vol_tensor(const VolTensor& t, double symmetry_tol) {
  if (t.dim(1) != t.dim(2))
    throw Error("VolTensor slices must be square, got " + dims_str(t.dims()));
  if (!t.all_finite()) throw Error("VolTensor contains non-finite entries");
  for (Eigen::Index l = 0; l < t.dim(3); ++l) {
    auto s = t.slice(l);
    const double scale = std::max(s.cwiseAbs().maxCoeff(), 1e-300);
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > symmetry_tol * scale)
      throw Error("VolTensor slice " + std::to_string(l) + " is not symmetric");
  }
}

Matrix matricize(const Tensor3& t, int mode) {
  check_mode(mode);
  const auto [d1, d2, d3] = t.dims();
  const Eigen::Map<const Matrix> flat(t.data().data(), d1 * d2, d3);
  switch (mode) {
    case 1:
      return Eigen::Map<const Matrix>(t.data().data(), d1, d2 * d3);
    case 2: {
      Matrix out(d2, d1 * d3);
      for (Eigen::Index l = 0; l < d3; ++l)
        out.middleCols(l * d1, d1) = t.slice(l).transpose();
      return out;
    }
    default:
      return flat.transpose();
  }
}

Tensor3 fold(const Matrix& m, int mode, const std::array<Eigen::Index, 3>& dims) {
  check_mode(mode);
  const auto [d1, d2, d3] = dims;
  const Eigen::Index rows = dims[static_cast<std::size_t>(mode - 1)];
  if (m.rows() != rows || m.rows() * m.cols() != d1 * d2 * d3)
    throw Error("fold: matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                " incompatible with mode-" + std::to_string(mode) + " unfolding of " +
                dims_str(dims));
  Tensor3 out(d1, d2, d3);
  switch (mode) {
    case 1:
      std::copy(m.data(), m.data() + m.size(), out.data().begin());
      break;
    case 2:
      for (Eigen::Index l = 0; l < d3; ++l)
        out.slice(l) = m.middleCols(l * d1, d1).transpose();
      break;
    default: {
      Eigen::Map<Matrix>(out.data().data(), d1 * d2, d3) = m.transpose();
      break;
    }
  }
  return out;
}

Tensor3 mode_product(const Tensor3& t, const Matrix& a, int mode) {
  check_mode(mode);
  const auto dims = t.dims();
  const Eigen::Index along = dims[static_cast<std::size_t>(mode - 1)];
  if (a.cols() != along)
    throw Error("mode_product: matrix has " + std::to_string(a.cols()) +
                " columns but tensor " + dims_str(dims) + " has dimension " +
                std::to_string(along) + " along mode " + std::to_string(mode));
  auto out_dims = dims;
  out_dims[static_cast<std::size_t>(mode - 1)] = a.rows();
  Tensor3 out(out_dims[0], out_dims[1], out_dims[2]);
  switch (mode) {
    case 1:
      for (Eigen::Index l = 0; l < dims[2]; ++l) out.slice(l).noalias() = a * t.slice(l);
      break;
    case 2:
      for (Eigen::Index l = 0; l < dims[2]; ++l)
        out.slice(l).noalias() = t.slice(l) * a.transpose();
      break;
    default: {
      const Eigen::Map<const Matrix> flat(t.data().data(), dims[0] * dims[1], dims[2]);
      Eigen::Map<Matrix>(out.data().data(), dims[0] * dims[1], a.rows()).noalias() =
          flat * a.transpose();
      break;
    }
  }
  return out;
}

VolTensor tucker_reconstruct(const TuckerFactors& f) {
  const auto cd = f.core.dims();
  if (f.loading_q.cols() != cd[0] || cd[0] != cd[1] || f.loading_v.cols() != cd[2])
    throw Error("tucker_reconstruct: core " + dims_str(cd) + " incompatible with Q (" +
                std::to_string(f.loading_q.rows()) + "x" + std::to_string(f.loading_q.cols()) +
                ") and V (" + std::to_string(f.loading_v.rows()) + "x" +
                std::to_string(f.loading_v.cols()) + ")");
  return mode_product(mode_product(mode_product(f.core, f.loading_q, 1), f.loading_q, 2),
                      f.loading_v, 3);
}

void normalize_column_signs(Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double a = std::abs(m(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (m.rows() > 0 && m(best, c) < 0.0) m.col(c) = -m.col(c);
  }
}

Vector singular_values(const Matrix& m) {
  Eigen::BDCSVD<Matrix> svd(m);
  return svd.singularValues();
}

Matrix leading_left_singular_vectors(const Matrix& m, Eigen::Index r, Warnings* warnings) {
  const Eigen::Index k = std::min(m.rows(), m.cols());
  if (r < 1 || r > k)
    throw Error("leading_left_singular_vectors: rank " + std::to_string(r) +
                " outside [1, " + std::to_string(k) + "]");
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const double top = sv.size() > 0 ? sv(0) : 0.0;
  const double tol = 1e-10 * std::max(top, 1e-300);
  if (sv(r - 1) <= tol)
    warn(warnings, "leading_left_singular_vectors: requested rank " + std::to_string(r) +
                       " exceeds numerical rank; trailing columns come from the null space");
  if (r < k && std::abs(sv(r - 1) - sv(r)) <= tol)
    warn(warnings, "leading_left_singular_vectors: repeated singular value at the rank-" +
                       std::to_string(r) + " cut; subspace is not unique");
  Matrix u = svd.matrixU().leftCols(r);
  normalize_column_signs(u);
  return u;
}

double max_principal_angle(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error("max_principal_angle: row mismatch");
  Eigen::HouseholderQR<Matrix> qa(a), qb(b);
  Matrix oa = qa.householderQ() * Matrix::Identity(a.rows(), a.cols());
  Matrix ob = qb.householderQ() * Matrix::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Matrix> svd(oa.transpose() * ob);
  const Vector& c = svd.singularValues();
  if (c.size() == 0) return 0.0;
  const double smallest = std::clamp(c.minCoeff(), -1.0, 1.0);
  // acos is ill-conditioned near 1; small angles come from the residual.
  Matrix resid = ob - oa * (oa.transpose() * ob);
  Eigen::JacobiSVD<Matrix> rs(resid);
  const double s = rs.singularValues().size() ? rs.singularValues()(0) : 0.0;
  if (s < 0.5) return std::asin(std::min(s, 1.0));
  return std::acos(smallest);
}

void write_tensor(const Tensor3& t, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "tensor serialization assumes a little-endian host");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  nlohmann::json header = {{"dims", {t.dim(1), t.dim(2), t.dim(3)}},
                           {"layout", "slice-major"},
                           {"dtype", "float64-le"}};
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  if (!os) throw Error("write failed for " + path.string());
}

Tensor3 read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad tensor header in " + path.string() + ": " + e.what());
  }
  if (header.value("layout", "") != "slice-major" || header.value("dtype", "") != "float64-le")
    throw Error("unsupported tensor layout in " + path.string());
  const auto d = header.at("dims").get<std::array<Eigen::Index, 3>>();
  Tensor3 t(d[0], d[1], d[2]);
  is.read(reinterpret_cast<char*>(t.data().data()),
          static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  if (is.gcount() != static_cast<std::streamsize>(t.data().size() * sizeof(double)))
    throw Error("truncated tensor payload in " + path.string());
  return t;
}

}  // namespace voltensor
