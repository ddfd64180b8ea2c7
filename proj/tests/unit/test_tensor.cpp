#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

using namespace voltensor;

TEST_CASE("mode-1 unfolding of the 2x2x2 counting tensor") {
  Tensor3 t(2, 2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) t(i, j, k) = (i + 1) + 2 * j + 4 * k;
  Matrix expect(2, 4);
  expect << 1, 3, 5, 7, 2, 4, 6, 8;
  CHECK(matricize(t, 1) == expect);
}

TEST_CASE("column conventions of modes 2 and 3") {
  Rng rng(11);
  const Tensor3 t = th::random_tensor(3, 4, 5, rng);
  const Matrix m2 = matricize(t, 2);
  const Matrix m3 = matricize(t, 3);
  REQUIRE(m2.rows() == 4);
  REQUIRE(m2.cols() == 15);
  REQUIRE(m3.rows() == 5);
  REQUIRE(m3.cols() == 12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int l = 0; l < 5; ++l) {
        CHECK(m2(j, i + l * 3) == t(i, j, l));
        CHECK(m3(l, i + j * 3) == t(i, j, l));
      }
}

TEST_CASE("fold inverts matricize exactly") {
  Rng rng(3);
  for (int rep = 0; rep < 25; ++rep) {
    const Tensor3 t = th::random_tensor(1 + rep % 4, 2 + rep % 3, 1 + rep % 5, rng);
    for (int mode = 1; mode <= 3; ++mode) CHECK(fold(matricize(t, mode), mode, t.dims()) == t);
  }
}

TEST_CASE("matricization preserves the Frobenius norm") {
  Rng rng(5);
  for (int rep = 0; rep < 25; ++rep) {
    const Tensor3 t = th::random_tensor(3, 3, 4, rng);
    const double f = t.frobenius_norm();
    CHECK(matricize(t, 1).norm() == doctest::Approx(f).epsilon(1e-14));
    CHECK(matricize(t, 2).norm() == doctest::Approx(f).epsilon(1e-14));
    CHECK(matricize(t, 3).norm() == doctest::Approx(f).epsilon(1e-14));
  }
}

TEST_CASE("mode products") {
  Rng rng(7);
  SUBCASE("identity") {
    const Tensor3 t = th::random_tensor(3, 4, 2, rng);
    for (int mode = 1; mode <= 3; ++mode) {
      const Matrix I = Matrix::Identity(t.dim(mode), t.dim(mode));
      CHECK(th::max_abs_diff(mode_product(t, I, mode), t) < 1e-15);
    }
  }
  SUBCASE("composition (t x A) x B = t x (BA)") {
    for (int rep = 0; rep < 25; ++rep) {
      const Tensor3 t = th::random_tensor(3, 3, 2, rng);
      for (int mode = 1; mode <= 3; ++mode) {
        const Matrix A = rng.normal_matrix(4, t.dim(mode));
        const Matrix B = rng.normal_matrix(2, 4);
        CHECK(th::max_abs_diff(mode_product(mode_product(t, A, mode), B, mode),
                               mode_product(t, B * A, mode)) < 1e-12);
      }
    }
  }
  SUBCASE("scalar") {
    Tensor3 t(1, 1, 1, 1.75);
    const Tensor3 r = mode_product(t, Matrix::Constant(1, 1, 2.0), 1);
    CHECK(r(0, 0, 0) == 3.5);
  }
  SUBCASE("matricized definition") {
    const Tensor3 t = th::random_tensor(2, 3, 4, rng);
    const Matrix A = rng.normal_matrix(5, 3);
    const Tensor3 r = mode_product(t, A, 2);
    CHECK(r.dims() == std::array<Eigen::Index, 3>{2, 5, 4});
    CHECK((matricize(r, 2) - A * matricize(t, 2)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("dimension mismatch") {
    const Tensor3 t = th::random_tensor(2, 3, 4, rng);
    CHECK_THROWS_AS(mode_product(t, Matrix::Identity(2, 2), 2), Error);
    CHECK_THROWS_AS(mode_product(t, Matrix::Identity(2, 2), 4), Error);
  }
}

TEST_CASE("Tucker reconstruction") {
  Rng rng(13);
  SUBCASE("single unit entry") {
    TuckerFactors f{Tensor3(1, 1, 1, 1.0), Matrix::Zero(4, 1), Matrix::Zero(3, 1)};
    f.loading_q(0, 0) = 1.0;
    f.loading_v(0, 0) = 1.0;
    const VolTensor y = tucker_reconstruct(f);
    CHECK(y.dims() == std::array<Eigen::Index, 3>{4, 4, 3});
    CHECK(y(0, 0, 0) == 1.0);
    CHECK(y.frobenius_norm() == 1.0);
  }
  SUBCASE("orthonormal loadings are isometries") {
    for (int rep = 0; rep < 25; ++rep) {
      TuckerFactors f{th::random_tensor(3, 3, 2, rng), th::random_orthonormal(10, 3, rng),
                      th::random_orthonormal(7, 2, rng)};
      CHECK(tucker_reconstruct(f).frobenius_norm() ==
            doctest::Approx(f.core.frobenius_norm()).epsilon(1e-12));
    }
  }
  SUBCASE("exact low-rank input is recovered from its own singular vectors") {
    for (int rep = 0; rep < 25; ++rep) {
      const Matrix Q = th::random_orthonormal(12, 3, rng);
      const Matrix V = th::random_orthonormal(9, 2, rng);
      const VolTensor y = tucker_reconstruct({th::random_tensor(3, 3, 2, rng), Q, V});
      const Matrix Qh = leading_left_singular_vectors(matricize(y, 1), 3);
      const Matrix Vh = leading_left_singular_vectors(matricize(y, 3), 2);
      const Tensor3 core = mode_product(mode_product(mode_product(y, Qh.transpose(), 1),
                                                     Qh.transpose(), 2),
                                        Vh.transpose(), 3);
      CHECK(th::max_abs_diff(tucker_reconstruct({core, Qh, Vh}), y) < 1e-8);
    }
  }
}

TEST_CASE("leading left singular vectors") {
  SUBCASE("diagonal") {
    Matrix d = Vector::LinSpaced(3, 3.0, 1.0).asDiagonal();
    const Matrix u = leading_left_singular_vectors(d, 2);
    CHECK((u - Matrix::Identity(3, 2)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("rank one with sign convention") {
    Vector u(4), v(3);
    u << 0.1, -2.0, 0.5, 1.0;
    v << 1.0, 2.0, -1.0;
    const Matrix got = leading_left_singular_vectors(-u * v.transpose(), 1);
    // Largest-magnitude entry positive: -u / |u|.
    CHECK((got.col(0) - (-u.normalized())).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("random 10x40 against a full SVD") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
      const Matrix m = rng.normal_matrix(10, 40);
      Eigen::JacobiSVD<Matrix> full(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
      const Matrix oracle = full.matrixU().leftCols(3);
      const Matrix got = leading_left_singular_vectors(m, 3);
      CHECK((got.transpose() * got - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(max_principal_angle(got, oracle) < 1e-8);
    }
  }
  SUBCASE("guards and diagnostics") {
    CHECK_THROWS_AS(leading_left_singular_vectors(Matrix::Identity(3, 3), 4), Error);
    Warnings w;
    leading_left_singular_vectors(Matrix::Identity(4, 4), 2, &w);
    CHECK_FALSE(w.empty());
  }
}

TEST_CASE("principal angles") {
  Rng rng(19);
  const Matrix a = th::random_orthonormal(8, 2, rng);
  CHECK(max_principal_angle(a, a) < 1e-7);
  // Same span, rotated basis.
  const double c = std::cos(0.3), s = std::sin(0.3);
  Matrix rot(2, 2);
  rot << c, -s, s, c;
  CHECK(max_principal_angle(a, a * rot) < 1e-7);
  Matrix e1 = Matrix::Zero(3, 1), e2 = Matrix::Zero(3, 1);
  e1(0, 0) = 1.0;
  e2(1, 0) = 1.0;
  CHECK(max_principal_angle(e1, e2) == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("slices, validation and serialization") {
  Rng rng(23);
  std::vector<Matrix> slices;
  for (int l = 0; l < 3; ++l) slices.push_back(th::random_spd(4, rng));
  const VolTensor t = VolTensor::from_slices(slices);
  for (int l = 0; l < 3; ++l) CHECK(Matrix(t.slice(l)) == slices[l]);
  CHECK_NOTHROW(validate_vol_tensor(t));

  VolTensor bad = t;
  bad(0, 1, 2) += 1.0;
  CHECK_THROWS_AS(validate_vol_tensor(bad), Error);
  bad = t;
  bad(2, 2, 0) = std::nan("");
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(validate_vol_tensor(bad), Error);

  const auto dir = th::scratch_dir("tensor");
  write_tensor(t, dir / "t.bin");
  CHECK(read_tensor(dir / "t.bin") == t);

  // Header line followed by raw little-endian doubles.
  const std::string bytes = th::slurp(dir / "t.bin");
  const auto nl = bytes.find('\n');
  REQUIRE(nl != std::string::npos);
  CHECK(bytes.substr(0, nl).find("\"dims\":[4,4,3]") != std::string::npos);
  CHECK(bytes.size() - nl - 1 == 4 * 4 * 3 * sizeof(double));
  double first = 0.0;
  std::memcpy(&first, bytes.data() + nl + 1, sizeof(double));
  CHECK(first == t(0, 0, 0));

  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 8);
  CHECK_THROWS_AS(read_tensor(dir / "short.bin"), Error);
  CHECK_THROWS_AS(read_tensor(dir / "missing.bin"), Error);
}
