#include "helpers.hpp"
#include "voltensor/baselines.hpp"

#include <doctest.h>

using namespace voltensor;

namespace {

VolTensor stack(const std::vector<Matrix>& slices) { return VolTensor::from_slices(slices); }

}  // namespace

TEST_CASE("last-day PRVM") {
  Rng rng(1);
  const Matrix a = th::random_spd(4, rng), b = th::random_spd(4, rng);
  CHECK(predict_prvm_last(stack({a})) == a);
  CHECK(predict_prvm_last(stack({b, b, a})) == a);
  CHECK(predict_prvm_last(stack({a, a, a})) == a);
  CHECK_THROWS_AS(predict_prvm_last(VolTensor(4, 4, 0)), Error);
}

TEST_CASE("single-day POET") {
  Rng rng(2);
  SUBCASE("full rank keeps the day") {
    const Matrix s = th::random_spd(5, rng);
    CHECK((predict_poet(s, 5, 0.0, ThresholdRule::Soft) - s).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("large threshold keeps low rank plus a diagonal") {
    const Matrix u = th::random_orthonormal(8, 2, rng);
    Vector d(8);
    for (int i = 0; i < 8; ++i) d(i) = 0.5 + 0.1 * i;
    const Matrix day = 50.0 * u * u.transpose() + Matrix(d.asDiagonal());
    const Matrix out = predict_poet(day, 2, 1e6, ThresholdRule::Hard);
    const Matrix low = spectral_truncate(day, 2);
    Matrix off = out - low;
    off.diagonal().setZero();
    CHECK(off.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.diagonal() - day.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(predict_poet(Matrix::Identity(3, 3), 4, 0.0, ThresholdRule::Soft), Error);
}

TEST_CASE("tensor POET without covariates") {
  Rng rng(3);
  const Matrix Q = th::random_orthonormal(10, 2, rng);
  std::vector<Matrix> days;
  const Matrix core = Vector::LinSpaced(2, 20.0, 10.0).asDiagonal();
  for (int l = 0; l < 30; ++l) days.push_back((1.0 + 0.5 * std::sin(l)) * Q * core * Q.transpose());
  BaselineSpec spec;
  spec.method = BaselineMethod::TPoet;
  spec.r1 = 2;
  const Matrix pred = predict_baseline(stack(days), spec);
  CHECK((pred - days.back()).norm() < 1e-8 * days.back().norm());
}

TEST_CASE("FIVAR") {
  Rng rng(4);
  const Matrix Q = th::random_orthonormal(6, 2, rng);
  const Matrix idio = 0.2 * Matrix::Identity(6, 6);
  BaselineSpec spec;
  spec.method = BaselineMethod::Fivar;
  spec.r1 = 2;
  spec.eigvec_window = 10;
  spec.param_window = 40;

  SUBCASE("constant eigenvalues") {
    Vector lam(2);
    lam << 9.0, 4.0;
    const Matrix day = Q * lam.asDiagonal() * Q.transpose() + idio;
    const FivarFit f = fit_fivar(stack(std::vector<Matrix>(40, day)), spec);
    CHECK(f.forecast(0) == doctest::Approx(9.2));
    CHECK(f.forecast(1) == doctest::Approx(4.2));
    const Matrix resid = day - spectral_truncate(day, 2);
    const Matrix expect = f.eigenvectors * f.forecast.asDiagonal() * f.eigenvectors.transpose() +
                          threshold_residual(resid, 0.0, ThresholdRule::Soft);
    CHECK((f.prediction - expect).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((f.eigenvectors.transpose() * f.eigenvectors - Matrix::Identity(2, 2)).norm() < 1e-12);
  }
  SUBCASE("random walk coefficients forecast the last eigenvalue") {
    std::vector<Matrix> days;
    for (int l = 0; l < 40; ++l) {
      Vector lam(2);
      lam << 9.0 + rng.normal(), 4.0 + 0.5 * rng.normal();
      days.push_back(Q * lam.asDiagonal() * Q.transpose() + idio);
    }
    spec.fixed_ar = std::make_pair(0.0, 1.0);
    const FivarFit f = fit_fivar(stack(days), spec);
    for (int k = 0; k < 2; ++k)
      CHECK(f.forecast(k) == doctest::Approx(f.eigenvalue_series(39, k)).epsilon(1e-12));
  }
  SUBCASE("HAR variant and guards") {
    std::vector<Matrix> days;
    for (int l = 0; l < 40; ++l) {
      Vector lam(2);
      lam << 9.0 + rng.normal(), 4.0 + 0.5 * rng.normal();
      days.push_back(Q * lam.asDiagonal() * Q.transpose() + idio);
    }
    spec.method = BaselineMethod::FivarH;
    const FivarFit f = fit_fivar(stack(days), spec);
    CHECK(f.coefficients[0].size() == 4);
    CHECK((f.forecast.array() >= 0.0).all());

    Warnings w;
    spec.param_window = 100;
    fit_fivar(stack(days), spec, &w);
    CHECK(w.contains("shrunk"));

    spec.method = BaselineMethod::Fivar;
    spec.eigvec_window = 41;
    CHECK_THROWS_AS(fit_fivar(stack(days), spec), Error);
    spec.eigvec_window = 10;
    spec.ar_lag = 0;
    CHECK_THROWS_AS(fit_fivar(stack(days), spec), Error);
    spec.ar_lag = 1;
    spec.method = BaselineMethod::FivarH;
    std::vector<Matrix> short_days(days.begin(), days.begin() + 24);
    CHECK_THROWS_AS(fit_fivar(stack(short_days), spec), Error);
  }
}

TEST_CASE("method names") {
  for (auto m : {BaselineMethod::Prvm, BaselineMethod::Poet, BaselineMethod::TPoet,
                 BaselineMethod::Fivar, BaselineMethod::FivarH})
    CHECK(baseline_from_name(baseline_name(m)) == m);
  CHECK_THROWS_AS(baseline_from_name("GARCH"), Error);
}
