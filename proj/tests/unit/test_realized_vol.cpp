#include "helpers.hpp"
#include "voltensor/realized_vol.hpp"

#include <doctest.h>

#include <cmath>
#include <optional>

using namespace voltensor;

namespace {

double g(double x) { return std::min(x, 1.0 - x); }

// Direct transcription of the estimator over price levels Y(t_0..t_m), with
// optional truncation at u_i = c * sd_i * m^{-exponent} (sd of m^{1/4} Ybar_i).
Matrix naive_prvm(const Matrix& Y, int K, std::optional<double> c = std::nullopt,
                  double exponent = 0.235) {
  const int m = static_cast<int>(Y.rows()) - 1;
  const int p = static_cast<int>(Y.cols());
  const auto dY = [&](int i, int t) { return Y(t, i) - Y(t - 1, i); };
  const int n = m - K + 1;
  Matrix ybar(n + 1, p);  // 1-based in k
  for (int k = 1; k <= n; ++k)
    for (int i = 0; i < p; ++i) {
      double s = 0.0;
      for (int q = 1; q <= K - 1; ++q) s += g(double(q) / K) * dY(i, k + q);
      ybar(k, i) = s;
    }
  Vector u = Vector::Constant(p, std::numeric_limits<double>::infinity());
  if (c) {
    for (int i = 0; i < p; ++i) {
      const Vector z = std::pow(double(m), 0.25) * ybar.col(i).tail(n);
      const double mean = z.mean();
      const double sd = std::sqrt((z.array() - mean).square().sum() / (n - 1));
      u(i) = *c * sd * std::pow(double(m), -exponent);
    }
  }
  Matrix out = Matrix::Zero(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      for (int k = 1; k <= n; ++k) {
        if (std::abs(ybar(k, i)) > u(i) || std::abs(ybar(k, j)) > u(j)) continue;
        double hat = 0.0;
        for (int q = 1; q <= K; ++q) {
          const double w = g(double(q) / K) - g(double(q - 1) / K);
          hat += w * w * dY(i, k + q - 1) * dY(j, k + q - 1);
        }
        out(i, j) += ybar(k, i) * ybar(k, j) - 0.5 * hat;
      }
  return out / (K / 12.0);
}

IntradayPanel make_panel(const Matrix& log_prices, int day = 0) {
  IntradayPanel p;
  p.day_index = day;
  p.log_prices = log_prices;
  for (Eigen::Index t = 0; t < log_prices.rows(); ++t) p.times.push_back(double(t));
  return p;
}

// Brownian log prices with per-step covariance chol * chol^T / m.
Matrix brownian(int m, const Matrix& chol, Rng& rng) {
  const Eigen::Index p = chol.rows();
  Matrix Y = Matrix::Zero(m + 1, p);
  const double s = 1.0 / std::sqrt(double(m));
  for (int t = 1; t <= m; ++t) {
    Vector z(p);
    for (Eigen::Index i = 0; i < p; ++i) z(i) = rng.normal();
    Y.row(t) = Y.row(t - 1) + s * (chol * z).transpose();
  }
  return Y;
}

}  // namespace

TEST_CASE("previous-tick synchronization") {
  SUBCASE("ticks on the grid") {
    std::vector<std::vector<Tick>> ticks{{{0, 1.0}, {1, 2.0}, {2, 3.0}}, {{0, -1.0}, {1, 0.5}, {2, 0.0}}};
    const std::vector<double> grid{0, 1, 2};
    const IntradayPanel p = previous_tick_sync(ticks, grid);
    Matrix expect(3, 2);
    expect << 1.0, -1.0, 2.0, 0.5, 3.0, 0.0;
    CHECK(p.log_prices == expect);
  }
  SUBCASE("single tick at the start") {
    std::vector<std::vector<Tick>> ticks{{{0.0, 4.2}}};
    std::vector<double> grid;
    for (int k = 0; k < 10; ++k) grid.push_back(k * 0.1);
    const IntradayPanel p = previous_tick_sync(ticks, grid);
    CHECK((p.log_prices.array() == 4.2).all());
  }
  SUBCASE("definition, unsorted input") {
    std::vector<std::vector<Tick>> ticks{{{0.9, 3.0}, {0.0, 1.0}, {0.25, 2.0}}};
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const IntradayPanel p = previous_tick_sync(ticks, grid, 7);
    CHECK(p.log_prices(0, 0) == 1.0);
    CHECK(p.log_prices(1, 0) == 2.0);
    CHECK(p.log_prices(2, 0) == 3.0);
    CHECK(p.day_index == 7);
  }
  SUBCASE("asset without an early tick is named") {
    std::vector<std::vector<Tick>> ticks{{{0.0, 1.0}}, {{0.3, 1.0}}};
    const std::vector<double> grid{0.0, 0.5};
    try {
      previous_tick_sync(ticks, grid);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("asset 1") != std::string::npos);
    }
  }
}

TEST_CASE("phi matches quadrature") {
  // Composite Simpson on each linear piece of g^2 is exact.
  const int n = 2000;
  double s = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double x = double(k) / n;
    const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    s += w * g(x) * g(x);
  }
  s /= 3.0 * n;
  CHECK(std::abs(preaveraging_phi(PreaveragingWeight::Triangular) - s) < 1e-12);
  CHECK(preaveraging_weight(PreaveragingWeight::Triangular, 0.25) == 0.25);
  CHECK(preaveraging_weight(PreaveragingWeight::Triangular, 0.75) == 0.25);
}

TEST_CASE("prvm agrees with a direct evaluation of the estimator") {
  Rng rng(31);
  Matrix chol(3, 3);
  chol << 1.0, 0.0, 0.0, 0.4, 0.8, 0.0, -0.3, 0.2, 0.6;
  for (int rep = 0; rep < 5; ++rep) {
    Matrix Y = brownian(400, chol, rng);
    for (Eigen::Index t = 0; t < Y.rows(); ++t)
      for (Eigen::Index i = 0; i < 3; ++i) Y(t, i) += 0.01 * rng.normal();
    const IntradayPanel panel = make_panel(Y);

    PrvmConfig plain;
    plain.truncate = false;
    const Matrix got = prvm(panel, plain);
    const Matrix ref = naive_prvm(Y, 20);
    CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + ref.cwiseAbs().maxCoeff()));

    PrvmConfig trunc;
    trunc.scale = TruncationScale::SampleSd;
    trunc.trunc_multiplier = 2.0;  // tight enough to drop windows
    const Matrix got_t = prvm(panel, trunc);
    const Matrix ref_t = naive_prvm(Y, 20, 2.0);
    CHECK((got_t - ref_t).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + ref_t.cwiseAbs().maxCoeff()));
    CHECK((got_t - got).cwiseAbs().maxCoeff() > 1e-6);

    PrvmConfig loose = trunc;
    loose.trunc_multiplier = 1e300;
    CHECK(prvm(panel, loose) == got);
  }
}

TEST_CASE("prvm edge cases") {
  SUBCASE("constant prices") {
    const Matrix Y = Matrix::Constant(101, 3, 4.0);
    CHECK(prvm(make_panel(Y)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("window too large") {
    PrvmConfig cfg;
    cfg.window = 10;
    CHECK_THROWS_AS(prvm(make_panel(Matrix::Zero(10, 2)), cfg), Error);
    cfg.window = 1;
    CHECK_THROWS_AS(prvm(make_panel(Matrix::Zero(50, 2)), cfg), Error);
  }
  SUBCASE("exactly symmetric") {
    Rng rng(1);
    const Matrix Y = brownian(300, th::random_spd(5, rng).llt().matrixL(), rng);
    const Matrix out = prvm(make_panel(Y));
    CHECK(out == out.transpose());
  }
  SUBCASE("bad panel") {
    IntradayPanel p = make_panel(Matrix::Zero(30, 2));
    p.times[5] = p.times[4];
    CHECK_THROWS_AS(prvm(p), Error);
  }
}

TEST_CASE("prvm recovers unit integrated variance") {
  Rng rng(2024);
  const Matrix chol = Matrix::Identity(2, 2);
  double sum = 0.0;
  const int days = 200;
  for (int d = 0; d < days; ++d) {
    const Matrix est = prvm(make_panel(brownian(10000, chol, rng)));
    sum += est(0, 0) + est(1, 1);
  }
  CHECK(std::abs(sum / (2 * days) - 1.0) < 0.10);
}

TEST_CASE("noise correction removes the microstructure bias") {
  Rng rng(77);
  const int m = 10000;
  double rv = 0.0, pr = 0.0;
  for (int d = 0; d < 20; ++d) {
    Matrix Y = brownian(m, Matrix::Identity(1, 1), rng);
    for (Eigen::Index t = 0; t <= m; ++t) Y(t, 0) += 0.01 * rng.normal();
    const IntradayPanel panel = make_panel(Y);
    rv += realized_covariance(panel)(0, 0);
    pr += prvm(panel)(0, 0);
  }
  // Plain RV picks up about 2 m 0.01^2 = 2.
  CHECK(rv / 20 > 2.5);
  CHECK(std::abs(pr / 20 - 1.0) < 0.15);
}

TEST_CASE("a large jump is truncated") {
  Rng rng(5);
  const int m = 10000;
  for (int rep = 0; rep < 10; ++rep) {
    Matrix Y = brownian(m, Matrix::Identity(2, 2), rng);
    for (Eigen::Index t = 0; t <= m; ++t)
      for (int i = 0; i < 2; ++i) Y(t, i) += 0.001 * rng.normal();
    Matrix J = Y;
    J.bottomRows(m + 1 - 6000).col(0).array() += 1.5;
    const IntradayPanel clean = make_panel(Y), jumped = make_panel(J);
    const double base = prvm(clean)(0, 0);
    CHECK(std::abs(prvm(jumped)(0, 0) - base) / base < 0.15);
    const double rv0 = realized_covariance(clean)(0, 0);
    CHECK((realized_covariance(jumped)(0, 0) - rv0) / rv0 > 1.0);
    PrvmConfig off;
    off.truncate = false;
    CHECK((prvm(jumped, off)(0, 0) - base) / base > 1.0);
  }
}

TEST_CASE("realized covariance and subsampling") {
  Matrix Y(4, 2);
  Y << 0, 0, 1, 2, 1, 1, 3, 1;
  const Matrix rc = realized_covariance(make_panel(Y));
  Matrix expect(2, 2);
  expect << 1 + 0 + 4, 2 + 0 + 0, 2, 4 + 1 + 0;
  CHECK(rc == expect);

  const IntradayPanel s = subsample(make_panel(Y), 2);
  CHECK(s.log_prices.rows() == 2);
  CHECK(s.log_prices.row(1) == Y.row(2));
  CHECK(s.times == std::vector<double>{0, 2});
  CHECK_THROWS_AS(subsample(make_panel(Y), 0), Error);
}

TEST_CASE("build_tensor") {
  Rng rng(9);
  const IntradayPanel a = make_panel(brownian(400, Matrix::Identity(3, 3), rng), 0);
  const IntradayPanel b = make_panel(brownian(400, Matrix::Identity(3, 3), rng), 1);
  {
    const std::vector<IntradayPanel> one{a};
    const VolTensor t = build_tensor(one);
    CHECK(t.dim(3) == 1);
    CHECK(Matrix(t.slice(0)) == prvm(a));
  }
  {
    const std::vector<IntradayPanel> same{a, a, a};
    const VolTensor t = build_tensor(same);
    CHECK(Matrix(t.slice(0)) == Matrix(t.slice(2)));
  }
  {
    const std::vector<IntradayPanel> two{a, b};
    CHECK(Matrix(build_tensor(two).slice(1)) == prvm(b));
  }
  {
    const IntradayPanel c = make_panel(brownian(400, Matrix::Identity(2, 2), rng), 2);
    const std::vector<IntradayPanel> mixed{a, c};
    CHECK_THROWS_AS(build_tensor(mixed), Error);
  }
}

TEST_CASE("panel and tick CSV") {
  const auto dir = th::scratch_dir("realized_vol");
  Rng rng(4);
  const IntradayPanel p = make_panel(brownian(20, Matrix::Identity(3, 3), rng), 3);
  write_panel_csv(p, dir / "p.csv");
  const IntradayPanel q = read_panel_csv(dir / "p.csv", 3);
  CHECK(q.times == p.times);
  CHECK(q.log_prices == p.log_prices);

  std::ofstream(dir / "bad.csv") << "t,asset_1\n0,1.0\n1,abc\n";
  CHECK_THROWS_AS(read_panel_csv(dir / "bad.csv"), Error);

  std::ofstream(dir / "ticks.csv") << "asset,time,price\n"
                                     "A,86400,100\nB,86400,50\nA,86430,101\nB,86500,51\n"
                                     "A,86520,102\nB,86520,52\n";
  const auto ticks = read_tick_csv(dir / "ticks.csv");
  CHECK(ticks.size() == 6);
  const auto panels = panels_from_ticks(ticks, {"A", "B"}, 60.0);
  REQUIRE(panels.size() == 1);
  REQUIRE(panels[0].log_prices.rows() == 3);
  CHECK(panels[0].log_prices(1, 0) == doctest::Approx(std::log(101.0)));
  CHECK(panels[0].log_prices(1, 1) == doctest::Approx(std::log(50.0)));
  CHECK(panels[0].log_prices(2, 1) == doctest::Approx(std::log(52.0)));

  std::ofstream(dir / "neg.csv") << "asset,time,price\nA,0,-1\n";
  CHECK_THROWS_AS(read_tick_csv(dir / "neg.csv"), Error);
  Warnings w;
  CHECK(panels_from_ticks(ticks, {"A", "C"}, 60.0, &w).empty());
  CHECK(w.contains("asset C has no ticks"));
  CHECK_THROWS_AS(panels_from_ticks(ticks, {"A", "B"}, 0.0), Error);
}
