#include "helpers.hpp"
#include "voltensor/portfolio.hpp"

#include <doctest.h>

#include <cmath>

using namespace voltensor;

namespace {

// Brute-force minimum of w' S w over the probability simplex (p = 3), by a
// grid search refined three times around the incumbent.
double simplex_oracle(const Matrix& s) {
  double best = std::numeric_limits<double>::infinity();
  double b0 = 1.0 / 3, b1 = 1.0 / 3;
  double lo0 = 0.0, hi0 = 1.0, lo1 = 0.0, hi1 = 1.0;
  for (int level = 0; level < 4; ++level) {
    const int n = 400;
    const double h0 = (hi0 - lo0) / n, h1 = (hi1 - lo1) / n;
    double n0 = b0, n1 = b1;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j) {
        const double x = lo0 + i * h0, y = lo1 + j * h1;
        if (x < 0 || y < 0 || x + y > 1) continue;
        Vector w(3);
        w << x, y, 1 - x - y;
        const double v = w.dot(s * w);
        if (v < best) {
          best = v;
          n0 = x;
          n1 = y;
        }
      }
    b0 = n0;
    b1 = n1;
    lo0 = std::max(0.0, b0 - 4 * h0);
    hi0 = std::min(1.0, b0 + 4 * h0);
    lo1 = std::max(0.0, b1 - 4 * h1);
    hi1 = std::min(1.0, b1 + 4 * h1);
  }
  return best;
}

// Transfers between pairs of assets keep the budget; any that stays inside
// the l1 ball must not lower the objective.
void check_local_optimality(const Matrix& s, const Vector& w, double c) {
  const double base = w.dot(s * w);
  const Eigen::Index p = w.size();
  for (double eps : {1e-3, 1e-5}) {
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < p; ++j) {
        if (i == j) continue;
        Vector v = w;
        v(i) += eps;
        v(j) -= eps;
        if (v.cwiseAbs().sum() > c) continue;
        CHECK(v.dot(s * v) >= base - 1e-12 * std::abs(base));
      }
  }
}

IntradayPanel panel_from(const Matrix& log_prices, int day) {
  IntradayPanel p;
  p.day_index = day;
  p.log_prices = log_prices;
  for (Eigen::Index t = 0; t < log_prices.rows(); ++t) p.times.push_back(double(t));
  return p;
}

}  // namespace

TEST_CASE("closed forms") {
  for (double c : {1.0, 1.5, 3.0}) {
    const PortfolioSolution s = solve_min_variance({Matrix::Identity(2, 2), c});
    CHECK(std::abs(s.weights(0) - 0.5) < 1e-12);
    CHECK(std::abs(s.weights(1) - 0.5) < 1e-12);
  }
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 1.0, 4.0;
  const PortfolioSolution s = solve_min_variance({d, 3.0});
  CHECK(std::abs(s.weights(0) - 0.8) < 1e-6);
  CHECK(std::abs(s.weights(1) - 0.2) < 1e-6);
  CHECK_FALSE(s.l1_active);

  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix sig = th::random_spd(8, rng);
    const Vector x = sig.llt().solve(Vector::Ones(8));
    const Vector oracle = x / x.sum();
    const PortfolioSolution sol = solve_min_variance({sig, oracle.cwiseAbs().sum() + 1.0});
    CHECK((sol.weights - oracle).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("long-only matches a simplex search") {
  Rng rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    Matrix sig = th::random_spd(3, rng, 0.05);
    sig(0, 1) = sig(1, 0) = 0.9 * std::sqrt(sig(0, 0) * sig(1, 1));  // pushes toward a short
    if (!is_positive_definite(sig)) continue;
    const PortfolioSolution sol = solve_min_variance({sig, 1.0});
    CHECK(sol.weights.minCoeff() >= -1e-12);
    CHECK(std::abs(sol.weights.sum() - 1.0) < 1e-10);
    const double oracle = simplex_oracle(sig);
    CHECK(sol.objective - oracle < 1e-6);
    CHECK(sol.objective - oracle > -1e-9);
  }
}

TEST_CASE("KKT conditions on random instances") {
  Rng rng(3);
  int solved = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int p = 2 + static_cast<int>(rng.uniform() * 49);
    // Correlated assets make the gross exposure constraint bind.
    const Matrix f = rng.normal_matrix(p, 2);
    const Matrix sig = f * f.transpose() + Matrix(Vector::NullaryExpr(p, [&](Eigen::Index) {
                                                   return 0.2 + rng.uniform();
                                                 }).asDiagonal());
    const double c = rep % 4 == 0 ? 1.0 : 1.0 + 2.0 * rng.uniform();
    const PortfolioSolution sol = solve_min_variance({sig, c});
    CHECK(sol.kkt_residual < 1e-8);
    CHECK(std::abs(sol.weights.sum() - 1.0) < 1e-10);
    CHECK(sol.weights.cwiseAbs().sum() <= c + 1e-8);
    if (c == 1.0) CHECK(sol.weights.minCoeff() >= -1e-12);
    const Matrix s = sig / (sig.trace() / p);
    CHECK(min_variance_kkt_residual(s, sol.weights, c) == doctest::Approx(sol.kkt_residual));
    check_local_optimality(sig, sol.weights, c);
    ++solved;
  }
  CHECK(solved == 100);
}

TEST_CASE("structure of the solution path") {
  Rng rng(4);
  const Matrix f = rng.normal_matrix(12, 2);
  const Matrix sig = f * f.transpose() + 0.3 * Matrix::Identity(12, 12);
  double prev = std::numeric_limits<double>::infinity();
  for (double c : {1.0, 1.5, 2.0, 2.5, 3.0}) {
    const PortfolioSolution s = solve_min_variance({sig, c});
    CHECK(s.objective <= prev + 1e-12);
    prev = s.objective;
    const PortfolioSolution scaled = solve_min_variance({250.0 * sig, c});
    CHECK((scaled.weights - s.weights).cwiseAbs().maxCoeff() < 1e-7);
  }
  const PortfolioSolution one = solve_min_variance({sig, 1.0});
  CHECK(one.weights.minCoeff() >= -1e-12);
}

TEST_CASE("solver guards") {
  CHECK_THROWS_AS(solve_min_variance({Matrix::Identity(2, 2), 0.9}), Error);
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  CHECK_THROWS_WITH_AS(solve_min_variance({bad, 2.0}), doctest::Contains("positive definite"),
                       Error);
  CHECK_THROWS_AS(solve_min_variance({Matrix::Zero(2, 3), 2.0}), Error);
  const Matrix repaired = portfolio_pd_repair(bad, 1e-2);
  CHECK(is_positive_definite(repaired));
  CHECK(repaired(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("realized portfolio variance") {
  Matrix lp(6, 2);
  lp << 0, 0, 1, 0, 1, 1, 2, 1, 2, 3, 4, 3;
  const IntradayPanel panel = panel_from(lp, 0);
  Vector w(2);
  w << 0.5, 0.5;
  // Portfolio log value 0, .5, 1, 1.5, 2.5, 3.5.
  CHECK(realized_portfolio_variance(panel, w, 1) == doctest::Approx(3 * 0.25 + 1.0 + 1.0));
  // Steps of 2 with a trailing partial interval: 0 -> 1 -> 2.5 -> 3.5.
  CHECK(realized_portfolio_variance(panel, w, 2) == doctest::Approx(1.0 + 2.25 + 1.0));
  CHECK(realized_portfolio_variance(panel, w, 10) == doctest::Approx(3.5 * 3.5));
  CHECK_THROWS_AS(realized_portfolio_variance(panel, w, 0), Error);
  CHECK_THROWS_AS(realized_portfolio_variance(panel, Vector::Ones(3), 1), Error);
}

TEST_CASE("backtest") {
  Rng rng(5);
  SUBCASE("single asset") {
    Matrix lp(11, 1);
    for (int t = 0; t < 11; ++t) lp(t, 0) = 0.1 * rng.normal();
    const std::vector<IntradayPanel> days{panel_from(lp, 0), panel_from(lp, 1)};
    const std::vector<BacktestMethod> methods{
        {"a", [](int) { return Matrix::Constant(1, 1, 2.0); }},
        {"b", [](int) { return Matrix::Constant(1, 1, 9.0); }}};
    BacktestOptions o;
    o.interval_steps = 2;
    o.keep_weights = true;
    const BacktestResult r = backtest(methods, days, o);
    REQUIRE(r.rows.size() == 10);
    for (const auto& row : r.rows) {
      CHECK(row.avg_risk == r.rows[0].avg_risk);
      CHECK(row.days == 2);
    }
    for (const auto& wr : r.weights) CHECK(wr.weights(0) == doctest::Approx(1.0));
    // Two identical days.
    CHECK(r.daily_risk[0][0][0] == r.daily_risk[0][0][1]);
  }
  SUBCASE("failing prediction skips the day for every method") {
    Matrix lp = rng.normal_matrix(21, 3);
    const std::vector<IntradayPanel> days{panel_from(lp, 4), panel_from(lp, 5)};
    const std::vector<BacktestMethod> methods{
        {"ok", [](int) { return Matrix::Identity(3, 3); }},
        {"flaky", [](int day) {
           if (day == 5) throw Error("no forecast");
           return Matrix::Identity(3, 3);
         }}};
    const BacktestResult r = backtest(methods, days);
    REQUIRE(r.skipped.size() == 1);
    CHECK(r.skipped[0].find("day 5") != std::string::npos);
    for (const auto& row : r.rows) CHECK(row.days == 1);
  }
  SUBCASE("singular predictions are repaired") {
    Matrix lp = rng.normal_matrix(21, 3);
    const std::vector<IntradayPanel> days{panel_from(lp, 0)};
    const std::vector<BacktestMethod> methods{
        {"rank1", [](int) { return Matrix::Ones(3, 3); }}};
    const BacktestResult r = backtest(methods, days);
    CHECK(r.skipped.empty());
    CHECK(std::isfinite(r.rows[0].avg_risk));
  }
}
