#include "voltensor/portfolio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

namespace voltensor {

namespace {

constexpr double kSupportTol = 1e-12;

struct Candidate {
  Vector w;
  double residual = std::numeric_limits<double>::infinity();
  bool active = false;
};

// Exact solve of the equality-constrained problem on a fixed signed support.
std::optional<Vector> solve_on_support(const Matrix& s, const std::vector<Eigen::Index>& support,
                                       const std::vector<double>& signs, bool l1_row, double c) {
  const auto k = static_cast<Eigen::Index>(support.size());
  if (k == 0) return std::nullopt;
  const Eigen::Index n = k + 1 + (l1_row ? 1 : 0);
  Matrix kkt = Matrix::Zero(n, n);
  Vector rhs = Vector::Zero(n);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) kkt(a, b) = 2.0 * s(support[a], support[b]);
    kkt(a, k) = kkt(k, a) = 1.0;
    if (l1_row) kkt(a, k + 1) = kkt(k + 1, a) = signs[static_cast<std::size_t>(a)];
  }
  rhs(k) = 1.0;
  if (l1_row) rhs(k + 1) = c;
  Eigen::FullPivLU<Matrix> lu(kkt);
  if (!lu.isInvertible()) return std::nullopt;
  const Vector sol = lu.solve(rhs);
  Vector w = Vector::Zero(s.rows());
  for (Eigen::Index a = 0; a < k; ++a) {
    const double v = sol(a);
    if (v * signs[static_cast<std::size_t>(a)] <= 0.0) return std::nullopt;
    w(support[a]) = v;
  }
  return w;
}

Candidate polish(const Matrix& s, const Vector& approx, double c) {
  Candidate best;
  const double scale = std::max(approx.cwiseAbs().maxCoeff(), 1e-300);
  for (double rel : {1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9}) {
    std::vector<Eigen::Index> support;
    std::vector<double> signs;
    bool has_short = false;
    for (Eigen::Index i = 0; i < approx.size(); ++i) {
      if (std::abs(approx(i)) > rel * scale) {
        support.push_back(i);
        signs.push_back(approx(i) > 0 ? 1.0 : -1.0);
        has_short = has_short || approx(i) < 0;
      }
    }
    for (bool l1_row : {true, false}) {
      if (l1_row && !has_short) continue;  // same row as the budget constraint
      auto w = solve_on_support(s, support, signs, l1_row, c);
      if (!w) continue;
      const double r = min_variance_kkt_residual(s, *w, c);
      if (r < best.residual) {
        best.w = *w;
        best.residual = r;
        best.active = l1_row;
      }
    }
  }
  return best;
}

}  // namespace

double min_variance_kkt_residual(const Matrix& sigma, const Vector& w, double c) {
  const Vector g = 2.0 * (sigma * w);
  const double l1 = w.cwiseAbs().sum();
  double res = std::max(std::abs(w.sum() - 1.0), std::max(0.0, l1 - c));

  std::vector<Eigen::Index> pos, neg, zero;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) > kSupportTol) pos.push_back(i);
    else if (w(i) < -kSupportTol) neg.push_back(i);
    else zero.push_back(i);
  }
  auto range_of = [&](const std::vector<Eigen::Index>& idx) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto i : idx) {
      lo = std::min(lo, g(i));
      hi = std::max(hi, g(i));
    }
    return std::pair{lo, hi};
  };

  if (c - l1 > 1e-9) {
    // Bound slack: mu = 0 and g + nu 1 = 0 everywhere.
    auto [lo, hi] = range_of(pos);
    for (auto* set : {&neg, &zero}) {
      auto [l2, h2] = range_of(*set);
      lo = std::min(lo, l2);
      hi = std::max(hi, h2);
    }
    return std::max(res, 0.5 * (hi - lo));
  }

  if (neg.empty()) {
    // g_i + kappa = 0 on the support, g_i + kappa >= 0 off it (kappa = nu + mu).
    auto [lo, hi] = range_of(pos);
    const double kappa = -0.5 * (lo + hi);
    res = std::max(res, 0.5 * (hi - lo));
    for (auto i : zero) res = std::max(res, -(g(i) + kappa));
    return res;
  }

  // g_i + nu + mu = 0 on longs, g_i + nu - mu = 0 on shorts, |g_i + nu| <= mu off support.
  double mean_pos = 0.0, mean_neg = 0.0;
  for (auto i : pos) mean_pos += g(i);
  for (auto i : neg) mean_neg += g(i);
  mean_pos /= std::max<std::size_t>(pos.size(), 1);
  mean_neg /= static_cast<double>(neg.size());
  const double nu = -0.5 * (mean_pos + mean_neg);
  const double mu = 0.5 * (mean_neg - mean_pos);
  res = std::max(res, std::max(0.0, -mu));
  for (auto i : pos) res = std::max(res, std::abs(g(i) + nu + mu));
  for (auto i : neg) res = std::max(res, std::abs(g(i) + nu - mu));
  for (auto i : zero) res = std::max(res, std::max(0.0, std::abs(g(i) + nu) - mu));
  res = std::max(res, std::abs(mu * (l1 - c)));
  return res;
}

Matrix portfolio_pd_repair(const Matrix& sigma, double rel) {
  const double scale = sigma.diagonal().cwiseAbs().mean();
  return eigenvalue_floor(sigma, rel * (scale > 0.0 ? scale : 1.0));
}

PortfolioSolution solve_min_variance(const PortfolioProblem& prob) {
  const Eigen::Index p = prob.sigma.rows();
  if (p < 1 || prob.sigma.cols() != p) throw Error("solve_min_variance: sigma must be square");
  if (prob.c < 1.0)
    throw Error("solve_min_variance: gross exposure bound c = " + std::to_string(prob.c) +
                " < 1 is infeasible with fully invested weights");
  if (!prob.sigma.allFinite() || !is_positive_definite(prob.sigma))
    throw Error("solve_min_variance: sigma is not positive definite; apply the PSD floor "
                "(portfolio_pd_repair / psd_floor) before solving");

  const double trace_scale = prob.sigma.trace() / static_cast<double>(p);
  const Matrix s = symmetrize(prob.sigma) / trace_scale;
  PortfolioSolution out;
  auto finish = [&](const Vector& w, bool active, int iterations) {
    out.weights = w;
    out.objective = w.dot(prob.sigma * w);
    out.kkt_residual = min_variance_kkt_residual(s, w, prob.c);
    out.iterations = iterations;
    out.l1_active = active;
    return out;
  };

  // Closed form when the l1 bound is slack.
  {
    const Eigen::LLT<Matrix> llt(s);
    const Vector x = llt.solve(Vector::Ones(p));
    const Vector w = x / x.sum();
    if (w.cwiseAbs().sum() <= prob.c && min_variance_kkt_residual(s, w, prob.c) < prob.tol)
      return finish(w, false, 0);
  }

  // ADMM on z = (w+, w-) with constraints l <= C z <= u.
  const Eigen::Index n = 2 * p;
  const Eigen::Index rows = n + 2;
  Matrix H(n, n);
  H << 2.0 * s, -2.0 * s, -2.0 * s, 2.0 * s;
  Matrix C = Matrix::Zero(rows, n);
  C.topRows(n).setIdentity();
  C.row(n) << Eigen::RowVectorXd::Ones(p), -Eigen::RowVectorXd::Ones(p);
  C.row(n + 1).setOnes();
  const double inf = std::numeric_limits<double>::infinity();
  Vector lower = Vector::Zero(rows), upper = Vector::Constant(rows, inf);
  lower(n) = upper(n) = 1.0;
  lower(n + 1) = -inf;
  upper(n + 1) = prob.c;

  const double rho_base = 0.1, sigma_reg = 1e-6, alpha = 1.6;
  Vector rho = Vector::Constant(rows, rho_base);
  rho(n) = 1e3 * rho_base;
  const Matrix K = H + sigma_reg * Matrix::Identity(n, n) + C.transpose() * rho.asDiagonal() * C;
  const Eigen::LDLT<Matrix> ldlt(K);

  Vector z = Vector::Zero(n);
  z.head(p).setConstant(1.0 / static_cast<double>(p));
  Vector w = C * z;
  Vector lambda = Vector::Zero(rows);
  double r_primal = inf, r_dual = inf;
  Candidate best;
  for (int it = 1; it <= prob.max_iter; ++it) {
    const Vector rhs = sigma_reg * z + C.transpose() * (rho.cwiseProduct(w) - lambda);
    const Vector zt = ldlt.solve(rhs);
    const Vector wt = C * zt;
    z = alpha * zt + (1.0 - alpha) * z;
    const Vector w_relax = alpha * wt + (1.0 - alpha) * w;
    const Vector w_next =
        (w_relax + lambda.cwiseQuotient(rho)).cwiseMax(lower).cwiseMin(upper);
    lambda += rho.cwiseProduct(w_relax - w_next);
    w = w_next;

    if (it % 25 != 0) continue;
    r_primal = (C * z - w).cwiseAbs().maxCoeff();
    r_dual = (H * z + C.transpose() * lambda).cwiseAbs().maxCoeff();
    if (r_primal < 1e-4 && r_dual < 1e-4) {
      const Vector approx = z.head(p) - z.tail(p);
      Candidate cand = polish(s, approx, prob.c);
      if (cand.residual < best.residual) best = cand;
      if (best.residual < prob.tol) return finish(best.w, best.active, it);
    }
  }
  std::ostringstream msg;
  msg << "solve_min_variance: iteration budget " << prob.max_iter
      << " exhausted (primal residual " << r_primal << ", dual residual " << r_dual
      << ", best KKT residual " << best.residual << ")";
  throw Error(msg.str());
}

double realized_portfolio_variance(const IntradayPanel& panel, const Vector& w,
                                   int interval_steps) {
  if (interval_steps < 1) throw Error("realized_portfolio_variance: interval must be >= 1");
  if (w.size() != panel.assets()) throw Error("realized_portfolio_variance: weight length mismatch");
  const Vector value = panel.log_prices * w;
  const Eigen::Index last = value.size() - 1;
  double rv = 0.0;
  Eigen::Index prev = 0;
  for (Eigen::Index k = interval_steps; prev < last; k += interval_steps) {
    const Eigen::Index at = std::min(k, last);
    const double r = value(at) - value(prev);
    rv += r * r;
    prev = at;
  }
  return rv;
}

BacktestResult backtest(std::span<const BacktestMethod> methods,
                        std::span<const IntradayPanel> out_of_sample,
                        const BacktestOptions& opts) {
  BacktestResult out;
  const std::size_t nc = opts.c_grid.size();
  out.daily_risk.assign(methods.size(), std::vector<std::vector<double>>(nc));
  for (const auto& panel : out_of_sample) {
    // Every method must produce a prediction for the day to be comparable.
    std::vector<Matrix> preds;
    try {
      panel.validate();
      if (panel.intervals() < 1) throw Error("no intraday returns");
      for (const auto& m : methods) {
        Matrix pred = m.predict(panel.day_index);
        if (pred.rows() != panel.assets() || pred.cols() != panel.assets())
          throw Error(m.name + " prediction has wrong shape");
        preds.push_back(portfolio_pd_repair(symmetrize(pred), opts.pd_floor));
      }
    } catch (const std::exception& e) {
      out.skipped.push_back("day " + std::to_string(panel.day_index) + ": " + e.what());
      continue;
    }
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      for (std::size_t ci = 0; ci < nc; ++ci) {
        PortfolioProblem prob{preds[mi], opts.c_grid[ci]};
        const PortfolioSolution sol = solve_min_variance(prob);
        out.daily_risk[mi][ci].push_back(
            std::sqrt(realized_portfolio_variance(panel, sol.weights, opts.interval_steps)));
        if (opts.keep_weights)
          out.weights.push_back({methods[mi].name, panel.day_index, opts.c_grid[ci], sol.weights});
      }
    }
  }
  for (std::size_t mi = 0; mi < methods.size(); ++mi)
    for (std::size_t ci = 0; ci < nc; ++ci) {
      const auto& risks = out.daily_risk[mi][ci];
      double mean = 0.0;
      for (double r : risks) mean += r;
      if (!risks.empty()) mean /= static_cast<double>(risks.size());
      out.rows.push_back({methods[mi].name, opts.period, opts.c_grid[ci], mean,
                          static_cast<int>(risks.size())});
    }
  return out;
}

}  // namespace voltensor
