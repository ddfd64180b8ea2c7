#pragma once

// Gross-exposure constrained minimum-variance portfolios and out-of-sample
// risk backtests.

#include "voltensor/common.hpp"
#include "voltensor/realized_vol.hpp"

#include <functional>
#include <span>

namespace voltensor {

struct PortfolioProblem {
  Matrix sigma;  // p x p, symmetric PD
  double c = 1.0;  // gross exposure bound ||w||_1 <= c
  double tol = 1e-8;
  int max_iter = 50000;
};

struct PortfolioSolution {
  Vector weights;
  double objective = 0.0;    // w^T sigma w
  double kkt_residual = 0.0; // on the trace-normalized problem
  int iterations = 0;
  bool l1_active = false;
};

/// min w^T sigma w  s.t.  1^T w = 1, ||w||_1 <= c.
/// Solved on the split w = w+ - w- by ADMM, followed by an active-set polish
/// that is accepted only when the KKT residual is below tol.
PortfolioSolution solve_min_variance(const PortfolioProblem& prob);

/// KKT residual of w for the problem (sigma assumed trace-normalized by the
/// caller if a scale-free value is wanted).
double min_variance_kkt_residual(const Matrix& sigma, const Vector& w, double c);

/// Eigenvalue floor at rel * mean |diagonal| (rel itself for a zero diagonal).
Matrix portfolio_pd_repair(const Matrix& sigma, double rel = 1e-8);

struct BacktestMethod {
  std::string name;
  /// Predicted matrix for an out-of-sample day (by IntradayPanel::day_index).
  std::function<Matrix(int day)> predict;
};

struct BacktestOptions {
  std::vector<double> c_grid{1.0, 1.5, 2.0, 2.5, 3.0};
  int interval_steps = 10;  // grid steps per return interval
  std::string period = "all";
  double pd_floor = 1e-8;
  bool keep_weights = false;
};

struct RiskRow {
  std::string method;
  std::string period;
  double c = 0.0;
  double avg_risk = 0.0;  // mean over days of sqrt(realized portfolio variance)
  int days = 0;
};

struct WeightRecord {
  std::string method;
  int day = 0;
  double c = 0.0;
  Vector weights;
};

struct BacktestResult {
  std::vector<RiskRow> rows;
  std::vector<std::string> skipped;
  std::vector<WeightRecord> weights;
  /// daily_risk[method][c index] per evaluated day, in panel order.
  std::vector<std::vector<std::vector<double>>> daily_risk;
};

/// Realized variance of the portfolio's log returns sampled every
/// `interval_steps` grid steps (a trailing partial interval is included).
double realized_portfolio_variance(const IntradayPanel& panel, const Vector& w,
                                   int interval_steps);

BacktestResult backtest(std::span<const BacktestMethod> methods,
                        std::span<const IntradayPanel> out_of_sample,
                        const BacktestOptions& opts = {});

}  // namespace voltensor
