#pragma once

// Comparison predictors for the one-day-ahead volatility matrix.

#include "voltensor/ptpoet.hpp"

#include <optional>

namespace voltensor {

enum class BaselineMethod { Prvm, Poet, TPoet, Fivar, FivarH };

struct BaselineSpec {
  BaselineMethod method = BaselineMethod::Poet;
  int r1 = 3;
  int r2 = 1;  // T-POET only
  double tau = 0.0;
  ThresholdRule rule = ThresholdRule::Soft;
  std::vector<int> sectors;
  ResidualSource residual = ResidualSource::Daily;  // T-POET only
  int eigvec_window = 21;
  int param_window = 252;
  int ar_lag = 1;
  /// FIVAR only: fixes the AR(1) intercept and slope instead of estimating them.
  std::optional<std::pair<double, double>> fixed_ar;
};

/// The last day's estimate.
Matrix predict_prvm_last(const VolTensor& y_hat);

/// Rank-r1 spectral part of `day` plus its thresholded residual.
Matrix predict_poet(const Matrix& day, int r1, double tau, ThresholdRule rule,
                    std::span<const int> sectors = {});

/// Tensor POET without covariates: the last day's fitted slice plus the
/// averaged thresholded residuals.
Matrix predict_tpoet(const VolTensor& y_hat, const BaselineSpec& spec,
                     Warnings* warnings = nullptr);

struct FivarFit {
  Matrix eigenvectors;           // p x r1, column-orthonormal
  Matrix eigenvalue_series;      // T x r1 realized leading eigenvalues
  Vector forecast;               // r1 one-step forecasts, floored at 0
  std::vector<Vector> coefficients;  // OLS coefficients per eigenvalue
  Matrix prediction;
};

/// Factor dynamics on leading eigenvalues with time-invariant eigenvectors:
/// AR(ar_lag) for FIVAR, HAR(1,5,21) for FIVAR_H, both OLS with intercept.
FivarFit fit_fivar(const VolTensor& y_hat, const BaselineSpec& spec, Warnings* warnings = nullptr);

Matrix predict_fivar(const VolTensor& y_hat, const BaselineSpec& spec,
                     Warnings* warnings = nullptr);

/// Dispatches on spec.method.
Matrix predict_baseline(const VolTensor& y_hat, const BaselineSpec& spec,
                        Warnings* warnings = nullptr);

const char* baseline_name(BaselineMethod m);
BaselineMethod baseline_from_name(const std::string& name);

}  // namespace voltensor
