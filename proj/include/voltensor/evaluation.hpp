#pragma once

// Forecast-quality metrics: matrix norm errors, MSPE, QLIKE and the
// Diebold-Mariano test.

#include "voltensor/common.hpp"

#include <optional>
#include <span>

namespace voltensor {

struct NormErrors {
  double frobenius = 0.0;
  double max = 0.0;
  double spectral = 0.0;
  /// p^{-1/2} || T^{-1/2} (pred - T) T^{-1/2} ||_F; absent when T is not PD.
  std::optional<double> relative_frobenius;
  std::string relative_note;
};

NormErrors norm_errors(const Matrix& pred, const Matrix& truth);

/// Per-day squared Frobenius distances.
Vector mspe_losses(std::span<const Matrix> preds, std::span<const Matrix> proxies);
double mspe(std::span<const Matrix> preds, std::span<const Matrix> proxies);

struct QlikeResult {
  double value = 0.0;  // mean over included days
  Vector losses;       // per day, NaN for excluded days
  int excluded = 0;
};

/// log det(pred) + tr(pred^{-1} proxy) per day. Days whose prediction is not
/// PD or has condition number above `max_condition` are excluded and counted.
QlikeResult qlike(std::span<const Matrix> preds, std::span<const Matrix> proxies,
                  double max_condition = 1e12);

struct DmResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool degenerate = false;
  int lags = 0;
};

/// Two-sided Diebold-Mariano test on d_t = a_t - b_t with a Bartlett-kernel
/// long-run variance; hac_lags < 0 selects floor(T^{1/3}).
DmResult dm_test(std::span<const double> loss_a, std::span<const double> loss_b,
                 int hac_lags = -1);

double standard_normal_cdf(double x);

}  // namespace voltensor
