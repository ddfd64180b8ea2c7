#include "voltensor/baselines.hpp"

#include <algorithm>

namespace voltensor {

Matrix predict_prvm_last(const VolTensor& y_hat) {
  if (y_hat.dim(3) < 1) throw Error("predict_prvm_last: empty tensor");
  return y_hat.slice(y_hat.dim(3) - 1);
}

Matrix predict_poet(const Matrix& day, int r1, double tau, ThresholdRule rule,
                    std::span<const int> sectors) {
  if (r1 < 0 || r1 > day.rows()) throw Error("predict_poet: r1 outside [0, p]");
  const Matrix low_rank = spectral_truncate(day, r1);
  return symmetrize(low_rank + threshold_residual(day - low_rank, tau, rule, sectors));
}

Matrix predict_tpoet(const VolTensor& y_hat, const BaselineSpec& spec, Warnings* warnings) {
  FitOptions opts;
  opts.r1 = spec.r1;
  opts.r2 = spec.r2;
  opts.tau = spec.tau;
  opts.rule = spec.rule;
  opts.sectors = spec.sectors;
  opts.project = false;
  opts.residual = spec.residual;
  return predict_last_loading(fit_unprojected(y_hat, opts, warnings));
}

FivarFit fit_fivar(const VolTensor& y_hat, const BaselineSpec& spec, Warnings* warnings) {
  const Eigen::Index p = y_hat.dim(1);
  const int D = static_cast<int>(y_hat.dim(3));
  if (spec.r1 < 1 || spec.r1 > p) throw Error("fit_fivar: r1 outside [1, p]");
  if (spec.eigvec_window < 1 || D < spec.eigvec_window)
    throw Error("fit_fivar: need at least eigvec_window = " + std::to_string(spec.eigvec_window) +
                " days, have " + std::to_string(D));
  int window = spec.param_window;
  if (window > D) {
    warn(warnings, "fit_fivar: param_window " + std::to_string(window) + " shrunk to D = " +
                       std::to_string(D));
    window = D;
  }
  const bool har = spec.method == BaselineMethod::FivarH;
  const int lags = har ? 21 : spec.ar_lag;
  if (lags < 1) throw Error("fit_fivar: ar_lag must be >= 1");
  const int regressors = har ? 4 : lags + 1;
  if (!spec.fixed_ar && window - lags < regressors + 1)
    throw Error("fit_fivar: " + std::to_string(window) + " days are insufficient for " +
                (har ? std::string("HAR") : "AR(" + std::to_string(lags) + ")") + " estimation");

  FivarFit out;
  Matrix avg = Matrix::Zero(p, p);
  for (int l = D - spec.eigvec_window; l < D; ++l) avg += y_hat.slice(l);
  avg /= spec.eigvec_window;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(avg));
  out.eigenvectors = es.eigenvectors().rightCols(spec.r1).rowwise().reverse();
  normalize_column_signs(out.eigenvectors);

  out.eigenvalue_series.resize(window, spec.r1);
  for (int t = 0; t < window; ++t) {
    const auto slice = y_hat.slice(D - window + t);
    for (int k = 0; k < spec.r1; ++k)
      out.eigenvalue_series(t, k) =
          out.eigenvectors.col(k).dot(slice * out.eigenvectors.col(k));
  }

  out.forecast.resize(spec.r1);
  for (int k = 0; k < spec.r1; ++k) {
    const Vector y = out.eigenvalue_series.col(k);
    auto design_row = [&](int t) {  // regressors predicting y(t)
      Vector row(regressors);
      row(0) = 1.0;
      if (har) {
        row(1) = y(t - 1);
        row(2) = y.segment(t - 5, 5).mean();
        row(3) = y.segment(t - 21, 21).mean();
      } else {
        for (int s = 1; s <= lags; ++s) row(s) = y(t - s);
      }
      return row;
    };
    Vector beta;
    if (spec.fixed_ar && !har) {
      beta = Vector::Zero(regressors);
      beta(0) = spec.fixed_ar->first;
      beta(1) = spec.fixed_ar->second;
    } else {
      const int n = window - lags;
      Matrix X(n, regressors);
      Vector target(n);
      for (int i = 0; i < n; ++i) {
        X.row(i) = design_row(lags + i).transpose();
        target(i) = y(lags + i);
      }
      // Minimum-norm least squares handles constant (collinear) series.
      beta = X.completeOrthogonalDecomposition().solve(target);
    }
    out.coefficients.push_back(beta);
    out.forecast(k) = std::max(0.0, design_row(window).dot(beta));
  }

  const Matrix& xi = out.eigenvectors;
  const Matrix day = y_hat.slice(D - 1);
  const Matrix residual = day - spectral_truncate(day, spec.r1);
  out.prediction = symmetrize(xi * out.forecast.asDiagonal() * xi.transpose() +
                              threshold_residual(residual, spec.tau, spec.rule, spec.sectors));
  return out;
}

Matrix predict_fivar(const VolTensor& y_hat, const BaselineSpec& spec, Warnings* warnings) {
  return fit_fivar(y_hat, spec, warnings).prediction;
}

Matrix predict_baseline(const VolTensor& y_hat, const BaselineSpec& spec, Warnings* warnings) {
  switch (spec.method) {
    case BaselineMethod::Prvm:
      return predict_prvm_last(y_hat);
    case BaselineMethod::Poet:
      return predict_poet(predict_prvm_last(y_hat), spec.r1, spec.tau, spec.rule, spec.sectors);
    case BaselineMethod::TPoet:
      return predict_tpoet(y_hat, spec, warnings);
    case BaselineMethod::Fivar:
    case BaselineMethod::FivarH:
      return predict_fivar(y_hat, spec, warnings);
  }
  throw Error("predict_baseline: unknown method");
}

const char* baseline_name(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::Prvm: return "PRVM";
    case BaselineMethod::Poet: return "POET";
    case BaselineMethod::TPoet: return "TPOET";
    case BaselineMethod::Fivar: return "FIVAR";
    case BaselineMethod::FivarH: return "FIVAR_H";
  }
  return "?";
}

BaselineMethod baseline_from_name(const std::string& name) {
  for (auto m : {BaselineMethod::Prvm, BaselineMethod::Poet, BaselineMethod::TPoet,
                 BaselineMethod::Fivar, BaselineMethod::FivarH})
    if (name == baseline_name(m)) return m;
  throw Error("unknown baseline method '" + name + "'");
}

}  // namespace voltensor
