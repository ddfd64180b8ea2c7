#include "voltensor/evaluation.hpp"

#include <cmath>
#include <limits>

namespace voltensor {

namespace {

void check_pair(const Matrix& a, const Matrix& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols())
    throw Error(std::string(who) + ": matrices must be square and of equal size");
}

void check_lengths(std::size_t a, std::size_t b, const char* who) {
  if (a != b)
    throw Error(std::string(who) + ": " + std::to_string(a) + " predictions but " +
                std::to_string(b) + " proxies");
}

}  // namespace

NormErrors norm_errors(const Matrix& pred, const Matrix& truth) {
  check_pair(pred, truth, "norm_errors");
  const Matrix diff = pred - truth;
  NormErrors out;
  out.frobenius = diff.norm();
  out.max = diff.size() ? diff.cwiseAbs().maxCoeff() : 0.0;
  out.spectral = diff.size() ? Eigen::JacobiSVD<Matrix>(diff).singularValues()(0) : 0.0;

  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(truth));
  const Vector& vals = es.eigenvalues();
  if (vals.size() == 0 || !(vals.minCoeff() > 1e-14 * std::max(vals.maxCoeff(), 1e-300))) {
    out.relative_note = "truth is not positive definite";
    return out;
  }
  const Matrix inv_sqrt =
      es.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  out.relative_frobenius =
      (inv_sqrt * diff * inv_sqrt).norm() / std::sqrt(static_cast<double>(truth.rows()));
  return out;
}

Vector mspe_losses(std::span<const Matrix> preds, std::span<const Matrix> proxies) {
  check_lengths(preds.size(), proxies.size(), "mspe");
  Vector out(static_cast<Eigen::Index>(preds.size()));
  for (std::size_t t = 0; t < preds.size(); ++t) {
    check_pair(preds[t], proxies[t], "mspe");
    out(static_cast<Eigen::Index>(t)) = (preds[t] - proxies[t]).squaredNorm();
  }
  return out;
}

double mspe(std::span<const Matrix> preds, std::span<const Matrix> proxies) {
  const Vector l = mspe_losses(preds, proxies);
  return l.size() ? l.mean() : 0.0;
}

QlikeResult qlike(std::span<const Matrix> preds, std::span<const Matrix> proxies,
                  double max_condition) {
  check_lengths(preds.size(), proxies.size(), "qlike");
  QlikeResult out;
  out.losses = Vector::Constant(static_cast<Eigen::Index>(preds.size()),
                                std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  int used = 0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    check_pair(preds[t], proxies[t], "qlike");
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(preds[t]));
    const Vector& vals = es.eigenvalues();
    if (!(vals.minCoeff() > 0.0) || vals.maxCoeff() / vals.minCoeff() > max_condition) {
      ++out.excluded;
      continue;
    }
    const double logdet = vals.array().log().sum();
    const Matrix inv =
        es.eigenvectors() * vals.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    const double loss = logdet + (inv * proxies[t]).trace();
    out.losses(static_cast<Eigen::Index>(t)) = loss;
    total += loss;
    ++used;
  }
  out.value = used ? total / used : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

DmResult dm_test(std::span<const double> loss_a, std::span<const double> loss_b, int hac_lags) {
  if (loss_a.size() != loss_b.size()) throw Error("dm_test: loss series differ in length");
  const auto T = static_cast<Eigen::Index>(loss_a.size());
  if (T < 10) throw Error("dm_test: need at least 10 observations");
  Vector d(T);
  for (Eigen::Index t = 0; t < T; ++t)
    d(t) = loss_a[static_cast<std::size_t>(t)] - loss_b[static_cast<std::size_t>(t)];
  if (!d.allFinite()) throw Error("dm_test: non-finite loss differential");

  DmResult out;
  out.lags = hac_lags >= 0 ? hac_lags
                           : static_cast<int>(std::floor(std::cbrt(static_cast<double>(T))));
  const double mean = d.mean();
  const Vector c = d.array() - mean;
  double lrv = c.squaredNorm() / static_cast<double>(T);
  for (int k = 1; k <= out.lags && k < T; ++k) {
    const double gamma = c.head(T - k).dot(c.tail(T - k)) / static_cast<double>(T);
    lrv += 2.0 * (1.0 - static_cast<double>(k) / (out.lags + 1)) * gamma;
  }
  const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
  if (!(lrv > 1e-24 * scale * scale)) {
    out.degenerate = true;
    out.statistic = 0.0;
    out.p_value = 1.0;
    return out;
  }
  out.statistic = mean / std::sqrt(lrv / static_cast<double>(T));
  out.p_value = std::erfc(std::abs(out.statistic) / std::sqrt(2.0));
  return out;
}

}  // namespace voltensor
