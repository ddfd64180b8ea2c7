#pragma once

// Projected tensor POET: spectral truncation of daily matrices, sieve
// projection of the time loadings, Tucker-type loading estimation,
// thresholded idiosyncratic residuals and one-day-ahead prediction.

#include "voltensor/common.hpp"
#include "voltensor/tensor.hpp"

#include <optional>

namespace voltensor {

/// Additive polynomial sieve: for covariate c and power j = 1..J the basis
/// column is x_c^j. With an intercept the columns are centered and scaled and
/// a constant column is appended; without one they are only scaled, which
/// leaves the spanned space (and hence P) unchanged.
struct SieveBasis {
  int J = 2;
  int d = 0;
  bool intercept = false;
  Vector mean;  // per basis column (J*d)
  Vector sd;
  Vector covariate_mean;  // training statistics of the raw covariates,
  Vector covariate_sd;    // used by the extrapolation guard

  /// Standardized basis row phi(x) (length J*d, plus 1 with intercept).
  Vector evaluate(const Vector& x) const;
  Eigen::Index columns() const { return J * d + (intercept ? 1 : 0); }
};

struct SieveDesign {
  Matrix X;    // D x d
  SieveBasis basis;
  Matrix Phi;  // D x columns
  Matrix P;    // D x D projection onto col(Phi)
};

/// Builds the sieve design. Requires D > J*d and non-constant covariates;
/// a rank-deficient basis is rejected naming the offending columns.
SieveDesign build_sieve(const Matrix& X, int J, bool intercept = false);

/// Replaces every slice by its rank-r truncated eigendecomposition.
VolTensor spectral_truncate_days(const VolTensor& y, int r);

/// Rank-r truncated eigendecomposition of one symmetric matrix.
Matrix spectral_truncate(const Matrix& m, int r);

enum class ThresholdRule { Soft, Hard, SectorHard };

/// Adaptive thresholding of one residual matrix: diagonal clamped at zero,
/// off-diagonal entries shrunk with tau_ij = tau * sqrt((S_ii v 0)(S_jj v 0)).
/// SectorHard keeps entries whose assets share a sector label and zeroes the
/// rest (tau unused).
Matrix threshold_residual(const Matrix& residual, double tau, ThresholdRule rule,
                          std::span<const int> sectors = {});

enum class IdioForecast { Mean, Last };

/// Which low-rank part is removed before thresholding: the fitted tensor
/// factor part (Y - S_hat) or each day's own rank-r1 truncation (Y - S_bar).
enum class ResidualSource { Fitted, Daily };

struct FitOptions {
  int r1 = 3;
  int r2 = 1;
  double tau = 0.0;
  ThresholdRule rule = ThresholdRule::Soft;
  std::vector<int> sectors;  // required for SectorHard
  /// When false the time loadings are not projected (P = I): the plain tensor
  /// POET variant.
  bool project = true;
  ResidualSource residual = ResidualSource::Daily;
};

struct PtPoetModel {
  int r1 = 0;
  int r2 = 0;
  Matrix Q;       // p x r1
  Matrix G;       // D x r2 (time loadings on the training days)
  Matrix A;       // basis columns x r2 sieve coefficients (empty if unprojected)
  Tensor3 F;      // r1 x r1 x r2
  VolTensor idio_hats;  // thresholded residuals, one per day
  Matrix idio_mean;     // average of idio_hats
  Matrix idio_last;     // thresholded residual of the last training day
  double tau = 0.0;
  ThresholdRule rule = ThresholdRule::Soft;
  std::optional<SieveBasis> basis;
  bool projected = true;

  /// Factor part F x1 Q x2 Q x3 g for a loading row g (length r2).
  Matrix factor_matrix(const Vector& g) const;
};

PtPoetModel fit(const VolTensor& y_hat, const SieveDesign& sieve, const FitOptions& opts,
                Warnings* warnings = nullptr);

/// Same pipeline without covariates (P = I).
PtPoetModel fit_unprojected(const VolTensor& y_hat, const FitOptions& opts,
                            Warnings* warnings = nullptr);

struct PredictOptions {
  IdioForecast idio = IdioForecast::Mean;
  bool psd_floor = false;
  double floor = 1e-8;
  double extrapolation_sds = 10.0;
};

/// F x1 Q x2 Q x3 g(x_next) + idiosyncratic forecast.
Matrix predict(const PtPoetModel& model, const Vector& x_next, const PredictOptions& opts = {},
               Warnings* warnings = nullptr);

/// Prediction of an unprojected model, using the last training day's loading.
Matrix predict_last_loading(const PtPoetModel& model, const PredictOptions& opts = {});

// Rank selection on the singular values of a matricization.
int rank_by_gap(const Vector& singular_values, int r_max);
int rank_by_ratio(const Vector& singular_values, int r_max);

enum class RankCriterion { Gap, Ratio };
int select_rank(const VolTensor& y_hat, int mode, int r_max, RankCriterion criterion);

struct RankPenaltyOptions {
  int r_max = 20;
  double c1_scale = 0.15;  // c1 = c1_scale * xi_{d, r_max} per day
  double c2 = 0.5;
};

/// Penalized eigenvalue criterion over daily matrices; m is the number of
/// intraday returns per day. The result is clamped to at least 1.
int select_rank_penalized(const VolTensor& y_hats, int m, const RankPenaltyOptions& opts = {},
                          Warnings* warnings = nullptr);

/// Criterion values for j = 1..r_max (exposed for inspection and testing).
Vector rank_penalty_objective(const std::vector<Vector>& daily_eigs_desc, int p, int m,
                              const RankPenaltyOptions& opts);

// Model bundle: <stem>.json (dims, ranks, basis, statistics) + <stem>.bin
// (tensor-format payload holding Q, G, A, F and idio_mean).
void save_model(const PtPoetModel& model, const std::filesystem::path& stem);
PtPoetModel load_model(const std::filesystem::path& stem);

}  // namespace voltensor
