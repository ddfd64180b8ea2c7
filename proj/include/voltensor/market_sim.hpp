#pragma once

// Synthetic factor-driven jump diffusions with microstructure noise, HAR
// time loadings and a sparse idiosyncratic covariance.

#include "voltensor/common.hpp"
#include "voltensor/realized_vol.hpp"
#include "voltensor/tensor.hpp"

#include <functional>
#include <optional>

namespace voltensor {

struct HarParams {
  double b0 = 0.5;
  double b1 = 0.372;
  double b2 = 0.343;
  double b3 = 0.224;
  double noise_sd = 1.0;
};

struct SimConfig {
  int p = 200;
  int days = 200;  // D
  int m = 2000;
  int r1 = 3;
  int r2 = 1;
  HarParams har;
  double jump_intensity = 5.0;    // expected jumps per asset per day
  double jump_size_scale = 0.05;  // jump sd = scale * sqrt(Gamma_ii)
  double noise_scale = 0.01;      // noise sd = scale * sqrt(Sigma_ii)
  double gamma_shape = 100.0;
  double gamma_rate = 100.0;
  double sparse_prob_scale = 0.3;  // P(s_i != 0) = scale / (sqrt(p) log p)
  std::uint64_t seed = 1;
  int burn_in_days = 105;
  int covariate_window = 21;  // days of history needed before day 1
  bool keep_panels = true;

  void validate() const;
};

/// Output of simulate_study. Days are indexed 0 .. warmup_days + days - 1;
/// the first `warmup_days` exist only to seed the covariates of day 1.
struct SimOutput {
  int warmup_days = 0;
  std::vector<IntradayPanel> noisy_prices;  // empty unless keep_panels
  VolTensor true_tensor;         // Gamma_l for all warmup + D days
  VolTensor true_factor_tensor;  // Psi_l
  VolTensor true_idio;           // Sigma_l
  VolTensor estimated_tensor;    // PRVM estimates at the simulated m
  Matrix covariates;             // D x 3 HAR covariates for the last D days
  Vector covariate_next;         // x_{D+1}
  Matrix next_day_truth;         // E[Gamma_{D+1} | I_D]
  Matrix next_day_realized;      // Gamma_{D+1} including the day-(D+1) shock

  // Generating parameters.
  Matrix loading_q;  // p x r1
  Tensor3 core;      // r1 x r1 x r2
  Matrix time_loadings;  // (warmup + D + 1) x r2, HAR series
  Matrix conditional_loadings;  // same shape, E[v_l | v_{l-1}, v_{l-2}, ...]
  Matrix idio;           // Sigma

  /// Q (sum_k max(v_k, 0) F_k) Q^T for a loading row v.
  Matrix factor_volatility(const Eigen::RowVectorXd& v) const;
  /// E[Gamma_l | I_{l-1}] for day l in 0 .. warmup + D.
  Matrix conditional_truth(int day) const;
};

/// Sigma = diag(d^2) + s s^T - diag(s^2) for given d and s.
Matrix assemble_sparse_idio(const Vector& d, const Vector& s);

/// Draws Sigma until it is positive definite; throws after `max_retries`.
Matrix generate_sparse_idio(int p, double gamma_shape, double gamma_rate,
                            double sparse_prob_scale, Rng& rng, int max_retries = 1000);

/// HAR(1,5,21) series of length n after discarding `burn_in` values. The
/// recursion starts from a history of b0. Throws when b1 + b2 + b3 >= 1.
Vector simulate_har_loadings(int n, const HarParams& har, int burn_in, Rng& rng);

/// b0 + b1 v_{t-1} + b2 mean(v_{t-5..t-1}) + b3 mean(v_{t-21..t-1}), using
/// the last 21 entries of `history`.
double har_conditional_mean(const HarParams& har, std::span<const double> history);

struct DayPriceConfig {
  int m = 2000;
  double jump_intensity = 5.0;
  double jump_size_scale = 0.05;
  /// When set, jump sizes use this sd instead of jump_size_scale * sqrt(Gamma_ii).
  std::optional<double> jump_sd_override;
  double noise_scale = 0.01;
};

struct SimulatedDay {
  IntradayPanel panel;
  std::vector<int> jump_counts;  // per asset
};

/// Euler scheme on t_j = j/m with day-constant factor and idiosyncratic
/// volatilities, compound Poisson jumps and additive Gaussian noise.
SimulatedDay simulate_day_prices(const DayPriceConfig& cfg, const Matrix& factor_vol,
                                 const Matrix& idio_vol, Rng& rng, int day_index = 0);

/// Top eigenvalue of every slice.
Vector top_eigenvalues(const VolTensor& t);

/// HAR covariates from a series of realized top eigenvalues: row for day t is
/// (lambda_{t-1}, mean lambda_{t-5..t-1}, mean lambda_{t-21..t-1}) with window
/// 21 by default. Rows are produced for days first .. first + count - 1 (an
/// index of `count` == series.size() - first + 1 allowed for the day after the
/// series ends).
Matrix har_covariates(std::span<const double> series, int first, int count,
                      int monthly_window = 21);

using DayVisitor = std::function<void(int day, const IntradayPanel&)>;

/// Full simulation design. `visitor` sees every simulated panel (warmup days
/// included) in day order, whether or not panels are kept.
SimOutput simulate_study(const SimConfig& cfg, const DayVisitor& visitor = {});

}  // namespace voltensor
