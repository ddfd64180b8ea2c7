#include "voltensor/market_sim.hpp"

#include <algorithm>
#include <cmath>

namespace voltensor {

namespace {

// Independent random streams derived from the master seed.
constexpr std::uint64_t kStreamLoadings = 1;
constexpr std::uint64_t kStreamIdio = 2;
constexpr std::uint64_t kStreamHar = 3;
constexpr std::uint64_t kStreamDay = 4;

}  // namespace

void SimConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error("SimConfig: " + what);
  };
  require(p >= 1 && days >= 1 && m >= 1 && r1 >= 1 && r2 >= 1,
          "p, days, m, r1, r2 must be >= 1");
  require(r1 <= p, "r1 must not exceed p");
  require(r2 <= days, "r2 must not exceed the number of days");
  require(jump_intensity >= 0 && jump_size_scale >= 0 && noise_scale >= 0 &&
              sparse_prob_scale >= 0 && har.noise_sd >= 0,
          "scales must be non-negative");
  require(gamma_shape > 0 && gamma_rate > 0, "gamma parameters must be positive");
  require(burn_in_days >= 21, "burn_in_days must be >= 21");
  require(covariate_window >= 1, "covariate_window must be >= 1");
}

Matrix assemble_sparse_idio(const Vector& d, const Vector& s) {
  if (d.size() != s.size()) throw Error("assemble_sparse_idio: d and s differ in length");
  Matrix sigma = s * s.transpose();
  sigma.diagonal() = d.array().square();
  return sigma;
}

Matrix generate_sparse_idio(int p, double gamma_shape, double gamma_rate,
                            double sparse_prob_scale, Rng& rng, int max_retries) {
  if (p < 1 || !(gamma_shape > 0) || !(gamma_rate > 0) || sparse_prob_scale < 0)
    throw Error("generate_sparse_idio: invalid parameters");
  const double pd = static_cast<double>(p);
  const double prob =
      p > 1 ? std::min(1.0, sparse_prob_scale / (std::sqrt(pd) * std::log(pd))) : 0.0;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Vector d(p), s(p);
    for (int i = 0; i < p; ++i) d(i) = rng.gamma(gamma_shape, gamma_rate);
    for (int i = 0; i < p; ++i) {
      const bool active = rng.uniform() < prob;
      const double z = rng.normal();
      s(i) = active ? z : 0.0;
    }
    Matrix sigma = assemble_sparse_idio(d, s);
    if (is_positive_definite(sigma)) return sigma;
  }
  throw Error("generate_sparse_idio: no positive definite draw within the retry budget of " +
              std::to_string(max_retries));
}

double har_conditional_mean(const HarParams& har, std::span<const double> history) {
  if (history.size() < 21) throw Error("har_conditional_mean: need 21 lagged values");
  const auto n = history.size();
  double week = 0.0, month = 0.0;
  for (std::size_t s = 1; s <= 5; ++s) week += history[n - s];
  for (std::size_t s = 1; s <= 21; ++s) month += history[n - s];
  return har.b0 + har.b1 * history[n - 1] + har.b2 * week / 5.0 + har.b3 * month / 21.0;
}

Vector simulate_har_loadings(int n, const HarParams& har, int burn_in, Rng& rng) {
  if (har.b1 + har.b2 + har.b3 >= 1.0)
    throw Error("simulate_har_loadings: b1 + b2 + b3 = " +
                std::to_string(har.b1 + har.b2 + har.b3) + " >= 1 is non-stationary");
  if (burn_in < 21) throw Error("simulate_har_loadings: burn_in must be >= 21");
  if (n < 0) throw Error("simulate_har_loadings: negative length");
  std::vector<double> v(21, har.b0);
  v.reserve(static_cast<std::size_t>(21 + burn_in + n));
  for (int t = 0; t < burn_in + n; ++t) {
    const double shock = har.noise_sd * rng.normal();
    v.push_back(har_conditional_mean(har, v) + shock);
  }
  Vector out(n);
  std::copy(v.end() - n, v.end(), out.data());
  return out;
}

SimulatedDay simulate_day_prices(const DayPriceConfig& cfg, const Matrix& factor_vol,
                                 const Matrix& idio_vol, Rng& rng, int day_index) {
  const Eigen::Index p = factor_vol.rows();
  if (factor_vol.cols() != p || idio_vol.rows() != p || idio_vol.cols() != p)
    throw Error("simulate_day_prices: volatility matrices must be p x p");
  if (cfg.m < 1) throw Error("simulate_day_prices: m must be >= 1");
  const Matrix psi = psd_square_root_factor(factor_vol);
  const Matrix sig = psd_square_root_factor(idio_vol);
  const double dt = 1.0 / cfg.m;

  Matrix increments = Matrix::Zero(p, cfg.m);
  if (psi.cols() > 0) increments += psi * rng.normal_matrix(psi.cols(), cfg.m);
  if (sig.cols() > 0) increments += sig * rng.normal_matrix(sig.cols(), cfg.m);
  increments *= std::sqrt(dt);

  SimulatedDay out;
  out.jump_counts.assign(static_cast<std::size_t>(p), 0);
  for (Eigen::Index i = 0; i < p; ++i) {
    const int count = rng.poisson(cfg.jump_intensity);
    out.jump_counts[static_cast<std::size_t>(i)] = count;
    const double sd = cfg.jump_sd_override.value_or(
        cfg.jump_size_scale * std::sqrt(std::max(0.0, factor_vol(i, i) + idio_vol(i, i))));
    for (int c = 0; c < count; ++c) {
      const double when = rng.uniform();
      const double size = sd * rng.normal();
      // A jump in (t_{j-1}, t_j] first shows in the increment ending at t_j.
      const auto j = std::clamp<Eigen::Index>(
          static_cast<Eigen::Index>(std::ceil(when * cfg.m)), 1, cfg.m);
      increments(i, j - 1) += size;
    }
  }

  out.panel.day_index = day_index;
  out.panel.times.resize(static_cast<std::size_t>(cfg.m + 1));
  for (int j = 0; j <= cfg.m; ++j) out.panel.times[static_cast<std::size_t>(j)] = j;
  Matrix& prices = out.panel.log_prices;
  prices.resize(cfg.m + 1, p);
  prices.row(0).setZero();
  for (int j = 1; j <= cfg.m; ++j) prices.row(j) = prices.row(j - 1) + increments.col(j - 1).transpose();

  if (cfg.noise_scale > 0.0) {
    for (Eigen::Index i = 0; i < p; ++i) {
      const double sd = cfg.noise_scale * std::sqrt(std::max(0.0, idio_vol(i, i)));
      for (int j = 0; j <= cfg.m; ++j) prices(j, i) += sd * rng.normal();
    }
  }
  return out;
}

Vector top_eigenvalues(const VolTensor& t) {
  Vector out(t.dim(3));
  for (Eigen::Index l = 0; l < t.dim(3); ++l) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(t.slice(l)), Eigen::EigenvaluesOnly);
    out(l) = es.eigenvalues()(es.eigenvalues().size() - 1);
  }
  return out;
}

Matrix har_covariates(std::span<const double> series, int first, int count,
                      int monthly_window) {
  const int lags = std::max(5, monthly_window);
  if (first < lags)
    throw Error("har_covariates: day " + std::to_string(first) + " has fewer than " +
                std::to_string(lags) + " days of history");
  if (count < 0 || static_cast<std::size_t>(first + count - 1) > series.size())
    throw Error("har_covariates: requested days exceed the series");
  Matrix x(count, 3);
  for (int r = 0; r < count; ++r) {
    const int t = first + r;
    double week = 0.0, month = 0.0;
    for (int s = 1; s <= 5; ++s) week += series[static_cast<std::size_t>(t - s)];
    for (int s = 1; s <= monthly_window; ++s) month += series[static_cast<std::size_t>(t - s)];
    x(r, 0) = series[static_cast<std::size_t>(t - 1)];
    x(r, 1) = week / 5.0;
    x(r, 2) = month / monthly_window;
  }
  return x;
}

Matrix SimOutput::factor_volatility(const Eigen::RowVectorXd& v) const {
  const Eigen::Index r1 = core.dim(1);
  Matrix inner = Matrix::Zero(r1, r1);
  for (Eigen::Index k = 0; k < core.dim(3); ++k) inner += std::max(v(k), 0.0) * core.slice(k);
  return symmetrize(loading_q * inner * loading_q.transpose());
}

Matrix SimOutput::conditional_truth(int day) const {
  if (day < 0 || day >= conditional_loadings.rows())
    throw Error("conditional_truth: day " + std::to_string(day) + " out of range");
  return factor_volatility(conditional_loadings.row(day)) + idio;
}

SimOutput simulate_study(const SimConfig& cfg, const DayVisitor& visitor) {
  cfg.validate();
  SimOutput out;
  const int warmup = std::max(cfg.covariate_window, 5);
  const int total = warmup + cfg.days;
  out.warmup_days = warmup;

  // Loadings and core from the leading eigenpairs of A A^T.
  {
    Rng rng(derive_seed(cfg.seed, kStreamLoadings));
    const Matrix a = rng.normal_matrix(cfg.p, cfg.p);
    Eigen::SelfAdjointEigenSolver<Matrix> es(a * a.transpose());
    out.loading_q.resize(cfg.p, cfg.r1);
    Vector lambda(cfg.r1);
    for (int k = 0; k < cfg.r1; ++k) {
      out.loading_q.col(k) = es.eigenvectors().col(cfg.p - 1 - k);
      lambda(k) = es.eigenvalues()(cfg.p - 1 - k);
    }
    normalize_column_signs(out.loading_q);
    // Frontal slice k carries the eigenvalues cyclically shifted by k, so the
    // mode-3 unfolding has rank r2 whenever r2 <= r1.
    out.core = Tensor3(cfg.r1, cfg.r1, cfg.r2);
    for (int k = 0; k < cfg.r2; ++k)
      for (int i = 0; i < cfg.r1; ++i) out.core(i, i, k) = lambda((i + k) % cfg.r1);
  }
  {
    Rng rng(derive_seed(cfg.seed, kStreamIdio));
    out.idio = generate_sparse_idio(cfg.p, cfg.gamma_shape, cfg.gamma_rate,
                                    cfg.sparse_prob_scale, rng);
  }
  // 21 extra leading values serve as history for the conditional means.
  out.time_loadings.resize(total + 1, cfg.r2);
  out.conditional_loadings.resize(total + 1, cfg.r2);
  for (int k = 0; k < cfg.r2; ++k) {
    Rng rng(derive_seed(cfg.seed, kStreamHar, static_cast<std::uint64_t>(k)));
    const Vector v = simulate_har_loadings(total + 1 + 21, cfg.har, cfg.burn_in_days, rng);
    for (int l = 0; l <= total; ++l) {
      out.time_loadings(l, k) = v(l + 21);
      out.conditional_loadings(l, k) =
          har_conditional_mean(cfg.har, {v.data(), static_cast<std::size_t>(l + 21)});
    }
  }
  const auto factor_matrix = [&](const Eigen::RowVectorXd& v) { return out.factor_volatility(v); };

  out.true_tensor = VolTensor(cfg.p, cfg.p, total);
  out.true_factor_tensor = VolTensor(cfg.p, cfg.p, total);
  out.true_idio = VolTensor(cfg.p, cfg.p, total);
  out.estimated_tensor = VolTensor(cfg.p, cfg.p, total);
  const DayPriceConfig day_cfg{cfg.m, cfg.jump_intensity, cfg.jump_size_scale, std::nullopt,
                               cfg.noise_scale};
  PrvmConfig prvm_cfg;
  for (int l = 0; l < total; ++l) {
    const Matrix psi = factor_matrix(out.time_loadings.row(l));
    out.true_factor_tensor.set_slice(l, psi);
    out.true_idio.set_slice(l, out.idio);
    out.true_tensor.set_slice(l, psi + out.idio);
    Rng rng(derive_seed(cfg.seed, kStreamDay, static_cast<std::uint64_t>(l)));
    SimulatedDay day = simulate_day_prices(day_cfg, psi, out.idio, rng, l);
    if (visitor) visitor(l, day.panel);
    out.estimated_tensor.set_slice(l, prvm(day.panel, prvm_cfg));
    if (cfg.keep_panels) out.noisy_prices.push_back(std::move(day.panel));
  }

  const Vector tops = top_eigenvalues(out.estimated_tensor);
  const std::span<const double> series(tops.data(), static_cast<std::size_t>(tops.size()));
  out.covariates = har_covariates(series, warmup, cfg.days, cfg.covariate_window);
  out.covariate_next = har_covariates(series, total, 1, cfg.covariate_window).row(0).transpose();

  out.next_day_truth = out.conditional_truth(total);
  out.next_day_realized = factor_matrix(out.time_loadings.row(total)) + out.idio;
  return out;
}

}  // namespace voltensor
