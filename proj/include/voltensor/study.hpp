#pragma once

// Method dispatch and experiment drivers shared by the CLI and the
// acceptance suite: the Monte-Carlo prediction study and the rolling-window
// out-of-sample evaluation.

#include "voltensor/baselines.hpp"
#include "voltensor/evaluation.hpp"
#include "voltensor/market_sim.hpp"
#include "voltensor/portfolio.hpp"
#include "voltensor/ptpoet.hpp"

#include <map>

namespace voltensor {

/// kind is one of PTPOET, TPOET, POET, PRVM, FIVAR, FIVAR_H.
struct MethodSpec {
  std::string label;
  std::string kind;
  int r1 = 3;
  int r2 = 1;
};

std::vector<MethodSpec> default_methods();
bool is_known_method_kind(const std::string& kind);

struct ForecastSettings {
  double tau = 0.0;
  ThresholdRule rule = ThresholdRule::Soft;
  std::vector<int> sectors;
  int sieve_J = 2;
  bool intercept = false;
  IdioForecast idio = IdioForecast::Mean;
  ResidualSource residual = ResidualSource::Daily;
  bool psd_floor = false;
  int eigvec_window = 21;
  int param_window = 252;
  int ar_lag = 1;
};

/// sqrt(2 log p / m^{1/2}).
double default_tau(int p, int m);

/// One-day-ahead prediction from an in-sample window of D daily estimates.
/// X_window (D x 3) and x_next are only used by PTPOET.
Matrix forecast(const MethodSpec& method, const VolTensor& window, const Matrix& X_window,
                const Vector& x_next, const ForecastSettings& settings,
                Warnings* warnings = nullptr);

/// Slices first .. first + count - 1.
VolTensor day_range(const VolTensor& t, int first, int count);

// ---------------------------------------------------------------------------
// Monte-Carlo prediction study.

struct StudyConfig {
  SimConfig sim;  // sim.days and sim.m are overridden by the grids
  std::vector<int> d_grid{50, 100};
  std::vector<int> m_grid{250, 2000};  // each must divide max(m_grid)
  std::vector<std::uint64_t> seeds{1};
  std::vector<MethodSpec> methods = default_methods();
  ForecastSettings settings;
  bool auto_tau = true;  // tau = default_tau(p, m) per m
};

struct StudyRecord {
  std::uint64_t seed = 0;
  int D = 0;
  int m = 0;
  std::string method;
  NormErrors errors;
};

std::vector<StudyRecord> run_simulation_study(const StudyConfig& cfg,
                                              Warnings* warnings = nullptr);

struct StudySummaryRow {
  int D = 0;
  int m = 0;
  std::string method;
  std::string metric;  // frobenius, max, spectral, relative_frobenius
  double median = 0.0;
  double log_median = 0.0;
  int count = 0;
};

/// Medians over seeds per (D, m, method, metric).
std::vector<StudySummaryRow> summarize_study(const std::vector<StudyRecord>& records);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Rolling-window evaluation.

struct RollingConfig {
  int window = 63;       // in-sample days
  int first_day = 0;     // first out-of-sample day (index into the estimates)
  int last_day = -1;     // one past the last out-of-sample day; -1 = end
  int covariate_window = 21;
};

struct RollingForecasts {
  std::vector<int> days;
  std::map<std::string, std::vector<Matrix>> preds;  // by method label
  std::vector<std::string> order;                    // method labels in input order
};

/// For each out-of-sample day l, fits every method on days l - window .. l - 1
/// of `estimates` and predicts day l. Covariates are HAR averages of the top
/// eigenvalues of `estimates`.
RollingForecasts rolling_forecasts(const VolTensor& estimates,
                                   const std::vector<MethodSpec>& methods,
                                   const RollingConfig& cfg, const ForecastSettings& settings,
                                   Warnings* warnings = nullptr);

struct LossRow {
  std::string method;
  std::string period;
  std::string metric;  // MSPE or QLIKE
  double value = 0.0;
  int days = 0;
  int excluded = 0;
};

struct DmCell {
  std::string metric;
  std::string method_a;
  std::string method_b;
  DmResult result;
};

struct LossReport {
  std::vector<LossRow> rows;
  std::vector<DmCell> dm;
  std::map<std::string, Vector> mspe_losses;
  std::map<std::string, Vector> qlike_losses;
};

/// MSPE/QLIKE per method against proxies (one per forecast day) and pairwise
/// DM tests on the per-day losses. QLIKE DM tests use days included for both
/// methods and are skipped when fewer than 10 remain.
LossReport evaluate_losses(const RollingForecasts& f, std::span<const Matrix> proxies,
                           const std::string& period);

}  // namespace voltensor
