#pragma once

// Batch driver: config schema, manifest emission and the voltensor commands.

#include "voltensor/study.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace voltensor::cli {

using json = nlohmann::ordered_json;

/// Configuration problems (schema, unknown keys, bad values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct PrvmSection {
  int window = 0;  // 0 = floor(sqrt(m))
  double trunc_multiplier = 7.0;
  double trunc_exponent = 0.235;
  std::string scale = "robust";  // robust | sample_sd
  bool truncate = true;
};

struct SimulateSection {
  SimConfig sim;
  bool write_panels = true;
};

struct EstimateSection {
  std::string panels_dir;
  std::string warmup_dir;
  std::string tick_csv;
  double grid_seconds = 60.0;
  std::vector<std::string> assets;
  int covariate_window = 21;
  PrvmSection prvm;
};

struct FitSettingsSection {
  int J = 2;
  bool intercept = false;
  std::optional<double> tau;  // unset = sqrt(2 log p / m^{1/2})
  std::string rule = "soft";  // soft | hard | sector_hard
  std::string residual = "daily";  // daily | fitted
  std::string idio = "mean";       // mean | last
  bool psd_floor = false;
  int eigvec_window = 21;
  int param_window = 252;
  int ar_lag = 1;
};

struct FitSection {
  std::string tensor;
  std::string covariates;
  std::string sectors_csv;
  int r1 = 3;
  int r2 = 1;
  int m = 0;  // intraday returns per day, needed for the default tau
  FitSettingsSection settings;
};

struct PredictSection {
  std::string model;
  std::string covariate_next;
  std::string idio = "mean";
  bool psd_floor = false;
};

struct EvaluateSection {
  std::vector<std::pair<std::string, std::string>> predictions;  // label, path
  std::string truth;
};

struct PeriodSpec {
  std::string name;
  int first = 0;   // index into the out-of-sample days
  int count = -1;  // -1 = through the end
};

struct BacktestSection {
  std::string mode = "simulation";  // simulation | data
  std::vector<MethodSpec> methods = default_methods();
  FitSettingsSection settings;
  // Monte-Carlo study (simulation mode).
  bool study = true;
  std::vector<int> d_grid{50, 100};
  std::vector<int> m_grid{250, 2000};
  int study_seeds = 20;
  // Rolling window.
  int window = 63;
  int out_of_sample_days = 40;
  std::vector<PeriodSpec> periods;
  // Portfolio.
  bool portfolio = true;
  std::vector<double> c_grid{1.0, 1.5, 2.0, 2.5, 3.0};
  double interval_minutes = 10.0;
  double pd_floor = 1e-8;
  bool keep_weights = false;
  // Data mode inputs.
  std::string panels_dir;
  std::string tick_csv;
  double grid_seconds = 60.0;
  std::string sectors_csv;
  std::vector<std::string> assets;
  PrvmSection prvm;
  int scree_count = 50;
  int rank_r_max = 8;
};

struct RunConfig {
  std::uint64_t seed = 1;
  SimulateSection simulate;
  EstimateSection estimate;
  FitSection fit;
  PredictSection predict;
  EvaluateSection evaluate;
  BacktestSection backtest;
};

/// Parses and validates a config document; unknown keys anywhere are
/// rejected with their JSON path.
RunConfig parse_config(const json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Effective configuration with every default filled in. parse_config of the
/// result reproduces an equal document.
json config_to_json(const RunConfig& cfg);

/// Parameters of the simulation design as used, for audit.
json design_parameters(const SimConfig& sim);

PrvmConfig to_prvm_config(const PrvmSection& s);
ForecastSettings to_forecast_settings(const FitSettingsSection& s, double tau,
                                      std::vector<int> sectors);

// Commands. Each writes into `out` and returns normally or throws.
void cmd_simulate(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_estimate(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_fit(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_predict(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_backtest(const RunConfig& cfg, const std::filesystem::path& out);

/// Entry point: `voltensor <command> --config <path> [--seed N] [--out DIR]`.
/// Returns the process exit code.
int run(int argc, char** argv);

// Plain matrix CSV (no header) used for predictions and truths.
void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace voltensor::cli
