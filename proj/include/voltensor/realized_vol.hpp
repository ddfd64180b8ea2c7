#pragma once

// Daily integrated volatility matrices from noisy intraday prices.

#include "voltensor/common.hpp"
#include "voltensor/tensor.hpp"

#include <filesystem>
#include <span>

namespace voltensor {

/// Synchronized log prices of p assets on a common grid of m+1 times.
struct IntradayPanel {
  int day_index = 0;
  std::vector<double> times;  // strictly increasing
  Matrix log_prices;          // (m+1) x p

  Eigen::Index assets() const { return log_prices.cols(); }
  Eigen::Index intervals() const { return log_prices.rows() - 1; }
  void validate() const;
};

/// Every `step`-th observation of the panel (the first observation is kept).
IntradayPanel subsample(const IntradayPanel& panel, int step);

struct Tick {
  double time = 0.0;
  double value = 0.0;
};

/// Value at each grid time is the last tick at or before it. Ticks need not
/// be sorted. Throws naming the asset when it has no tick at or before grid[0].
IntradayPanel previous_tick_sync(std::span<const std::vector<Tick>> ticks_per_asset,
                                 std::span<const double> grid, int day_index = 0);

enum class PreaveragingWeight { Triangular };  // g(x) = min(x, 1 - x)

/// How the per-asset truncation constant c_{i,u} measures the spread of the
/// pre-averaged returns.
enum class TruncationScale { SampleSd, Robust };

struct PrvmConfig {
  int window = 0;  // K; 0 selects floor(sqrt(m))
  PreaveragingWeight weight = PreaveragingWeight::Triangular;
  double trunc_multiplier = 7.0;  // c_u = trunc_multiplier * scale(m^{1/4} Ybar_i)
  double trunc_exponent = 0.235;  // u_i = c_u * m^{-trunc_exponent}
  TruncationScale scale = TruncationScale::Robust;
  bool truncate = true;
};

double preaveraging_weight(PreaveragingWeight w, double x);

/// phi = int_0^1 g(t)^2 dt in closed form (1/12 for the triangular weight).
double preaveraging_phi(PreaveragingWeight w);

/// Jump-truncated pre-averaging realized volatility matrix of one day.
/// Output is exactly symmetric. Pairs for which every window is truncated get
/// a zero entry and a warning.
Matrix prvm(const IntradayPanel& panel, const PrvmConfig& cfg = {},
            Warnings* warnings = nullptr);

/// Stacks per-day PRVM estimates into a p x p x D tensor.
VolTensor build_tensor(std::span<const IntradayPanel> panels, const PrvmConfig& cfg = {},
                       Warnings* warnings = nullptr);

/// Sum of outer products of the raw returns (plain realized covariance).
Matrix realized_covariance(const IntradayPanel& panel);

// Panel CSV: header "t,asset_1,...,asset_p", one row per observation.
void write_panel_csv(const IntradayPanel& panel, const std::filesystem::path& path);
IntradayPanel read_panel_csv(const std::filesystem::path& path, int day_index = 0);

struct TickRecord {
  std::string asset;
  double epoch_seconds = 0.0;
  double price = 0.0;
};

/// Raw tick CSV with header "asset,time,price" (epoch seconds, positive price).
std::vector<TickRecord> read_tick_csv(const std::filesystem::path& path);

/// Groups ticks by UTC day and synchronizes each day on a grid with the given
/// spacing in seconds, spanning the interval on which every asset has traded.
/// Prices are converted to log prices. `assets` fixes the column order.
std::vector<IntradayPanel> panels_from_ticks(std::span<const TickRecord> ticks,
                                             const std::vector<std::string>& assets,
                                             double grid_seconds, Warnings* warnings = nullptr);

}  // namespace voltensor
