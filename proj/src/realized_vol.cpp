#include "voltensor/realized_vol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>

namespace voltensor {

void IntradayPanel::validate() const {
  if (static_cast<Eigen::Index>(times.size()) != log_prices.rows())
    throw Error("IntradayPanel: " + std::to_string(times.size()) + " times but " +
                std::to_string(log_prices.rows()) + " price rows");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      throw Error("IntradayPanel: times are not strictly increasing at index " +
                  std::to_string(k));
  if (!log_prices.allFinite()) throw Error("IntradayPanel: non-finite log price");
}

IntradayPanel subsample(const IntradayPanel& panel, int step) {
  if (step < 1) throw Error("subsample: step must be >= 1");
  const Eigen::Index n = (panel.log_prices.rows() - 1) / step + 1;
  IntradayPanel out;
  out.day_index = panel.day_index;
  out.times.resize(static_cast<std::size_t>(n));
  out.log_prices.resize(n, panel.log_prices.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    out.times[static_cast<std::size_t>(k)] = panel.times[static_cast<std::size_t>(k * step)];
    out.log_prices.row(k) = panel.log_prices.row(k * step);
  }
  return out;
}

IntradayPanel previous_tick_sync(std::span<const std::vector<Tick>> ticks_per_asset,
                                 std::span<const double> grid, int day_index) {
  IntradayPanel out;
  out.day_index = day_index;
  out.times.assign(grid.begin(), grid.end());
  const auto p = static_cast<Eigen::Index>(ticks_per_asset.size());
  out.log_prices.resize(static_cast<Eigen::Index>(grid.size()), p);
  for (Eigen::Index a = 0; a < p; ++a) {
    std::vector<Tick> ticks = ticks_per_asset[static_cast<std::size_t>(a)];
    std::stable_sort(ticks.begin(), ticks.end(),
                     [](const Tick& x, const Tick& y) { return x.time < y.time; });
    if (grid.empty()) continue;
    if (ticks.empty() || ticks.front().time > grid.front())
      throw Error("previous_tick_sync: asset " + std::to_string(a) +
                  " has no tick at or before the first grid time");
    std::size_t next = 0;
    double last = ticks.front().value;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      while (next < ticks.size() && ticks[next].time <= grid[g]) last = ticks[next++].value;
      out.log_prices(static_cast<Eigen::Index>(g), a) = last;
    }
  }
  out.validate();
  return out;
}

double preaveraging_weight(PreaveragingWeight w, double x) {
  switch (w) {
    case PreaveragingWeight::Triangular:
      return std::min(x, 1.0 - x);
  }
  return 0.0;
}

double preaveraging_phi(PreaveragingWeight w) {
  switch (w) {
    case PreaveragingWeight::Triangular:
      return 1.0 / 12.0;
  }
  return 0.0;
}

namespace {

double robust_scale(std::vector<double> v) {
  if (v.empty()) return 0.0;
  auto median = [](std::vector<double>& x) {
    const auto mid = x.begin() + static_cast<std::ptrdiff_t>(x.size() / 2);
    std::nth_element(x.begin(), mid, x.end());
    double med = *mid;
    if (x.size() % 2 == 0) med = 0.5 * (med + *std::max_element(x.begin(), mid));
    return med;
  };
  const double med = median(v);
  for (double& x : v) x = std::abs(x - med);
  // 1.4826 * MAD is consistent for the standard deviation of a Gaussian.
  return 1.482602218505602 * median(v);
}

double sample_sd(const Eigen::Ref<const Vector>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

Matrix prvm(const IntradayPanel& panel, const PrvmConfig& cfg, Warnings* warnings) {
  panel.validate();
  const Eigen::Index m = panel.intervals();
  const Eigen::Index p = panel.assets();
  const Eigen::Index K =
      cfg.window > 0 ? cfg.window
                     : static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(m))));
  if (K < 2) throw Error("prvm: pre-averaging window must be >= 2 (m = " + std::to_string(m) + ")");
  if (m < K + 1)
    throw Error("prvm: need m >= K + 1 intraday returns (m = " + std::to_string(m) +
                ", K = " + std::to_string(K) + ")");
  if (cfg.truncate && !(cfg.trunc_multiplier > 0.0))
    throw Error("prvm: truncation multiplier must be positive");

  const Matrix returns = panel.log_prices.bottomRows(m) - panel.log_prices.topRows(m);
  const Eigen::Index windows = m - K + 1;
  const double kd = static_cast<double>(K);

  // Row k0 of ybar is sum_{s=1}^{K-1} g(s/K) * returns.row(k0 + s).
  Matrix ybar = Matrix::Zero(windows, p);
  for (Eigen::Index s = 1; s < K; ++s)
    ybar += preaveraging_weight(cfg.weight, static_cast<double>(s) / kd) *
            returns.middleRows(s, windows);

  // Noise-correction weights (g(s/K) - g((s-1)/K))^2 for s = 1..K, applied to
  // r_{k+s-1}; row index k0 + s - 1 of `returns`.
  Vector dw(K);
  for (Eigen::Index s = 1; s <= K; ++s) {
    const double d = preaveraging_weight(cfg.weight, static_cast<double>(s) / kd) -
                     preaveraging_weight(cfg.weight, static_cast<double>(s - 1) / kd);
    dw(s - 1) = d * d;
  }
  Vector coverage = Vector::Zero(m);
  for (Eigen::Index k0 = 0; k0 < windows; ++k0) coverage.segment(k0, K) += dw;

  Matrix sum = ybar.transpose() * ybar -
               0.5 * (returns.transpose() * coverage.asDiagonal() * returns);

  if (cfg.truncate) {
    const double md = static_cast<double>(m);
    Vector bound(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      const Vector scaled = std::pow(md, 0.25) * ybar.col(i);
      double spread = cfg.scale == TruncationScale::SampleSd
                          ? sample_sd(scaled)
                          : robust_scale({scaled.data(), scaled.data() + scaled.size()});
      // Mostly-flat series (stale quotes) have zero MAD.
      if (spread == 0.0) spread = sample_sd(scaled);
      bound(i) = cfg.trunc_multiplier * spread * std::pow(md, -cfg.trunc_exponent);
    }
    Matrix kept = Matrix::Ones(windows, p);
    bool any_dropped = false;
    std::vector<Eigen::Index> dropped;
    for (Eigen::Index k0 = 0; k0 < windows; ++k0) {
      dropped.clear();
      for (Eigen::Index i = 0; i < p; ++i)
        if (std::abs(ybar(k0, i)) > bound(i)) dropped.push_back(i);
      if (dropped.empty()) continue;
      any_dropped = true;
      const Vector y = ybar.row(k0).transpose();
      const auto block = returns.middleRows(k0, K);  // r_{k}, ..., r_{k+K-1}
      std::vector<bool> is_dropped(static_cast<std::size_t>(p), false);
      for (auto i : dropped) {
        is_dropped[static_cast<std::size_t>(i)] = true;
        kept(k0, i) = 0.0;
      }
      for (auto i : dropped) {
        // Row i of the window's contribution y y^T - 0.5 * sum_s w_s r_s r_s^T.
        Vector row = y(i) * y - 0.5 * (block.transpose() * (dw.cwiseProduct(block.col(i))));
        for (Eigen::Index j = 0; j < p; ++j) {
          sum(i, j) -= row(j);
          if (!is_dropped[static_cast<std::size_t>(j)]) sum(j, i) -= row(j);
        }
      }
    }
    if (any_dropped) {
      const Matrix pairs_kept = kept.transpose() * kept;
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = i; j < p; ++j)
          if (pairs_kept(i, j) < 0.5) {
            sum(i, j) = sum(j, i) = 0.0;
            warn(warnings, "prvm: day " + std::to_string(panel.day_index) +
                               ": every window truncated for pair (" + std::to_string(i) +
                               "," + std::to_string(j) + ")");
          }
    }
  }
  return symmetrize(sum / (preaveraging_phi(cfg.weight) * kd));
}

VolTensor build_tensor(std::span<const IntradayPanel> panels, const PrvmConfig& cfg,
                       Warnings* warnings) {
  if (panels.empty()) return {};
  const Eigen::Index p = panels.front().assets();
  VolTensor out(p, p, static_cast<Eigen::Index>(panels.size()));
  for (std::size_t l = 0; l < panels.size(); ++l) {
    if (panels[l].assets() != p)
      throw Error("build_tensor: day " + std::to_string(l) + " has " +
                  std::to_string(panels[l].assets()) + " assets, expected " + std::to_string(p));
    out.set_slice(static_cast<Eigen::Index>(l), prvm(panels[l], cfg, warnings));
  }
  return out;
}

Matrix realized_covariance(const IntradayPanel& panel) {
  const Eigen::Index m = panel.intervals();
  const Matrix r = panel.log_prices.bottomRows(m) - panel.log_prices.topRows(m);
  return symmetrize(r.transpose() * r);
}

void write_panel_csv(const IntradayPanel& panel, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "t";
  for (Eigen::Index a = 0; a < panel.assets(); ++a) os << ",asset_" << (a + 1);
  os << '\n';
  char buf[32];
  for (Eigen::Index k = 0; k < panel.log_prices.rows(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", panel.times[static_cast<std::size_t>(k)]);
    os << buf;
    for (Eigen::Index a = 0; a < panel.assets(); ++a) {
      std::snprintf(buf, sizeof buf, "%.17g", panel.log_prices(k, a));
      os << ',' << buf;
    }
    os << '\n';
  }
  if (!os) throw Error("write failed for " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(path.string() + ":" + std::to_string(line) + ": not a number: '" + s + "'");
  }
}

}  // namespace

IntradayPanel read_panel_csv(const std::filesystem::path& path, int day_index) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(path.string() + ": empty file");
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "t")
    throw Error(path.string() + ": expected header 't,asset_1,...'");
  const std::size_t p = header.size() - 1;
  std::vector<double> values;
  IntradayPanel out;
  out.day_index = day_index;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != p + 1)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                  std::to_string(p + 1) + " columns");
    out.times.push_back(parse_double(cells[0], path, lineno));
    for (std::size_t a = 0; a < p; ++a) values.push_back(parse_double(cells[a + 1], path, lineno));
  }
  const auto rows = static_cast<Eigen::Index>(out.times.size());
  out.log_prices =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          values.data(), rows, static_cast<Eigen::Index>(p));
  out.validate();
  return out;
}

std::vector<TickRecord> read_tick_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(path.string() + ": empty file");
  const auto header = split_csv(line);
  if (header.size() != 3 || header[0] != "asset" || header[1] != "time" || header[2] != "price")
    throw Error(path.string() + ": expected header 'asset,time,price'");
  std::vector<TickRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    TickRecord rec{cells[0], parse_double(cells[1], path, lineno),
                   parse_double(cells[2], path, lineno)};
    if (!(rec.price > 0.0))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": price must be positive");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<IntradayPanel> panels_from_ticks(std::span<const TickRecord> ticks,
                                             const std::vector<std::string>& assets,
                                             double grid_seconds, Warnings* warnings) {
  if (!(grid_seconds > 0.0)) throw Error("panels_from_ticks: grid spacing must be positive");
  std::map<std::string, std::size_t> column;
  for (std::size_t a = 0; a < assets.size(); ++a) column[assets[a]] = a;
  std::map<long long, std::vector<std::vector<Tick>>> by_day;
  for (const auto& t : ticks) {
    auto it = column.find(t.asset);
    if (it == column.end()) continue;
    const auto day = static_cast<long long>(std::floor(t.epoch_seconds / 86400.0));
    auto& slot = by_day[day];
    if (slot.empty()) slot.resize(assets.size());
    slot[it->second].push_back({t.epoch_seconds, std::log(t.price)});
  }
  std::vector<IntradayPanel> out;
  for (auto& [day, per_asset] : by_day) {
    double start = -std::numeric_limits<double>::infinity();
    double end = std::numeric_limits<double>::infinity();
    bool complete = true;
    for (std::size_t a = 0; a < per_asset.size(); ++a) {
      if (per_asset[a].empty()) {
        warn(warnings, "panels_from_ticks: day " + std::to_string(day) + " skipped, asset " +
                           assets[a] + " has no ticks");
        complete = false;
        break;
      }
      auto [lo, hi] = std::minmax_element(
          per_asset[a].begin(), per_asset[a].end(),
          [](const Tick& x, const Tick& y) { return x.time < y.time; });
      start = std::max(start, lo->time);
      end = std::min(end, hi->time);
    }
    if (!complete) continue;
    std::vector<double> grid;
    for (double t = start; t <= end + 1e-9; t += grid_seconds) grid.push_back(t);
    if (grid.size() < 3) {
      warn(warnings, "panels_from_ticks: day " + std::to_string(day) +
                         " skipped, common trading interval too short");
      continue;
    }
    out.push_back(previous_tick_sync(per_asset, grid, static_cast<int>(day)));
  }
  return out;
}

}  // namespace voltensor
