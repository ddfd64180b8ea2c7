#include "voltensor/study.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <tuple>

namespace voltensor {

namespace {

const std::vector<std::string>& known_kinds() {
  static const std::vector<std::string> kinds{"PTPOET", "TPOET", "POET", "PRVM", "FIVAR",
                                              "FIVAR_H"};
  return kinds;
}

}  // namespace

std::vector<MethodSpec> default_methods() {
  return {{"PT-POET", "PTPOET", 3, 1}, {"T-POET", "TPOET", 3, 1}, {"POET", "POET", 3, 1},
          {"PRVM", "PRVM", 3, 1},      {"FIVAR", "FIVAR", 3, 1}};
}

bool is_known_method_kind(const std::string& kind) {
  const auto& k = known_kinds();
  return std::find(k.begin(), k.end(), kind) != k.end();
}

double default_tau(int p, int m) {
  if (p < 1 || m < 1) throw Error("default_tau: p and m must be >= 1");
  return std::sqrt(2.0 * std::log(static_cast<double>(p)) / std::sqrt(static_cast<double>(m)));
}

VolTensor day_range(const VolTensor& t, int first, int count) {
  if (first < 0 || count < 0 || first + count > t.dim(3))
    throw Error("day_range: days " + std::to_string(first) + " .. " +
                std::to_string(first + count - 1) + " outside 0 .. " + std::to_string(t.dim(3) - 1));
  VolTensor out(t.dim(1), t.dim(2), count);
  const auto block = t.data().subspan(static_cast<std::size_t>(first * t.dim(1) * t.dim(2)),
                                      static_cast<std::size_t>(count * t.dim(1) * t.dim(2)));
  std::copy(block.begin(), block.end(), out.data().begin());
  return out;
}

Matrix forecast(const MethodSpec& method, const VolTensor& window, const Matrix& X_window,
                const Vector& x_next, const ForecastSettings& s, Warnings* warnings) {
  const std::string& kind = method.kind;
  if (kind == "PTPOET") {
    const SieveDesign sieve = build_sieve(X_window, s.sieve_J, s.intercept);
    FitOptions opts;
    opts.r1 = method.r1;
    opts.r2 = method.r2;
    opts.tau = s.tau;
    opts.rule = s.rule;
    opts.sectors = s.sectors;
    opts.residual = s.residual;
    const PtPoetModel model = fit(window, sieve, opts, warnings);
    PredictOptions popts;
    popts.idio = s.idio;
    popts.psd_floor = s.psd_floor;
    return predict(model, x_next, popts, warnings);
  }
  if (kind == "POET")
    return predict_poet(window.slice(window.dim(3) - 1), method.r1, s.tau, s.rule, s.sectors);
  if (kind == "PRVM") return predict_prvm_last(window);
  if (kind == "TPOET" || kind == "FIVAR" || kind == "FIVAR_H") {
    BaselineSpec spec;
    spec.method = baseline_from_name(kind);
    spec.r1 = method.r1;
    spec.r2 = method.r2;
    spec.tau = s.tau;
    spec.rule = s.rule;
    spec.sectors = s.sectors;
    spec.residual = s.residual;
    spec.eigvec_window = s.eigvec_window;
    spec.param_window = s.param_window;
    spec.ar_lag = s.ar_lag;
    return predict_baseline(window, spec, warnings);
  }
  throw Error("forecast: unknown method kind '" + kind + "'");
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<StudyRecord> run_simulation_study(const StudyConfig& cfg, Warnings* warnings) {
  if (cfg.d_grid.empty() || cfg.m_grid.empty() || cfg.seeds.empty() || cfg.methods.empty())
    throw Error("run_simulation_study: empty D grid, m grid, seed list or method list");
  const int d_max = *std::max_element(cfg.d_grid.begin(), cfg.d_grid.end());
  const int m_max = *std::max_element(cfg.m_grid.begin(), cfg.m_grid.end());
  for (int m : cfg.m_grid)
    if (m < 1 || m_max % m != 0)
      throw Error("run_simulation_study: m = " + std::to_string(m) + " does not divide " +
                  std::to_string(m_max));
  for (int d : cfg.d_grid)
    if (d < 1) throw Error("run_simulation_study: D must be >= 1");
  for (const auto& meth : cfg.methods)
    if (!is_known_method_kind(meth.kind))
      throw Error("run_simulation_study: unknown method kind '" + meth.kind + "'");

  SimConfig sim = cfg.sim;
  sim.days = d_max;
  sim.m = m_max;
  sim.keep_panels = false;

  std::vector<StudyRecord> records;
  for (std::uint64_t seed : cfg.seeds) {
    sim.seed = seed;
    // PRVM at every coarser grid, computed on the fly from the m_max panels.
    std::vector<std::vector<Matrix>> coarse(cfg.m_grid.size());
    const auto visitor = [&](int, const IntradayPanel& panel) {
      for (std::size_t k = 0; k < cfg.m_grid.size(); ++k)
        if (cfg.m_grid[k] != m_max)
          coarse[k].push_back(prvm(subsample(panel, m_max / cfg.m_grid[k]), {}, warnings));
    };
    const SimOutput out = simulate_study(sim, visitor);
    const int total = out.warmup_days + d_max;

    for (std::size_t k = 0; k < cfg.m_grid.size(); ++k) {
      const int m = cfg.m_grid[k];
      const VolTensor estimates =
          m == m_max ? out.estimated_tensor : VolTensor::from_slices(coarse[k]);
      ForecastSettings settings = cfg.settings;
      if (cfg.auto_tau) settings.tau = default_tau(sim.p, m);
      const Vector tops = top_eigenvalues(estimates);
      const std::span<const double> series(tops.data(), static_cast<std::size_t>(tops.size()));
      const Vector x_next =
          har_covariates(series, total, 1, sim.covariate_window).row(0).transpose();
      for (int D : cfg.d_grid) {
        const int first = total - D;
        const VolTensor window = day_range(estimates, first, D);
        const Matrix X = har_covariates(series, first, D, sim.covariate_window);
        for (const auto& meth : cfg.methods) {
          const Matrix pred = forecast(meth, window, X, x_next, settings, warnings);
          records.push_back({seed, D, m, meth.label, norm_errors(pred, out.next_day_truth)});
        }
      }
    }
  }
  return records;
}

std::vector<StudySummaryRow> summarize_study(const std::vector<StudyRecord>& records) {
  struct Key {
    int D, m;
    std::string method;
    bool operator<(const Key& o) const {
      return std::tie(D, m, method) < std::tie(o.D, o.m, o.method);
    }
  };
  std::map<Key, std::vector<const StudyRecord*>> groups;
  std::vector<Key> order;
  for (const auto& r : records) {
    Key k{r.D, r.m, r.method};
    auto [it, inserted] = groups.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.push_back(&r);
  }
  std::vector<StudySummaryRow> rows;
  for (const auto& k : order) {
    const auto& g = groups[k];
    const auto add = [&](const std::string& metric, auto get) {
      std::vector<double> v;
      for (const auto* r : g)
        if (auto x = get(*r)) v.push_back(*x);
      const double med = median(v);
      rows.push_back({k.D, k.m, k.method, metric, med,
                      v.empty() ? std::numeric_limits<double>::quiet_NaN() : std::log(med),
                      static_cast<int>(v.size())});
    };
    add("frobenius", [](const StudyRecord& r) { return std::optional(r.errors.frobenius); });
    add("max", [](const StudyRecord& r) { return std::optional(r.errors.max); });
    add("spectral", [](const StudyRecord& r) { return std::optional(r.errors.spectral); });
    add("relative_frobenius", [](const StudyRecord& r) { return r.errors.relative_frobenius; });
  }
  return rows;
}

RollingForecasts rolling_forecasts(const VolTensor& estimates,
                                   const std::vector<MethodSpec>& methods,
                                   const RollingConfig& cfg, const ForecastSettings& settings,
                                   Warnings* warnings) {
  const int total = static_cast<int>(estimates.dim(3));
  const int last = cfg.last_day < 0 ? total : cfg.last_day;
  const int history = std::max(5, cfg.covariate_window);
  if (cfg.window < 1) throw Error("rolling_forecasts: window must be >= 1");
  if (cfg.first_day - cfg.window < history)
    throw Error("rolling_forecasts: first out-of-sample day " + std::to_string(cfg.first_day) +
                " leaves fewer than " + std::to_string(history) +
                " days of covariate history before a window of " + std::to_string(cfg.window));
  if (last > total || last <= cfg.first_day)
    throw Error("rolling_forecasts: empty or out-of-range out-of-sample period");
  for (const auto& meth : methods)
    if (!is_known_method_kind(meth.kind))
      throw Error("rolling_forecasts: unknown method kind '" + meth.kind + "'");

  const Vector tops = top_eigenvalues(estimates);
  const std::span<const double> series(tops.data(), static_cast<std::size_t>(tops.size()));
  RollingForecasts out;
  for (const auto& meth : methods) {
    if (out.preds.count(meth.label)) throw Error("rolling_forecasts: duplicate label " + meth.label);
    out.order.push_back(meth.label);
    out.preds[meth.label];
  }
  for (int l = cfg.first_day; l < last; ++l) {
    const int first = l - cfg.window;
    const VolTensor window = day_range(estimates, first, cfg.window);
    const Matrix X = har_covariates(series, first, cfg.window, cfg.covariate_window);
    const Vector x_next = har_covariates(series, l, 1, cfg.covariate_window).row(0).transpose();
    out.days.push_back(l);
    for (const auto& meth : methods)
      out.preds[meth.label].push_back(forecast(meth, window, X, x_next, settings, warnings));
  }
  return out;
}

LossReport evaluate_losses(const RollingForecasts& f, std::span<const Matrix> proxies,
                           const std::string& period) {
  LossReport rep;
  for (const auto& label : f.order) {
    const auto& preds = f.preds.at(label);
    const Vector ml = mspe_losses(preds, proxies);
    const QlikeResult q = qlike(preds, proxies);
    rep.mspe_losses[label] = ml;
    rep.qlike_losses[label] = q.losses;
    rep.rows.push_back({label, period, "MSPE", ml.size() ? ml.mean() : 0.0,
                        static_cast<int>(ml.size()), 0});
    rep.rows.push_back({label, period, "QLIKE", q.value, static_cast<int>(q.losses.size()),
                        q.excluded});
  }
  for (std::size_t a = 0; a < f.order.size(); ++a) {
    for (std::size_t b = a + 1; b < f.order.size(); ++b) {
      const auto& la = f.order[a];
      const auto& lb = f.order[b];
      const Vector& ma = rep.mspe_losses[la];
      const Vector& mb = rep.mspe_losses[lb];
      if (ma.size() >= 10)
        rep.dm.push_back({"MSPE", la, lb,
                          dm_test({ma.data(), static_cast<std::size_t>(ma.size())},
                                  {mb.data(), static_cast<std::size_t>(mb.size())})});
      std::vector<double> qa, qb;
      const Vector& xa = rep.qlike_losses[la];
      const Vector& xb = rep.qlike_losses[lb];
      for (Eigen::Index t = 0; t < xa.size(); ++t)
        if (std::isfinite(xa(t)) && std::isfinite(xb(t))) {
          qa.push_back(xa(t));
          qb.push_back(xb(t));
        }
      if (qa.size() >= 10) rep.dm.push_back({"QLIKE", la, lb, dm_test(qa, qb)});
    }
  }
  return rep;
}

}  // namespace voltensor
