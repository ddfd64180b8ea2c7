#include "voltensor/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace voltensor::cli {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config reading with unknown-key rejection.

class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* child(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path_of(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const char* key, int& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer()) throw ConfigError(path_of(key) + ": expected an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        throw ConfigError(path_of(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) throw ConfigError(path_of(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) throw ConfigError(path_of(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) throw ConfigError(path_of(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
  void get_list(const char* key, std::vector<T>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array()) throw ConfigError(path_of(key) + ": expected an array");
      std::vector<T> tmp;
      for (const auto& e : *v) {
        if constexpr (std::is_same_v<T, std::string>) {
          if (!e.is_string()) throw ConfigError(path_of(key) + ": expected strings");
        } else if constexpr (std::is_integral_v<T>) {
          if (!e.is_number_integer()) throw ConfigError(path_of(key) + ": expected integers");
        } else {
          if (!e.is_number()) throw ConfigError(path_of(key) + ": expected numbers");
        }
        tmp.push_back(e.get<T>());
      }
      out = std::move(tmp);
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown key " + path_of(it.key().c_str()));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void require_one_of(const std::string& value, std::initializer_list<const char*> allowed,
                    const std::string& path) {
  for (const char* a : allowed)
    if (value == a) return;
  std::string list;
  for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
  throw ConfigError(path + ": '" + value + "' is not one of " + list);
}

void parse_prvm(Obj& parent, const char* key, PrvmSection& s) {
  const json* j = parent.child(key);
  if (!j) return;
  Obj o(*j, parent.path_of(key));
  o.get("window", s.window);
  o.get("trunc_multiplier", s.trunc_multiplier);
  o.get("trunc_exponent", s.trunc_exponent);
  o.get("scale", s.scale);
  o.get("truncate", s.truncate);
  o.finish();
  const std::string p = parent.path_of(key);
  require(s.window == 0 || s.window >= 2, p + ".window must be 0 (automatic) or >= 2");
  require(s.trunc_multiplier > 0, p + ".trunc_multiplier must be positive");
  require_one_of(s.scale, {"robust", "sample_sd"}, p + ".scale");
}

json prvm_json(const PrvmSection& s) {
  return {{"window", s.window},
          {"trunc_multiplier", s.trunc_multiplier},
          {"trunc_exponent", s.trunc_exponent},
          {"scale", s.scale},
          {"truncate", s.truncate}};
}

void parse_settings(Obj& parent, const char* key, FitSettingsSection& s) {
  const json* j = parent.child(key);
  if (!j) return;
  const std::string p = parent.path_of(key);
  Obj o(*j, p);
  o.get("J", s.J);
  o.get("intercept", s.intercept);
  if (const json* t = o.child("tau")) {
    if (t->is_null() || (t->is_string() && t->get<std::string>() == "auto"))
      s.tau.reset();
    else if (t->is_number())
      s.tau = t->get<double>();
    else
      throw ConfigError(p + ".tau: expected a number or \"auto\"");
  }
  o.get("rule", s.rule);
  o.get("residual", s.residual);
  o.get("idio", s.idio);
  o.get("psd_floor", s.psd_floor);
  o.get("eigvec_window", s.eigvec_window);
  o.get("param_window", s.param_window);
  o.get("ar_lag", s.ar_lag);
  o.finish();
  require(s.J >= 1, p + ".J must be >= 1");
  require(!s.tau || *s.tau >= 0, p + ".tau must be >= 0");
  require_one_of(s.rule, {"soft", "hard", "sector_hard"}, p + ".rule");
  require_one_of(s.residual, {"daily", "fitted"}, p + ".residual");
  require_one_of(s.idio, {"mean", "last"}, p + ".idio");
  require(s.eigvec_window >= 1 && s.param_window >= 2 && s.ar_lag >= 1,
          p + ": eigvec_window >= 1, param_window >= 2 and ar_lag >= 1 required");
}

json settings_json(const FitSettingsSection& s) {
  json j{{"J", s.J}, {"intercept", s.intercept}};
  j["tau"] = s.tau ? json(*s.tau) : json("auto");
  j["rule"] = s.rule;
  j["residual"] = s.residual;
  j["idio"] = s.idio;
  j["psd_floor"] = s.psd_floor;
  j["eigvec_window"] = s.eigvec_window;
  j["param_window"] = s.param_window;
  j["ar_lag"] = s.ar_lag;
  return j;
}

void parse_simulate(const json& j, SimulateSection& s) {
  Obj o(j, "simulate");
  SimConfig& c = s.sim;
  o.get("p", c.p);
  o.get("days", c.days);
  o.get("m", c.m);
  o.get("r1", c.r1);
  o.get("r2", c.r2);
  if (const json* h = o.child("har")) {
    Obj ho(*h, "simulate.har");
    ho.get("b0", c.har.b0);
    ho.get("b1", c.har.b1);
    ho.get("b2", c.har.b2);
    ho.get("b3", c.har.b3);
    ho.get("noise_sd", c.har.noise_sd);
    ho.finish();
  }
  o.get("jump_intensity", c.jump_intensity);
  o.get("jump_size_scale", c.jump_size_scale);
  o.get("noise_scale", c.noise_scale);
  o.get("gamma_shape", c.gamma_shape);
  o.get("gamma_rate", c.gamma_rate);
  o.get("sparse_prob_scale", c.sparse_prob_scale);
  o.get("burn_in_days", c.burn_in_days);
  o.get("covariate_window", c.covariate_window);
  o.get("write_panels", s.write_panels);
  o.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("simulate: ") + e.what());
  }
  require(c.har.b1 + c.har.b2 + c.har.b3 < 1.0, "simulate.har: b1 + b2 + b3 must be < 1");
}

json simulate_json(const SimulateSection& s) {
  const SimConfig& c = s.sim;
  return {{"p", c.p},
          {"days", c.days},
          {"m", c.m},
          {"r1", c.r1},
          {"r2", c.r2},
          {"har",
           {{"b0", c.har.b0},
            {"b1", c.har.b1},
            {"b2", c.har.b2},
            {"b3", c.har.b3},
            {"noise_sd", c.har.noise_sd}}},
          {"jump_intensity", c.jump_intensity},
          {"jump_size_scale", c.jump_size_scale},
          {"noise_scale", c.noise_scale},
          {"gamma_shape", c.gamma_shape},
          {"gamma_rate", c.gamma_rate},
          {"sparse_prob_scale", c.sparse_prob_scale},
          {"burn_in_days", c.burn_in_days},
          {"covariate_window", c.covariate_window},
          {"write_panels", s.write_panels}};
}

void parse_methods(Obj& parent, std::vector<MethodSpec>& methods) {
  const json* j = parent.child("methods");
  if (!j) return;
  const std::string p = parent.path_of("methods");
  require(j->is_array() && !j->empty(), p + ": expected a non-empty array");
  std::vector<MethodSpec> out;
  std::set<std::string> labels;
  for (std::size_t i = 0; i < j->size(); ++i) {
    const std::string ip = p + "[" + std::to_string(i) + "]";
    Obj o((*j)[i], ip);
    MethodSpec m;
    o.get("kind", m.kind);
    m.label = m.kind;
    o.get("label", m.label);
    o.get("r1", m.r1);
    o.get("r2", m.r2);
    o.finish();
    require(is_known_method_kind(m.kind),
            ip + ".kind: '" + m.kind + "' is not one of PTPOET, TPOET, POET, PRVM, FIVAR, FIVAR_H");
    require(m.r1 >= 1 && m.r2 >= 1, ip + ": r1 and r2 must be >= 1");
    require(labels.insert(m.label).second, ip + ".label: duplicate label '" + m.label + "'");
    out.push_back(m);
  }
  methods = std::move(out);
}

void parse_backtest(const json& j, BacktestSection& s) {
  Obj o(j, "backtest");
  o.get("mode", s.mode);
  parse_methods(o, s.methods);
  parse_settings(o, "settings", s.settings);
  o.get("study", s.study);
  o.get_list("d_grid", s.d_grid);
  o.get_list("m_grid", s.m_grid);
  o.get("study_seeds", s.study_seeds);
  o.get("window", s.window);
  o.get("out_of_sample_days", s.out_of_sample_days);
  if (const json* pj = o.child("periods")) {
    require(pj->is_array(), "backtest.periods: expected an array");
    s.periods.clear();
    for (std::size_t i = 0; i < pj->size(); ++i) {
      const std::string ip = "backtest.periods[" + std::to_string(i) + "]";
      Obj po((*pj)[i], ip);
      PeriodSpec ps;
      po.get("name", ps.name);
      po.get("first", ps.first);
      po.get("count", ps.count);
      po.finish();
      require(!ps.name.empty(), ip + ".name is required");
      require(ps.first >= 0 && (ps.count == -1 || ps.count >= 1),
              ip + ": first >= 0 and count >= 1 (or -1) required");
      s.periods.push_back(ps);
    }
  }
  o.get("portfolio", s.portfolio);
  o.get_list("c_grid", s.c_grid);
  o.get("interval_minutes", s.interval_minutes);
  o.get("pd_floor", s.pd_floor);
  o.get("keep_weights", s.keep_weights);
  o.get("panels_dir", s.panels_dir);
  o.get("tick_csv", s.tick_csv);
  o.get("grid_seconds", s.grid_seconds);
  o.get("sectors_csv", s.sectors_csv);
  o.get_list("assets", s.assets);
  parse_prvm(o, "prvm", s.prvm);
  o.get("scree_count", s.scree_count);
  o.get("rank_r_max", s.rank_r_max);
  o.finish();

  require_one_of(s.mode, {"simulation", "data"}, "backtest.mode");
  require(!s.d_grid.empty() && !s.m_grid.empty(), "backtest: d_grid and m_grid must be non-empty");
  for (int d : s.d_grid) require(d >= 2, "backtest.d_grid: entries must be >= 2");
  const int m_max = *std::max_element(s.m_grid.begin(), s.m_grid.end());
  for (int m : s.m_grid)
    require(m >= 1 && m_max % m == 0, "backtest.m_grid: every entry must divide the largest");
  require(s.study_seeds >= 1, "backtest.study_seeds must be >= 1");
  require(s.window >= 2, "backtest.window must be >= 2");
  require(s.out_of_sample_days >= 1, "backtest.out_of_sample_days must be >= 1");
  require(!s.c_grid.empty(), "backtest.c_grid must be non-empty");
  for (double c : s.c_grid) require(c >= 1.0, "backtest.c_grid: entries must be >= 1");
  require(s.interval_minutes > 0, "backtest.interval_minutes must be positive");
  require(s.pd_floor > 0, "backtest.pd_floor must be positive");
  require(s.grid_seconds > 0, "backtest.grid_seconds must be positive");
  require(s.scree_count >= 1 && s.rank_r_max >= 1, "backtest: scree_count and rank_r_max >= 1");
  if (s.mode == "data")
    require(s.panels_dir.empty() != s.tick_csv.empty(),
            "backtest: data mode needs exactly one of panels_dir and tick_csv");
  if (s.settings.rule == "sector_hard")
    require(!s.sectors_csv.empty(), "backtest: rule sector_hard needs sectors_csv");
}

json backtest_json(const BacktestSection& s) {
  json methods = json::array();
  for (const auto& m : s.methods)
    methods.push_back({{"label", m.label}, {"kind", m.kind}, {"r1", m.r1}, {"r2", m.r2}});
  json periods = json::array();
  for (const auto& p : s.periods)
    periods.push_back({{"name", p.name}, {"first", p.first}, {"count", p.count}});
  return {{"mode", s.mode},
          {"methods", methods},
          {"settings", settings_json(s.settings)},
          {"study", s.study},
          {"d_grid", s.d_grid},
          {"m_grid", s.m_grid},
          {"study_seeds", s.study_seeds},
          {"window", s.window},
          {"out_of_sample_days", s.out_of_sample_days},
          {"periods", periods},
          {"portfolio", s.portfolio},
          {"c_grid", s.c_grid},
          {"interval_minutes", s.interval_minutes},
          {"pd_floor", s.pd_floor},
          {"keep_weights", s.keep_weights},
          {"panels_dir", s.panels_dir},
          {"tick_csv", s.tick_csv},
          {"grid_seconds", s.grid_seconds},
          {"sectors_csv", s.sectors_csv},
          {"assets", s.assets},
          {"prvm", prvm_json(s.prvm)},
          {"scree_count", s.scree_count},
          {"rank_r_max", s.rank_r_max}};
}

// ---------------------------------------------------------------------------
// Output helpers.

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

double parse_number(const std::string& s, const fs::path& path, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(path.string() + ":" + std::to_string(line) + ": '" + s + "' is not a number");
  }
}

/// Numeric CSV with a header row.
Matrix read_table_csv(const fs::path& path, std::vector<std::string>* header = nullptr) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw Error(path.string() + ": empty file");
  const auto head = split_csv_line(line);
  if (header) *header = head;
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != head.size())
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                  std::to_string(head.size()) + " columns");
    std::vector<double> r;
    for (const auto& c : cells) r.push_back(parse_number(c, path, lineno));
    rows.push_back(std::move(r));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(head.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < head.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_covariates_csv(const Matrix& x, const fs::path& path) {
  std::string s = "x_daily,x_weekly,x_monthly\n";
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += (j ? "," : "") + num(x(i, j));
    s += "\n";
  }
  write_text(path, s);
}

/// "asset,sector" rows. Sector names become integer labels in order of first
/// appearance. When `assets` is given the labels follow that order.
std::vector<int> read_sectors_csv(const fs::path& path, const std::vector<std::string>& assets) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  const auto head = split_csv_line(line);
  if (head.size() != 2 || head[0] != "asset" || head[1] != "sector")
    throw Error(path.string() + ": header must be 'asset,sector'");
  std::vector<std::pair<std::string, std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) throw Error(path.string() + ": expected two columns");
    rows.emplace_back(cells[0], cells[1]);
  }
  std::map<std::string, int> ids;
  for (const auto& r : rows) ids.try_emplace(r.second, static_cast<int>(ids.size()));
  std::vector<int> labels;
  if (assets.empty()) {
    for (const auto& r : rows) labels.push_back(ids[r.second]);
    return labels;
  }
  std::map<std::string, std::string> by_asset(rows.begin(), rows.end());
  for (const auto& a : assets) {
    auto it = by_asset.find(a);
    if (it == by_asset.end()) throw Error(path.string() + ": no sector for asset " + a);
    labels.push_back(ids[it->second]);
  }
  return labels;
}

std::vector<fs::path> list_csv(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error("no .csv panels in " + dir.string());
  return out;
}

std::vector<IntradayPanel> read_panels(const fs::path& dir, int first_index) {
  std::vector<IntradayPanel> panels;
  int idx = first_index;
  for (const auto& p : list_csv(dir)) panels.push_back(read_panel_csv(p, idx++));
  return panels;
}

std::string day_name(const char* prefix, int k, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%0*d.csv", prefix, width, k);
  return buf;
}

json warnings_json(const Warnings& w) { return w.messages; }

json manifest(const RunConfig& cfg, const std::string& command) {
  json m;
  m["command"] = command;
  m["config"] = config_to_json(cfg);
  return m;
}

/// Runs f, re-throwing library errors tagged with the stage name.
struct StageError : Error {
  StageError(std::string stage_, const std::string& msg)
      : Error(msg), stage(std::move(stage_)) {}
  std::string stage;
};

template <class F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError& e) {
    throw StageError(name, e.what());
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

double resolve_tau(const FitSettingsSection& s, int p, int m) {
  if (s.tau) return *s.tau;
  if (m < 1) throw ConfigError("tau is \"auto\" but the number of intraday returns m is unknown");
  return default_tau(p, m);
}

int steps_for_interval(double minutes, double minutes_per_step) {
  return std::max(1, static_cast<int>(std::lround(minutes / minutes_per_step)));
}

std::vector<PeriodSpec> effective_periods(const std::vector<PeriodSpec>& periods, int n) {
  if (periods.empty()) return {{"all", 0, n}};
  std::vector<PeriodSpec> out;
  for (const auto& p : periods) {
    PeriodSpec q = p;
    if (q.count < 0) q.count = n - q.first;
    if (q.first >= n || q.count < 1 || q.first + q.count > n)
      throw ConfigError("period '" + p.name + "' lies outside the " + std::to_string(n) +
                        " out-of-sample days");
    out.push_back(q);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig parse_config(const json& doc) {
  RunConfig cfg;
  Obj o(doc, "");
  o.get("seed", cfg.seed);
  if (const json* j = o.child("simulate")) parse_simulate(*j, cfg.simulate);
  if (const json* j = o.child("estimate")) {
    Obj e(*j, "estimate");
    auto& s = cfg.estimate;
    e.get("panels_dir", s.panels_dir);
    e.get("warmup_dir", s.warmup_dir);
    e.get("tick_csv", s.tick_csv);
    e.get("grid_seconds", s.grid_seconds);
    e.get_list("assets", s.assets);
    e.get("covariate_window", s.covariate_window);
    parse_prvm(e, "prvm", s.prvm);
    e.finish();
    require(s.grid_seconds > 0, "estimate.grid_seconds must be positive");
    require(s.covariate_window >= 1, "estimate.covariate_window must be >= 1");
  }
  if (const json* j = o.child("fit")) {
    Obj f(*j, "fit");
    auto& s = cfg.fit;
    f.get("tensor", s.tensor);
    f.get("covariates", s.covariates);
    f.get("sectors_csv", s.sectors_csv);
    f.get("r1", s.r1);
    f.get("r2", s.r2);
    f.get("m", s.m);
    parse_settings(f, "settings", s.settings);
    f.finish();
    require(s.r1 >= 1 && s.r2 >= 1, "fit: r1 and r2 must be >= 1");
    require(s.m >= 0, "fit.m must be >= 0");
  }
  if (const json* j = o.child("predict")) {
    Obj p(*j, "predict");
    auto& s = cfg.predict;
    p.get("model", s.model);
    p.get("covariate_next", s.covariate_next);
    p.get("idio", s.idio);
    p.get("psd_floor", s.psd_floor);
    p.finish();
    require_one_of(s.idio, {"mean", "last"}, "predict.idio");
  }
  if (const json* j = o.child("evaluate")) {
    Obj e(*j, "evaluate");
    auto& s = cfg.evaluate;
    e.get("truth", s.truth);
    if (const json* pj = e.child("predictions")) {
      require(pj->is_array(), "evaluate.predictions: expected an array");
      for (std::size_t i = 0; i < pj->size(); ++i) {
        const std::string ip = "evaluate.predictions[" + std::to_string(i) + "]";
        Obj po((*pj)[i], ip);
        std::string label, path;
        po.get("label", label);
        po.get("path", path);
        po.finish();
        require(!label.empty() && !path.empty(), ip + ": label and path are required");
        s.predictions.emplace_back(label, path);
      }
    }
    e.finish();
  }
  if (const json* j = o.child("backtest")) parse_backtest(*j, cfg.backtest);
  o.finish();
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  json doc;
  {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    try {
      doc = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  return parse_config(doc);
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["simulate"] = simulate_json(cfg.simulate);
  const auto& e = cfg.estimate;
  j["estimate"] = {{"panels_dir", e.panels_dir},   {"warmup_dir", e.warmup_dir},
                   {"tick_csv", e.tick_csv},       {"grid_seconds", e.grid_seconds},
                   {"assets", e.assets},           {"covariate_window", e.covariate_window},
                   {"prvm", prvm_json(e.prvm)}};
  const auto& f = cfg.fit;
  j["fit"] = {{"tensor", f.tensor}, {"covariates", f.covariates}, {"sectors_csv", f.sectors_csv},
              {"r1", f.r1},         {"r2", f.r2},                 {"m", f.m},
              {"settings", settings_json(f.settings)}};
  const auto& p = cfg.predict;
  j["predict"] = {{"model", p.model},
                  {"covariate_next", p.covariate_next},
                  {"idio", p.idio},
                  {"psd_floor", p.psd_floor}};
  json preds = json::array();
  for (const auto& [label, path] : cfg.evaluate.predictions)
    preds.push_back({{"label", label}, {"path", path}});
  j["evaluate"] = {{"truth", cfg.evaluate.truth}, {"predictions", preds}};
  j["backtest"] = backtest_json(cfg.backtest);
  return j;
}

json design_parameters(const SimConfig& sim) {
  return {{"har_b0", sim.har.b0},
          {"har_b1", sim.har.b1},
          {"har_b2", sim.har.b2},
          {"har_b3", sim.har.b3},
          {"har_noise_sd", sim.har.noise_sd},
          {"jump_intensity_per_day", sim.jump_intensity},
          {"jump_size_sd", std::to_string(sim.jump_size_scale) + " * sqrt(Gamma_ii)"},
          {"noise_sd", std::to_string(sim.noise_scale) + " * sqrt(Sigma_ii)"},
          {"idio_diagonal", "d_i ~ Gamma(shape " + std::to_string(sim.gamma_shape) + ", rate " +
                                std::to_string(sim.gamma_rate) + ")"},
          {"idio_sparsity", "P(s_i != 0) = " + std::to_string(sim.sparse_prob_scale) +
                                " / (sqrt(p) log p)"},
          {"loadings", "top-r1 eigenvectors of A A^T, A_ij ~ N(0,1)"},
          {"prvm_window", "floor(sqrt(m))"},
          {"prvm_weight", "g(x) = min(x, 1 - x)"},
          {"prvm_truncation", "7 * sd(m^{1/4} Ybar_i) * m^{-0.235}"},
          {"tau", "sqrt(2 log p / m^{1/2})"},
          {"sieve", "additive polynomial, J = 2"},
          {"p", sim.p},
          {"D", sim.days},
          {"m", sim.m},
          {"r1", sim.r1},
          {"r2", sim.r2}};
}

PrvmConfig to_prvm_config(const PrvmSection& s) {
  PrvmConfig c;
  c.window = s.window;
  c.trunc_multiplier = s.trunc_multiplier;
  c.trunc_exponent = s.trunc_exponent;
  c.scale = s.scale == "robust" ? TruncationScale::Robust : TruncationScale::SampleSd;
  c.truncate = s.truncate;
  return c;
}

ForecastSettings to_forecast_settings(const FitSettingsSection& s, double tau,
                                      std::vector<int> sectors) {
  ForecastSettings f;
  f.tau = tau;
  f.rule = s.rule == "soft"   ? ThresholdRule::Soft
           : s.rule == "hard" ? ThresholdRule::Hard
                              : ThresholdRule::SectorHard;
  f.sectors = std::move(sectors);
  f.sieve_J = s.J;
  f.intercept = s.intercept;
  f.idio = s.idio == "mean" ? IdioForecast::Mean : IdioForecast::Last;
  f.residual = s.residual == "daily" ? ResidualSource::Daily : ResidualSource::Fitted;
  f.psd_floor = s.psd_floor;
  f.eigvec_window = s.eigvec_window;
  f.param_window = s.param_window;
  f.ar_lag = s.ar_lag;
  return f;
}

void write_matrix_csv(const Matrix& m, const fs::path& path) {
  std::string s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) s += (j ? "," : "") + num(m(i, j));
    s += "\n";
  }
  write_text(path, s);
}

Matrix read_matrix_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> r;
    for (const auto& c : split_csv_line(line)) r.push_back(parse_number(c, path, lineno));
    if (!rows.empty() && r.size() != rows.front().size())
      throw Error(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error(path.string() + ": empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[0].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  SimConfig sim = cfg.simulate.sim;
  sim.seed = cfg.seed;
  sim.keep_panels = cfg.simulate.write_panels;
  const SimOutput res = stage("simulate", [&] { return simulate_study(sim); });

  stage("simulate:write", [&] {
    ensure_dir(out);
    ensure_dir(out / "truth");
    const int w = res.warmup_days;
    const int D = sim.days;
    if (cfg.simulate.write_panels) {
      ensure_dir(out / "panels");
      ensure_dir(out / "warmup_panels");
      for (int l = 0; l < w + D; ++l) {
        const auto& panel = res.noisy_prices[static_cast<std::size_t>(l)];
        if (l < w)
          write_panel_csv(panel, out / "warmup_panels" / day_name("warmup", l + 1, 2));
        else
          write_panel_csv(panel, out / "panels" / day_name("day", l - w + 1, 4));
      }
    }
    write_tensor(day_range(res.true_tensor, w, D), out / "truth" / "true_tensor.bin");
    write_tensor(day_range(res.true_factor_tensor, w, D), out / "truth" / "true_factor_tensor.bin");
    write_tensor(day_range(res.true_idio, w, D), out / "truth" / "true_idio_tensor.bin");
    write_matrix_csv(res.next_day_truth, out / "truth" / "next_day_truth.csv");
    write_matrix_csv(res.next_day_realized, out / "truth" / "next_day_realized.csv");
    {
      std::string s = "day,v,conditional_mean\n";
      for (int l = w; l <= w + D; ++l)
        s += std::to_string(l - w + 1) + "," + num(res.time_loadings(l, 0)) + "," +
             num(res.conditional_loadings(l, 0)) + "\n";
      write_text(out / "truth" / "time_loadings.csv", s);
    }
    write_tensor(day_range(res.estimated_tensor, w, D), out / "estimated_tensor.bin");
    write_covariates_csv(res.covariates, out / "covariates.csv");
    write_covariates_csv(res.covariate_next.transpose(), out / "covariate_next.csv");

    json m = manifest(cfg, "simulate");
    m["design_parameters"] = design_parameters(sim);
    m["warmup_days"] = w;
    m["outputs"] = {"panels/", "warmup_panels/", "truth/true_tensor.bin",
                    "truth/true_factor_tensor.bin", "truth/true_idio_tensor.bin",
                    "truth/next_day_truth.csv", "truth/next_day_realized.csv",
                    "truth/time_loadings.csv", "estimated_tensor.bin", "covariates.csv",
                    "covariate_next.csv"};
    write_json(out / "manifest.json", m);
    return 0;
  });
}

namespace {

struct EstimatedData {
  std::vector<IntradayPanel> panels;  // warmup first
  int warmup = 0;
  VolTensor all;  // every day, warmup included
  std::vector<std::string> assets;
  int m = 0;
};

EstimatedData estimate_days(const std::vector<IntradayPanel>& panels, int warmup,
                            const PrvmConfig& prvm_cfg, Warnings* w) {
  EstimatedData d;
  d.warmup = warmup;
  d.all = build_tensor(panels, prvm_cfg, w);
  d.m = static_cast<int>(panels.front().log_prices.rows()) - 1;
  return d;
}

}  // namespace

void cmd_estimate(const RunConfig& cfg, const fs::path& out) {
  const auto& s = cfg.estimate;
  Warnings w;
  std::vector<IntradayPanel> panels;
  std::vector<std::string> assets = s.assets;
  int warmup = 0;
  stage("estimate:read", [&] {
    if (s.panels_dir.empty() == s.tick_csv.empty())
      throw ConfigError("estimate needs exactly one of panels_dir and tick_csv");
    if (!s.tick_csv.empty()) {
      const auto ticks = read_tick_csv(s.tick_csv);
      if (assets.empty()) {
        std::set<std::string> names;
        for (const auto& t : ticks) names.insert(t.asset);
        assets.assign(names.begin(), names.end());
      }
      panels = panels_from_ticks(ticks, assets, s.grid_seconds, &w);
      warmup = s.covariate_window;
    } else if (!s.warmup_dir.empty()) {
      panels = read_panels(s.warmup_dir, 0);
      warmup = static_cast<int>(panels.size());
      auto main = read_panels(s.panels_dir, warmup);
      panels.insert(panels.end(), main.begin(), main.end());
    } else {
      panels = read_panels(s.panels_dir, 0);
      warmup = s.covariate_window;
    }
    if (warmup < std::max(5, s.covariate_window))
      throw Error("need at least " + std::to_string(std::max(5, s.covariate_window)) +
                  " warmup days for the covariates, have " + std::to_string(warmup));
    if (static_cast<int>(panels.size()) <= warmup)
      throw Error("no days left after the " + std::to_string(warmup) + " warmup days");
    return 0;
  });
  const EstimatedData d =
      stage("estimate:prvm", [&] { return estimate_days(panels, warmup, to_prvm_config(s.prvm), &w); });
  stage("estimate:write", [&] {
    ensure_dir(out);
    const int total = static_cast<int>(d.all.dim(3));
    const int D = total - warmup;
    const Vector tops = top_eigenvalues(d.all);
    const std::span<const double> series(tops.data(), static_cast<std::size_t>(tops.size()));
    write_tensor(day_range(d.all, warmup, D), out / "estimated_tensor.bin");
    write_covariates_csv(har_covariates(series, warmup, D, s.covariate_window),
                         out / "covariates.csv");
    write_covariates_csv(har_covariates(series, total, 1, s.covariate_window),
                         out / "covariate_next.csv");
    std::string te = "day,role,top_eigenvalue\n";
    for (int l = 0; l < total; ++l)
      te += std::to_string(l) + "," + (l < warmup ? "warmup" : "sample") + "," + num(tops(l)) + "\n";
    write_text(out / "top_eigenvalues.csv", te);
    json m = manifest(cfg, "estimate");
    m["m"] = d.m;
    m["p"] = d.all.dim(1);
    m["days"] = D;
    m["warmup_days"] = warmup;
    m["assets"] = assets;
    m["warnings"] = warnings_json(w);
    write_json(out / "manifest.json", m);
    return 0;
  });
}

void cmd_fit(const RunConfig& cfg, const fs::path& out) {
  const auto& s = cfg.fit;
  Warnings w;
  const auto [y, X, sectors] = stage("fit:read", [&] {
    if (s.tensor.empty() || s.covariates.empty())
      throw ConfigError("fit.tensor and fit.covariates are required");
    VolTensor y = read_tensor(s.tensor);
    Matrix X = read_table_csv(s.covariates);
    if (X.rows() != y.dim(3))
      throw Error("covariates have " + std::to_string(X.rows()) + " rows but the tensor has " +
                  std::to_string(y.dim(3)) + " days");
    std::vector<int> sec;
    if (!s.sectors_csv.empty()) sec = read_sectors_csv(s.sectors_csv, {});
    return std::tuple{std::move(y), std::move(X), std::move(sec)};
  });
  const PtPoetModel model = stage("fit", [&] {
    const ForecastSettings fs_ = to_forecast_settings(
        s.settings, resolve_tau(s.settings, static_cast<int>(y.dim(1)), s.m), sectors);
    const SieveDesign sieve = build_sieve(X, fs_.sieve_J, fs_.intercept);
    FitOptions opts;
    opts.r1 = s.r1;
    opts.r2 = s.r2;
    opts.tau = fs_.tau;
    opts.rule = fs_.rule;
    opts.sectors = fs_.sectors;
    opts.residual = fs_.residual;
    return fit(y, sieve, opts, &w);
  });
  stage("fit:write", [&] {
    ensure_dir(out);
    save_model(model, out / "model");
    json m = manifest(cfg, "fit");
    m["tau"] = model.tau;
    m["outputs"] = {"model.json", "model.bin"};
    m["warnings"] = warnings_json(w);
    write_json(out / "manifest.json", m);
    return 0;
  });
}

void cmd_predict(const RunConfig& cfg, const fs::path& out) {
  const auto& s = cfg.predict;
  Warnings w;
  const Matrix pred = stage("predict", [&] {
    if (s.model.empty() || s.covariate_next.empty())
      throw ConfigError("predict.model and predict.covariate_next are required");
    fs::path stem = s.model;
    if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
    const PtPoetModel model = load_model(stem);
    const Matrix x = read_table_csv(s.covariate_next);
    if (x.rows() != 1) throw Error(s.covariate_next + ": expected exactly one covariate row");
    PredictOptions opts;
    opts.idio = s.idio == "mean" ? IdioForecast::Mean : IdioForecast::Last;
    opts.psd_floor = s.psd_floor;
    return predict(model, x.row(0).transpose(), opts, &w);
  });
  stage("predict:write", [&] {
    ensure_dir(out);
    write_matrix_csv(pred, out / "prediction.csv");
    json m = manifest(cfg, "predict");
    m["outputs"] = {"prediction.csv"};
    m["warnings"] = warnings_json(w);
    write_json(out / "manifest.json", m);
    return 0;
  });
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& out) {
  const auto& s = cfg.evaluate;
  std::vector<std::pair<std::string, NormErrors>> rows = stage("evaluate", [&] {
    if (s.truth.empty() || s.predictions.empty())
      throw ConfigError("evaluate.truth and at least one evaluate.predictions entry are required");
    const Matrix truth = read_matrix_csv(s.truth);
    std::vector<std::pair<std::string, NormErrors>> r;
    for (const auto& [label, path] : s.predictions)
      r.emplace_back(label, norm_errors(read_matrix_csv(path), truth));
    return r;
  });
  stage("evaluate:write", [&] {
    ensure_dir(out);
    std::string csv = "method,frobenius,max,spectral,relative_frobenius,note\n";
    json arr = json::array();
    for (const auto& [label, e] : rows) {
      csv += label + "," + num(e.frobenius) + "," + num(e.max) + "," + num(e.spectral) + "," +
             (e.relative_frobenius ? num(*e.relative_frobenius) : "") + "," + e.relative_note +
             "\n";
      json j{{"method", label},
             {"frobenius", e.frobenius},
             {"max", e.max},
             {"spectral", e.spectral}};
      j["relative_frobenius"] = e.relative_frobenius ? json(*e.relative_frobenius) : json(nullptr);
      if (!e.relative_note.empty()) j["note"] = e.relative_note;
      arr.push_back(j);
    }
    write_text(out / "errors.csv", csv);
    write_json(out / "errors.json", arr);
    json m = manifest(cfg, "evaluate");
    m["outputs"] = {"errors.csv", "errors.json"};
    write_json(out / "manifest.json", m);
    return 0;
  });
}

namespace {

void write_study(const std::vector<StudyRecord>& records, const fs::path& out) {
  std::string rec = "seed,D,m,method,frobenius,max,spectral,relative_frobenius\n";
  for (const auto& r : records)
    rec += std::to_string(r.seed) + "," + std::to_string(r.D) + "," + std::to_string(r.m) + "," +
           r.method + "," + num(r.errors.frobenius) + "," + num(r.errors.max) + "," +
           num(r.errors.spectral) + "," +
           (r.errors.relative_frobenius ? num(*r.errors.relative_frobenius) : "") + "\n";
  write_text(out / "figure1_records.csv", rec);
  std::string fig = "D,m,method,metric,median,log_median,count\n";
  for (const auto& r : summarize_study(records))
    fig += std::to_string(r.D) + "," + std::to_string(r.m) + "," + r.method + "," + r.metric +
           "," + num(r.median) + "," + num(r.log_median) + "," + std::to_string(r.count) + "\n";
  write_text(out / "figure1.csv", fig);
}

void write_scree(const VolTensor& estimates, const BacktestSection& s, int m, const fs::path& out,
                 Warnings* w) {
  const Eigen::Index p = estimates.dim(1);
  Matrix total = Matrix::Zero(p, p);
  for (Eigen::Index l = 0; l < estimates.dim(3); ++l) total += estimates.slice(l);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(total), Eigen::EigenvaluesOnly);
  std::string csv = "index,eigenvalue\n";
  const Eigen::Index n = std::min<Eigen::Index>(s.scree_count, p);
  for (Eigen::Index k = 0; k < n; ++k)
    csv += std::to_string(k + 1) + "," + num(es.eigenvalues()(p - 1 - k)) + "\n";
  write_text(out / "figure2_scree.csv", csv);

  json ranks;
  RankPenaltyOptions popts;
  popts.r_max = std::min(popts.r_max, static_cast<int>(p));
  if (popts.r_max >= 2)
    ranks["r1_penalized"] = select_rank_penalized(estimates, m, popts, w);
  const int r_max1 = std::min<int>(s.rank_r_max, static_cast<int>(p) - 1);
  const int r_max3 = std::min<int>(s.rank_r_max, static_cast<int>(estimates.dim(3)) - 1);
  if (r_max1 >= 1) {
    ranks["r1_gap"] = select_rank(estimates, 1, r_max1, RankCriterion::Gap);
    ranks["r1_ratio"] = select_rank(estimates, 1, r_max1, RankCriterion::Ratio);
  }
  if (r_max3 >= 1) {
    ranks["r2_gap"] = select_rank(estimates, 3, r_max3, RankCriterion::Gap);
    ranks["r2_ratio"] = select_rank(estimates, 3, r_max3, RankCriterion::Ratio);
  }
  write_json(out / "rank_selection.json", ranks);
}

void write_losses(const RollingForecasts& f, const std::vector<Matrix>& proxies,
                  const std::vector<PeriodSpec>& periods, const std::string& proxy_name,
                  const fs::path& out) {
  std::string t1 = "method,period,metric,value,days,excluded\n";
  std::string t2 = "metric,period,method_a,method_b,statistic,p_value,degenerate,lags\n";
  json j1 = json::array();
  for (const auto& per : periods) {
    RollingForecasts sub;
    sub.order = f.order;
    for (const auto& label : f.order) {
      const auto& all = f.preds.at(label);
      sub.preds[label].assign(all.begin() + per.first, all.begin() + per.first + per.count);
    }
    const std::vector<Matrix> px(proxies.begin() + per.first,
                                 proxies.begin() + per.first + per.count);
    const LossReport rep = evaluate_losses(sub, px, per.name);
    for (const auto& r : rep.rows) {
      t1 += r.method + "," + r.period + "," + r.metric + "," + num(r.value) + "," +
            std::to_string(r.days) + "," + std::to_string(r.excluded) + "\n";
      json row{{"method", r.method}, {"period", r.period}, {"metric", r.metric}};
      row["value"] = std::isfinite(r.value) ? json(r.value) : json(nullptr);
      row["days"] = r.days;
      row["excluded"] = r.excluded;
      j1.push_back(row);
    }
    for (const auto& c : rep.dm)
      t2 += c.metric + "," + per.name + "," + c.method_a + "," + c.method_b + "," +
            num(c.result.statistic) + "," + num(c.result.p_value) + "," +
            (c.result.degenerate ? "1" : "0") + "," + std::to_string(c.result.lags) + "\n";
  }
  write_text(out / "table1.csv", t1);
  write_text(out / "table2_dm.csv", t2);
  write_json(out / "table1.json",
             {{"proxy", proxy_name},
              {"scale_factors", {{"MSPE", 1e4}, {"QLIKE", 1e-3}}},
              {"scale_note", "values are unscaled; multiply by the matching entry of scale_factors for the conventional reporting units"},
              {"rows", j1}});
}

void write_portfolio(const RollingForecasts& f, const std::vector<IntradayPanel>& panels,
                     const std::vector<PeriodSpec>& periods, const BacktestSection& s,
                     int interval_steps, const fs::path& out) {
  std::string fig = "method,period,c,avg_risk,days\n";
  std::string weights = "method,day,c,weights\n";
  std::string skipped;
  // Panels are aligned with the forecast days; predictions are looked up by
  // the panel's own day index.
  if (panels.size() != f.days.size())
    throw Error("portfolio: " + std::to_string(panels.size()) + " panels for " +
                std::to_string(f.days.size()) + " forecast days");
  std::map<int, std::size_t> index;
  for (std::size_t k = 0; k < panels.size(); ++k) index[panels[k].day_index] = k;
  std::vector<BacktestMethod> methods;
  for (const auto& label : f.order) {
    const auto* preds = &f.preds.at(label);
    methods.push_back({label, [preds, &index](int day) {
                         auto it = index.find(day);
                         if (it == index.end()) throw Error("no prediction for day " + std::to_string(day));
                         return (*preds)[it->second];
                       }});
  }
  for (const auto& per : periods) {
    BacktestOptions opts;
    opts.c_grid = s.c_grid;
    opts.interval_steps = interval_steps;
    opts.period = per.name;
    opts.pd_floor = s.pd_floor;
    opts.keep_weights = s.keep_weights;
    const std::span<const IntradayPanel> days(panels.data() + per.first,
                                              static_cast<std::size_t>(per.count));
    const BacktestResult r = backtest(methods, days, opts);
    for (const auto& row : r.rows)
      fig += row.method + "," + row.period + "," + num(row.c) + "," + num(row.avg_risk) + "," +
             std::to_string(row.days) + "\n";
    for (const auto& wr : r.weights) {
      weights += wr.method + "," + std::to_string(wr.day) + "," + num(wr.c) + ",";
      for (Eigen::Index i = 0; i < wr.weights.size(); ++i)
        weights += (i ? ";" : "") + num(wr.weights(i));
      weights += "\n";
    }
    for (const auto& sk : r.skipped) skipped += per.name + ": " + sk + "\n";
  }
  write_text(out / "figure3.csv", fig);
  if (s.keep_weights) write_text(out / "weights.csv", weights);
  if (!skipped.empty()) write_text(out / "skipped_days.txt", skipped);
}

}  // namespace

void cmd_backtest(const RunConfig& cfg, const fs::path& out) {
  const BacktestSection& s = cfg.backtest;
  Warnings w;
  json m = manifest(cfg, "backtest");
  json outputs = json::array();
  stage("backtest:setup", [&] {
    ensure_dir(out);
    return 0;
  });
  // The manifest is rewritten after every stage so partial runs stay documented.
  const auto flush = [&](const std::string& status) {
    m["status"] = status;
    m["outputs"] = outputs;
    m["warnings"] = warnings_json(w);
    write_json(out / "manifest.json", m);
  };

  try {
    VolTensor estimates;
    std::vector<IntradayPanel> oos_panels;
    std::vector<Matrix> proxies;
    std::vector<int> sectors;
    int m_steps = 0;
    int first_day = 0;
    int p = 0;
    double minutes_per_step = 1.0;
    std::string proxy_name;

    if (s.mode == "simulation") {
      m["design_parameters"] = design_parameters(cfg.simulate.sim);
      if (s.study) {
        stage("backtest:study", [&] {
          StudyConfig sc;
          sc.sim = cfg.simulate.sim;
          sc.d_grid = s.d_grid;
          sc.m_grid = s.m_grid;
          sc.seeds.clear();
          for (int k = 0; k < s.study_seeds; ++k) sc.seeds.push_back(cfg.seed + static_cast<std::uint64_t>(k));
          sc.methods = s.methods;
          sc.auto_tau = !s.settings.tau.has_value();
          sc.settings = to_forecast_settings(s.settings, s.settings.tau.value_or(0.0), {});
          if (sc.settings.rule == ThresholdRule::SectorHard)
            throw ConfigError("sector_hard thresholding is not available in the simulation study");
          write_study(run_simulation_study(sc, &w), out);
          outputs.push_back("figure1.csv");
          outputs.push_back("figure1_records.csv");
          return 0;
        });
        flush("running");
      }
      stage("backtest:simulate", [&] {
        SimConfig sim = cfg.simulate.sim;
        sim.seed = cfg.seed;
        sim.days = s.window + s.out_of_sample_days;
        sim.keep_panels = false;
        const int warm = std::max(sim.covariate_window, 5);
        first_day = warm + s.window;
        const SimOutput res = simulate_study(sim, [&](int day, const IntradayPanel& panel) {
          if (day >= first_day) oos_panels.push_back(panel);
        });
        estimates = res.estimated_tensor;
        for (int l = first_day; l < warm + sim.days; ++l) proxies.push_back(res.conditional_truth(l));
        m_steps = sim.m;
        p = sim.p;
        minutes_per_step = 390.0 / sim.m;
        proxy_name = "E[Gamma_d | I_{d-1}] (simulation truth)";
        return 0;
      });
    } else {
      stage("backtest:read", [&] {
        std::vector<IntradayPanel> panels;
        std::vector<std::string> assets = s.assets;
        if (!s.tick_csv.empty()) {
          const auto ticks = read_tick_csv(s.tick_csv);
          if (assets.empty()) {
            std::set<std::string> names;
            for (const auto& t : ticks) names.insert(t.asset);
            assets.assign(names.begin(), names.end());
          }
          panels = panels_from_ticks(ticks, assets, s.grid_seconds, &w);
        } else {
          panels = read_panels(s.panels_dir, 0);
        }
        if (!s.sectors_csv.empty()) sectors = read_sectors_csv(s.sectors_csv, assets);
        estimates = build_tensor(panels, to_prvm_config(s.prvm), &w);
        const int total = static_cast<int>(estimates.dim(3));
        first_day = total - s.out_of_sample_days;
        if (first_day - s.window < 21)
          throw Error(std::to_string(total) + " days cannot cover 21 covariate days, a window of " +
                      std::to_string(s.window) + " and " + std::to_string(s.out_of_sample_days) +
                      " out-of-sample days");
        oos_panels.assign(panels.begin() + first_day, panels.end());
        m_steps = static_cast<int>(panels.front().log_prices.rows()) - 1;
        p = static_cast<int>(estimates.dim(1));
        minutes_per_step = s.grid_seconds / 60.0;
        return 0;
      });
    }

    const ForecastSettings settings = stage("backtest:settings", [&] {
      return to_forecast_settings(s.settings, resolve_tau(s.settings, p, m_steps), sectors);
    });
    if (s.mode == "data") {
      stage("backtest:proxy", [&] {
        const int r1 = s.methods.front().r1;
        for (int l = first_day; l < static_cast<int>(estimates.dim(3)); ++l)
          proxies.push_back(
              predict_poet(estimates.slice(l), r1, settings.tau, settings.rule, settings.sectors));
        proxy_name = "POET estimate of the day (r1 = " + std::to_string(r1) + ")";
        return 0;
      });
    }

    stage("backtest:scree", [&] {
      write_scree(estimates, s, m_steps, out, &w);
      outputs.push_back("figure2_scree.csv");
      outputs.push_back("rank_selection.json");
      return 0;
    });

    const RollingForecasts f = stage("backtest:rolling", [&] {
      RollingConfig rc;
      rc.window = s.window;
      rc.first_day = first_day;
      rc.covariate_window = s.mode == "simulation" ? cfg.simulate.sim.covariate_window : 21;
      return rolling_forecasts(estimates, s.methods, rc, settings, &w);
    });
    const auto periods = stage("backtest:periods", [&] {
      return effective_periods(s.periods, static_cast<int>(f.days.size()));
    });
    stage("backtest:evaluate", [&] {
      write_losses(f, proxies, periods, proxy_name, out);
      outputs.push_back("table1.csv");
      outputs.push_back("table1.json");
      outputs.push_back("table2_dm.csv");
      return 0;
    });
    flush("running");
    if (s.portfolio) {
      stage("backtest:portfolio", [&] {
        const int steps = steps_for_interval(s.interval_minutes, minutes_per_step);
        m["interval_steps"] = steps;
        write_portfolio(f, oos_panels, periods, s, steps, out);
        outputs.push_back("figure3.csv");
        if (s.keep_weights) outputs.push_back("weights.csv");
        return 0;
      });
    }
    m["tau"] = settings.tau;
    m["out_of_sample_days"] = f.days.size();
    flush("complete");
  } catch (const StageError& e) {
    m["failed_stage"] = e.stage;
    m["error"] = e.what();
    try {
      flush("failed");
    } catch (...) {
    }
    throw;
  }
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"voltensor: volatility matrix prediction with projected tensor POET"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "simulate the factor jump-diffusion design"},
      {"estimate", "estimate daily PRVM matrices and HAR covariates"},
      {"fit", "fit a PT-POET model"},
      {"predict", "predict the next day's volatility matrix"},
      {"evaluate", "matrix-norm errors of predictions against a truth"},
      {"backtest", "rolling evaluation, Monte-Carlo study and portfolio backtest"},
      {"pipeline", "alias of backtest"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "voltensor: [config] " << e.what() << "\n";
    return 2;
  }
  if (seed) cfg.seed = *seed;

  try {
    if (command == "simulate") cmd_simulate(cfg, out_dir);
    else if (command == "estimate") cmd_estimate(cfg, out_dir);
    else if (command == "fit") cmd_fit(cfg, out_dir);
    else if (command == "predict") cmd_predict(cfg, out_dir);
    else if (command == "evaluate") cmd_evaluate(cfg, out_dir);
    else cmd_backtest(cfg, out_dir);
  } catch (const StageError& e) {
    std::cerr << "voltensor: [" << e.stage << "] " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "voltensor: [" << command << "] " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace voltensor::cli
