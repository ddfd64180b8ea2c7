#include "voltensor/ptpoet.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace voltensor {

namespace {

std::string basis_column_name(int column, int J, bool intercept, int d) {
  if (intercept && column == J * d) return "intercept";
  return "x" + std::to_string(column / J + 1) + "^" + std::to_string(column % J + 1);
}

Vector raw_basis_row(const Vector& x, int J) {
  Vector out(x.size() * J);
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    double power = 1.0;
    for (int j = 0; j < J; ++j) {
      power *= x(c);
      out(c * J + j) = power;
    }
  }
  return out;
}

}  // namespace

Vector SieveBasis::evaluate(const Vector& x) const {
  if (x.size() != d)
    throw Error("SieveBasis: covariate vector has length " + std::to_string(x.size()) +
                ", expected " + std::to_string(d));
  const Vector raw = raw_basis_row(x, J);
  Vector out(columns());
  out.head(J * d) = (raw - mean).cwiseQuotient(sd);
  if (intercept) out(J * d) = 1.0;
  return out;
}

SieveDesign build_sieve(const Matrix& X, int J, bool intercept) {
  const Eigen::Index D = X.rows();
  const Eigen::Index d = X.cols();
  if (J < 1 || d < 1) throw Error("build_sieve: need J >= 1 and at least one covariate");
  SieveDesign out;
  out.X = X;
  SieveBasis& b = out.basis;
  b.J = J;
  b.d = static_cast<int>(d);
  b.intercept = intercept;
  if (D <= b.columns())
    throw Error("build_sieve: need more days than basis columns (D = " + std::to_string(D) +
                ", columns = " + std::to_string(b.columns()) + ")");
  if (!X.allFinite()) throw Error("build_sieve: non-finite covariate");

  b.covariate_mean = X.colwise().mean().transpose();
  b.covariate_sd.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    b.covariate_sd(c) = std::sqrt((X.col(c).array() - b.covariate_mean(c)).square().sum() /
                                  static_cast<double>(D - 1));
    if (!(b.covariate_sd(c) > 0.0))
      throw Error("build_sieve: covariate column " + std::to_string(c + 1) + " is constant");
  }

  Matrix raw(D, J * d);
  for (Eigen::Index l = 0; l < D; ++l) raw.row(l) = raw_basis_row(X.row(l).transpose(), J);
  b.mean = intercept ? Vector(raw.colwise().mean().transpose()) : Vector::Zero(J * d);
  b.sd.resize(J * d);
  for (Eigen::Index c = 0; c < J * d; ++c) {
    const auto centered = raw.col(c).array() - b.mean(c);
    b.sd(c) = std::sqrt(centered.square().sum() / static_cast<double>(D - 1));
    if (!(b.sd(c) > 0.0)) b.sd(c) = 1.0;  // caught by the rank check below
  }
  out.Phi.resize(D, b.columns());
  for (Eigen::Index l = 0; l < D; ++l) out.Phi.row(l) = b.evaluate(X.row(l).transpose());

  Eigen::ColPivHouseholderQR<Matrix> qr(out.Phi);
  qr.setThreshold(1e-10);
  if (qr.rank() < out.Phi.cols()) {
    std::string names;
    for (Eigen::Index k = qr.rank(); k < out.Phi.cols(); ++k) {
      if (!names.empty()) names += ", ";
      names += basis_column_name(static_cast<int>(qr.colsPermutation().indices()(k)), J,
                                 intercept, static_cast<int>(d));
    }
    throw Error("build_sieve: basis matrix is rank deficient; collinear columns: " + names);
  }
  const Matrix basis_q = qr.householderQ() * Matrix::Identity(D, out.Phi.cols());
  out.P = basis_q * basis_q.transpose();
  return out;
}

Matrix spectral_truncate(const Matrix& m, int r) {
  const Eigen::Index p = m.rows();
  if (r < 0 || r > p) throw Error("spectral_truncate: rank " + std::to_string(r) + " outside [0, p]");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  const Matrix top = es.eigenvectors().rightCols(r);
  return symmetrize(top * es.eigenvalues().tail(r).asDiagonal() * top.transpose());
}

VolTensor spectral_truncate_days(const VolTensor& y, int r) {
  if (r < 1 || r > y.dim(1))
    throw Error("spectral_truncate_days: rank " + std::to_string(r) + " outside [1, p]");
  VolTensor out(y.dim(1), y.dim(2), y.dim(3));
  for (Eigen::Index l = 0; l < y.dim(3); ++l) out.set_slice(l, spectral_truncate(y.slice(l), r));
  return out;
}

Matrix threshold_residual(const Matrix& residual, double tau, ThresholdRule rule,
                          std::span<const int> sectors) {
  const Eigen::Index p = residual.rows();
  if (residual.cols() != p) throw Error("threshold_residual: matrix is not square");
  if (tau < 0.0) throw Error("threshold_residual: tau must be >= 0");
  if (rule == ThresholdRule::SectorHard && static_cast<Eigen::Index>(sectors.size()) != p)
    throw Error("threshold_residual: sector-hard rule needs one sector label per asset");
  const Matrix s = symmetrize(residual);
  const Vector diag = s.diagonal().cwiseMax(0.0);
  Matrix out(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    out(j, j) = diag(j);
    for (Eigen::Index i = j + 1; i < p; ++i) {
      const double z = s(i, j);
      const double t = tau * std::sqrt(diag(i) * diag(j));
      double v = 0.0;
      switch (rule) {
        case ThresholdRule::Soft:
          v = std::abs(z) >= t ? std::copysign(std::max(std::abs(z) - t, 0.0), z) : 0.0;
          break;
        case ThresholdRule::Hard:
          v = std::abs(z) >= t ? z : 0.0;
          break;
        case ThresholdRule::SectorHard:
          v = sectors[static_cast<std::size_t>(i)] == sectors[static_cast<std::size_t>(j)] ? z : 0.0;
          break;
      }
      out(i, j) = out(j, i) = v;
    }
  }
  return out;
}

Matrix PtPoetModel::factor_matrix(const Vector& g) const {
  if (g.size() != r2) throw Error("factor_matrix: loading has wrong length");
  Matrix inner = Matrix::Zero(r1, r1);
  for (int k = 0; k < r2; ++k) inner += g(k) * F.slice(k);
  return symmetrize(Q * inner * Q.transpose());
}

namespace {

PtPoetModel fit_impl(const VolTensor& y_hat, const Matrix* projection, const FitOptions& opts,
                     Warnings* warnings) {
  validate_vol_tensor(y_hat, 1e-8);
  const Eigen::Index p = y_hat.dim(1);
  const Eigen::Index D = y_hat.dim(3);
  if (opts.r1 < 1 || opts.r1 > p)
    throw Error("fit: r1 = " + std::to_string(opts.r1) + " outside [1, p = " + std::to_string(p) + "]");
  if (opts.r2 < 1 || opts.r2 > D)
    throw Error("fit: r2 = " + std::to_string(opts.r2) + " outside [1, D = " + std::to_string(D) + "]");
  if (!(opts.tau >= 0.0)) throw Error("fit: tau must be >= 0");
  if (opts.rule == ThresholdRule::SectorHard && static_cast<Eigen::Index>(opts.sectors.size()) != p)
    throw Error("fit: sector-hard thresholding needs one sector label per asset");

  PtPoetModel model;
  model.r1 = opts.r1;
  model.r2 = opts.r2;
  model.tau = opts.tau;
  model.rule = opts.rule;

  const VolTensor truncated = spectral_truncate_days(y_hat, opts.r1);
  const Tensor3 projected = projection ? mode_product(truncated, *projection, 3) : truncated;
  model.Q = leading_left_singular_vectors(matricize(projected, 1), opts.r1, warnings);
  model.G = leading_left_singular_vectors(matricize(projected, 3), opts.r2, warnings);
  model.F = mode_product(mode_product(mode_product(projected, model.Q.transpose(), 1),
                                      model.Q.transpose(), 2),
                         model.G.transpose(), 3);
  for (Eigen::Index k = 0; k < model.F.dim(3); ++k)
    model.F.set_slice(k, symmetrize(model.F.slice(k)));

  const VolTensor factor = opts.residual == ResidualSource::Fitted
                               ? tucker_reconstruct({model.F, model.Q, model.G})
                               : truncated;
  model.idio_hats = VolTensor(p, p, D);
  Matrix total = Matrix::Zero(p, p);
  for (Eigen::Index l = 0; l < D; ++l) {
    Matrix thresholded = threshold_residual(y_hat.slice(l) - factor.slice(l), opts.tau,
                                            opts.rule, opts.sectors);
    total += thresholded;
    model.idio_hats.set_slice(l, thresholded);
  }
  model.idio_mean = total / static_cast<double>(D);
  model.idio_last = model.idio_hats.slice(D - 1);
  return model;
}

}  // namespace

PtPoetModel fit(const VolTensor& y_hat, const SieveDesign& sieve, const FitOptions& opts,
                Warnings* warnings) {
  if (!opts.project) return fit_unprojected(y_hat, opts, warnings);
  if (sieve.P.rows() != y_hat.dim(3))
    throw Error("fit: sieve design has " + std::to_string(sieve.P.rows()) +
                " days but the tensor has " + std::to_string(y_hat.dim(3)));
  PtPoetModel model = fit_impl(y_hat, &sieve.P, opts, warnings);
  model.projected = true;
  model.basis = sieve.basis;
  // A = (Phi^T Phi)^{-1} Phi^T G as a least-squares solve.
  model.A = sieve.Phi.colPivHouseholderQr().solve(model.G);
  return model;
}

PtPoetModel fit_unprojected(const VolTensor& y_hat, const FitOptions& opts, Warnings* warnings) {
  PtPoetModel model = fit_impl(y_hat, nullptr, opts, warnings);
  model.projected = false;
  return model;
}

namespace {

Matrix finish_prediction(const PtPoetModel& model, const Vector& g, const PredictOptions& opts) {
  Matrix out = model.factor_matrix(g) +
               (opts.idio == IdioForecast::Mean ? model.idio_mean : model.idio_last);
  out = symmetrize(out);
  if (opts.psd_floor) out = eigenvalue_floor(out, opts.floor);
  return out;
}

}  // namespace

Matrix predict(const PtPoetModel& model, const Vector& x_next, const PredictOptions& opts,
               Warnings* warnings) {
  if (!model.projected || !model.basis)
    throw Error("predict: model was fitted without covariates; use predict_last_loading");
  if (!x_next.allFinite()) throw Error("predict: covariates must be finite");
  const SieveBasis& b = *model.basis;
  if (x_next.size() != b.d)
    throw Error("predict: expected " + std::to_string(b.d) + " covariates, got " +
                std::to_string(x_next.size()));
  for (Eigen::Index c = 0; c < x_next.size(); ++c) {
    const double z = std::abs(x_next(c) - b.covariate_mean(c)) / b.covariate_sd(c);
    if (z > opts.extrapolation_sds)
      warn(warnings, "predict: covariate " + std::to_string(c + 1) + " lies " +
                         std::to_string(z) + " training sds from the training mean");
  }
  const Vector g = model.A.transpose() * b.evaluate(x_next);
  return finish_prediction(model, g, opts);
}

Matrix predict_last_loading(const PtPoetModel& model, const PredictOptions& opts) {
  const Vector g = model.G.row(model.G.rows() - 1).transpose();
  return finish_prediction(model, g, opts);
}

int rank_by_gap(const Vector& sv, int r_max) {
  if (r_max < 1 || r_max >= sv.size())
    throw Error("rank_by_gap: r_max must lie in [1, " + std::to_string(sv.size() - 1) + "]");
  int best = 1;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (int k = 1; k <= r_max; ++k) {
    const double gap = sv(k - 1) - sv(k);
    if (gap > best_gap) {
      best_gap = gap;
      best = k;
    }
  }
  return best;
}

int rank_by_ratio(const Vector& sv, int r_max) {
  if (r_max < 1 || r_max >= sv.size())
    throw Error("rank_by_ratio: r_max must lie in [1, " + std::to_string(sv.size() - 1) + "]");
  int best = 1;
  double best_ratio = -std::numeric_limits<double>::infinity();
  const double tiny = 1e-14 * std::max(sv(0), 1e-300);
  for (int k = 1; k <= r_max; ++k) {
    const double ratio = sv(k) > tiny ? sv(k - 1) / sv(k) : std::numeric_limits<double>::infinity();
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = k;
    }
  }
  return best;
}

int select_rank(const VolTensor& y_hat, int mode, int r_max, RankCriterion criterion) {
  if (mode != 1 && mode != 3) throw Error("select_rank: mode must be 1 or 3");
  const Vector sv = singular_values(matricize(y_hat, mode));
  return criterion == RankCriterion::Gap ? rank_by_gap(sv, r_max) : rank_by_ratio(sv, r_max);
}

Vector rank_penalty_objective(const std::vector<Vector>& daily_eigs_desc, int p, int m,
                              const RankPenaltyOptions& opts) {
  const double pd = static_cast<double>(p);
  const double lp = std::log(pd);
  const double penalty =
      std::pow(std::sqrt(lp / std::sqrt(static_cast<double>(m)) + lp / pd), opts.c2);
  Vector obj = Vector::Zero(opts.r_max);
  for (const Vector& xi : daily_eigs_desc) {
    if (xi.size() < opts.r_max) throw Error("rank_penalty_objective: too few eigenvalues");
    const double c1 = opts.c1_scale * xi(opts.r_max - 1);
    for (int j = 1; j <= opts.r_max; ++j) obj(j - 1) += xi(j - 1) / pd + j * c1 * penalty;
  }
  return obj;
}

int select_rank_penalized(const VolTensor& y_hats, int m, const RankPenaltyOptions& opts,
                          Warnings* warnings) {
  RankPenaltyOptions o = opts;
  const int p = static_cast<int>(y_hats.dim(1));
  if (o.r_max < 2) throw Error("select_rank_penalized: r_max must be >= 2");
  if (p < o.r_max) {
    warn(warnings, "select_rank_penalized: r_max lowered from " + std::to_string(o.r_max) +
                       " to p = " + std::to_string(p));
    o.r_max = p;
  }
  std::vector<Vector> eigs;
  for (Eigen::Index l = 0; l < y_hats.dim(3); ++l) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(y_hats.slice(l)), Eigen::EigenvaluesOnly);
    eigs.push_back(es.eigenvalues().reverse());
  }
  const Vector obj = rank_penalty_objective(eigs, p, m, o);
  Eigen::Index argmin = 0;
  obj.minCoeff(&argmin);
  return std::max(1, static_cast<int>(argmin + 1) - 1);
}

namespace {

const char* rule_name(ThresholdRule r) {
  switch (r) {
    case ThresholdRule::Soft: return "soft";
    case ThresholdRule::Hard: return "hard";
    case ThresholdRule::SectorHard: return "sector-hard";
  }
  return "soft";
}

ThresholdRule rule_from_name(const std::string& s) {
  if (s == "soft") return ThresholdRule::Soft;
  if (s == "hard") return ThresholdRule::Hard;
  if (s == "sector-hard") return ThresholdRule::SectorHard;
  throw Error("unknown threshold rule '" + s + "'");
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }
Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_model(const PtPoetModel& model, const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path meta = stem;
  meta += ".json";
  std::ofstream os(bin, std::ios::binary);
  if (!os) throw Error("cannot open " + bin.string() + " for writing");
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  auto put = [&](const std::string& name, const double* data, Eigen::Index rows,
                 Eigen::Index cols, Eigen::Index depth) {
    const auto n = static_cast<std::size_t>(rows * cols * depth);
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    arrays.push_back({{"name", name}, {"shape", {rows, cols, depth}}, {"offset", offset}});
    offset += n;
  };
  put("Q", model.Q.data(), model.Q.rows(), model.Q.cols(), 1);
  put("G", model.G.data(), model.G.rows(), model.G.cols(), 1);
  put("A", model.A.data(), model.A.rows(), model.A.cols(), 1);
  put("F", model.F.data().data(), model.F.dim(1), model.F.dim(2), model.F.dim(3));
  put("idio_mean", model.idio_mean.data(), model.idio_mean.rows(), model.idio_mean.cols(), 1);
  put("idio_last", model.idio_last.data(), model.idio_last.rows(), model.idio_last.cols(), 1);
  if (!os) throw Error("write failed for " + bin.string());

  nlohmann::json j = {{"format", "voltensor-ptpoet-model"},
                      {"version", 1},
                      {"p", model.Q.rows()},
                      {"D", model.G.rows()},
                      {"r1", model.r1},
                      {"r2", model.r2},
                      {"tau", model.tau},
                      {"rule", rule_name(model.rule)},
                      {"projected", model.projected},
                      {"payload", bin.filename().string()},
                      {"dtype", "float64-le"},
                      {"arrays", arrays}};
  if (model.basis) {
    const SieveBasis& b = *model.basis;
    j["basis"] = {{"family", "additive-polynomial"},
                  {"J", b.J},
                  {"d", b.d},
                  {"intercept", b.intercept},
                  {"mean", to_std(b.mean)},
                  {"sd", to_std(b.sd)},
                  {"covariate_mean", to_std(b.covariate_mean)},
                  {"covariate_sd", to_std(b.covariate_sd)}};
  }
  std::ofstream ms(meta);
  if (!ms) throw Error("cannot open " + meta.string() + " for writing");
  ms << j.dump(2) << '\n';
}

PtPoetModel load_model(const std::filesystem::path& stem) {
  std::filesystem::path meta = stem;
  meta += ".json";
  std::ifstream ms(meta);
  if (!ms) throw Error("cannot open " + meta.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad model metadata " + meta.string() + ": " + e.what());
  }
  if (j.value("format", "") != "voltensor-ptpoet-model")
    throw Error(meta.string() + " is not a model bundle");
  const std::filesystem::path bin = meta.parent_path() / j.at("payload").get<std::string>();
  std::ifstream is(bin, std::ios::binary);
  if (!is) throw Error("cannot open " + bin.string());
  std::vector<double> payload;
  {
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(is.tellg());
    is.seekg(0);
    payload.resize(bytes / sizeof(double));
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
  }
  PtPoetModel model;
  model.r1 = j.at("r1");
  model.r2 = j.at("r2");
  model.tau = j.at("tau");
  model.rule = rule_from_name(j.at("rule"));
  model.projected = j.at("projected");
  for (const auto& a : j.at("arrays")) {
    const auto shape = a.at("shape").get<std::array<Eigen::Index, 3>>();
    const auto offset = a.at("offset").get<std::size_t>();
    const auto n = static_cast<std::size_t>(shape[0] * shape[1] * shape[2]);
    if (offset + n > payload.size()) throw Error("model payload " + bin.string() + " is truncated");
    const double* src = payload.data() + offset;
    const std::string name = a.at("name");
    if (name == "F") {
      model.F = Tensor3(shape[0], shape[1], shape[2]);
      std::copy(src, src + n, model.F.data().begin());
      continue;
    }
    const Matrix m = Eigen::Map<const Matrix>(src, shape[0], shape[1]);
    if (name == "Q") model.Q = m;
    else if (name == "G") model.G = m;
    else if (name == "A") model.A = m;
    else if (name == "idio_mean") model.idio_mean = m;
    else if (name == "idio_last") model.idio_last = m;
  }
  if (j.contains("basis")) {
    const auto& jb = j.at("basis");
    SieveBasis b;
    b.J = jb.at("J");
    b.d = jb.at("d");
    b.intercept = jb.at("intercept");
    b.mean = from_std(jb.at("mean").get<std::vector<double>>());
    b.sd = from_std(jb.at("sd").get<std::vector<double>>());
    b.covariate_mean = from_std(jb.at("covariate_mean").get<std::vector<double>>());
    b.covariate_sd = from_std(jb.at("covariate_sd").get<std::vector<double>>());
    model.basis = b;
  }
  return model;
}

}  // namespace voltensor
