#include "radfuse/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace radfuse {

using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd take_cols(const MatrixXd& X, const std::vector<int>& cols) {
  MatrixXd out(X.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = X.col(cols[j]);
  return out;
}

MatrixXd take_rows(const MatrixXd& X, const std::vector<int>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
  return out;
}

VectorXd take(const VectorXd& v, const std::vector<int>& idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = v[idx[i]];
  return out;
}

}  // namespace

VarianceFilter variance_filter_fit(const MatrixXd& X, double threshold) {
  if (X.rows() == 0 || X.cols() == 0) throw Error("variance filter: empty matrix");
  if (X.rows() < 2) throw Error("variance filter: need at least 2 samples");
  VarianceFilter f;
  f.threshold = threshold;
  const double n = static_cast<double>(X.rows());
  for (Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).sum() / n;
    const double var = (X.col(j).array() - mean).square().sum() / n;
    f.variances.push_back(var);
    if (var >= threshold) f.kept.push_back(static_cast<int>(j));
  }
  return f;
}

Standardizer standardize_fit(const MatrixXd& X) {
  if (X.rows() == 0) throw Error("standardizer: no samples");
  Standardizer s;
  const double n = static_cast<double>(X.rows());
  s.mean = X.colwise().sum().transpose() / n;
  s.std.resize(X.cols());
  for (Index j = 0; j < X.cols(); ++j) s.std[j] = std::sqrt((X.col(j).array() - s.mean[j]).square().sum() / n);
  return s;
}

MatrixXd Standardizer::apply(const MatrixXd& X) const {
  if (X.cols() != mean.size()) throw Error("standardizer: width mismatch");
  MatrixXd out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    if (std[j] == 0.0) out.col(j).setZero();
    else out.col(j) = (X.col(j).array() - mean[j]) / std[j];
  }
  return out;
}

std::vector<double> anova_f(const MatrixXd& X, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != X.rows()) throw Error("anova: label count mismatch");
  std::vector<int> groups = labels;
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  const int g = static_cast<int>(groups.size());
  const int n = static_cast<int>(labels.size());
  if (g < 2) throw Error("anova: need at least 2 classes");
  if (n <= g) throw Error("anova: need more samples than classes");

  std::vector<int> group_of(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    group_of[i] = static_cast<int>(std::lower_bound(groups.begin(), groups.end(), labels[i]) - groups.begin());

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(X.cols()));
  for (Index j = 0; j < X.cols(); ++j) {
    std::vector<double> sum(static_cast<std::size_t>(g), 0.0), cnt(static_cast<std::size_t>(g), 0.0);
    std::vector<double> lo(static_cast<std::size_t>(g), std::numeric_limits<double>::infinity());
    std::vector<double> hi(static_cast<std::size_t>(g), -std::numeric_limits<double>::infinity());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const int k = group_of[i];
      sum[k] += X(i, j);
      cnt[k] += 1.0;
      lo[k] = std::min(lo[k], X(i, j));
      hi[k] = std::max(hi[k], X(i, j));
      total += X(i, j);
    }
    const double grand = total / n;
    double ssb = 0.0, ssw = 0.0;
    for (int k = 0; k < g; ++k) {
      const double m = sum[k] / cnt[k];
      ssb += cnt[k] * (m - grand) * (m - grand);
    }
    for (int i = 0; i < n; ++i) {
      const int k = group_of[i];
      // A constant group contributes exactly zero even when sum / count rounds.
      if (lo[k] == hi[k]) continue;
      const double d = X(i, j) - sum[k] / cnt[k];
      ssw += d * d;
    }
    double f;
    if (ssb <= 0.0) f = 0.0;
    else if (ssw <= 0.0) f = std::numeric_limits<double>::infinity();
    else f = (ssb / (g - 1)) / (ssw / (n - g));
    scores.push_back(f);
  }
  return scores;
}

KBest kbest_fit(const MatrixXd& X, const std::vector<int>& labels, int k) {
  if (k < 1) throw Error("kbest: k must be >= 1");
  KBest kb;
  kb.k = k;
  kb.scores = anova_f(X, labels);
  const int width = static_cast<int>(X.cols());
  if (k > width) {
    kb.k = width;
    kb.clamped = true;
  }
  std::vector<int> order(static_cast<std::size_t>(width));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return kb.scores[a] > kb.scores[b]; });
  kb.kept.assign(order.begin(), order.begin() + kb.k);
  std::sort(kb.kept.begin(), kb.kept.end());
  return kb;
}

double soft_threshold(double z, double gamma) {
  if (gamma < 0.0) throw Error("soft_threshold: gamma must be >= 0");
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

double lasso_objective(const MatrixXd& X, const VectorXd& y, const VectorXd& beta, double b0, double lambda) {
  const VectorXd r = y - X * beta - VectorXd::Constant(y.size(), b0);
  return r.squaredNorm() / (2.0 * static_cast<double>(y.size())) + lambda * beta.lpNorm<1>();
}

double lasso_lambda_max(const MatrixXd& X, const VectorXd& y) {
  if (X.rows() != y.size() || X.rows() == 0) throw Error("lasso: shape mismatch");
  const double n = static_cast<double>(y.size());
  const double b0 = y.mean();
  const VectorXd r = y.array() - b0;
  double best = 0.0;
  for (Index j = 0; j < X.cols(); ++j) best = std::max(best, std::abs(X.col(j).dot(r) / n));
  return best;
}

LassoFit lasso_fit(const MatrixXd& X, const VectorXd& y, double lambda, const LassoOptions& opts,
                   const VectorXd* warm) {
  if (X.rows() != y.size() || X.rows() == 0) throw Error("lasso: shape mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("lasso: lambda must be finite and >= 0");
  if (!X.allFinite() || !y.allFinite()) throw Error("lasso: non-finite input");
  const Index p = X.cols();
  const double n = static_cast<double>(X.rows());

  LassoFit fit;
  fit.lambda = lambda;
  fit.beta = VectorXd::Zero(p);
  if (warm) {
    if (warm->size() != p) throw Error("lasso: warm start has the wrong width");
    fit.beta = *warm;
  }
  VectorXd d(p);
  for (Index j = 0; j < p; ++j) d[j] = X.col(j).squaredNorm() / n;

  VectorXd partial = y;
  if (fit.beta.any()) partial -= X * fit.beta;
  fit.intercept = partial.mean();
  VectorXd r = partial.array() - fit.intercept;

  double prev = lasso_objective(X, y, fit.beta, fit.intercept, lambda);
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < p; ++j) {
      if (d[j] == 0.0) {
        fit.beta[j] = 0.0;
        continue;
      }
      const double old = fit.beta[j];
      const double z = X.col(j).dot(r) / n + d[j] * old;
      const double updated = soft_threshold(z, lambda) / d[j];
      const double delta = updated - old;
      if (delta != 0.0) {
        r.noalias() -= delta * X.col(j);
        fit.beta[j] = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    const double shift = r.mean();
    fit.intercept += shift;
    r.array() -= shift;
    max_change = std::max(max_change, std::abs(shift));

    const double obj = r.squaredNorm() / (2.0 * n) + lambda * fit.beta.lpNorm<1>();
    if (obj > prev + 1e-12 * std::max(1.0, std::abs(prev)))
      throw Error("lasso: objective increased during coordinate descent");
    fit.objective.push_back(obj);
    prev = obj;
    fit.sweeps = sweep;
    if (max_change < opts.tolerance) {
      fit.converged = true;
      break;
    }
  }
  for (Index j = 0; j < p; ++j)
    if (fit.beta[j] != 0.0) fit.kept.push_back(static_cast<int>(j));
  return fit;
}

std::vector<double> lasso_grid(const MatrixXd& X, const VectorXd& y, int points, double ratio) {
  if (points < 1) throw Error("lasso grid: need at least one point");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error("lasso grid: ratio must be in (0, 1]");
  const double hi = lasso_lambda_max(X, y);
  if (hi == 0.0) throw Error("lasso grid: lambda_max is 0 (constant target or zero design)");
  std::vector<double> grid;
  for (int i = 0; i < points; ++i) {
    const double t = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
    grid.push_back(hi * std::pow(ratio, t));
  }
  grid.front() = hi;
  return grid;
}

LambdaSelection lasso_select_lambda(const MatrixXd& X, const VectorXd& y, const std::vector<double>& grid, int folds,
                                    std::uint64_t seed, const LassoOptions& opts) {
  if (grid.empty()) throw Error("lambda selection: empty grid");
  if (folds < 2) throw Error("lambda selection: need at least 2 folds");
  const int n = static_cast<int>(X.rows());
  if (n < folds) throw Error("lambda selection: fewer samples than folds");

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) fold_of[perm[i]] = i % folds;

  LambdaSelection sel;
  sel.grid = grid;
  sel.cv_error.assign(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<int> tr, te;
    for (int i = 0; i < n; ++i) (fold_of[i] == f ? te : tr).push_back(i);
    const MatrixXd Xtr = take_rows(X, tr), Xte = take_rows(X, te);
    const VectorXd ytr = take(y, tr), yte = take(y, te);
    VectorXd warm = VectorXd::Zero(X.cols());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const LassoFit fit = lasso_fit(Xtr, ytr, grid[g], opts, &warm);
      warm = fit.beta;
      const VectorXd resid = yte - Xte * fit.beta - VectorXd::Constant(yte.size(), fit.intercept);
      sel.cv_error[g] += resid.squaredNorm() / static_cast<double>(yte.size()) / folds;
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (sel.cv_error[g] < sel.cv_error[best]) best = g;
  // Strict comparison keeps the earliest (largest) lambda on ties, assuming a descending grid.
  sel.lambda = grid[best];
  return sel;
}

std::vector<std::string> SelectionPipeline::variance_names() const {
  std::vector<std::string> out;
  for (int j : variance.kept) out.push_back(input_names[j]);
  return out;
}

std::vector<std::string> SelectionPipeline::kbest_names() const {
  const auto v = variance_names();
  std::vector<std::string> out;
  for (int j : kbest.kept) out.push_back(v[j]);
  return out;
}

std::vector<std::string> SelectionPipeline::output_names() const {
  const auto k = kbest_names();
  std::vector<std::string> out;
  for (int j : lasso.kept) out.push_back(k[j]);
  return out;
}

std::vector<int> SelectionPipeline::output_columns() const {
  std::vector<int> out;
  for (int j : lasso.kept) out.push_back(variance.kept[kbest.kept[j]]);
  return out;
}

namespace {

json doubles(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) {
    if (std::isinf(x)) a.push_back(x > 0 ? "inf" : "-inf");
    else a.push_back(x);
  }
  return a;
}

json doubles(const VectorXd& v) { return doubles(std::vector<double>(v.data(), v.data() + v.size())); }

std::vector<double> read_doubles(const json& a) {
  std::vector<double> out;
  for (const auto& x : a) {
    if (x.is_string()) {
      const auto s = x.get<std::string>();
      if (s == "inf") out.push_back(std::numeric_limits<double>::infinity());
      else if (s == "-inf") out.push_back(-std::numeric_limits<double>::infinity());
      else throw Error("pipeline json: bad number '" + s + "'");
    } else {
      out.push_back(x.get<double>());
    }
  }
  return out;
}

VectorXd read_vector(const json& a) {
  const auto v = read_doubles(a);
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

void check_increasing(const std::vector<int>& idx, std::size_t width, const char* stage) {
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= width || (i > 0 && idx[i] <= idx[i - 1]))
      throw Error(std::string("pipeline: ") + stage + " kept indices are not strictly increasing within range");
  }
}

}  // namespace

std::string SelectionPipeline::to_json() const {
  json j;
  j["format"] = "radfuse-selection";
  j["version"] = 1;
  j["input_names"] = input_names;
  j["variance"] = {{"threshold", variance.threshold}, {"variances", doubles(variance.variances)},
                   {"kept", variance.kept}};
  j["standardizer"] = {{"mean", doubles(standardizer.mean)}, {"std", doubles(standardizer.std)}};
  j["kbest"] = {{"k", kbest.k}, {"clamped", kbest.clamped}, {"scores", doubles(kbest.scores)}, {"kept", kbest.kept}};
  j["lasso"] = {{"lambda", lasso.lambda},       {"intercept", lasso.intercept}, {"beta", doubles(lasso.beta)},
                {"sweeps", lasso.sweeps},       {"converged", lasso.converged}, {"kept", lasso.kept}};
  j["lambda_search"] = {{"grid", doubles(lambda_search.grid)}, {"cv_error", doubles(lambda_search.cv_error)},
                        {"lambda", lambda_search.lambda}};
  j["trace"] = {{"variance", variance_names()}, {"kbest", kbest_names()}, {"lasso", output_names()}};
  return j.dump(2);
}

SelectionPipeline SelectionPipeline::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("pipeline json: ") + e.what());
  }
  if (j.value("format", "") != "radfuse-selection" || j.value("version", 0) != 1)
    throw Error("pipeline json: unsupported format");
  SelectionPipeline p;
  try {
    p.input_names = j.at("input_names").get<std::vector<std::string>>();
    const auto& v = j.at("variance");
    p.variance.threshold = v.at("threshold").get<double>();
    p.variance.variances = read_doubles(v.at("variances"));
    p.variance.kept = v.at("kept").get<std::vector<int>>();
    p.standardizer.mean = read_vector(j.at("standardizer").at("mean"));
    p.standardizer.std = read_vector(j.at("standardizer").at("std"));
    const auto& k = j.at("kbest");
    p.kbest.k = k.at("k").get<int>();
    p.kbest.clamped = k.at("clamped").get<bool>();
    p.kbest.scores = read_doubles(k.at("scores"));
    p.kbest.kept = k.at("kept").get<std::vector<int>>();
    const auto& l = j.at("lasso");
    p.lasso.lambda = l.at("lambda").get<double>();
    p.lasso.intercept = l.at("intercept").get<double>();
    p.lasso.beta = read_vector(l.at("beta"));
    p.lasso.sweeps = l.at("sweeps").get<int>();
    p.lasso.converged = l.at("converged").get<bool>();
    p.lasso.kept = l.at("kept").get<std::vector<int>>();
    const auto& s = j.at("lambda_search");
    p.lambda_search.grid = read_doubles(s.at("grid"));
    p.lambda_search.cv_error = read_doubles(s.at("cv_error"));
    p.lambda_search.lambda = s.at("lambda").get<double>();
  } catch (const json::exception& e) {
    throw Error(std::string("pipeline json: ") + e.what());
  }
  check_increasing(p.variance.kept, p.input_names.size(), "variance");
  if (static_cast<std::size_t>(p.standardizer.mean.size()) != p.variance.kept.size() ||
      p.standardizer.std.size() != p.standardizer.mean.size())
    throw Error("pipeline: standardizer width does not match the variance stage");
  check_increasing(p.kbest.kept, p.variance.kept.size(), "kbest");
  if (static_cast<std::size_t>(p.lasso.beta.size()) != p.kbest.kept.size())
    throw Error("pipeline: lasso width does not match the kbest stage");
  check_increasing(p.lasso.kept, p.kbest.kept.size(), "lasso");
  return p;
}

std::string SelectionPipeline::hash() const { return hex64(fnv1a64(to_json())); }

void SelectionPipeline::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << to_json() << '\n';
}

SelectionPipeline SelectionPipeline::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

SelectionPipeline pipeline_fit(const FeatureMatrix& train, const SelectionConfig& cfg) {
  train.validate();
  SelectionPipeline p;
  p.input_names = train.names;
  p.variance = variance_filter_fit(train.values, cfg.variance_threshold);
  if (p.variance.kept.empty()) throw Error("selection: no feature passes the variance threshold");

  const MatrixXd Xs = [&] {
    const MatrixXd raw = take_cols(train.values, p.variance.kept);
    p.standardizer = standardize_fit(raw);
    return p.standardizer.apply(raw);
  }();

  p.kbest = kbest_fit(Xs, train.labels, cfg.k);
  const MatrixXd Xk = take_cols(Xs, p.kbest.kept);
  VectorXd y(static_cast<Index>(train.labels.size()));
  for (std::size_t i = 0; i < train.labels.size(); ++i) y[static_cast<Index>(i)] = train.labels[i];

  double lambda = cfg.fixed_lambda;
  if (lambda <= 0.0) {
    p.lambda_search = lasso_select_lambda(Xk, y, lasso_grid(Xk, y, cfg.grid_points, cfg.grid_ratio), cfg.folds,
                                          cfg.seed);
    lambda = p.lambda_search.lambda;
  } else {
    p.lambda_search.lambda = lambda;
  }
  p.lasso = lasso_fit(Xk, y, lambda);
  if (p.lasso.kept.empty()) throw Error("selection: lasso kept no features at lambda " + std::to_string(lambda));
  return p;
}

FeatureMatrix pipeline_transform(const SelectionPipeline& p, const FeatureMatrix& X) {
  if (X.names != p.input_names)
    throw Error("selection: input features do not match the fitted pipeline (" + std::to_string(X.cols()) + " vs " +
                std::to_string(p.input_names.size()) + " columns)");
  X.validate();
  const MatrixXd Xs = p.standardizer.apply(take_cols(X.values, p.variance.kept));
  std::vector<int> cols;
  for (int j : p.lasso.kept) cols.push_back(p.kbest.kept[j]);
  FeatureMatrix out;
  out.ids = X.ids;
  out.labels = X.labels;
  out.names = p.output_names();
  out.values = take_cols(Xs, cols);
  return out;
}

}  // namespace radfuse
