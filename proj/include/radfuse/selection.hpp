#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "radfuse/features.hpp"

namespace radfuse {

struct VarianceFilter {
  double threshold = 0.8;
  std::vector<double> variances;
  std::vector<int> kept;
};

/// Keeps column j iff its population variance is >= threshold.
VarianceFilter variance_filter_fit(const Eigen::MatrixXd& X, double threshold = 0.8);

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  /// (x - mean) / std per column; columns with std == 0 map to 0.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

Standardizer standardize_fit(const Eigen::MatrixXd& X);

/// One-way ANOVA F per column over the label groups. Zero within-group and positive between-group
/// spread scores +inf; a column with no between-group spread scores 0.
std::vector<double> anova_f(const Eigen::MatrixXd& X, const std::vector<int>& labels);

struct KBest {
  int k = 200;
  /// Set when the requested k exceeded the input width and was reduced.
  bool clamped = false;
  std::vector<double> scores;
  std::vector<int> kept;
};

KBest kbest_fit(const Eigen::MatrixXd& X, const std::vector<int>& labels, int k);

double soft_threshold(double z, double gamma);

struct LassoOptions {
  double tolerance = 1e-8;
  int max_sweeps = 10000;
};

struct LassoFit {
  double lambda = 0.0;
  Eigen::VectorXd beta;
  double intercept = 0.0;
  int sweeps = 0;
  bool converged = false;
  /// Objective after each sweep.
  std::vector<double> objective;
  std::vector<int> kept;
};

/// (1/2n)||y - X beta - b0||^2 + lambda ||beta||_1
double lasso_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta, double b0,
                       double lambda);

/// Smallest lambda with an all-zero solution: max_j |x_j^T (y - mean y)| / n.
double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

/// Cyclic coordinate descent with an unpenalized intercept. `warm` seeds beta when non-null.
LassoFit lasso_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, const LassoOptions& opts = {},
                   const Eigen::VectorXd* warm = nullptr);

/// Descending log-spaced grid from lambda_max to lambda_max * ratio.
std::vector<double> lasso_grid(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int points = 50,
                               double ratio = 1e-3);

struct LambdaSelection {
  std::vector<double> grid;
  std::vector<double> cv_error;
  double lambda = 0.0;
};

/// K-fold CV over a descending grid with warm starts. Ties go to the larger lambda.
LambdaSelection lasso_select_lambda(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const std::vector<double>& grid, int folds, std::uint64_t seed,
                                    const LassoOptions& opts = {});

struct SelectionConfig {
  double variance_threshold = 0.8;
  int k = 200;
  int folds = 5;
  int grid_points = 50;
  double grid_ratio = 1e-3;
  /// Used instead of cross-validation when > 0.
  double fixed_lambda = 0.0;
  std::uint64_t seed = 0;
};

struct SelectionPipeline {
  std::vector<std::string> input_names;
  VarianceFilter variance;
  Standardizer standardizer;
  KBest kbest;
  LassoFit lasso;
  LambdaSelection lambda_search;

  std::vector<std::string> variance_names() const;
  std::vector<std::string> kbest_names() const;
  std::vector<std::string> output_names() const;
  /// Column of the raw input feeding each output column.
  std::vector<int> output_columns() const;

  std::string to_json() const;
  static SelectionPipeline from_json(const std::string& text);
  /// FNV-1a 64 of to_json(), as hex.
  std::string hash() const;
  void save(const std::filesystem::path& path) const;
  static SelectionPipeline load(const std::filesystem::path& path);
};

SelectionPipeline pipeline_fit(const FeatureMatrix& train, const SelectionConfig& cfg = {});

/// Standardized values of the finally kept columns.
FeatureMatrix pipeline_transform(const SelectionPipeline& p, const FeatureMatrix& X);

}  // namespace radfuse
