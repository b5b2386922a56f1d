#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace radfuse {

struct SvmConfig {
  double C = 1.0;
  int iterations = 2000;
  /// Step size at iteration t is eta0 / sqrt(t).
  double eta0 = 0.5;
  int classes = 4;

  void validate() const;
};

/// One-vs-rest linear SVM: row k of W and b[k] score class k against the rest.
struct LinearSVM {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  double C = 1.0;

  int classes() const { return static_cast<int>(W.rows()); }
  int features() const { return static_cast<int>(W.cols()); }

  Eigen::VectorXd decision(const Eigen::VectorXd& x) const;
  /// argmax of the decision values; ties go to the lowest class index.
  int predict(const Eigen::VectorXd& x) const;
  /// Softmax over the decision values.
  std::vector<double> predict_proba(const Eigen::VectorXd& x) const;

  std::string to_json(const std::string& pipeline_hash) const;
  static LinearSVM from_json(const std::string& text, std::string* pipeline_hash = nullptr);
  void save(const std::filesystem::path& path, const std::string& pipeline_hash) const;
  static LinearSVM load(const std::filesystem::path& path, std::string* pipeline_hash = nullptr);
};

/// Objective of one binary machine, (1/2)|w|^2 + C * sum(hinge), with y in {-1, +1}.
double svm_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double bias,
                     double C);

/// Full-batch subgradient descent per machine; each machine returns its lowest-objective iterate.
LinearSVM train_svm(const Eigen::MatrixXd& X, const std::vector<int>& labels, const SvmConfig& cfg);

/// argmax with ties to the lowest index.
int argmax(const std::vector<double>& v);

/// Elementwise mean of two probability vectors, renormalized.
std::vector<double> combine_probabilities(const std::vector<double>& p_svm, const std::vector<double>& p_cnn);

}  // namespace radfuse
