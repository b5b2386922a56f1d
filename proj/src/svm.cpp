#include "radfuse/svm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "radfuse/nn.hpp"

namespace radfuse {

using nlohmann::json;

void SvmConfig::validate() const {
  if (!(C > 0.0) || !std::isfinite(C)) throw Error("svm: C must be positive");
  if (iterations < 1) throw Error("svm: iterations must be >= 1");
  if (!(eta0 > 0.0)) throw Error("svm: eta0 must be positive");
  if (classes < 2) throw Error("svm: need at least 2 classes");
}

Eigen::VectorXd LinearSVM::decision(const Eigen::VectorXd& x) const {
  if (x.size() != W.cols())
    throw Error("svm: input width " + std::to_string(x.size()) + " != " + std::to_string(W.cols()));
  return W * x + b;
}

int argmax(const std::vector<double>& v) {
  if (v.empty()) throw Error("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

int LinearSVM::predict(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd d = decision(x);
  return argmax({d.data(), d.data() + d.size()});
}

std::vector<double> LinearSVM::predict_proba(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd d = decision(x);
  return softmax({d.data(), d.data() + d.size()});
}

double svm_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double bias,
                     double C) {
  const Eigen::VectorXd m = (y.array() * ((X * w).array() + bias)).matrix();
  return 0.5 * w.squaredNorm() + C * (1.0 - m.array()).max(0.0).sum();
}

LinearSVM train_svm(const Eigen::MatrixXd& X, const std::vector<int>& labels, const SvmConfig& cfg) {
  cfg.validate();
  const auto n = X.rows();
  const auto p = X.cols();
  if (n == 0) throw Error("svm: no training rows");
  if (static_cast<std::size_t>(n) != labels.size()) throw Error("svm: row and label counts differ");
  if (!X.allFinite()) throw Error("svm: non-finite feature value");
  std::vector<int> seen(static_cast<std::size_t>(cfg.classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= cfg.classes) throw Error("svm: label " + std::to_string(l) + " out of range");
    seen[static_cast<std::size_t>(l)] = 1;
  }
  int distinct = 0;
  for (int s : seen) distinct += s;
  if (distinct < 2) throw Error("svm: training data holds a single class");

  LinearSVM m;
  m.C = cfg.C;
  m.W = Eigen::MatrixXd::Zero(cfg.classes, p);
  m.b = Eigen::VectorXd::Zero(cfg.classes);
  // Steps are taken on the objective divided by C*n, which has the same minimizer.
  const double scale = 1.0 / (cfg.C * static_cast<double>(n));

  for (int k = 0; k < cfg.classes; ++k) {
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)] == k ? 1.0 : -1.0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    double bias = 0.0;
    Eigen::VectorXd best_w = w;
    double best_b = bias;
    double best = svm_objective(X, y, w, bias, cfg.C);
    for (int t = 1; t <= cfg.iterations; ++t) {
      const Eigen::VectorXd margin = (y.array() * ((X * w).array() + bias)).matrix();
      Eigen::VectorXd coef = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i)
        if (margin[i] < 1.0) coef[i] = y[i];
      const Eigen::VectorXd gw = w * scale - X.transpose() * coef / static_cast<double>(n);
      const double gb = -coef.sum() / static_cast<double>(n);
      const double eta = cfg.eta0 / std::sqrt(static_cast<double>(t));
      w -= eta * gw;
      bias -= eta * gb;
      const double obj = svm_objective(X, y, w, bias, cfg.C);
      if (obj < best) {
        best = obj;
        best_w = w;
        best_b = bias;
      }
    }
    m.W.row(k) = best_w.transpose();
    m.b[k] = best_b;
  }
  return m;
}

std::vector<double> combine_probabilities(const std::vector<double>& p_svm, const std::vector<double>& p_cnn) {
  if (p_svm.size() != p_cnn.size() || p_svm.empty()) throw Error("combine: probability vectors differ in length");
  auto check = [](const std::vector<double>& p, const char* who) {
    double s = 0.0;
    for (double v : p) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw Error(std::string("combine: ") + who + " has an entry outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw Error(std::string("combine: ") + who + " does not sum to 1");
  };
  check(p_svm, "svm probabilities");
  check(p_cnn, "cnn probabilities");
  std::vector<double> out(p_svm.size());
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * (p_svm[i] + p_cnn[i]);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

std::string LinearSVM::to_json(const std::string& pipeline_hash) const {
  json j;
  j["format"] = "radfuse-svm";
  j["version"] = 1;
  j["C"] = C;
  j["classes"] = classes();
  j["features"] = features();
  j["pipeline_hash"] = pipeline_hash;
  j["weights"] = json::array();
  for (Eigen::Index k = 0; k < W.rows(); ++k) {
    std::vector<double> row(static_cast<std::size_t>(W.cols()));
    for (Eigen::Index c = 0; c < W.cols(); ++c) row[static_cast<std::size_t>(c)] = W(k, c);
    j["weights"].push_back(row);
  }
  j["bias"] = std::vector<double>(b.data(), b.data() + b.size());
  return j.dump(2);
}

LinearSVM LinearSVM::from_json(const std::string& text, std::string* pipeline_hash) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "radfuse-svm") throw Error("svm: not an SVM model file");
    if (j.at("version") != 1) throw Error("svm: unsupported version " + j.at("version").dump());
    LinearSVM m;
    m.C = j.at("C").get<double>();
    const int K = j.at("classes").get<int>(), P = j.at("features").get<int>();
    const auto& rows = j.at("weights");
    const auto bias = j.at("bias").get<std::vector<double>>();
    if (static_cast<int>(rows.size()) != K || static_cast<int>(bias.size()) != K)
      throw Error("svm: weight table does not match the class count");
    m.W.resize(K, P);
    m.b.resize(K);
    for (int k = 0; k < K; ++k) {
      const auto row = rows[static_cast<std::size_t>(k)].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != P) throw Error("svm: weight row does not match the feature count");
      for (int c = 0; c < P; ++c) m.W(k, c) = row[static_cast<std::size_t>(c)];
      m.b[k] = bias[static_cast<std::size_t>(k)];
    }
    if (pipeline_hash) *pipeline_hash = j.at("pipeline_hash").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("svm: malformed model file: ") + e.what());
  }
}

void LinearSVM::save(const std::filesystem::path& path, const std::string& pipeline_hash) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << to_json(pipeline_hash) << '\n';
}

LinearSVM LinearSVM::load(const std::filesystem::path& path, std::string* pipeline_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str(), pipeline_hash);
}

}  // namespace radfuse
