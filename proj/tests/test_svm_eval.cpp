#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "radfuse/eval.hpp"
#include "radfuse/svm.hpp"
#include "test_util.hpp"

using namespace radfuse;

namespace {

/// Golden-section minimum of a convex function of one variable.
template <class F>
double golden_min(F f, double lo, double hi, int iters = 200) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return f(0.5 * (a + b));
}

std::vector<int> class_labels(const std::array<int, 4>& counts) {
  std::vector<int> l;
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) l.push_back(k);
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// SVM
// ---------------------------------------------------------------------------

TEST_CASE("svm separates linearly separable clusters") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.3);
  const double cx[4] = {3, -3, 0, 0}, cy[4] = {0, 0, 3, -3};
  Eigen::MatrixXd X(80, 2);
  std::vector<int> y;
  for (int i = 0; i < 80; ++i) {
    const int k = i % 4;
    X(i, 0) = cx[k] + noise(rng);
    X(i, 1) = cy[k] + noise(rng);
    y.push_back(k);
  }
  const LinearSVM m = train_svm(X, y, SvmConfig{});
  int correct = 0;
  for (int i = 0; i < 80; ++i) correct += m.predict(X.row(i).transpose()) == y[static_cast<std::size_t>(i)];
  CHECK(correct == 80);
  CHECK(m.classes() == 4);
  CHECK(m.features() == 2);
}

TEST_CASE("svm machine approaches the convex optimum") {
  // One feature: minimize over (w, b) by nested golden sections.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 40;
  Eigen::MatrixXd X(n, 1);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    const int k = i % 2;
    X(i, 0) = (k ? 0.8 : -0.8) + g(rng);
    labels.push_back(k);
  }
  SvmConfig cfg;
  cfg.C = 0.5;
  cfg.classes = 2;
  cfg.iterations = 20000;
  const LinearSVM m = train_svm(X, labels, cfg);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
  auto obj = [&](double w, double b) {
    Eigen::VectorXd wv(1);
    wv[0] = w;
    return svm_objective(X, y, wv, b, cfg.C);
  };
  const double opt = golden_min([&](double w) { return golden_min([&](double b) { return obj(w, b); }, -10, 10); },
                                -10, 10);
  const double got = obj(m.W(1, 0), m.b[1]);
  CHECK(got >= opt - 1e-9);
  CHECK(got <= opt * (1.0 + 1e-3));
}

TEST_CASE("svm tie rule and scale invariance") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(8, 3);
  std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3};
  const LinearSVM m = train_svm(X, y, SvmConfig{});
  const Eigen::VectorXd d = m.decision(Eigen::VectorXd::Ones(3));
  for (int k = 1; k < 4; ++k) CHECK(d[k] == d[0]);
  CHECK(m.predict(Eigen::VectorXd::Ones(3)) == 0);
  for (double p : m.predict_proba(Eigen::VectorXd::Ones(3))) CHECK(p == doctest::Approx(0.25));

  CHECK(argmax({0.1, 0.7, 0.7, 0.2}) == 1);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(4), s(4);
    for (auto& x : v) x = g(rng);
    const double c = std::exp(3.0 * g(rng));
    for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = c * v[static_cast<std::size_t>(i)];
    CHECK(argmax(v) == argmax(s));
  }
}

TEST_CASE("svm rejects bad training data") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(6, 2);
  CHECK_THROWS_AS(train_svm(X, {2, 2, 2, 2, 2, 2}, SvmConfig{}), Error);
  CHECK_THROWS_AS(train_svm(X, {0, 1, 2}, SvmConfig{}), Error);
  CHECK_THROWS_AS(train_svm(X, {0, 1, 2, 3, 4, 0}, SvmConfig{}), Error);
  SvmConfig bad;
  bad.C = 0.0;
  CHECK_THROWS_AS(train_svm(X, {0, 1, 0, 1, 0, 1}, bad), Error);
  const LinearSVM m = train_svm(X, {0, 1, 0, 1, 0, 1}, SvmConfig{});
  CHECK_THROWS_AS(m.decision(Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("svm training is deterministic and round-trips") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(30, 4);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(X(i, 0) > 0 ? (X(i, 1) > 0 ? 0 : 1) : (X(i, 2) > 0 ? 2 : 3));
  const LinearSVM a = train_svm(X, y, SvmConfig{});
  const LinearSVM b = train_svm(X, y, SvmConfig{});
  CHECK(a.W == b.W);
  CHECK(a.b == b.b);

  TempDir tmp;
  a.save(tmp.path / "svm.json", "feedbeef");
  std::string hash;
  const LinearSVM c = LinearSVM::load(tmp.path / "svm.json", &hash);
  CHECK(hash == "feedbeef");
  CHECK(c.W == a.W);
  CHECK(c.b == a.b);
  CHECK(c.to_json("feedbeef") == a.to_json("feedbeef"));
  CHECK_THROWS_AS(LinearSVM::from_json("{\"format\":\"other\"}"), Error);
  CHECK_THROWS_AS(LinearSVM::from_json("not json"), Error);
}

TEST_CASE("probability combination") {
  const auto c = combine_probabilities({1, 0, 0, 0}, {0, 1, 0, 0});
  CHECK(c == std::vector<double>{0.5, 0.5, 0, 0});
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  const auto same = combine_probabilities(p, p);
  for (int i = 0; i < 4; ++i) CHECK(same[static_cast<std::size_t>(i)] == doctest::Approx(p[static_cast<std::size_t>(i)]).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(4), b(4);
    double sa = 0, sb = 0;
    for (int i = 0; i < 4; ++i) {
      a[static_cast<std::size_t>(i)] = u(rng);
      b[static_cast<std::size_t>(i)] = u(rng);
      sa += a[static_cast<std::size_t>(i)];
      sb += b[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 4; ++i) {
      a[static_cast<std::size_t>(i)] /= sa;
      b[static_cast<std::size_t>(i)] /= sb;
    }
    double s = 0.0;
    for (double v : combine_probabilities(a, b)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(combine_probabilities({0.5, 0.5}, {0.2, 0.2, 0.6}), Error);
  CHECK_THROWS_AS(combine_probabilities({0.5, 0.6, 0, 0}, {0.25, 0.25, 0.25, 0.25}), Error);
  CHECK_THROWS_AS(combine_probabilities({1.5, -0.5, 0, 0}, {0.25, 0.25, 0.25, 0.25}), Error);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

TEST_CASE("stratified split floor arithmetic") {
  const auto labels = class_labels({158, 136, 53, 329});
  const Split s = stratified_split(labels, 0.8, 9);
  std::array<int, 4> train{}, test{};
  for (int r : s.train) ++train[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])];
  for (int r : s.test) ++test[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])];
  CHECK(train == std::array<int, 4>{126, 108, 42, 263});
  CHECK(test == std::array<int, 4>{32, 28, 11, 66});

  std::set<int> all(s.train.begin(), s.train.end());
  for (int r : s.test) CHECK(all.insert(r).second);
  CHECK(all.size() == labels.size());

  const Split again = stratified_split(labels, 0.8, 9);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(stratified_split(labels, 0.8, 10).train != s.train);
}

TEST_CASE("split guards") {
  const auto labels = class_labels({10, 10, 10, 10});
  CHECK_THROWS_AS(stratified_split(labels, 1.0, 1), Error);
  CHECK_THROWS_AS(random_split(labels, 1.0, 1), Error);
  CHECK_THROWS_AS(stratified_split({}, 0.8, 1), Error);
  CHECK_THROWS_AS(stratified_split(labels, 0.0, 1), Error);
  CHECK_THROWS_AS(stratified_split({0, 1, 7}, 0.5, 1), Error);
  CHECK(floor_count(0.29, 100) == 29);
  CHECK(floor_count(0.8, 53) == 42);
}

TEST_CASE("random split sizes and determinism") {
  const auto labels = class_labels({40, 34, 13, 82});
  const Split s = random_split(labels, 0.8, 3);
  CHECK(s.train.size() == 135);
  CHECK(s.test.size() == 34);
  CHECK(random_split(labels, 0.8, 3).test == s.test);
}

// ---------------------------------------------------------------------------
// Confusion and metrics
// ---------------------------------------------------------------------------

TEST_CASE("confusion of perfect predictions") {
  const std::vector<int> labels{0, 0, 1, 2, 3};
  const ConfusionMatrix cm = confusion(labels, labels);
  CHECK(cm.counts[0][0] == 2);
  CHECK(cm.counts[1][1] == 1);
  CHECK(cm.counts[2][2] == 1);
  CHECK(cm.counts[3][3] == 1);
  CHECK(cm.total() == 5);
  CHECK(summarize(cm).accuracy == 1.0);
}

TEST_CASE("constant IA predictions") {
  const auto labels = class_labels({25, 25, 25, 25});
  const std::vector<int> preds(100, 3);
  const Metrics m = summarize(confusion(preds, labels));
  CHECK(m.accuracy == 0.25);
  CHECK(m.recall == std::array<double, 4>{0, 0, 0, 1});
  CHECK(m.precision[3] == 0.25);
  CHECK_FALSE(m.precision_defined[0]);
  CHECK(m.precision[0] == 0.0);
}

TEST_CASE("confusion properties on random predictions") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> labels(60), preds(60);
    for (int i = 0; i < 60; ++i) {
      labels[static_cast<std::size_t>(i)] = cls(rng);
      preds[static_cast<std::size_t>(i)] = cls(rng);
    }
    const ConfusionMatrix cm = confusion(preds, labels);
    CHECK(cm.total() == 60);
    std::map<int, int> freq;
    for (int l : labels) ++freq[l];
    for (int k = 0; k < 4; ++k) CHECK(cm.row_sum(k) == freq[k]);
    const Metrics m = summarize(cm);
    CHECK(m.accuracy == static_cast<double>(cm.trace()) / 60.0);
    for (int k = 0; k < 4; ++k) {
      CHECK(m.recall[static_cast<std::size_t>(k)] >= 0.0);
      CHECK(m.recall[static_cast<std::size_t>(k)] <= 1.0);
    }
    CHECK(summarize(confusion(labels, labels)).accuracy == 1.0);

    const int perm[4] = {3, 1, 0, 2};
    std::vector<int> pl(60), pp(60);
    for (int i = 0; i < 60; ++i) {
      pl[static_cast<std::size_t>(i)] = perm[labels[static_cast<std::size_t>(i)]];
      pp[static_cast<std::size_t>(i)] = perm[preds[static_cast<std::size_t>(i)]];
    }
    CHECK(summarize(confusion(pp, pl)).accuracy == m.accuracy);
  }
}

TEST_CASE("confusion errors") {
  CHECK_THROWS_AS(confusion({0, 1}, {0}), Error);
  CHECK_THROWS_AS(confusion({0, 4}, {0, 1}), Error);
  CHECK_THROWS_AS(confusion({0, 1}, {-1, 1}), Error);
}

TEST_CASE("metrics output formats") {
  const ConfusionMatrix cm = confusion({0, 1, 1, 3}, {0, 1, 2, 3});
  const std::string j = metrics_json("fusion", 7, cm);
  CHECK(j.find("\"method\": \"fusion\"") != std::string::npos);
  CHECK(j.find("\"accuracy\": 0.75") != std::string::npos);
  CHECK(j.find("\"seed\": 7") != std::string::npos);
  const std::string t = confusion_table(cm);
  CHECK(t.find("AAH") != std::string::npos);
  CHECK(t.find("accuracy 0.7500 (3/4)") != std::string::npos);

  const MethodSummary s = summarize_runs("cnn", {0.5, 0.7}, {cm, cm});
  CHECK(s.mean == doctest::Approx(0.6));
  CHECK(s.sd == doctest::Approx(std::sqrt(0.02)));
  CHECK(s.pooled.total() == 8);
  CHECK(accuracy_table({s}).find("60.00") != std::string::npos);
}
