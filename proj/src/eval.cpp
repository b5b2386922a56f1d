#include "radfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "json.hpp"

namespace radfuse {

int floor_count(double fraction, std::size_t count) {
  return static_cast<int>(std::floor(fraction * static_cast<double>(count) + 1e-9));
}

namespace {

void check_split_args(const std::vector<int>& labels, double fraction) {
  if (labels.empty()) throw Error("split: empty dataset");
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split: train fraction must lie in (0, 1)");
  for (int l : labels)
    if (l < 0 || l >= kNumClasses) throw Error("split: label " + std::to_string(l) + " out of range");
}

void finish_split(Split& s) {
  if (s.train.empty()) throw Error("split: train set is empty");
  if (s.test.empty()) throw Error("split: test set is empty");
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
}

}  // namespace

Split stratified_split(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  check_split_args(labels, fraction);
  std::mt19937_64 rng(seed);
  Split s;
  s.seed = seed;
  s.train_fraction = fraction;
  for (int k = 0; k < kNumClasses; ++k) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) rows.push_back(static_cast<int>(i));
    std::shuffle(rows.begin(), rows.end(), rng);
    const int n_train = floor_count(fraction, rows.size());
    s.train.insert(s.train.end(), rows.begin(), rows.begin() + n_train);
    s.test.insert(s.test.end(), rows.begin() + n_train, rows.end());
  }
  finish_split(s);
  return s;
}

Split random_split(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  check_split_args(labels, fraction);
  std::mt19937_64 rng(seed);
  std::vector<int> rows(labels.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  std::shuffle(rows.begin(), rows.end(), rng);
  const int n_train = floor_count(fraction, rows.size());
  Split s;
  s.seed = seed;
  s.train_fraction = fraction;
  s.train.assign(rows.begin(), rows.begin() + n_train);
  s.test.assign(rows.begin() + n_train, rows.end());
  finish_split(s);
  return s;
}

int ConfusionMatrix::total() const {
  int t = 0;
  for (const auto& r : counts)
    for (int c : r) t += c;
  return t;
}

int ConfusionMatrix::trace() const {
  int t = 0;
  for (int k = 0; k < kNumClasses; ++k) t += counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
  return t;
}

int ConfusionMatrix::row_sum(int k) const {
  int t = 0;
  for (int c : counts[static_cast<std::size_t>(k)]) t += c;
  return t;
}

int ConfusionMatrix::col_sum(int k) const {
  int t = 0;
  for (const auto& r : counts) t += r[static_cast<std::size_t>(k)];
  return t;
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw Error("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || t >= kNumClasses) throw Error("confusion: label " + std::to_string(t) + " out of range");
    if (p < 0 || p >= kNumClasses) throw Error("confusion: prediction " + std::to_string(p) + " out of range");
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

Metrics summarize(const ConfusionMatrix& cm) {
  Metrics m;
  const int total = cm.total();
  m.accuracy = total > 0 ? static_cast<double>(cm.trace()) / total : 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const int tp = cm.counts[kk][kk], rows = cm.row_sum(k), cols = cm.col_sum(k);
    m.recall_defined[kk] = rows > 0;
    m.recall[kk] = rows > 0 ? static_cast<double>(tp) / rows : 0.0;
    m.precision_defined[kk] = cols > 0;
    m.precision[kk] = cols > 0 ? static_cast<double>(tp) / cols : 0.0;
  }
  return m;
}

std::string metrics_json(const std::string& method, std::uint64_t seed, const ConfusionMatrix& cm) {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["seed"] = seed;
  j["accuracy"] = summarize(cm).accuracy;
  j["confusion"] = cm.counts;
  return j.dump(2);
}

std::string confusion_table(const ConfusionMatrix& cm) {
  const Metrics m = summarize(cm);
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s", "truth\\pred");
  out += buf;
  for (int k = 0; k < kNumClasses; ++k) {
    std::snprintf(buf, sizeof buf, "%6s", label_name(label_from_int(k)).c_str());
    out += buf;
  }
  out += "  recall  precision\n";
  for (int t = 0; t < kNumClasses; ++t) {
    const auto tt = static_cast<std::size_t>(t);
    std::snprintf(buf, sizeof buf, "%-10s", label_name(label_from_int(t)).c_str());
    out += buf;
    for (int p = 0; p < kNumClasses; ++p) {
      std::snprintf(buf, sizeof buf, "%6d", cm.counts[tt][static_cast<std::size_t>(p)]);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "  %6.3f%s %8.3f%s\n", m.recall[tt], m.recall_defined[tt] ? " " : "*",
                  m.precision[tt], m.precision_defined[tt] ? " " : "*");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "accuracy %.4f (%d/%d)\n", m.accuracy, cm.trace(), cm.total());
  out += buf;
  return out;
}

MethodSummary summarize_runs(const std::string& method, const std::vector<double>& accuracies,
                             const std::vector<ConfusionMatrix>& confusions) {
  if (accuracies.empty()) throw Error("summary: no runs for " + method);
  MethodSummary s;
  s.method = method;
  s.accuracies = accuracies;
  for (double a : accuracies) s.mean += a;
  s.mean /= static_cast<double>(accuracies.size());
  if (accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
  }
  for (const auto& cm : confusions)
    for (std::size_t t = 0; t < cm.counts.size(); ++t)
      for (std::size_t p = 0; p < cm.counts[t].size(); ++p) s.pooled.counts[t][p] += cm.counts[t][p];
  return s;
}

std::string accuracy_table(const std::vector<MethodSummary>& rows) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s %8s %7s   per-seed\n", "method", "mean %", "sd");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %8.2f %7.2f  ", r.method.c_str(), 100.0 * r.mean, 100.0 * r.sd);
    out += buf;
    for (double a : r.accuracies) {
      std::snprintf(buf, sizeof buf, " %6.2f", 100.0 * a);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace radfuse
