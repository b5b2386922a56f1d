#include "radfuse/bench.hpp"

#include <chrono>
#include <cstdio>

#include "json.hpp"

namespace radfuse {

std::uint64_t stage_seed(std::uint64_t run_seed, SeedStage stage) {
  return derive_seed(run_seed, 1000 + static_cast<std::uint64_t>(stage));
}

std::vector<Tensor> patch_tensors(const Dataset& ds, const ModelSection& model) {
  std::vector<Tensor> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(volume_tensor(s.patch, model.patch_center, model.patch_scale));
  return out;
}

std::vector<Tensor> rf_tensors(const FeatureMatrix& rf) {
  std::vector<Tensor> out;
  out.reserve(rf.rows());
  const int w = static_cast<int>(rf.cols());
  for (Eigen::Index i = 0; i < rf.values.rows(); ++i) {
    Tensor t({w});
    for (int c = 0; c < w; ++c) t[static_cast<std::size_t>(c)] = rf.values(i, c);
    out.push_back(std::move(t));
  }
  return out;
}

std::string method_label(const std::string& method) {
  if (method == "svm") return "RF+SVM";
  if (method == "cnn") return "CNN";
  if (method == "combine") return "RF+SVM+CNN";
  if (method == "fusion") return "Fusion";
  throw Error("unknown method '" + method + "'");
}

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

}  // namespace

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const LogFn& log) {
  auto say = [&](const std::string& s) {
    if (log) log("[seed " + std::to_string(seed) + "] " + s);
  };
  cfg.validate();
  Stopwatch clock;
  const Dataset ds = generate_dataset(cfg.phantom.class_counts, cfg.phantom.spec, stage_seed(seed, SeedStage::Dataset),
                                      cfg.phantom.solid_fractions);
  std::vector<int> labels;
  for (const auto& s : ds.samples) labels.push_back(label_code(s.label));
  const Split split = cfg.eval.stratified
                          ? stratified_split(labels, cfg.eval.train_fraction, stage_seed(seed, SeedStage::Split))
                          : random_split(labels, cfg.eval.train_fraction, stage_seed(seed, SeedStage::Split));

  const FeatureMatrix features = extract_features(ds, cfg.radiomics);
  say(fmt("extracted %.0f features (%.1f s)", static_cast<double>(features.cols()), clock.seconds()));

  SelectionConfig sel = cfg.selection;
  sel.seed = stage_seed(seed, SeedStage::Selection);
  const SelectionPipeline pipeline = pipeline_fit(features.select_rows(split.train), sel);
  const FeatureMatrix rf = pipeline_transform(pipeline, features);
  say(fmt("selected %.0f radiomics features (%.1f s)", static_cast<double>(rf.cols()), clock.seconds()));

  SeedResult res;
  res.seed = seed;
  res.rf_dim = static_cast<int>(rf.cols());

  std::vector<int> test_labels;
  for (int r : split.test) test_labels.push_back(labels[static_cast<std::size_t>(r)]);

  // RF + SVM on every training row.
  Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(split.train.size()), rf.values.cols());
  std::vector<int> ytr;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    Xtr.row(static_cast<Eigen::Index>(i)) = rf.values.row(split.train[i]);
    ytr.push_back(labels[static_cast<std::size_t>(split.train[i])]);
  }
  const LinearSVM svm = train_svm(Xtr, ytr, cfg.svm);
  std::vector<std::vector<double>> p_svm;
  for (int r : split.test) p_svm.push_back(svm.predict_proba(rf.values.row(r).transpose()));

  // Networks train on the training rows minus a per-class validation carve.
  const std::vector<Tensor> patches = patch_tensors(ds, cfg.model);
  const std::vector<Tensor> rfs = rf_tensors(rf);
  std::vector<ModelInput> inputs;
  for (std::size_t i = 0; i < patches.size(); ++i) inputs.push_back({&patches[i], &rfs[i]});
  const auto [fit_rows, val_rows] =
      carve_validation(labels, split.train, cfg.trainer.val_fraction, stage_seed(seed, SeedStage::Carve));
  SGDConfig sgd = cfg.trainer;
  sgd.seed = stage_seed(seed, SeedStage::Trainer);

  CnnModel cnn(cfg.cnn_config());
  cnn.init(stage_seed(seed, SeedStage::InitCnn));
  const TrainLog cnn_log = train_network(cnn, inputs, labels, fit_rows, val_rows, sgd);
  res.cnn_best_epoch = cnn_log.best_epoch;
  const Evaluation cnn_eval = evaluate(cnn, inputs, labels, split.test);
  say(fmt("cnn done, best epoch %.0f (%.1f s)", cnn_log.best_epoch, clock.seconds()));

  FusionModel fusion(cfg.fusion_config(res.rf_dim));
  fusion.init(stage_seed(seed, SeedStage::InitFusion));
  if (cfg.model.fusion_encoder_from_cnn) copy_params(cnn, fusion, "encoder/");
  SGDConfig fusion_sgd = cfg.fusion_trainer();
  fusion_sgd.seed = sgd.seed;
  const TrainLog fusion_log = train_network(fusion, inputs, labels, fit_rows, val_rows, fusion_sgd);
  res.fusion_best_epoch = fusion_log.best_epoch;
  const Evaluation fusion_eval = evaluate(fusion, inputs, labels, split.test);
  say(fmt("fusion done, best epoch %.0f (%.1f s)", fusion_log.best_epoch, clock.seconds()));

  std::array<std::vector<int>, 4> preds;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    preds[0].push_back(argmax(p_svm[i]));
    preds[1].push_back(cnn_eval.predictions[i]);
    preds[2].push_back(argmax(combine_probabilities(p_svm[i], cnn_eval.probs[i])));
    preds[3].push_back(fusion_eval.predictions[i]);
  }
  for (std::size_t m = 0; m < 4; ++m) {
    res.confusion[m] = confusion(preds[m], test_labels);
    res.accuracy[m] = summarize(res.confusion[m]).accuracy;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "svm %.3f  cnn %.3f  combine %.3f  fusion %.3f", res.accuracy[0], res.accuracy[1],
                res.accuracy[2], res.accuracy[3]);
  say(buf);
  return res;
}

BenchReport run_bench(const RunConfig& cfg, const LogFn& log) {
  BenchReport rep;
  for (std::uint64_t seed : cfg.eval.seeds) rep.runs.push_back(run_seed(cfg, seed, log));
  for (std::size_t m = 0; m < kMethods.size(); ++m) {
    std::vector<double> acc;
    std::vector<ConfusionMatrix> cms;
    for (const auto& r : rep.runs) {
      acc.push_back(r.accuracy[m]);
      cms.push_back(r.confusion[m]);
    }
    rep.methods.push_back(summarize_runs(kMethods[m], acc, cms));
  }
  return rep;
}

double BenchReport::mean(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return m.mean;
  throw Error("bench: no results for '" + method + "'");
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["methods"] = nlohmann::ordered_json::array();
  for (const auto& m : methods)
    j["methods"].push_back({{"method", m.method},
                            {"label", method_label(m.method)},
                            {"mean_accuracy", m.mean},
                            {"sd_accuracy", m.sd},
                            {"accuracies", m.accuracies},
                            {"pooled_confusion", m.pooled.counts}});
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json run{{"seed", r.seed},
                               {"rf_dim", r.rf_dim},
                               {"cnn_best_epoch", r.cnn_best_epoch},
                               {"fusion_best_epoch", r.fusion_best_epoch}};
    for (std::size_t m = 0; m < kMethods.size(); ++m)
      run[kMethods[m]] = {{"accuracy", r.accuracy[m]}, {"confusion", r.confusion[m].counts}};
    j["runs"].push_back(run);
  }
  return j.dump(2);
}

std::string BenchReport::text() const {
  std::vector<MethodSummary> labelled = methods;
  for (auto& m : labelled) m.method = method_label(m.method);
  std::string out = accuracy_table(labelled);
  for (const auto& m : labelled) out += "\n" + m.method + " (pooled over seeds)\n" + confusion_table(m.pooled);
  return out;
}

}  // namespace radfuse
