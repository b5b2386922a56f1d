#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "radfuse/bench.hpp"
#include "radfuse/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace radfuse;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome a1_gradients(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport rep = run_gradcheck_suite(100, 20240601, cfg.fusion_config(1));
  const double t = seconds_since(t0);
  double layer = 0.0, model = 0.0;
  int checked = 0;
  for (const auto& e : rep.entries) {
    (e.tolerance == kLayerGradTolerance ? layer : model) = std::max(e.tolerance == kLayerGradTolerance ? layer : model,
                                                                     e.max_rel_error);
    checked += e.checked;
  }
  return {rep.pass() && t < 120.0,
          fmt("layers max rel err %.2e (< 1e-5), full models %.2e (< 1e-4), %d cases, %d coordinates, %.1f s (< 120 s)",
              layer, model, rep.cases, checked, t)};
}

Outcome a2_radiomics(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> side(2, 8);
  std::uniform_real_distribution<double> density(0.4, 0.95), low(-1000.0, 0.0), span(25.0, 400.0);
  const double bw = cfg.radiomics.bin_width;
  double glcm_err = 0.0, glrlm_err = 0.0, fo_err = 0.0;
  int max_levels = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Dims d{side(rng), side(rng), side(rng)};
    const double lo = low(rng);
    const Volume v = oracle::random_volume(d, rng, lo, lo + span(rng));
    const Mask m = oracle::random_mask(d, rng, density(rng));
    const DiscretizedVolume disc = discretize(v, m, bw);
    max_levels = std::max(max_levels, disc.levels);

    const auto g = glcm_features(disc, m).values();
    const auto go = oracle::glcm(disc, m);
    for (std::size_t k = 0; k < g.size(); ++k) glcm_err = std::max(glcm_err, std::abs(g[k] - go.at(k)));
    const auto r = glrlm_features(disc, m).values();
    const auto ro = oracle::glrlm(disc, m);
    for (std::size_t k = 0; k < r.size(); ++k) glrlm_err = std::max(glrlm_err, std::abs(r[k] - ro.at(k)));

    const FeatureVector f = first_order_features(v, m, bw);
    const oracle::FirstOrder o = oracle::first_order(v, m, bw);
    const std::vector<std::pair<const char*, double>> expected{
        {"mean", o.mean},         {"median", o.median},     {"minimum", o.minimum},   {"maximum", o.maximum},
        {"range", o.range},       {"variance", o.variance}, {"std", o.std},           {"skewness", o.skewness},
        {"kurtosis", o.kurtosis}, {"energy", o.energy},     {"rms", o.rms},           {"entropy", o.entropy},
        {"uniformity", o.uniformity}, {"mad", o.mad},       {"robust_mad", o.robust_mad}, {"p10", o.p10},
        {"p90", o.p90},           {"iqr", o.iqr}};
    for (const auto& [name, want] : expected) {
      const double got = f.get(name);
      const double err = got == want ? 0.0 : std::abs(got - want) / std::abs(want);
      fo_err = std::max(fo_err, err);
    }
  }
  const double t = seconds_since(t0);
  return {glcm_err <= 1e-10 && glrlm_err <= 1e-10 && fo_err <= 1e-9 && t < 60.0,
          fmt("50 volumes, bin width %g, up to %d levels: GLCM max abs err %.2e, GLRLM %.2e (<= 1e-10), "
              "first-order max rel err %.2e (<= 1e-9), %.1f s (< 60 s)",
              bw, max_levels, glcm_err, glrlm_err, fo_err, t)};
}

Outcome a3_geometry() {
  const auto t0 = std::chrono::steady_clock::now();
  const FeatureVector s = shape_features(oracle::sphere_mask(10), Spacing{});
  const double area = 4.0 * std::numbers::pi * 100.0;
  const double sph = s.get("sphericity");
  const double area_err = std::abs(s.get("surface_area") - area) / area;
  const FeatureVector oblate = shape_features(oracle::ellipsoid_mask(45, 20, 20, 10), Spacing{});
  const FeatureVector prolate = shape_features(oracle::ellipsoid_mask(45, 20, 10, 10), Spacing{});
  auto within = [](double got, double want) { return std::abs(got - want) <= 0.05 * want; };
  const bool ok_sphere = sph >= 0.97 && sph <= 1.03 && area_err < 0.03;
  const bool ok_oblate = within(oblate.get("elongation"), 1.0) && within(oblate.get("flatness"), 0.5);
  const bool ok_prolate = within(prolate.get("elongation"), 0.5) && within(prolate.get("flatness"), 0.5);
  const double t = seconds_since(t0);
  return {ok_sphere && ok_oblate && ok_prolate && t < 30.0,
          fmt("sphere r=10: sphericity %.4f in [0.97, 1.03], area err %.2f%% (< 3%%); "
              "2:2:1 elongation/flatness %.3f/%.3f vs 1.0/0.5; 2:1:1 %.3f/%.3f vs 0.5/0.5 (5%%); %.1f s (< 30 s)",
              sph, 100.0 * area_err, oblate.get("elongation"), oblate.get("flatness"), prolate.get("elongation"),
              prolate.get("flatness"), t)};
}

MatrixXd gaussian(int n, int p, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = g(rng);
  return X;
}

Outcome a4_lasso() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(4040);
  double kkt = 0.0;
  bool converged = true;
  std::uniform_int_distribution<int> dn(10, 80), dp(2, 40);
  std::uniform_real_distribution<double> frac(0.01, 0.95);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = dn(rng), p = dp(rng);
    MatrixXd X = gaussian(n, p, rng);
    X = standardize_fit(X).apply(X);
    const VectorXd y = gaussian(n, 1, rng);
    const LassoFit fit = lasso_fit(X, y, frac(rng) * lasso_lambda_max(X, y));
    converged = converged && fit.converged;
    const VectorXd r = y - X * fit.beta - VectorXd::Constant(n, fit.intercept);
    kkt = std::max(kkt, std::abs(r.mean()));
    for (int j = 0; j < p; ++j) {
      const double g = X.col(j).dot(r) / n;
      kkt = std::max(kkt, fit.beta[j] == 0.0 ? std::max(0.0, std::abs(g) - fit.lambda)
                                             : std::abs(g - fit.lambda * (fit.beta[j] > 0 ? 1.0 : -1.0)));
    }
  }

  double ortho = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 50, p = 8;
    MatrixXd A = gaussian(n, p, rng);
    A.rowwise() -= A.colwise().mean();
    Eigen::HouseholderQR<MatrixXd> qr(A);
    const MatrixXd X = (qr.householderQ() * MatrixXd::Identity(n, p)) * std::sqrt(static_cast<double>(n));
    VectorXd y = gaussian(n, 1, rng);
    y.array() += 1.5;
    const VectorXd ols = X.transpose() * y / n;
    for (double lambda : {0.0, 0.05, 0.2, 0.5}) {
      const LassoFit fit = lasso_fit(X, y, lambda);
      converged = converged && fit.converged;
      for (int j = 0; j < p; ++j) {
        const double st = std::copysign(std::max(std::abs(ols[j]) - lambda, 0.0), ols[j]);
        ortho = std::max(ortho, std::abs(fit.beta[j] - st));
      }
    }
  }

  bool zeros = true;
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd X = gaussian(30, 10, rng);
    const VectorXd y = gaussian(30, 1, rng);
    const double lmax = lasso_lambda_max(X, y);
    for (double s : {1.0, 1.01, 3.0}) {
      const LassoFit fit = lasso_fit(X, y, lmax * s);
      zeros = zeros && fit.kept.empty() && (fit.beta.array() == 0.0).all();
    }
  }
  const double t = seconds_since(t0);
  return {converged && kkt <= 1e-6 && ortho <= 1e-8 && zeros && t < 60.0,
          fmt("KKT residual %.2e on 20 problems (<= 1e-6), orthonormal vs soft-thresholded OLS %.2e (<= 1e-8), "
              "lambda >= lambda_max all zero: %s, %.1f s (< 60 s)",
              kkt, ortho, zeros ? "yes" : "no", t)};
}

Outcome a5_fusion(const RunConfig& cfg, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig c = cfg;
  const BenchReport rep = run_bench(c, [&](const std::string& s) {
    if (verbose) std::cerr << s << "\n";
  });
  const double t = seconds_since(t0);
  const double svm = rep.mean("svm"), cnn = rep.mean("cnn"), comb = rep.mean("combine"), fus = rep.mean("fusion");
  const bool counts = cfg.phantom.class_counts == std::array<int, 4>{40, 34, 13, 82};
  const bool ok = counts && cfg.eval.seeds.size() == 5 && fus >= comb - 0.01 && fus >= std::max(cnn, svm) - 0.02 &&
                  fus > cnn && fus > svm && t < 1200.0;
  return {ok, fmt("%zu seeds, mean accuracy fusion %.4f, combine %.4f, CNN %.4f, SVM %.4f; fusion >= combine - 0.01, "
                  ">= max(CNN, SVM) - 0.02, > CNN and > SVM; %.0f s (< 1200 s)",
                  cfg.eval.seeds.size(), fus, comb, cnn, svm, t)};
}

/// Every file below `dir`, path relative to `dir` mapped to its bytes.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

/// Generate, extract, select, train all three models, evaluate; every artifact written below `dir`.
void determinism_run(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  const Dataset ds = generate_dataset(cfg.phantom.class_counts, cfg.phantom.spec, stage_seed(seed, SeedStage::Dataset),
                                      cfg.phantom.solid_fractions);
  save_dataset(ds, dir / "dataset");
  const FeatureMatrix fm = extract_features(ds, cfg.radiomics);
  write_csv(fm, dir / "features.csv");
  const Split split = stratified_split(fm.labels, cfg.eval.train_fraction, stage_seed(seed, SeedStage::Split));
  SelectionConfig sel = cfg.selection;
  sel.seed = stage_seed(seed, SeedStage::Selection);
  const SelectionPipeline p = pipeline_fit(fm.select_rows(split.train), sel);
  p.save(dir / "pipeline.json");
  const FeatureMatrix rf = pipeline_transform(p, fm);
  write_csv(rf, dir / "rf.csv");

  MatrixXd Xtr(static_cast<Eigen::Index>(split.train.size()), rf.values.cols());
  std::vector<int> ytr;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    Xtr.row(static_cast<Eigen::Index>(i)) = rf.values.row(split.train[i]);
    ytr.push_back(fm.labels[static_cast<std::size_t>(split.train[i])]);
  }
  const LinearSVM svm = train_svm(Xtr, ytr, cfg.svm);
  svm.save(dir / "svm.json", p.hash());

  const auto patches = patch_tensors(ds, cfg.model);
  const auto rfs = rf_tensors(rf);
  std::vector<ModelInput> inputs;
  for (std::size_t i = 0; i < patches.size(); ++i) inputs.push_back({&patches[i], &rfs[i]});
  const auto [fit, val] = carve_validation(fm.labels, split.train, cfg.trainer.val_fraction, stage_seed(seed, SeedStage::Carve));
  SGDConfig sgd = cfg.trainer;
  sgd.seed = stage_seed(seed, SeedStage::Trainer);
  CnnModel cnn(cfg.cnn_config());
  cnn.init(stage_seed(seed, SeedStage::InitCnn));
  const TrainLog cl = train_network(cnn, inputs, fm.labels, fit, val, sgd);
  save_network(cnn, dir / "cnn", p.hash());
  FusionModel fusion(cfg.fusion_config(static_cast<int>(rf.cols())));
  fusion.init(stage_seed(seed, SeedStage::InitFusion));
  copy_params(cnn, fusion, "encoder/");
  SGDConfig fsgd = cfg.fusion_trainer();
  fsgd.seed = sgd.seed;
  const TrainLog fl = train_network(fusion, inputs, fm.labels, fit, val, fsgd);
  save_network(fusion, dir / "fusion", p.hash());
  std::ofstream(dir / "logs.json") << cl.to_json() << fl.to_json();

  std::vector<int> test_labels, ps, pc, pf;
  const Evaluation ec = evaluate(cnn, inputs, fm.labels, split.test);
  const Evaluation ef = evaluate(fusion, inputs, fm.labels, split.test);
  for (int r : split.test) {
    test_labels.push_back(fm.labels[static_cast<std::size_t>(r)]);
    ps.push_back(svm.predict(rf.values.row(r).transpose()));
  }
  std::ofstream m(dir / "metrics.json");
  m << metrics_json("svm", seed, confusion(ps, test_labels)) << metrics_json("cnn", seed, confusion(ec.predictions, test_labels))
    << metrics_json("fusion", seed, confusion(ef.predictions, test_labels));
}

Outcome a6_determinism(const RunConfig& cfg) {
  const fs::path root = fs::temp_directory_path() / ("radfuse_acceptance_" + std::to_string(::getpid()));
  std::size_t files = 0;
  bool same = true;
  std::string first_diff;
  for (std::uint64_t seed : {11, 12}) {
    determinism_run(cfg, seed, root / "a");
    determinism_run(cfg, seed, root / "b");
    const auto a = snapshot(root / "a"), b = snapshot(root / "b");
    files += a.size();
    if (a != b) {
      same = false;
      for (const auto& [k, v] : a)
        if (!b.count(k) || b.at(k) != v) {
          first_diff = k;
          break;
        }
    }
    fs::remove_all(root);
  }
  return {same && files > 0, fmt("two seeds, each run twice: %zu artifacts (dataset, features, pipeline, svm, cnn, fusion, "
                                 "logs, metrics) %s",
                                 files, same ? "byte-identical" : ("differ, first " + first_diff).c_str())};
}

Outcome a7_wavelet() {
  std::mt19937_64 rng(707);
  std::uniform_int_distribution<int> half(1, 6);
  double recon = 0.0, parseval = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Volume v = oracle::random_volume(Dims{2 * half(rng), 2 * half(rng), 2 * half(rng)}, rng, -1000, 1000);
    const WaveletBands w = haar3d(v);
    const Volume back = haar3d_inverse(w);
    double e_in = 0.0, e_out = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      recon = std::max(recon, std::abs(back.voxels()[i] - v.voxels()[i]));
      e_in += v.voxels()[i] * v.voxels()[i];
    }
    for (const auto& b : w.bands)
      for (double x : b.voxels()) e_out += x * x;
    parseval = std::max(parseval, std::abs(e_in - e_out) / e_in);
  }
  return {recon <= 1e-10 && parseval <= 1e-9,
          fmt("50 random even-dim volumes: inverse(forward) max abs err %.2e (<= 1e-10), energy rel err %.2e (<= 1e-9)",
              recon, parseval)};
}

Outcome a8_overfit() {
  PhantomSpec base;
  base.patch_size = 16;
  base.radius_min_mm = 3.0;
  base.radius_max_mm = 5.0;
  const Dataset ds = generate_dataset({2, 2, 2, 2}, base, 808);
  std::vector<Tensor> patches, rfs;
  std::vector<int> labels;
  RadiomicsConfig rc;
  rc.wavelet = false;
  const FeatureMatrix fm = extract_features(ds, rc);
  const int mean_col = static_cast<int>(std::find(fm.names.begin(), fm.names.end(), "original_firstorder_mean") - fm.names.begin());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    patches.push_back(volume_tensor(ds.samples[i].patch, -500.0, 500.0));
    Tensor r({1});
    r[0] = mean_col < static_cast<int>(fm.cols()) ? (fm.values(static_cast<Eigen::Index>(i), mean_col) + 400.0) / 200.0 : 0.0;
    rfs.push_back(r);
    labels.push_back(label_code(ds.samples[i].label));
  }
  std::vector<ModelInput> inputs;
  std::vector<int> rows;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    inputs.push_back({&patches[i], &rfs[i]});
    rows.push_back(static_cast<int>(i));
  }
  SGDConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.seed = 8;
  EncoderConfig enc;
  enc.base_channels = 4;
  enc.blocks = 2;
  enc.embed_dim = 16;
  FusionConfig fc;
  fc.encoder = enc;
  FusionModel fusion(fc);
  CnnModel cnn({enc, kNumClasses});
  int reached[2] = {0, 0};
  Network* nets[2] = {&fusion, &cnn};
  for (int k = 0; k < 2; ++k) {
    nets[k]->init(80 + static_cast<std::uint64_t>(k));
    std::mt19937_64 rng(cfg.seed);
    std::vector<Tensor> velocity;
    for (int epoch = 1; epoch <= 200 && !reached[k]; ++epoch) {
      train_epoch(*nets[k], inputs, labels, rows, cfg, velocity, rng);
      if (evaluate(*nets[k], inputs, labels, rows).accuracy == 1.0) reached[k] = epoch;
    }
  }
  auto when = [](int e) { return e ? fmt("epoch %d", e) : std::string("not within 200 epochs"); };
  return {reached[0] > 0 && reached[1] > 0, fmt("8 samples, 100%% train accuracy: fusion %s, CNN %s",
                                               when(reached[0]).c_str(), when(reached[1]).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks A1-A8; one PASS/FAIL line per criterion"};
  std::string config = RADFUSE_DEFAULT_CONFIG;
  std::string smoke = RADFUSE_SMOKE_CONFIG;
  std::vector<std::string> only;
  bool verbose = false;
  app.add_option("--config", config, "Benchmark config used by A1 and A5")->check(CLI::ExistingFile);
  app.add_option("--determinism-config", smoke, "Config of the A6 reruns")->check(CLI::ExistingFile);
  app.add_option("--only", only, "Subset of criteria, e.g. --only A2 A7");
  app.add_flag("-v,--verbose", verbose, "Progress of the benchmark on stderr");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg, det;
  try {
    cfg = RunConfig::load(config);
    det = RunConfig::load(smoke);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", [&] { return a1_gradients(cfg); }}, {"A2", [&] { return a2_radiomics(cfg); }},
      {"A3", a3_geometry},                        {"A4", a4_lasso},
      {"A5", [&] { return a5_fusion(cfg, verbose); }}, {"A6", [&] { return a6_determinism(det); }},
      {"A7", a7_wavelet},                         {"A8", a8_overfit}};
  const std::set<std::string> wanted(only.begin(), only.end());
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
