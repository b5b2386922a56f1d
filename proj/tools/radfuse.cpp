#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "radfuse/bench.hpp"
#include "radfuse/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace radfuse;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "Run config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Run seed");
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
}

RunConfig load_config(const Common& c) { return c.config.empty() ? RunConfig{} : RunConfig::load(c.config); }

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
}


void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error("missing input " + p.string());
}

/// Outputs of `select`: the fitted pipeline and the transformed feature tables.
struct SelectDir {
  SelectionPipeline pipeline;
  std::string hash;
  FeatureMatrix train, test;
};

SelectDir load_select_dir(const fs::path& dir) {
  for (const char* f : {"pipeline.json", "rf_train.csv", "rf_test.csv"}) require_file(dir / f);
  SelectDir s;
  s.pipeline = SelectionPipeline::load(dir / "pipeline.json");
  s.hash = s.pipeline.hash();
  s.train = read_csv(dir / "rf_train.csv");
  s.test = read_csv(dir / "rf_test.csv");
  if (s.train.names != s.pipeline.output_names() || s.test.names != s.pipeline.output_names())
    throw Error("rf tables in " + dir.string() + " do not match pipeline.json");
  return s;
}

/// Network inputs for the rows of `rf`, patches looked up by sample id.
struct NetInputs {
  std::vector<Tensor> patches, rfs;
  std::vector<int> labels;
  std::vector<ModelInput> inputs;
};

NetInputs net_inputs(const Dataset& ds, const FeatureMatrix& rf, const RunConfig& cfg) {
  std::map<std::string, const NoduleSample*> by_id;
  for (const auto& s : ds.samples) by_id[s.id] = &s;
  NetInputs n;
  n.rfs = rf_tensors(rf);
  for (std::size_t i = 0; i < rf.rows(); ++i) {
    auto it = by_id.find(rf.ids[i]);
    if (it == by_id.end()) throw Error("sample '" + rf.ids[i] + "' is not in the dataset");
    if (label_code(it->second->label) != rf.labels[i]) throw Error("label of '" + rf.ids[i] + "' disagrees with the dataset");
    n.patches.push_back(volume_tensor(it->second->patch, cfg.model.patch_center, cfg.model.patch_scale));
    n.labels.push_back(rf.labels[i]);
  }
  for (std::size_t i = 0; i < n.patches.size(); ++i) n.inputs.push_back({&n.patches[i], &n.rfs[i]});
  return n;
}

std::vector<int> all_rows(std::size_t n) {
  std::vector<int> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = static_cast<int>(i);
  return r;
}

std::unique_ptr<Network> load_linked(const fs::path& dir, const std::string& kind, const std::string& hash) {
  if (!fs::is_directory(dir)) throw Error("missing checkpoint " + dir.string());
  const std::string linked = linked_pipeline_hash(dir);
  if (linked != hash)
    throw Error("pipeline hash mismatch: " + dir.string() + " was trained against " + linked + ", inputs have " + hash);
  auto net = load_network(dir);
  if (net->kind() != kind) throw Error(dir.string() + " holds a " + net->kind() + " model, expected " + kind);
  return net;
}

LinearSVM load_linked_svm(const fs::path& dir, const std::string& hash) {
  require_file(dir / "svm.json");
  std::string linked;
  LinearSVM svm = LinearSVM::load(dir / "svm.json", &linked);
  if (linked != hash)
    throw Error("pipeline hash mismatch: " + dir.string() + " was trained against " + linked + ", inputs have " + hash);
  return svm;
}

// ---------------------------------------------------------------------------

int cmd_phantom_gen(const Common& c) {
  const RunConfig cfg = load_config(c);
  const Dataset ds = generate_dataset(cfg.phantom.class_counts, cfg.phantom.spec, stage_seed(c.seed, SeedStage::Dataset),
                                      cfg.phantom.solid_fractions);
  save_dataset(ds, out_dir(c));
  std::cout << "wrote " << ds.samples.size() << " samples to " << c.out << "\n";
  return 0;
}

int cmd_extract(const Common& c, const std::string& dataset) {
  const RunConfig cfg = load_config(c);
  const Dataset ds = load_dataset(dataset);
  const FeatureMatrix fm = extract_features(ds, cfg.radiomics);
  write_csv(fm, out_dir(c) / "features.csv");
  std::cout << fm.rows() << " samples x " << fm.cols() << " features -> " << (fs::path(c.out) / "features.csv").string()
            << "\n";
  return 0;
}

int cmd_select(const Common& c, const std::string& features) {
  const RunConfig cfg = load_config(c);
  require_file(features);
  const FeatureMatrix fm = read_csv(features);
  const Split split = cfg.eval.stratified
                          ? stratified_split(fm.labels, cfg.eval.train_fraction, stage_seed(c.seed, SeedStage::Split))
                          : random_split(fm.labels, cfg.eval.train_fraction, stage_seed(c.seed, SeedStage::Split));
  SelectionConfig sel = cfg.selection;
  sel.seed = stage_seed(c.seed, SeedStage::Selection);
  const SelectionPipeline p = pipeline_fit(fm.select_rows(split.train), sel);
  const FeatureMatrix rf = pipeline_transform(p, fm);
  const fs::path dir = out_dir(c);
  p.save(dir / "pipeline.json");
  write_csv(rf.select_rows(split.train), dir / "rf_train.csv");
  write_csv(rf.select_rows(split.test), dir / "rf_test.csv");
  std::cout << "kept " << rf.cols() << " of " << fm.cols() << " features; " << split.train.size() << " train / "
            << split.test.size() << " test rows; pipeline " << p.hash() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& model, const std::string& rf_dir, const std::string& dataset,
              const std::string& init_encoder) {
  const RunConfig cfg = load_config(c);
  const SelectDir sel = load_select_dir(rf_dir);
  const fs::path dir = out_dir(c);

  if (model == "svm") {
    SvmConfig sc = cfg.svm;
    const LinearSVM svm = train_svm(sel.train.values, sel.train.labels, sc);
    svm.save(dir / "svm.json", sel.hash);
    std::vector<int> pred;
    for (Eigen::Index i = 0; i < sel.train.values.rows(); ++i) pred.push_back(svm.predict(sel.train.values.row(i).transpose()));
    ordered_json log{{"model", "svm"},
                     {"rows", sel.train.rows()},
                     {"train_accuracy", summarize(confusion(pred, sel.train.labels)).accuracy}};
    write_text(dir / "log.json", log.dump(2));
    std::cout << "svm trained on " << sel.train.rows() << " rows\n";
    return 0;
  }

  if (dataset.empty()) throw Error("--dataset is required for --model " + model);
  const Dataset ds = load_dataset(dataset);
  NetInputs in = net_inputs(ds, sel.train, cfg);
  const auto [fit_rows, val_rows] =
      carve_validation(in.labels, all_rows(in.labels.size()), cfg.trainer.val_fraction, stage_seed(c.seed, SeedStage::Carve));

  std::unique_ptr<Network> net;
  SGDConfig sgd = cfg.trainer;
  if (model == "cnn") {
    net = std::make_unique<CnnModel>(cfg.cnn_config());
    net->init(stage_seed(c.seed, SeedStage::InitCnn));
  } else {
    net = std::make_unique<FusionModel>(cfg.fusion_config(static_cast<int>(sel.train.cols())));
    net->init(stage_seed(c.seed, SeedStage::InitFusion));
    if (cfg.model.fusion_encoder_from_cnn) {
      if (init_encoder.empty())
        throw Error("model.fusion_encoder_from_cnn is set: pass --init-encoder with a trained cnn checkpoint");
      const auto cnn = load_linked(init_encoder, "cnn", sel.hash);
      copy_params(*cnn, *net, "encoder/");
    } else if (!init_encoder.empty()) {
      throw Error("--init-encoder given but model.fusion_encoder_from_cnn is false");
    }
    sgd = cfg.fusion_trainer();
  }
  sgd.seed = stage_seed(c.seed, SeedStage::Trainer);
  const TrainLog log = train_network(*net, in.inputs, in.labels, fit_rows, val_rows, sgd);
  save_network(*net, dir, sel.hash);
  write_text(dir / "log.json", log.to_json());
  std::cout << model << " trained: " << log.epochs.size() << " epochs, best " << log.best_epoch << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& model, const std::vector<std::string>& combine,
             const std::string& checkpoint, const std::string& svm_dir, const std::string& cnn_dir,
             const std::string& rf_dir, const std::string& dataset) {
  const RunConfig cfg = load_config(c);
  const SelectDir sel = load_select_dir(rf_dir);
  const FeatureMatrix& test = sel.test;
  std::optional<NetInputs> in;
  auto inputs = [&]() -> NetInputs& {
    if (!in) {
      if (dataset.empty()) throw Error("--dataset is required to evaluate a network");
      in = net_inputs(load_dataset(dataset), test, cfg);
    }
    return *in;
  };
  auto svm_probs = [&](const LinearSVM& svm) {
    std::vector<std::vector<double>> p;
    for (Eigen::Index i = 0; i < test.values.rows(); ++i) p.push_back(svm.predict_proba(test.values.row(i).transpose()));
    return p;
  };

  std::string method;
  std::vector<int> pred;
  if (!combine.empty()) {
    if (combine != std::vector<std::string>{"svm", "cnn"} && combine != std::vector<std::string>{"cnn", "svm"})
      throw Error("--combine takes the pair 'svm cnn'");
    if (svm_dir.empty() || cnn_dir.empty()) throw Error("--combine needs --svm and --cnn checkpoints");
    method = "combine";
    const auto ps = svm_probs(load_linked_svm(svm_dir, sel.hash));
    const auto cnn = load_linked(cnn_dir, "cnn", sel.hash);
    const Evaluation ev = evaluate(*cnn, inputs().inputs, inputs().labels, all_rows(test.rows()));
    for (std::size_t i = 0; i < test.rows(); ++i) pred.push_back(argmax(combine_probabilities(ps[i], ev.probs[i])));
  } else {
    if (checkpoint.empty()) throw Error("--checkpoint is required with --model");
    method = model;
    if (model == "svm") {
      for (const auto& p : svm_probs(load_linked_svm(checkpoint, sel.hash))) pred.push_back(argmax(p));
    } else {
      const auto net = load_linked(checkpoint, model, sel.hash);
      pred = evaluate(*net, inputs().inputs, inputs().labels, all_rows(test.rows())).predictions;
    }
  }
  const ConfusionMatrix cm = confusion(pred, test.labels);
  const fs::path dir = out_dir(c);
  write_text(dir / "metrics.json", metrics_json(method, c.seed, cm));
  const std::string table = method_label(method) + "\n" + confusion_table(cm);
  write_text(dir / "confusion.txt", table);
  std::cout << table;
  return 0;
}

int cmd_gradcheck(const Common& c, int cases) {
  const RunConfig cfg = load_config(c);
  const GradcheckReport rep = run_gradcheck_suite(cases, c.seed, cfg.fusion_config(1));
  if (!c.out.empty()) write_text(out_dir(c) / "gradcheck.json", rep.to_json());
  std::cout << rep.text() << (rep.pass() ? "PASS" : "FAIL") << "\n";
  return rep.pass() ? 0 : 1;
}

int cmd_bench(const Common& c, bool seed_given) {
  RunConfig cfg = load_config(c);
  if (seed_given) cfg.eval.seeds = {c.seed};
  const BenchReport rep = run_bench(cfg, [](const std::string& s) { std::cerr << s << "\n"; });
  const fs::path dir = out_dir(c);
  write_text(dir / "bench.json", rep.to_json());
  write_text(dir / "bench.txt", rep.text());
  std::cout << rep.text();
  return 0;
}

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
  ordered_json j{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radfuse: radiomics + deep feature fusion pipeline"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("phantom-gen", "Generate a synthetic nodule dataset");
  add_common(gen, c);

  std::string dataset;
  auto* extract = app.add_subcommand("extract", "Radiomics features of a dataset -> features.csv");
  add_common(extract, c);
  extract->add_option("--dataset", dataset, "Dataset directory")->required();

  std::string features;
  auto* select = app.add_subcommand("select", "Split and fit the selection pipeline -> pipeline.json, rf_train.csv, rf_test.csv");
  add_common(select, c);
  select->add_option("--features", features, "features.csv from extract")->required();

  std::string model, rf_dir, init_encoder;
  auto* train = app.add_subcommand("train", "Train one model on the select outputs");
  add_common(train, c);
  train->add_option("--model", model, "fusion, cnn or svm")->required()->check(CLI::IsMember({"fusion", "cnn", "svm"}));
  train->add_option("--rf", rf_dir, "Directory written by select")->required();
  train->add_option("--dataset", dataset, "Dataset directory (networks only)");
  train->add_option("--init-encoder", init_encoder, "Trained cnn checkpoint whose encoder starts the fusion model");

  std::vector<std::string> combine;
  std::string checkpoint, svm_dir, cnn_dir;
  auto* eval = app.add_subcommand("eval", "Test-set metrics of a model or of the svm+cnn combination");
  add_common(eval, c);
  auto* model_opt = eval->add_option("--model", model, "fusion, cnn or svm")->check(CLI::IsMember({"fusion", "cnn", "svm"}));
  auto* comb_opt = eval->add_option("--combine", combine, "svm cnn")->expected(2);
  model_opt->excludes(comb_opt);
  eval->add_option("--checkpoint", checkpoint, "Directory written by train (with --model)");
  eval->add_option("--svm", svm_dir, "svm checkpoint (with --combine)");
  eval->add_option("--cnn", cnn_dir, "cnn checkpoint (with --combine)");
  eval->add_option("--rf", rf_dir, "Directory written by select")->required();
  eval->add_option("--dataset", dataset, "Dataset directory (networks only)");

  int cases = 100;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  add_common(grad, c, false);
  grad->add_option("--cases", cases, "Randomized cases")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "All four methods over the configured seeds");
  add_common(bench, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "usage", e.what(), 2);
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    if (name == "phantom-gen") return cmd_phantom_gen(c);
    if (name == "extract") return cmd_extract(c, dataset);
    if (name == "select") return cmd_select(c, features);
    if (name == "train") return cmd_train(c, model, rf_dir, dataset, init_encoder);
    if (name == "eval") {
      if (model.empty() && combine.empty()) throw Error("eval needs --model or --combine");
      return cmd_eval(c, model, combine, checkpoint, svm_dir, cnn_dir, rf_dir, dataset);
    }
    if (name == "gradcheck") return cmd_gradcheck(c, cases);
    if (name == "bench") return cmd_bench(c, cmd->count("--seed") > 0);
  } catch (const std::exception& e) {
    return fail(name, "error", e.what(), 1);
  }
  return fail(name, "usage", "unknown command", 2);
}
