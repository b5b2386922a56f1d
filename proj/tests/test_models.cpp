#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "radfuse/models.hpp"
#include "radfuse/phantom.hpp"
#include "test_util.hpp"

using namespace radfuse;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

EncoderConfig small_encoder(int embed = 8) {
  EncoderConfig e;
  e.base_channels = 2;
  e.blocks = 2;
  e.embed_dim = embed;
  return e;
}

FusionConfig small_fusion(int rf_dim = 5) {
  FusionConfig c;
  c.encoder = small_encoder();
  c.rf_dim = rf_dim;
  c.convert_dim = 12;
  c.fusion_dim = 10;
  return c;
}

// Biases start at zero; nudging them keeps pre-activations away from exact ties.
void jitter_biases(Network& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (std::size_t k = 0; k < net.params().names.size(); ++k)
    if (net.params().names[k].ends_with("/b"))
      for (auto& v : net.params().values[k]->values()) v = u(rng);
}

std::vector<std::size_t> sample_coords(const Tensor& t, int n, std::mt19937_64& rng) {
  std::vector<std::size_t> c;
  std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
  for (int i = 0; i < n; ++i) c.push_back(pick(rng));
  return c;
}

double full_model_gradcheck(Network& net, const ModelInput& in, int label, std::mt19937_64& rng,
                            int* checked = nullptr) {
  net.params().zero_grad();
  net.accumulate(in, label);
  double worst = 0.0;
  int total = 0;
  for (std::size_t k = 0; k < net.params().values.size(); ++k) {
    Tensor& p = *net.params().values[k];
    const Tensor g = *net.params().grads[k];
    const auto r = gradcheck(p, g, sample_coords(p, 10, rng), [&] { return net.probe(in, label); });
    worst = std::max(worst, r.max_rel_error);
    total += r.checked;
  }
  if (checked) *checked = total;
  return worst;
}

struct SmallSet {
  std::vector<Tensor> patches, rfs;
  std::vector<int> labels;
  std::vector<ModelInput> inputs;
};

/// Two phantoms per class; the RF vector is the (scaled) mean masked intensity.
SmallSet phantom_set(int per_class, int size, std::uint64_t seed) {
  PhantomSpec base;
  base.patch_size = size;
  base.radius_min_mm = 3.0;
  base.radius_max_mm = 5.0;
  const Dataset ds = generate_dataset({per_class, per_class, per_class, per_class}, base, seed);
  SmallSet s;
  for (const auto& smp : ds.samples) {
    s.patches.push_back(volume_tensor(smp.patch, -500.0, 500.0));
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < smp.patch.size(); ++i)
      if (smp.mask.voxels()[i]) {
        sum += smp.patch.voxels()[i];
        ++n;
      }
    s.rfs.push_back(Tensor({1}, {(sum / n + 400.0) / 200.0}));
    s.labels.push_back(static_cast<int>(smp.label));
  }
  for (std::size_t i = 0; i < s.patches.size(); ++i) s.inputs.push_back({&s.patches[i], &s.rfs[i]});
  return s;
}

std::vector<int> iota_rows(std::size_t n) {
  std::vector<int> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = static_cast<int>(i);
  return r;
}

}  // namespace

TEST_CASE("encoder channel plan") {
  EncoderConfig e;
  CHECK(e.channels() == std::vector<int>{8, 16, 32, 64});
  e.embed_dim = 16;
  CHECK_THROWS_AS(e.validate(), Error);
  e.embed_dim = 32;
  e.kernel = 2;
  CHECK_THROWS_AS(e.validate(), Error);
}

TEST_CASE("encoder output has width D for any patch size") {
  std::mt19937_64 rng(1);
  for (int D : {4, 16}) {
    Encoder3D enc(small_encoder(D));
    enc.init(rng);
    for (int n : {3, 5, 8, 13, 16, 24}) {
      const Tensor x = random_tensor({1, n, n + 1, n + 2}, rng);
      const Tensor e = enc.forward(x);
      CHECK(e.shape() == std::vector<int>{D});
      CHECK(e.all_finite());
    }
  }
  Encoder3D enc(small_encoder());
  CHECK_THROWS_AS(enc.forward(Tensor({2, 4, 4, 4})), Error);
}

TEST_CASE("shortcut samples the conv window center") {
  std::mt19937_64 rng(2);
  for (int n : {4, 5, 6, 7, 9}) {
    for (int stride : {1, 2}) {
      const int C = 2, O = 3, k = 3;
      const Tensor x = random_tensor({C, n, n + 1, n + 3}, rng);
      // A delta kernel at the window center that copies channel c to channel c.
      Conv3DLayer delta(C, O, k, stride);
      for (int c = 0; c < C; ++c) delta.W[((static_cast<std::size_t>(c) * C + c) * k * k * k) + 13] = 1.0;
      const Tensor want = conv3d_forward(delta, x);
      const Tensor got = shortcut_forward(x, O, stride, k);
      CHECK(got == want);
      // Adjoint identity.
      const Tensor dy = random_tensor(got.shape(), rng);
      const Tensor dx = shortcut_backward(x.shape(), dy, stride, k);
      CHECK(dot(got, dy) == doctest::Approx(dot(x, dx)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(shortcut_forward(Tensor({3, 4, 4, 4}), 2, 2, 3), Error);
}

TEST_CASE("zero network gives uniform probabilities") {
  FusionModel f(small_fusion());
  CnnModel c({small_encoder(), 4});
  std::mt19937_64 rng(3);
  const Tensor patch = random_tensor({1, 8, 8, 8}, rng, 3.0);
  const Tensor rf = random_tensor({5}, rng, 3.0);
  for (Network* net : std::vector<Network*>{&f, &c}) {
    const auto p = net->predict_proba({&patch, &rf});
    REQUIRE(p.size() == 4);
    for (double v : p) CHECK(v == 0.25);
  }
  // Zero head on a trained-looking encoder is still uniform.
  c.init(4);
  c.head().layer.W.fill(0.0);
  for (double v : c.predict_proba({&patch, nullptr})) CHECK(v == 0.25);
}

TEST_CASE("fusion path ablation") {
  std::mt19937_64 rng(5);
  FusionModel f(small_fusion());
  f.init(6);
  jitter_biases(f, rng);
  const Tensor patch = random_tensor({1, 8, 8, 8}, rng);
  const Tensor rf = random_tensor({5}, rng);
  const Tensor patch2 = random_tensor({1, 8, 8, 8}, rng);
  const Tensor rf2 = random_tensor({5}, rng);

  CHECK_FALSE(f.logits({&patch, &rf}) == f.logits({&patch2, &rf}));
  CHECK_FALSE(f.logits({&patch, &rf}) == f.logits({&patch, &rf2}));

  SUBCASE("conv_df zeroed") {
    f.conv_df().layer.W.fill(0.0);
    CHECK(f.logits({&patch, &rf}) == f.logits({&patch2, &rf}));
    CHECK_FALSE(f.logits({&patch, &rf}) == f.logits({&patch, &rf2}));
  }
  SUBCASE("conv_rf zeroed") {
    f.conv_rf().layer.W.fill(0.0);
    CHECK(f.logits({&patch, &rf}) == f.logits({&patch, &rf2}));
    CHECK_FALSE(f.logits({&patch, &rf}) == f.logits({&patch2, &rf}));
  }
}

TEST_CASE("fusion input errors") {
  FusionModel f(small_fusion());
  const Tensor patch({1, 8, 8, 8});
  const Tensor rf({4});
  CHECK_THROWS_AS(f.logits({&patch, &rf}), Error);
  CHECK_THROWS_AS(f.logits({&patch, nullptr}), Error);
  CHECK_THROWS_AS(f.logits({nullptr, &rf}), Error);
}

TEST_CASE("fusion concatenation puts RF first") {
  std::mt19937_64 rng(7);
  FusionModel f(small_fusion());
  f.init(8);
  const Tensor patch = random_tensor({1, 6, 6, 6}, rng);
  const Tensor rf = random_tensor({5}, rng);
  FusionModel::Cache c;
  f.forward({&patch, &rf}, c);
  const int half = f.config().convert_dim;
  for (int i = 0; i < half; ++i) {
    CHECK(c.x[static_cast<std::size_t>(i)] == c.r[static_cast<std::size_t>(i)]);
    CHECK(c.x[static_cast<std::size_t>(half + i)] == c.d[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("fusion probabilities follow classifier row permutations") {
  std::mt19937_64 rng(9);
  FusionModel f(small_fusion());
  f.init(10);
  const Tensor patch = random_tensor({1, 8, 8, 8}, rng);
  const Tensor rf = random_tensor({5}, rng);
  const auto p = f.predict_proba({&patch, &rf});
  double sum = 0.0;
  for (double v : p) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));

  const int perm[4] = {2, 0, 3, 1};
  auto& cls = f.classifier().layer;
  const Tensor W = cls.W, b = cls.b;
  const int F = cls.in();
  for (int r = 0; r < 4; ++r) {
    for (int j = 0; j < F; ++j)
      cls.W[static_cast<std::size_t>(r * F + j)] = W[static_cast<std::size_t>(perm[r] * F + j)];
    cls.b[static_cast<std::size_t>(r)] = b[static_cast<std::size_t>(perm[r])];
  }
  const auto q = f.predict_proba({&patch, &rf});
  for (int r = 0; r < 4; ++r) CHECK(q[static_cast<std::size_t>(r)] == doctest::Approx(p[static_cast<std::size_t>(perm[r])]).epsilon(1e-14));
}

TEST_CASE("full fusion model gradient check") {
  std::mt19937_64 rng(11);
  FusionConfig cfg;
  cfg.encoder = small_encoder();
  cfg.rf_dim = 6;
  FusionModel f(cfg);  // 512 / 256 conversion and fusion widths
  for (int trial = 0; trial < 3; ++trial) {
    f.init(100 + static_cast<std::uint64_t>(trial));
    jitter_biases(f, rng);
    const Tensor patch = random_tensor({1, 7, 8, 9}, rng);
    const Tensor rf = random_tensor({6}, rng);
    int checked = 0;
    const double err = full_model_gradcheck(f, {&patch, &rf}, trial % 4, rng, &checked);
    CHECK(err < 1e-4);
    CHECK(checked > 150);
  }
}

TEST_CASE("full CNN model gradient check") {
  std::mt19937_64 rng(12);
  CnnModel c({small_encoder(), 4});
  for (int trial = 0; trial < 3; ++trial) {
    c.init(200 + static_cast<std::uint64_t>(trial));
    jitter_biases(c, rng);
    const Tensor patch = random_tensor({1, 9, 8, 7}, rng);
    CHECK(full_model_gradcheck(c, {&patch, nullptr}, trial, rng) < 1e-4);
  }
}

TEST_CASE("every parameter receives gradient") {
  std::mt19937_64 rng(13);
  FusionModel f(small_fusion());
  f.init(14);
  jitter_biases(f, rng);
  const Tensor patch = random_tensor({1, 8, 8, 8}, rng);
  const Tensor rf = random_tensor({5}, rng);
  f.params().zero_grad();
  // Several samples so that a unit dead on one input is alive on another.
  for (int label = 0; label < 4; ++label) {
    const Tensor p = random_tensor({1, 8, 8, 8}, rng);
    const Tensor r = random_tensor({5}, rng);
    f.accumulate({&p, &r}, label);
  }
  for (std::size_t k = 0; k < f.params().grads.size(); ++k) {
    const auto& g = f.params().grads[k]->values();
    const bool nonzero = std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
    INFO(f.params().names[k]);
    CHECK(nonzero);
  }
}

TEST_CASE("early stopping rule") {
  SUBCASE("strictly worsening after the first epoch") {
    EarlyStopper s(1);
    CHECK(s.update(1.0));
    CHECK_FALSE(s.should_stop());
    CHECK_FALSE(s.update(1.5));
    CHECK_FALSE(s.should_stop());
    CHECK_FALSE(s.update(2.0));
    CHECK(s.should_stop());
    CHECK(s.best_epoch() == 1);
  }
  SUBCASE("improvement resets the counter") {
    EarlyStopper s(2);
    const double losses[] = {3.0, 2.0, 2.5, 2.5, 1.0, 1.0, 1.1, 1.2};
    int stopped_at = 0;
    for (int e = 0; e < 8 && !stopped_at; ++e) {
      s.update(losses[e]);
      if (s.should_stop()) stopped_at = e + 1;
    }
    CHECK(s.best_epoch() == 5);
    CHECK(s.best_loss() == 1.0);
    CHECK(stopped_at == 8);
  }
  SUBCASE("non-finite losses never improve") {
    EarlyStopper s(1);
    s.update(1.0);
    CHECK_FALSE(s.update(std::nan("")));
  }
  CHECK_THROWS_AS(EarlyStopper(0), Error);
}

TEST_CASE("validation carve is per class and floor-sized") {
  std::vector<int> labels;
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 10 + 3 * k; ++i) labels.push_back(k);
  const auto rows = iota_rows(labels.size());
  const auto [train, val] = carve_validation(labels, rows, 0.2, 5);
  int per_class[4] = {0, 0, 0, 0};
  for (int r : val) ++per_class[labels[static_cast<std::size_t>(r)]];
  CHECK(per_class[0] == 2);
  CHECK(per_class[1] == 2);
  CHECK(per_class[2] == 3);
  CHECK(per_class[3] == 3);
  CHECK(train.size() + val.size() == rows.size());
  std::vector<int> all = train;
  all.insert(all.end(), val.begin(), val.end());
  std::sort(all.begin(), all.end());
  CHECK(all == rows);
  CHECK(carve_validation(labels, rows, 0.2, 5) == std::make_pair(train, val));
  CHECK_THROWS_AS(carve_validation(labels, rows, 1.0, 5), Error);
}

TEST_CASE("training rejects empty splits") {
  FusionModel f(small_fusion(1));
  SmallSet s = phantom_set(1, 16, 3);
  SGDConfig cfg;
  CHECK_THROWS_AS(train_network(f, s.inputs, s.labels, {}, {0}, cfg), Error);
  CHECK_THROWS_AS(train_network(f, s.inputs, s.labels, {0}, {}, cfg), Error);
}

TEST_CASE("training is deterministic and restores the best snapshot") {
  SmallSet s = phantom_set(3, 16, 21);
  const auto [train, val] = carve_validation(s.labels, iota_rows(s.labels.size()), 0.34, 4);
  SGDConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.max_epochs = 6;
  cfg.patience = 2;
  cfg.seed = 17;

  auto run = [&](std::vector<Tensor>& params) {
    FusionModel f(small_fusion(1));
    f.init(31);
    const TrainLog log = train_network(f, s.inputs, s.labels, train, val, cfg);
    for (const Tensor* t : f.params().values) params.push_back(*t);
    const Evaluation ev = evaluate(f, s.inputs, s.labels, val);
    double best = 1e300;
    for (const auto& e : log.epochs) best = std::min(best, e.val_loss);
    CHECK(ev.loss == doctest::Approx(best).epsilon(1e-12));
    CHECK(log.epochs[static_cast<std::size_t>(log.best_epoch - 1)].val_loss == best);
    if (log.stopped_early)
      CHECK(static_cast<int>(log.epochs.size()) == log.best_epoch + cfg.patience + 1);
    return log.to_json();
  };
  std::vector<Tensor> a, b;
  const std::string la = run(a), lb = run(b);
  CHECK(la == lb);
  CHECK(a == b);
}

TEST_CASE("fusion and CNN overfit eight samples") {
  SmallSet s = phantom_set(2, 16, 77);
  const auto rows = iota_rows(s.labels.size());
  SGDConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;

  EncoderConfig enc;
  enc.base_channels = 4;
  enc.blocks = 2;
  enc.embed_dim = 16;
  FusionConfig fc;
  fc.encoder = enc;
  FusionModel fusion(fc);
  CnnModel cnn({enc, 4});

  for (Network* net : std::vector<Network*>{&fusion, &cnn}) {
    net->init(5);
    std::mt19937_64 rng(cfg.seed);
    std::vector<Tensor> velocity;
    int reached = 0;
    for (int epoch = 1; epoch <= 200 && !reached; ++epoch) {
      train_epoch(*net, s.inputs, s.labels, rows, cfg, velocity, rng);
      if (evaluate(*net, s.inputs, s.labels, rows).accuracy == 1.0) reached = epoch;
    }
    INFO(net->kind());
    CHECK(reached > 0);
  }
}

TEST_CASE("network round-trips through a checkpoint") {
  std::mt19937_64 rng(41);
  TempDir tmp;
  FusionModel f(small_fusion());
  f.init(42);
  jitter_biases(f, rng);
  CnnModel c({small_encoder(6), 4});
  c.init(43);

  save_network(f, tmp.path / "fusion", "abc123");
  save_network(c, tmp.path / "cnn", "def456");
  const auto f2 = load_network(tmp.path / "fusion");
  const auto c2 = load_network(tmp.path / "cnn");
  CHECK(f2->kind() == "fusion");
  CHECK(c2->kind() == "cnn");
  CHECK(linked_pipeline_hash(tmp.path / "fusion") == "abc123");
  CHECK(linked_pipeline_hash(tmp.path / "cnn") == "def456");
  CHECK(f2->header_json() == f.header_json());

  for (int i = 0; i < 6; ++i) {
    const Tensor patch = random_tensor({1, 8, 8, 8}, rng);
    const Tensor rf = random_tensor({5}, rng);
    CHECK(f2->predict_proba({&patch, &rf}) == f.predict_proba({&patch, &rf}));
    CHECK(c2->predict_proba({&patch, nullptr}) == c.predict_proba({&patch, nullptr}));
  }
  CHECK_THROWS_AS(linked_pipeline_hash(tmp.path), Error);
  CHECK_THROWS_AS(load_network(tmp.path / "missing"), Error);
}
