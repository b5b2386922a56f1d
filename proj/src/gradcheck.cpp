#include "radfuse/gradcheck.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "json.hpp"

namespace radfuse {

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

std::vector<std::size_t> all_coords(const Tensor& t) {
  std::vector<std::size_t> c(t.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
  return c;
}

std::vector<std::size_t> some_coords(const Tensor& t, int n, std::mt19937_64& rng) {
  if (t.size() <= static_cast<std::size_t>(n)) return all_coords(t);
  std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
  std::vector<std::size_t> c;
  for (int i = 0; i < n; ++i) c.push_back(pick(rng));
  return c;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

void fold(GradcheckEntry& e, const GradcheckResult& r) {
  e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
  e.checked += r.checked;
  e.skipped += r.skipped;
}

void check_network(GradcheckEntry& e, Network& net, const ModelInput& in, int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (std::size_t k = 0; k < net.params().names.size(); ++k)
    if (net.params().names[k].ends_with("/b"))
      for (auto& v : net.params().values[k]->values()) v = u(rng);
  net.params().zero_grad();
  net.accumulate(in, label);
  for (std::size_t k = 0; k < net.params().values.size(); ++k) {
    Tensor& p = *net.params().values[k];
    const Tensor g = *net.params().grads[k];
    fold(e, gradcheck(p, g, some_coords(p, 10, rng), [&] { return net.probe(in, label); }));
  }
}

}  // namespace

GradcheckReport run_gradcheck_suite(int cases, std::uint64_t seed, const FusionConfig& model) {
  if (cases < 1) throw Error("gradcheck: cases must be >= 1");
  model.validate();
  GradcheckReport rep;
  rep.cases = cases;
  rep.seed = seed;
  GradcheckEntry dense{"dense", 0, 0, 0, kLayerGradTolerance}, conv{"conv3d", 0, 0, 0, kLayerGradTolerance},
      rl{"relu", 0, 0, 0, kLayerGradTolerance}, gap{"gap", 0, 0, 0, kLayerGradTolerance},
      ce{"softmax_ce", 0, 0, 0, kLayerGradTolerance}, fusion{"fusion_model", 0, 0, 0, kModelGradTolerance},
      cnn{"cnn_model", 0, 0, 0, kModelGradTolerance};
  std::mt19937_64 rng(seed);

  for (int t = 0; t < cases; ++t) {
    {
      DenseLayer L(uniform_int(rng, 1, 9), uniform_int(rng, 1, 9));
      init_layer(L, rng);
      L.b = random_tensor(L.b.shape(), rng);
      Tensor x = random_tensor({L.in()}, rng);
      const Tensor c = random_tensor({L.out()}, rng);
      auto g = dense_backward(L, x, c);
      auto loss = [&] { return ProbeValue{dot(dense_forward(L, x), c), 0}; };
      fold(dense, gradcheck(L.W, g.dW, all_coords(L.W), loss));
      fold(dense, gradcheck(L.b, g.db, all_coords(L.b), loss));
      fold(dense, gradcheck(x, g.dx, all_coords(x), loss));
    }
    {
      const int k = uniform_int(rng, 0, 1) ? 3 : 1;
      Conv3DLayer L(uniform_int(rng, 1, 2), uniform_int(rng, 1, 3), {k, k, uniform_int(rng, 0, 1) ? 3 : 1},
                    uniform_int(rng, 1, 2));
      init_layer(L, rng);
      L.b = random_tensor(L.b.shape(), rng);
      Tensor x = random_tensor({L.in_channels(), uniform_int(rng, 2, 5), uniform_int(rng, 2, 5), uniform_int(rng, 2, 5)}, rng);
      const Tensor c = random_tensor(L.output_shape(x.shape()), rng);
      auto g = conv3d_backward(L, x, c);
      auto loss = [&] { return ProbeValue{dot(conv3d_forward(L, x), c), 0}; };
      fold(conv, gradcheck(L.W, g.dW, some_coords(L.W, 40, rng), loss));
      fold(conv, gradcheck(L.b, g.db, all_coords(L.b), loss));
      fold(conv, gradcheck(x, g.dx, some_coords(x, 40, rng), loss));
    }
    {
      // Inputs stay at least 0.05 away from the kink.
      Tensor x = random_tensor({uniform_int(rng, 1, 3), uniform_int(rng, 1, 4), uniform_int(rng, 1, 4)}, rng);
      for (auto& v : x.values()) v += v < 0 ? -0.05 : 0.05;
      const Tensor c = random_tensor(x.shape(), rng);
      const Tensor dx = relu_backward(x, c);
      fold(rl, gradcheck(x, dx, all_coords(x), [&] { return ProbeValue{dot(relu(x), c), relu_pattern(x)}; }));
    }
    {
      Tensor x = random_tensor({uniform_int(rng, 1, 4), uniform_int(rng, 1, 4), uniform_int(rng, 1, 4), uniform_int(rng, 1, 4)}, rng);
      const Tensor c = random_tensor({x.dim(0)}, rng);
      const Tensor dx = global_avg_pool_backward(x.shape(), c);
      fold(gap, gradcheck(x, dx, all_coords(x), [&] { return ProbeValue{dot(global_avg_pool(x), c), 0}; }));
    }
    {
      Tensor z = random_tensor({kNumClasses}, rng, 5.0);
      const int label = uniform_int(rng, 0, kNumClasses - 1);
      const Tensor dz = softmax_ce(z, label).dlogits;
      fold(ce, gradcheck(z, dz, all_coords(z), [&] { return ProbeValue{softmax_ce(z, label).loss, 0}; }));
    }
    {
      FusionConfig fc = model;
      fc.rf_dim = uniform_int(rng, 1, 8);
      FusionModel f(fc);
      f.init(rng());
      const Tensor patch = random_tensor({1, uniform_int(rng, 5, 9), uniform_int(rng, 5, 9), uniform_int(rng, 5, 9)}, rng);
      const Tensor rf = random_tensor({fc.rf_dim}, rng);
      check_network(fusion, f, {&patch, &rf}, uniform_int(rng, 0, kNumClasses - 1), rng);

      CnnModel m({model.encoder, kNumClasses});
      m.init(rng());
      check_network(cnn, m, {&patch, nullptr}, uniform_int(rng, 0, kNumClasses - 1), rng);
    }
  }
  rep.entries = {dense, conv, rl, gap, ce, fusion, cnn};
  return rep;
}

bool GradcheckReport::pass() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass(); });
}

std::string GradcheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["cases"] = cases;
  j["seed"] = seed;
  j["pass"] = pass();
  j["components"] = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    j["components"].push_back({{"component", e.component},
                               {"max_rel_error", e.max_rel_error},
                               {"tolerance", e.tolerance},
                               {"checked", e.checked},
                               {"skipped", e.skipped},
                               {"pass", e.pass()}});
  return j.dump(2);
}

std::string GradcheckReport::text() const {
  std::string out;
  char buf[200];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-4s %-13s max rel err %.3e (tol %.0e, %d checked, %d skipped)\n",
                  e.pass() ? "PASS" : "FAIL", e.component.c_str(), e.max_rel_error, e.tolerance, e.checked, e.skipped);
    out += buf;
  }
  return out;
}

}  // namespace radfuse
