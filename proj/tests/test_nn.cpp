#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "radfuse/nn.hpp"
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

std::vector<std::size_t> all_coords(const Tensor& t) {
  std::vector<std::size_t> c(t.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
  return c;
}

/// Direct convolution over an explicitly zero-padded copy of the input.
Tensor conv_oracle(const Tensor& x, const Tensor& W, const Tensor& b, int s) {
  const int C = x.dim(0), O = W.dim(0);
  const int n[3] = {x.dim(1), x.dim(2), x.dim(3)};
  const int k[3] = {W.dim(2), W.dim(3), W.dim(4)};
  int out[3], pad[3], padded[3];
  for (int a = 0; a < 3; ++a) {
    out[a] = static_cast<int>(std::ceil(static_cast<double>(n[a]) / s));
    const int total = std::max((out[a] - 1) * s + k[a] - n[a], 0);
    pad[a] = total / 2;
    padded[a] = n[a] + total;
  }
  std::vector<double> xp(static_cast<std::size_t>(C) * padded[0] * padded[1] * padded[2], 0.0);
  auto P = [&](int c, int z, int y, int xx) -> double& {
    return xp[((static_cast<std::size_t>(c) * padded[0] + z) * padded[1] + y) * padded[2] + xx];
  };
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < n[0]; ++z)
      for (int y = 0; y < n[1]; ++y)
        for (int xx = 0; xx < n[2]; ++xx)
          P(c, z + pad[0], y + pad[1], xx + pad[2]) = x[((static_cast<std::size_t>(c) * n[0] + z) * n[1] + y) * n[2] + xx];
  Tensor y({O, out[0], out[1], out[2]});
  std::size_t idx = 0;
  for (int o = 0; o < O; ++o)
    for (int z = 0; z < out[0]; ++z)
      for (int yy = 0; yy < out[1]; ++yy)
        for (int xx = 0; xx < out[2]; ++xx) {
          double acc = b[o];
          for (int c = 0; c < C; ++c)
            for (int a = 0; a < k[0]; ++a)
              for (int bb = 0; bb < k[1]; ++bb)
                for (int cc = 0; cc < k[2]; ++cc)
                  acc += W[(((static_cast<std::size_t>(o) * C + c) * k[0] + a) * k[1] + bb) * k[2] + cc] *
                         P(c, z * s + a, yy * s + bb, xx * s + cc);
          y[idx++] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.shape_string() == "{2,3}");
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1.0}), Error);
  Volume v(Dims{3, 2, 1}, Spacing{}, std::vector<double>{0, 1, 2, 3, 4, 5});
  Tensor vt = volume_tensor(v, 1.0, 2.0);
  CHECK(vt.shape() == std::vector<int>{1, 1, 2, 3});
  CHECK(vt[5] == 2.0);
}

TEST_CASE("dense layer") {
  std::mt19937_64 rng(1);
  SUBCASE("identity and constant") {
    DenseLayer L(3, 3);
    for (int i = 0; i < 3; ++i) L.W[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    Tensor x({3}, std::vector<double>{1, -2, 3});
    CHECK(dense_forward(L, x) == x);
    DenseLayer Z(3, 2);
    Z.b = Tensor({2}, std::vector<double>{4, 5});
    CHECK(dense_forward(Z, x).values() == std::vector<double>{4, 5});
  }
  SUBCASE("random 8->5 gradients match finite differences") {
    DenseLayer L(8, 5);
    init_layer(L, rng);
    L.b = random_tensor({5}, rng);
    Tensor x = random_tensor({8}, rng);
    const Tensor c = random_tensor({5}, rng);
    auto g = dense_backward(L, x, c);
    auto loss = [&] { return ProbeValue{dot(dense_forward(L, x), c), 0}; };
    CHECK(gradcheck(L.W, g.dW, all_coords(L.W), loss).max_rel_error < 1e-5);
    CHECK(gradcheck(L.b, g.db, all_coords(L.b), loss).max_rel_error < 1e-5);
    CHECK(gradcheck(x, g.dx, all_coords(x), loss).max_rel_error < 1e-5);
  }
  CHECK_THROWS_AS(dense_forward(DenseLayer(3, 2), Tensor({4})), Error);
}

TEST_CASE("same padding shape law") {
  for (int n = 1; n <= 12; ++n)
    for (int k : {1, 3, 5, 7})
      for (int s = 1; s <= 3; ++s) {
        auto p = same_padding(n, k, s);
        REQUIRE(p.out == (n + s - 1) / s);
        Conv3DLayer L(1, 1, k, s);
        REQUIRE(L.output_shape({1, n, n, n}) == std::vector<int>{1, p.out, p.out, p.out});
      }
  CHECK_THROWS_AS(Conv3DLayer(1, 1, 2, 1), Error);
  CHECK_THROWS_AS(Conv3DLayer(1, 1, std::array<int, 3>{3, 4, 3}, 1), Error);
}

TEST_CASE("conv3d forward") {
  SUBCASE("1x1x1 identity kernel") {
    std::mt19937_64 rng(2);
    Conv3DLayer L(1, 1, 1, 1);
    L.W[0] = 1.0;
    Tensor x = random_tensor({1, 3, 4, 5}, rng);
    CHECK(conv3d_forward(L, x) == x);
  }
  SUBCASE("all-ones 3x3x3 over constant ones counts the unpadded neighbors") {
    Conv3DLayer L(1, 1, 3, 1);
    L.W.fill(1.0);
    Tensor y = conv3d_forward(L, Tensor({1, 5, 5, 5}, 1.0));
    CHECK(y[(2 * 5 + 2) * 5 + 2] == 27.0);
    CHECK(y[0] == 8.0);
    CHECK(y[2] == 12.0);
  }
  SUBCASE("matches the padded direct-convolution oracle") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> ext(1, 7), ch(1, 3), str(1, 3), ks(0, 2);
    for (int trial = 0; trial < 60; ++trial) {
      const int C = ch(rng), O = ch(rng), s = str(rng);
      const std::array<int, 3> k{2 * ks(rng) + 1, 2 * ks(rng) + 1, 2 * ks(rng) + 1};
      Conv3DLayer L(C, O, k, s);
      L.W = random_tensor(L.W.shape(), rng);
      L.b = random_tensor(L.b.shape(), rng);
      Tensor x = random_tensor({C, ext(rng), ext(rng), ext(rng)}, rng);
      Tensor y = conv3d_forward(L, x);
      Tensor o = conv_oracle(x, L.W, L.b, s);
      REQUIRE(y.shape() == o.shape());
      for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(std::abs(y[i] - o[i]) < 1e-12);
    }
  }
}

TEST_CASE("conv3d gradients match finite differences") {
  std::mt19937_64 rng(4);
  for (int s : {1, 2}) {
    Conv3DLayer L(2, 3, 3, s);
    init_layer(L, rng);
    L.b = random_tensor(L.b.shape(), rng);
    Tensor x = random_tensor({2, 5, 5, 5}, rng);
    const Tensor c = random_tensor(L.output_shape(x.shape()), rng);
    auto g = conv3d_backward(L, x, c);
    auto loss = [&] { return ProbeValue{dot(conv3d_forward(L, x), c), 0}; };
    CHECK(gradcheck(L.W, g.dW, all_coords(L.W), loss).max_rel_error < 1e-5);
    CHECK(gradcheck(L.b, g.db, all_coords(L.b), loss).max_rel_error < 1e-5);
    CHECK(gradcheck(x, g.dx, all_coords(x), loss).max_rel_error < 1e-5);
  }
}

TEST_CASE("relu and global average pooling") {
  Tensor x({4}, std::vector<double>{-3, 2, 0, 5});
  CHECK(relu(x).values() == std::vector<double>{0, 2, 0, 5});
  CHECK(relu_backward(x, Tensor({4}, 1.0)).values() == std::vector<double>{0, 1, 0, 1});

  Tensor c({2, 2, 3, 1});
  for (std::size_t i = 0; i < 6; ++i) c[i] = 7.25;
  for (std::size_t i = 6; i < 12; ++i) c[i] = static_cast<double>(i);
  Tensor g = global_avg_pool(c);
  CHECK(g[0] == 7.25);
  CHECK(g[1] == doctest::Approx(8.5));

  std::mt19937_64 rng(5);
  Tensor y = random_tensor({3, 2, 3, 4}, rng);
  const Tensor w = random_tensor({3}, rng);
  Tensor dx = global_avg_pool_backward(y.shape(), w);
  for (std::size_t i = 0; i < 24; ++i) CHECK(dx[i] == w[0] / 24.0);
  auto loss = [&] { return ProbeValue{dot(global_avg_pool(y), w), 0}; };
  CHECK(gradcheck(y, dx, all_coords(y), loss).max_rel_error < 1e-5);
}

TEST_CASE("softmax cross-entropy") {
  auto r = softmax_ce(Tensor({4}, 0.0), 2);
  for (double p : r.probs.values()) CHECK(p == 0.25);
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  auto big = softmax_ce(Tensor({4}, std::vector<double>{1000, 0, 0, 0}), 0);
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss < 1e-300);
  auto wrong = softmax_ce(Tensor({4}, std::vector<double>{1000, 0, 0, 0}), 1);
  CHECK(wrong.loss == doctest::Approx(1000.0));

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = random_tensor({4}, rng, 5.0);
    const int label = trial % 4;
    auto s = softmax_ce(z, label);
    double sum = 0.0;
    for (double p : s.probs.values()) {
      CHECK(p > 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
      const double h = 1e-5, orig = z[i];
      z[i] = orig + h;
      const double up = softmax_ce(z, label).loss;
      z[i] = orig - h;
      const double down = softmax_ce(z, label).loss;
      z[i] = orig;
      CHECK(std::abs((up - down) / (2 * h) - s.dlogits[i]) < 1e-6);
    }
  }
  CHECK_THROWS_AS(softmax_ce(Tensor({4}, std::vector<double>{0, NAN, 0, 0}), 0), Error);
  CHECK_THROWS_AS(softmax_ce(Tensor({4}), 4), Error);
}

TEST_CASE("sgd with momentum") {
  SGDConfig cfg;
  cfg.learning_rate = 0.1;
  SUBCASE("mu = 0 is a plain gradient step") {
    cfg.momentum = 0.0;
    Tensor p({2}, std::vector<double>{1, 2}), g({2}, std::vector<double>{0.5, -1});
    std::vector<Tensor> vel;
    sgd_step({&p}, {&g}, vel, cfg);
    CHECK(p.values() == std::vector<double>{1 - 0.1 * 0.5, 2 + 0.1});
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    Tensor p({3}, std::vector<double>{1, 2, 3}), g({3});
    const Tensor before = p;
    std::vector<Tensor> vel;
    for (int i = 0; i < 10; ++i) sgd_step({&p}, {&g}, vel, cfg);
    CHECK(p == before);
  }
  SUBCASE("quadratic bowl follows the scalar recurrence") {
    cfg.momentum = 0.9;
    Tensor p({2}, 1.0);
    std::vector<Tensor> vel;
    double sp = 1.0, sv = 0.0;
    int first_below = -1, oracle_below = -1;
    for (int t = 1; t <= 400; ++t) {
      Tensor g = p;  // grad of 0.5 |p|^2
      sgd_step({&p}, {&g}, vel, cfg);
      sv = 0.9 * sv - 0.1 * sp;
      sp += sv;
      REQUIRE(p[0] == sp);
      REQUIRE(p[1] == sp);
      const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1]);
      if (first_below < 0 && norm < 1e-6) first_below = t;
      if (oracle_below < 0 && std::abs(sp) * std::sqrt(2.0) < 1e-6) oracle_below = t;
    }
    CHECK(first_below == oracle_below);
    // Momentum 0.9 contracts by sqrt(0.9) per step, so 1e-6 takes just over 200 steps.
    CHECK(first_below <= 220);
  }
  auto mismatched = [] {
    Tensor p({2});
    Tensor g({3});
    std::vector<Tensor> vel;
    sgd_step({&p}, {&g}, vel, SGDConfig{});
  };
  CHECK_THROWS_AS(mismatched(), Error);
}

TEST_CASE("he-uniform init is seeded and bounded") {
  std::mt19937_64 a(9), b(9);
  Conv3DLayer L1(2, 4, 3, 1), L2(2, 4, 3, 1);
  init_layer(L1, a);
  init_layer(L2, b);
  CHECK(L1.W == L2.W);
  const double limit = std::sqrt(6.0 / 54.0);
  for (double w : L1.W.values()) CHECK(std::abs(w) <= limit);
  for (double v : L1.b.values()) CHECK(v == 0.0);
}

TEST_CASE("gradcheck skips coordinates that cross a relu kink") {
  Tensor w({1}, std::vector<double>{1e-6});
  Tensor analytic({1}, 1.0);
  auto probe = [&] {
    Tensor r = relu(w);
    return ProbeValue{r[0], relu_pattern(w)};
  };
  auto res = gradcheck(w, analytic, {0}, probe);
  CHECK(res.skipped == 1);
  CHECK(res.checked == 0);
}

TEST_CASE("checkpoint round-trip") {
  std::mt19937_64 rng(10);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4}, rng);
  Tensor ga(a.shape()), gb(b.shape());
  ParamSet ps;
  ps.add("layer/W", a, ga);
  ps.add("layer/b", b, gb);
  TempDir tmp;
  save_checkpoint(tmp.path / "ck", R"({"kind":"toy","seed":3})", ps);

  Tensor a2(a.shape()), b2(b.shape()), ga2(a.shape()), gb2(b.shape());
  ParamSet loaded;
  loaded.add("layer/W", a2, ga2);
  loaded.add("layer/b", b2, gb2);
  const std::string header = load_checkpoint(tmp.path / "ck", loaded);
  CHECK(a2 == a);
  CHECK(b2 == b);
  CHECK(header.find("\"toy\"") != std::string::npos);
  CHECK(read_checkpoint_header(tmp.path / "ck") == header);

  Tensor wrong({3, 2}), gw({3, 2});
  ParamSet bad;
  bad.add("layer/W", wrong, gw);
  bad.add("layer/b", b2, gb2);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "ck", bad), Error);
  CHECK_THROWS_AS(save_checkpoint(tmp.path / "x", "[1]", ps), Error);
}
