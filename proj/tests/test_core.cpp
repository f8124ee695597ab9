#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ganunlearn/core/nn.hpp"
#include "gradcheck.hpp"

using namespace gu;
using gu::testing::gradcheck;

namespace {
Tensor<double> randn(std::vector<int> shape, uint64_t seed, double s = 1.0) {
  Rng r(seed);
  return Tensor<double>::gaussian(std::move(shape), r, s);
}
}  // namespace

TEST_CASE("rng is deterministic and stage streams are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  CHECK(stage_seed(7, "dataset") == stage_seed(7, "dataset"));
  CHECK(stage_seed(7, "dataset") != stage_seed(7, "gan"));
  CHECK(stage_seed(7, "dataset") != stage_seed(8, "dataset"));

  // moments of the gaussian sampler
  Rng g(3);
  double mean = 0, var = 0;
  const int n = 20000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = g.gauss();
  for (double x : xs) mean += x;
  mean /= n;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("elementwise op gradients match finite differences") {
  auto x = randn({3, 4}, 1);
  auto y = randn({3, 4}, 2);

  auto r1 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(mul(add(v[0], v[1]), sigmoid(v[0])));
      },
      {&x, &y});
  CHECK(r1.max_rel_err < 1e-6);

  auto r2 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return mean_all(lrelu(axpy(v[0], v[1], 0.7), 0.2));
      },
      {&x, &y});
  CHECK(r2.max_rel_err < 1e-6);

  auto r3 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(softplus(scale(add_const(v[0], 0.3), 1.7)));
      },
      {&x});
  CHECK(r3.max_rel_err < 1e-6);
}

TEST_CASE("reduction and geometry op gradients match finite differences") {
  auto x = randn({4, 6}, 3);
  auto y = randn({4, 6}, 4);
  auto v1 = randn({5}, 5);
  auto v2 = randn({5}, 6);

  auto r1 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        auto m = mean_rows(v[0]);  // [D]
        return vec_dot(vec_normalize(m), vec_normalize(mean_rows(v[1])));
      },
      {&x, &y});
  CHECK(r1.max_rel_err < 1e-6);

  auto r2 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return mean_all(rows_dot(rows_normalize(v[0]), rows_normalize(v[1])));
      },
      {&x, &y});
  CHECK(r2.max_rel_err < 1e-6);

  auto r3 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) { return vec_dot(v[0], v[1]); }, {&v1, &v2});
  CHECK(r3.max_rel_err < 1e-6);
}

TEST_CASE("rows_normalize produces unit rows") {
  auto x = randn({7, 16}, 9, 3.0);
  Graph<double> g;
  Var<double> v{&g, g.leaf(&x, nullptr, false)};
  auto y = rows_normalize(v);
  for (int b = 0; b < 7; ++b) {
    double ss = 0;
    for (int d = 0; d < 16; ++d) ss += y.value().at(b, d) * y.value().at(b, d);
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-5);
  }
}

TEST_CASE("linear and matmul gradients match finite differences") {
  auto x = randn({3, 5}, 10);
  auto W = randn({4, 5}, 11, 0.5);
  auto b = randn({4}, 12, 0.1);

  auto r1 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(sigmoid(linear(v[0], v[1], v[2])));
      },
      {&x, &W, &b});
  CHECK(r1.max_rel_err < 1e-6);

  auto a = randn({3, 6}, 13);
  auto c = randn({4, 6}, 14);
  auto r2 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return mean_all(mul(matmul_nt(v[0], v[1]), matmul_nt(v[0], v[1])));
      },
      {&a, &c});
  CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("conv2d gradients match finite differences") {
  // 3x3 stride 1 pad 1
  auto x = randn({2, 3, 5, 5}, 20);
  auto w = randn({4, 3, 3, 3}, 21, 0.4);
  auto b = randn({4}, 22, 0.1);
  auto r1 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(sigmoid(conv2d(v[0], v[1], v[2], 1, 1)));
      },
      {&x, &w, &b});
  CHECK(r1.max_rel_err < 1e-6);

  // 3x3 stride 2 pad 1 (downsampling path)
  auto r2 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return mean_all(lrelu(conv2d(v[0], v[1], v[2], 2, 1), 0.2));
      },
      {&x, &w, &b});
  CHECK(r2.max_rel_err < 1e-6);

  // 1x1 stride 1 pad 0 (channel-mix fast path)
  auto w1 = randn({2, 3, 1, 1}, 23, 0.5);
  auto b1 = randn({2}, 24, 0.1);
  auto r3 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(sigmoid(conv2d(v[0], v[1], v[2], 1, 0)));
      },
      {&x, &w1, &b1});
  CHECK(r3.max_rel_err < 1e-5);
}

TEST_CASE("image op gradients match finite differences") {
  auto x = randn({2, 3, 4, 4}, 30);

  auto r1 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) { return sum_all(sigmoid(upsample2(v[0]))); },
      {&x});
  CHECK(r1.max_rel_err < 1e-6);

  auto r2 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(sigmoid(instance_norm(v[0])));
      },
      {&x});
  CHECK(r2.max_rel_err < 1e-5);

  auto gm = randn({2, 3}, 31);
  auto bt = randn({2, 3}, 32);
  auto r3 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return mean_all(sigmoid(channel_affine(v[0], v[1], v[2])));
      },
      {&x, &gm, &bt});
  CHECK(r3.max_rel_err < 1e-6);

  // pair the normalized map against a fixed random tensor so the objective
  // actually depends on the normalization directions
  auto probe = randn({2, 3, 4, 4}, 33);
  auto r4 = gradcheck<double>(
      [&](Graph<double>& g, std::vector<Var<double>> v) {
        auto p = Var<double>{&g, g.constant(probe)};
        return sum_all(mul(spatial_unit(v[0]), p));
      },
      {&x});
  CHECK(r4.max_rel_err < 1e-6);
}

TEST_CASE("softmax cross entropy gradient and reshape") {
  auto logits = randn({4, 5}, 40);
  std::vector<int> labels = {1, 0, 4, 2};
  auto r1 = gradcheck<double>(
      [&](Graph<double>& g, std::vector<Var<double>> v) { return softmax_xent(v[0], labels); },
      {&logits});
  CHECK(r1.max_rel_err < 1e-6);

  auto x = randn({2, 3, 4}, 41);
  auto r2 = gradcheck<double>(
      [](Graph<double>& g, std::vector<Var<double>> v) {
        return sum_all(sigmoid(reshape(v[0], {6, 4})));
      },
      {&x});
  CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("frozen subgraphs receive no gradient") {
  Tensor<double> x = randn({2, 3}, 50);
  Tensor<double> w = randn({2, 3}, 51);
  Tensor<double> gx = Tensor<double>::zeros({2, 3});
  Tensor<double> gw = Tensor<double>::zeros({2, 3});
  Graph<double> g;
  Var<double> vx{&g, g.leaf(&x, &gx, true)};
  Var<double> vw{&g, g.leaf(&w, &gw, false)};  // frozen
  auto loss = sum_all(mul(vx, vw));
  g.backward(loss.id);
  double sx = 0, sw = 0;
  for (auto v : gx.data) sx += std::abs(v);
  for (auto v : gw.data) sw += std::abs(v);
  CHECK(sx > 0.1);
  CHECK(sw == 0.0);
}

TEST_CASE("adam converges on a quadratic and is deterministic") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Param<double> p;
    p.init("p", Tensor<double>::gaussian({8}, rng));
    std::vector<Param<double>*> params{&p};
    AdamConfig<double> cfg;
    cfg.lr = 0.05;
    for (int step = 0; step < 400; ++step) {
      Graph<double> g;
      auto v = p.bind(g, true);
      auto loss = sum_all(mul(add_const(v, -1.5), add_const(v, -1.5)));
      g.backward(loss.id);
      adam_step(params, cfg);
    }
    return p.value;
  };
  auto a = run(7), b = run(7);
  CHECK(a.data == b.data);
  for (auto v : a.data) CHECK(std::abs(v - 1.5) < 1e-3);
}

TEST_CASE("params_hash tracks content") {
  Rng rng(1);
  Param<double> p;
  p.init("p", Tensor<double>::gaussian({4, 4}, rng));
  std::vector<Param<double>*> ps{&p};
  uint64_t h0 = params_hash(ps);
  CHECK(params_hash(ps) == h0);
  p.value[3] += 1e-7;
  CHECK(params_hash(ps) != h0);
}

TEST_CASE("composite network gradient end to end") {
  // two-layer conv net into a cosine-style objective, the shape of loss
  // used throughout training code
  auto img = randn({2, 3, 8, 8}, 60, 0.5);
  auto w1 = randn({4, 3, 3, 3}, 61, 0.3);
  auto b1 = randn({4}, 62, 0.05);
  auto w2 = randn({6, 4 * 4 * 4}, 63, 0.2);
  auto b2 = randn({6}, 64, 0.05);
  auto target = randn({6}, 65);

  // softplus keeps the composite objective smooth; lrelu kinks are covered
  // by the dedicated op check above
  auto r = gradcheck<double>(
      [&](Graph<double>& g, std::vector<Var<double>> v) {
        auto h = softplus(conv2d(v[0], v[1], v[2], 2, 1));  // [2,4,4,4]
        auto flat = reshape(h, {2, 4 * 4 * 4});
        auto emb = rows_normalize(linear(flat, v[3], v[4]));  // [2,6]
        auto t = vec_normalize(Var<double>{&g, g.constant(target)});
        auto j = vec_normalize(mean_rows(emb));
        return sub(Var<double>{&g, g.constant(Tensor<double>::scalar(1.0))}, vec_dot(j, t));
      },
      {&img, &w1, &b1, &w2, &b2});
  CHECK(r.max_rel_err < 1e-5);
}
