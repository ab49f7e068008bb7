#include <cmath>
#include <vector>

#include "catch_amalgamated.hpp"
#include "fgs/gradcheck.hpp"
#include "fgs/model.hpp"
#include "test_util.hpp"

using namespace fgs;
using Catch::Matchers::WithinAbs;

TEST_CASE("matmul forward values", "[autodiff]") {
  Graph g;
  const auto id = g.leaf(Tensor::matrix({{1, 0}, {0, 1}}));
  const auto v = g.leaf(Tensor::matrix({{3}, {4}}));
  CHECK(g.value(g.matmul(id, v)) == Tensor::matrix({{3}, {4}}));

  const auto a = g.leaf(Tensor::matrix({{1, 2}}));
  const auto b = g.leaf(Tensor::matrix({{3}, {5}}));
  CHECK(g.value(g.matmul(a, b)) == Tensor::matrix({{13}}));
}

TEST_CASE("mse of identical tensors is zero", "[autodiff]") {
  Graph g;
  const auto y = g.leaf(Tensor::matrix({{0.5, -1.25}, {3, 4}}));
  CHECK(g.value(g.mse(y, g.leaf(g.value(y)))).item() == 0.0);
}

TEST_CASE("shape errors name both operands", "[autodiff]") {
  Graph g;
  const auto a = g.leaf(Tensor({2, 3}));
  const auto b = g.leaf(Tensor({2, 3}));
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
  CHECK_THROWS_WITH(g.matmul(a, b), Catch::Matchers::ContainsSubstring("[2,3]"));
  CHECK_THROWS_AS(g.add_bias(a, g.leaf(Tensor({2}))), ShapeError);
  CHECK_THROWS_AS(g.backward(a), ShapeError);
}

TEST_CASE("non-finite leaves are rejected", "[autodiff]") {
  Graph g;
  CHECK_THROWS_AS(g.leaf(Tensor::matrix({{1, NAN}})), NonFiniteError);
  CHECK_THROWS_AS(g.leaf(Tensor::matrix({{INFINITY}})), NonFiniteError);
}

TEST_CASE("derivative of (w*1 - 0)^2 at w=3 is 6", "[autodiff]") {
  Graph g;
  const auto w = g.leaf(Tensor::matrix({{3}}), true);
  const auto x = g.leaf(Tensor::matrix({{1}}));
  const auto loss = g.mse(g.matmul(w, x), g.leaf(Tensor::matrix({{0}})));
  CHECK(g.value(loss).item() == 9.0);
  CHECK(g.backward(loss).get(w) == Tensor::matrix({{6}}));
}

TEST_CASE("gradient vanishes at the least-squares optimum", "[autodiff]") {
  // y = x * w_true exactly, so w_true is the optimum.
  const Tensor x = Tensor::matrix({{1, 2}, {3, -1}, {0.5, 4}});
  const Tensor w_true = Tensor::matrix({{0.7}, {-1.3}});
  const Tensor y = ops::matmul(x, w_true);
  Graph g;
  const auto w = g.leaf(w_true, true);
  const auto loss = g.mse(g.matmul(g.leaf(x), w), g.leaf(y));
  const Tensor grad = g.backward(loss).get(w);
  for (double v : grad.data()) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("frozen leaves get no gradient entry", "[autodiff]") {
  const ModelSpec spec{{4, 3, 2}};
  const auto base = init_model(spec, 1);
  auto adapter = attach_lora(spec, {0}, 2, 2.0, 2);
  Graph g;
  ForwardBindings bind;
  Rng rng(3);
  const auto x = g.leaf(testing::random_matrix(5, 4, rng));
  const auto out = forward_layers(g, base, &adapter, x, 0, 2, false, true, &bind);
  const auto loss = g.mse(out, g.leaf(testing::random_matrix(5, 2, rng)));
  const auto grads = g.backward(loss);
  CHECK_FALSE(grads.contains(bind.weight.at(0)));
  CHECK_FALSE(grads.contains(bind.bias.at(1)));
  CHECK(grads.contains(bind.lora_a.at(0)));
  CHECK(grads.contains(bind.lora_b.at(0)));
  CHECK(grads.get(bind.weight.at(0)) == Tensor(base.layers[0].weight.shape()));
}

TEST_CASE("finite_diff_check on simple losses", "[autodiff][gradcheck]") {
  SECTION("quadratic") {
    const Tensor p = Tensor::matrix({{0.3, -1.1, 2.0}});
    const LossBuilder f = [](Graph& g, std::span<const NodeId> ids) {
      return g.mse(ids[0], g.leaf(Tensor::matrix({{1, 1, 1}})));
    };
    CHECK(finite_diff_check(f, p, 1e-5) < 1e-5);
  }
  SECTION("constant") {
    const Tensor p = Tensor::matrix({{0.3, -1.1}});
    const LossBuilder f = [](Graph& g, std::span<const NodeId>) {
      return g.mse(g.leaf(Tensor::matrix({{1}})), g.leaf(Tensor::matrix({{2}})));
    };
    CHECK(finite_diff_check(f, p, 1e-5) == 0.0);
  }
  SECTION("eps out of range") {
    const LossBuilder f = [](Graph& g, std::span<const NodeId> ids) { return g.mse(ids[0], ids[0]); };
    CHECK_THROWS(finite_diff_check(f, Tensor::matrix({{1}}), 0.0));
    CHECK_THROWS(finite_diff_check(f, Tensor::matrix({{1}}), 0.1));
  }
}

TEST_CASE("every op agrees with central differences", "[autodiff][gradcheck]") {
  Rng rng(GENERATE(0u, 1u, 2u, 3u));
  const Tensor x = testing::random_matrix(3, 4, rng);
  const Tensor w = testing::random_matrix(5, 4, rng);
  const Tensor v = testing::random_matrix(4, 2, rng);
  const Tensor b = testing::random_vector(5, rng);
  const Tensor y = testing::random_matrix(3, 5, rng);
  const Tensor y2 = testing::random_matrix(3, 2, rng);
  const std::vector<Tensor> params{x, w, v, b};
  const LossBuilder f = [&](Graph& g, std::span<const NodeId> p) {
    const auto h = g.tanh(g.add_bias(g.matmul_nt(p[0], p[1]), p[3]));  // [3,5]
    const auto z = g.add(h, g.scale(g.leaf(y), 0.5));
    const auto l1 = g.mse(z, g.leaf(y));
    const auto l2 = g.mse(g.matmul(p[0], p[2]), g.leaf(y2));
    return g.add(g.scale(l1, 1.5), l2);
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("backward is linear in the loss", "[autodiff][property]") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = testing::random_matrix(4, 3, rng);
    const Tensor w0 = testing::random_matrix(2, 3, rng);
    const Tensor y1 = testing::random_matrix(4, 2, rng);
    const Tensor y2 = testing::random_matrix(4, 2, rng);
    const double a = rng.uniform(-3, 3), c = rng.uniform(-3, 3);

    auto grad_of = [&](double ka, double kc) {
      Graph g;
      const auto w = g.leaf(w0, true);
      const auto h = g.tanh(g.matmul_nt(g.leaf(x), w));
      const auto f1 = g.mse(h, g.leaf(y1));
      const auto f2 = g.mse(h, g.leaf(y2));
      return g.backward(g.add(g.scale(f1, ka), g.scale(f2, kc))).get(w);
    };
    const Tensor combined = grad_of(a, c);
    const Tensor gf = grad_of(1, 0), gg = grad_of(0, 1);
    for (std::size_t i = 0; i < combined.size(); ++i) CHECK_THAT(combined[i], WithinAbs(a * gf[i] + c * gg[i], 1e-10));
  }
}

TEST_CASE("backward is bit-reproducible", "[autodiff][property]") {
  auto run = [] {
    Rng rng(5);
    Graph g;
    const auto w = g.leaf(testing::random_matrix(6, 4, rng), true);
    const auto x = g.leaf(testing::random_matrix(8, 4, rng));
    const auto h = g.tanh(g.matmul_nt(x, w));
    const auto loss = g.mse(g.add(h, h), g.leaf(testing::random_matrix(8, 6, rng)));
    return g.backward(loss).get(w);
  };
  CHECK(run() == run());
}

TEST_CASE("backward_from propagates an upstream gradient", "[autodiff]") {
  Rng rng(9);
  const Tensor x = testing::random_matrix(3, 2, rng);
  const Tensor w0 = testing::random_matrix(4, 2, rng);
  const Tensor up = testing::random_matrix(3, 4, rng);
  Graph g;
  const auto w = g.leaf(w0, true);
  const auto out = g.matmul_nt(g.leaf(x), w);
  // d<up, x w^T>/dw = up^T x
  const Tensor expect = ops::matmul_tn(up, x);
  CHECK(max_abs_diff(g.backward_from(out, up).get(w), expect) <= 1e-15);
  CHECK_THROWS_AS(g.backward_from(out, Tensor({2, 2})), ShapeError);
}
