#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <memory>

#include "oracles.hpp"
#include "quad/errors.hpp"
#include "quad/grad_check.hpp"
#include "quad/ops.hpp"
#include "toys.hpp"

using namespace quad;
using toys::random_tensor;

namespace {

// Inputs away from the relu kink, as central differences need.
Tensor away_from_kink(Shape shape, Rng& rng) {
  auto t = random_tensor(std::move(shape), rng);
  for (double& v : t.mutable_values())
    if (std::abs(v) < 1e-3) v = 0.5;
  return t;
}

void expect_grad_ok(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs) {
  const auto report = grad_check(f, inputs);
  INFO(report.failure);
  CHECK(report.passed);
  CHECK(report.max_relative_error() <= 1e-6);
}

}  // namespace

TEST_SUITE("tensor_core") {
  TEST_CASE("matmul examples") {
    Rng rng(1);
    const auto a = random_tensor({3, 3}, rng);
    const auto out = matmul(Tensor::identity(3), a);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.at(i) == a.at(i));

    const auto b = matmul(Tensor::from_values({2, 2}, {1, 2, 3, 4}), Tensor::from_values({2, 1}, {1, 1}));
    CHECK(b.shape() == Shape{2, 1});
    CHECK(b.at(0) == 3.0);
    CHECK(b.at(1) == 7.0);
  }

  TEST_CASE("matmul shape mismatch names both shapes") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }

  TEST_CASE("elementwise examples") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    const auto r = relu(Tensor::from_values({2}, {-1.0, 2.0}));
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 2.0);
    CHECK(elementwise(ElementwiseKind::kScale, Tensor::scalar(2.0), {}, 3.0).item() == 6.0);
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
    const auto bcast = mul(Tensor::from_values({3}, {1, 2, 3}), Tensor::scalar(2.0));
    CHECK(bcast.at(2) == 6.0);
  }

  TEST_CASE("relu subgradient at zero is zero") {
    auto x = Tensor::from_values({1}, {0.0}, true);
    backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0.0);
  }

  TEST_CASE("softmax examples") {
    const auto u = softmax(Tensor::from_values({1, 4}, {2, 2, 2, 2}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(u.at(i) == doctest::Approx(0.25).epsilon(1e-15));
    const auto p = softmax(Tensor::from_values({2}, {0.0, std::log(3.0)}));
    CHECK(p.at(0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(p.at(1) == doctest::Approx(0.75).epsilon(1e-14));
  }

  TEST_CASE("softmax rows sum to one") {
    Rng rng(2);
    const auto x = random_tensor({20, 7}, rng, 30.0);
    const auto p = softmax(x);
    for (std::size_t r = 0; r < 20; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(p.at(r, c) >= 0.0);
        s += p.at(r, c);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    const auto q = softmax(x, 0);
    for (std::size_t c = 0; c < 7; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < 20; ++r) s += q.at(r, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("layer_norm examples") {
    const auto one = Tensor::full({2}, 1.0), zero = Tensor::zeros({2});
    const auto c = layer_norm(Tensor::from_values({1, 2}, {5, 5}), one, zero);
    CHECK(c.at(0) == 0.0);
    CHECK(c.at(1) == 0.0);
    const auto y = layer_norm(Tensor::from_values({1, 2}, {1, 3}), one, zero, 1e-300);
    CHECK(y.at(0) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("backward examples") {
    auto x = Tensor::scalar(2.0, true);
    const auto y = scale(x, 3.0);
    backward(y);
    CHECK(x.grad()[0] == 3.0);
    backward(y);
    CHECK(x.grad()[0] == 6.0);
    CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ContractError);
  }

  TEST_CASE("backward reaches every leaf in the graph") {
    Rng rng(3);
    auto w = random_tensor({3, 2}, rng, 1.0, true);
    auto x = random_tensor({4, 3}, rng, 1.0, true);
    auto b = random_tensor({2}, rng, 1.0, true);
    backward(sum(sigmoid(add_row(matmul(x, w), b))));
    CHECK(w.has_grad());
    CHECK(x.has_grad());
    CHECK(b.has_grad());
    CHECK(w.grad().size() == w.numel());
  }

  TEST_CASE("topological order puts inputs first") {
    Rng rng(4);
    auto a = random_tensor({2, 2}, rng, 1.0, true);
    const auto b = tanh(a);
    const auto c = matmul(b, a);
    const auto order = topological_order(sum(c));
    std::map<const detail::Node*, std::size_t> at;
    for (std::size_t i = 0; i < order.size(); ++i) at[order[i].get()] = i;
    CHECK(order.size() == 4);
    for (const auto& node : order)
      for (const auto& parent : node->parents) CHECK(at.at(parent.get()) < at.at(node.get()));
  }

  TEST_CASE("no-grad guard records nothing") {
    auto x = Tensor::scalar(1.0, true);
    NoGradGuard guard;
    CHECK_FALSE(scale(x, 2.0).requires_grad());
  }

  TEST_CASE("central differences agree for every operation") {
    Rng rng(5);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng), s = random_tensor({1}, rng);
    auto k = away_from_kink({3, 4}, rng);
    auto pos = random_tensor({3, 4}, rng);
    for (double& v : pos.mutable_values()) v = std::abs(v) + 0.1;

    SUBCASE("matmul") { expect_grad_ok([&] { return sum(matmul(a, b)); }, {a, b}); }
    SUBCASE("matmul weighted") { expect_grad_ok([&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b}); }
    SUBCASE("transpose") { expect_grad_ok([&] { return sum(mul(transpose(a), transpose(c))); }, {a, c}); }
    SUBCASE("add sub mul") { expect_grad_ok([&] { return sum(mul(add(a, c), sub(a, c))); }, {a, c}); }
    SUBCASE("scalar broadcast") { expect_grad_ok([&] { return sum(mul(tanh(a), s)); }, {a, s}); }
    SUBCASE("scale and mean") { expect_grad_ok([&] { return mean(mul(scale(a, -1.5), c)); }, {a, c}); }
    SUBCASE("add_row") { expect_grad_ok([&] { return sum(tanh(add_row(a, row))); }, {a, row}); }
    SUBCASE("scale_rows") {
      const std::vector<double> f{0.5, -2.0, 3.0};
      expect_grad_ok([&] { return sum(mul(scale_rows(a, f), c)); }, {a, c});
    }
    SUBCASE("sigmoid") { expect_grad_ok([&] { return sum(mul(sigmoid(a), c)); }, {a}); }
    SUBCASE("relu") { expect_grad_ok([&] { return sum(mul(relu(k), c)); }, {k}); }
    SUBCASE("tanh") { expect_grad_ok([&] { return sum(mul(tanh(a), c)); }, {a}); }
    SUBCASE("gelu") { expect_grad_ok([&] { return sum(mul(gelu(a), c)); }, {a}); }
    SUBCASE("log_clamped") { expect_grad_ok([&] { return sum(mul(log_clamped(pos, 1e-12), c)); }, {pos}); }
    SUBCASE("softmax rows") { expect_grad_ok([&] { return sum(mul(softmax(a, 1), c)); }, {a}); }
    SUBCASE("softmax columns") { expect_grad_ok([&] { return sum(mul(softmax(a, 0), c)); }, {a}); }
    SUBCASE("layer_norm") {
      auto gain = random_tensor({4}, rng), bias = random_tensor({4}, rng);
      expect_grad_ok([&] { return sum(mul(layer_norm(a, gain, bias), c)); }, {a, gain, bias});
    }
    SUBCASE("gather and index_add") {
      const std::vector<std::int32_t> idx{2, 0, 2, 1};
      const std::vector<std::int32_t> dst{1, 1, 0, 3};
      const std::vector<double> w{0.5, 1.0, -2.0, 0.25};
      expect_grad_ok([&] { return sum(tanh(index_add_rows(gather_rows(a, idx), dst, w, 4))); }, {a});
    }
    SUBCASE("replace_rows") {
      auto src = random_tensor({2, 4}, rng);
      const std::vector<std::int32_t> idx{2, 0};
      expect_grad_ok([&] { return sum(mul(replace_rows(a, idx, src), c)); }, {a, src});
    }
    SUBCASE("slice and concat") {
      expect_grad_ok(
          [&] {
            const auto rows = concat_rows({slice_rows(a, 1, 3), c});
            const auto cols = concat_cols({a, c});
            return add(sum(tanh(rows)), sum(mul(cols, cols)));
          },
          {a, c});
    }
    SUBCASE("rotate") {
      auto r = random_tensor({3, 4}, rng), one = random_tensor({1, 4}, rng);
      expect_grad_ok([&] { return sum(mul(rotate(a, r), c)); }, {a, r});
      expect_grad_ok([&] { return sum(mul(rotate(a, one), c)); }, {a, one});
    }
    SUBCASE("attention") {
      auto q = random_tensor({6, 4}, rng), kk = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
      auto w = random_tensor({6, 4}, rng);
      const std::vector<std::uint8_t> live{1, 1, 0, 1, 1, 1};
      expect_grad_ok([&] { return sum(mul(multi_head_attention(q, kk, v, 2, 3, 2, live), w)); }, {q, kk, v});
    }
    SUBCASE("bce_with_logits") {
      auto z = random_tensor({3, 5}, rng, 3.0);
      const std::vector<std::int32_t> t{0, 4, 2};
      const std::vector<double> w{0.5, 0.25, 1.0};
      expect_grad_ok([&] { return bce_with_logits(z, t, 0.1, w); }, {z});
    }
  }

  TEST_CASE("grad_check passes a quadratic form") {
    Rng rng(6);
    auto x = random_tensor({1, 5}, rng);
    const auto m = random_tensor({5, 5}, rng);
    const auto report = grad_check([&] { return sum(mul(matmul(x, m), x)); }, {x});
    CHECK(report.passed);
    CHECK(report.max_relative_error() <= 1e-6);
  }

  TEST_CASE("grad_check fails a corrupted backward rule") {
    Rng rng(7);
    auto x = random_tensor({4}, rng);
    // Forward x^2 with a backward that forgets the factor 2.
    auto bad_square = [](const Tensor& in) {
      auto node = std::make_shared<detail::Node>();
      node->shape = in.shape();
      for (double v : in.values()) node->value.push_back(v * v);
      node->requires_grad = in.requires_grad();
      if (node->requires_grad) {
        node->parents.push_back(in.node());
        auto parent = in.node();
        node->backward = [parent](detail::Node& self) {
          double* g = parent->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * parent->value[i];
        };
      }
      return Tensor(node);
    };
    const auto report = grad_check([&] { return sum(bad_square(x)); }, {x});
    CHECK_FALSE(report.passed);
    CHECK(report.max_relative_error() > 0.1);
  }

  TEST_CASE("grad_check reports a non-finite gradient with its index") {
    auto x = Tensor::from_values({3}, {1.0, -1.0, 0.5});
    // Identity forward whose backward produces infinity at index 2.
    auto broken = [](const Tensor& in) {
      auto node = std::make_shared<detail::Node>();
      node->shape = in.shape();
      node->value.assign(in.values().begin(), in.values().end());
      node->requires_grad = in.requires_grad();
      if (node->requires_grad) {
        node->parents.push_back(in.node());
        auto parent = in.node();
        node->backward = [parent](detail::Node& self) {
          double* g = parent->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += i == 2 ? INFINITY : self.grad[i];
        };
      }
      return Tensor(node);
    };
    const auto report = grad_check([&] { return sum(broken(x)); }, {x});
    CHECK_FALSE(report.passed);
    REQUIRE(report.inputs.size() == 1);
    CHECK_FALSE(report.inputs[0].finite);
    CHECK(report.inputs[0].worst_index == 2);
    CHECK(report.failure.find("index 2") != std::string::npos);
  }

  TEST_CASE("evaluation forward passes are bit-identical") {
    Rng rng(8);
    const auto a = random_tensor({5, 4}, rng), w = random_tensor({4, 4}, rng);
    const auto run = [&] { return oracle::to_vec(softmax(gelu(matmul(a, w)))); };
    CHECK(run() == run());
  }

  TEST_CASE("dropout is identity at rate zero and scales kept entries") {
    Rng rng(9);
    const auto x = Tensor::full({1, 1000}, 1.0);
    const auto same = dropout(x, 0.0, rng);
    CHECK(oracle::to_vec(same) == oracle::to_vec(x));
    const auto d = dropout(x, 0.5, rng);
    std::size_t kept = 0;
    for (double v : d.values()) {
      CHECK((v == 0.0 || v == 2.0));
      kept += v != 0.0;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);
  }
}
