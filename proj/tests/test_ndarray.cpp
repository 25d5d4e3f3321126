#include "doctest.h"

#include <cmath>
#include <random>

#include "mtsmae/error.hpp"
#include "mtsmae/ndarray.hpp"

using namespace mtsmae;
using A = NDArray<double>;

namespace {

A random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return A::from(std::move(shape), std::move(v));
}

// Values bounded away from zero so relu kinks stay outside the FD stencil.
A away_from_zero(Shape shape, std::mt19937_64& rng) {
  A a = random_array(std::move(shape), rng, 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : a.mutable_data()) x = sign(rng) ? x : -x;
  return a;
}

// A fixed random projection makes scalar outputs depend on every element.
A weighted_sum(const A& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  A w = random_array(x.shape(), rng);
  return sum(mul(x, w));
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("matmul worked examples") {
  A eye = A::from({2, 2}, {1, 0, 0, 1});
  A m = A::from({2, 2}, {1, 2, 3, 4});
  auto out = matmul(eye, m);
  CHECK(std::vector<double>(out.data().begin(), out.data().end()) == std::vector<double>{1, 2, 3, 4});

  auto dot = matmul(A::from({1, 2}, {1, 2}), A::from({2, 1}, {3, 4}));
  CHECK(dot.shape() == Shape{1, 1});
  CHECK(dot.item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto msg = error_text([] { matmul(A::zeros({2, 3}), A::zeros({2, 3})); });
  CHECK(msg.find("[2,3]") != std::string::npos);
  CHECK(msg.find("x [2,3]") != std::string::npos);
}

TEST_CASE("gradient of sum(A*B) wrt A is ones * B^T") {
  std::mt19937_64 rng(1);
  A a = random_array({3, 4}, rng);
  A b = random_array({4, 2}, rng);
  a.set_requires_grad(true);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expected = b.at(k, 0) + b.at(k, 1);
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  // And the finite-difference oracle agrees.
  double err = grad_check([&](const std::vector<A>& in) { return sum(matmul(in[0], b)); }, {a});
  CHECK(err < 1e-8);
}

TEST_CASE("conv1d worked examples") {
  A x = A::from({4, 1}, {1, 2, 3, 4});
  A k3 = A::from({3, 1, 1}, {1, 1, 1});
  auto y = conv1d(x, k3, 1, 1);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{3, 6, 9, 7});

  auto same = conv1d(x, A::from({1, 1, 1}, {1}), 1, 0);
  CHECK(std::vector<double>(same.data().begin(), same.data().end()) ==
        std::vector<double>(x.data().begin(), x.data().end()));

  auto down = conv1d(A::zeros({784, 1}), A::zeros({2, 1, 1}), 2, 0);
  CHECK(down.shape() == Shape{392, 1});

  CHECK_THROWS_AS(conv1d(A::zeros({2, 1}), A::zeros({5, 1, 1}), 1, 1), Error);
  CHECK_THROWS_AS(conv1d(A::zeros({4, 2}), A::zeros({3, 1, 1}), 1, 1), Error);
}

TEST_CASE("conv1d with kernel == stride partitions the input") {
  std::mt19937_64 rng(7);
  const std::size_t width = 3, len = 12;
  A x = random_array({len, 2}, rng);
  A k = random_array({width, 2, 3}, rng);
  auto base = conv1d(x, k, width, 0);
  for (std::size_t row = 0; row < len; ++row) {
    A bumped = x.detach();
    bumped.mutable_data()[row * 2] += 0.5;
    auto out = conv1d(bumped, k, width, 0);
    for (std::size_t t = 0; t < base.dim(0); ++t) {
      bool owns = row / width == t;
      bool changed = false;
      for (std::size_t c = 0; c < 3; ++c) changed |= out.at(t, c) != base.at(t, c);
      CHECK(changed == owns);
    }
  }
}

TEST_CASE("layer_norm worked examples") {
  A ones = A::full({2}, 1.0), zeros = A::zeros({2});
  auto flat = layer_norm(A::from({1, 2}, {5, 5}), ones, zeros);
  CHECK(flat.data()[0] == 0.0);
  CHECK(flat.data()[1] == 0.0);

  auto pair = layer_norm(A::from({1, 2}, {1, 3}), ones, zeros, 0.0);
  CHECK(pair.data()[0] == doctest::Approx(-1.0));
  CHECK(pair.data()[1] == doctest::Approx(1.0));

  A beta = A::from({2}, {0.25, -2.0});
  auto gated = layer_norm(A::from({2, 2}, {1, 7, -3, 2}), A::zeros({2}), beta);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(gated.at(r, 0) == 0.25);
    CHECK(gated.at(r, 1) == -2.0);
  }
  CHECK_THROWS_AS(layer_norm(A::zeros({2, 0}), A::zeros({0}), A::zeros({0})), Error);
}

TEST_CASE("softmax, relu and lookup") {
  auto s = softmax(A::from({2}, {0, 0}));
  CHECK(s.data()[0] == 0.5);
  CHECK(s.data()[1] == 0.5);

  auto r = relu(A::from({2}, {-1, 2}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    A x = random_array({3, 5}, rng, -4, 4);
    const double c = std::uniform_real_distribution<double>(-10, 10)(rng);
    A shifted = A::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    for (auto& v : shifted.mutable_data()) v += c;
    auto a = softmax(x), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
    for (std::size_t row = 0; row < 3; ++row) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(a.at(row, j) > 0.0);
        CHECK(a.at(row, j) < 1.0);
        total += a.at(row, j);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }

  A table = A::from({3, 2}, {0, 1, 2, 3, 4, 5});
  std::vector<std::int64_t> ids{2, 0};
  auto rows = embedding_lookup(table, std::span<const std::int64_t>(ids));
  CHECK(rows.at(0, 1) == 5.0);
  CHECK(rows.at(1, 0) == 0.0);
  std::vector<std::int64_t> bad{1, 3};
  auto msg = error_text([&] { embedding_lookup(table, std::span<const std::int64_t>(bad)); });
  CHECK(msg.find("id 3") != std::string::npos);
  try {
    embedding_lookup(table, std::span<const std::int64_t>(bad));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Index);
  }
}

TEST_CASE("grad_check worked examples") {
  A x = A::from({2}, {1, 2});
  double err = grad_check([](const std::vector<A>& in) { return sum(square(in[0])); }, {x});
  CHECK(err < 1e-8);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);

  A y = A::from({4}, {-0.9, -0.3, 0.4, 1.5});
  CHECK(grad_check([](const std::vector<A>& in) { return sum(relu(in[0])); }, {y}) < 1e-8);

  A z = A::from({3}, {0.1, 0.2, 0.3});
  CHECK(grad_check([](const std::vector<A>&) { return A::from({}, {4.0}); }, {z}) == 0.0);
  CHECK_FALSE(z.has_grad());

  A w = A::from({1}, {0.0});
  CHECK_THROWS_AS(grad_check([](const std::vector<A>& in) { return sum(scale(in[0], 1.0 / 0.0)); }, {w}),
                  Error);
}

TEST_CASE("every op passes grad_check at random inputs") {
  std::mt19937_64 rng(11);
  const double tol = 1e-4;
  auto check = [&](const char* name, const ScalarFunction& f, std::vector<A> inputs) {
    INFO(name);
    CHECK(grad_check(f, std::move(inputs)) < tol);
  };
  for (int trial = 0; trial < 3; ++trial) {
    check("matmul", [](auto& in) { return weighted_sum(matmul(in[0], in[1]), 1); },
          {random_array({3, 4}, rng), random_array({4, 5}, rng)});
    check("conv1d", [](auto& in) { return weighted_sum(conv1d(in[0], in[1], 2, 1), 2); },
          {random_array({7, 3}, rng), random_array({3, 3, 2}, rng)});
    check("layer_norm", [](auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2]), 3); },
          {random_array({4, 6}, rng), random_array({6}, rng), random_array({6}, rng)});
    check("softmax", [](auto& in) { return weighted_sum(softmax(in[0]), 4); },
          {random_array({3, 5}, rng, -2, 2)});
    check("causal softmax", [](auto& in) { return weighted_sum(softmax(causal_mask(in[0])), 5); },
          {random_array({4, 4}, rng, -2, 2)});
    check("relu", [](auto& in) { return weighted_sum(relu(in[0]), 6); }, {away_from_zero({3, 4}, rng)});
    check("add/sub/mul", [](auto& in) { return weighted_sum(mul(add(in[0], in[1]), sub(in[0], in[1])), 7); },
          {random_array({2, 3}, rng), random_array({2, 3}, rng)});
    check("add_bias/scale", [](auto& in) { return weighted_sum(scale(add_bias(in[0], in[1]), 1.7), 8); },
          {random_array({3, 4}, rng), random_array({4}, rng)});
    check("transpose", [](auto& in) { return weighted_sum(transpose(in[0]), 9); }, {random_array({2, 5}, rng)});
    check("concat_rows", [](auto& in) { return weighted_sum(concat_rows<double>({in[0], in[1]}), 10); },
          {random_array({2, 3}, rng), random_array({4, 3}, rng)});
    check("concat_cols/slice_cols",
          [](auto& in) { return weighted_sum(concat_cols<double>({slice_cols(in[0], 1, 3), in[1]}), 11); },
          {random_array({3, 4}, rng), random_array({3, 2}, rng)});
    check("gather_rows", [](auto& in) {
            std::vector<std::size_t> ids{2, 0, 2, 1};
            return weighted_sum(gather_rows(in[0], std::span<const std::size_t>(ids)), 12);
          },
          {random_array({3, 2}, rng)});
    check("embedding_lookup", [](auto& in) {
            std::vector<std::int64_t> ids{1, 1, 0};
            return weighted_sum(embedding_lookup(in[0], std::span<const std::int64_t>(ids)), 13);
          },
          {random_array({4, 3}, rng)});
    check("mean/square/reshape", [](auto& in) { return mean(square(reshape(in[0], {6}))); },
          {random_array({2, 3}, rng)});
  }
}

TEST_CASE("shared subexpressions accumulate gradient over every use") {
  A x = A::from({3}, {0.5, -1.0, 2.0}, true);
  A y = square(x);
  // f = sum(y + y + x): df/dx = 4x + 1
  sum(add(add(y, y), x)).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4 * x.data()[i] + 1));

  // Leaf gradients accumulate across backward calls; intermediates do not double count.
  A loss = sum(y);
  loss.backward();
  x.zero_grad();
  loss.backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));
}

TEST_CASE("no-grad mode records nothing") {
  A x = A::from({2}, {1, 2}, true);
  NoGradGuard guard;
  A y = square(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("dropout keeps expectation and is identity at rate 0") {
  std::mt19937_64 rng(5);
  A x = A::full({1000}, 1.0);
  CHECK(dropout(x, 0.0, rng).node() == x.node());
  auto d = dropout(x, 0.5, rng);
  double total = 0;
  for (double v : d.data()) {
    CHECK((v == 0.0 || v == 2.0));
    total += v;
  }
  CHECK(total / 1000.0 == doctest::Approx(1.0).epsilon(0.1));
  CHECK_THROWS_AS(dropout(x, 1.0, rng), Error);
}
