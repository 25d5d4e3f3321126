#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "mtsmae/masking.hpp"
#include "support.hpp"

using namespace mtsmae;
using namespace testing;

TEST_CASE("visible counts") {
  std::mt19937_64 rng(1);
  auto plan = sample_mask(196, 0.85, rng);
  CHECK(plan.visible_ids.size() == 29);
  CHECK(plan.masked_ids.size() == 167);
  CHECK(sample_mask(196, 0.0, rng).visible_ids.size() == 196);
  CHECK(sample_mask(20, 0.85, rng).visible_ids.size() == 3);
  CHECK(sample_mask(4, 0.99, rng).visible_ids.size() == 1);
  CHECK(error_kind([&] { sample_mask(10, 1.0, rng); }) == ErrorKind::Config);
  CHECK(error_kind([&] { sample_mask(10, -0.1, rng); }) == ErrorKind::Config);
}

TEST_CASE("plans partition the index set and are deterministic") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> len(1, 60);
    std::uniform_real_distribution<double> ratio(0.0, 0.99);
    const std::size_t L = len(rng);
    const double r = ratio(rng);
    std::mt19937_64 a(seed * 7 + 1), b(seed * 7 + 1);
    auto p = sample_mask(L, r, a);
    auto q = sample_mask(L, r, b);
    CHECK(p.visible_ids == q.visible_ids);
    CHECK(std::is_sorted(p.visible_ids.begin(), p.visible_ids.end()));
    CHECK(std::is_sorted(p.masked_ids.begin(), p.masked_ids.end()));
    std::vector<std::size_t> all = p.visible_ids;
    all.insert(all.end(), p.masked_ids.begin(), p.masked_ids.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(L);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(all == expected);
    const auto keep = std::max<long long>(1, std::llround(static_cast<double>(L) * (1.0 - r)));
    CHECK(p.visible_ids.size() == static_cast<std::size_t>(keep));
  }
}

TEST_CASE("each index is visible at the expected rate") {
  std::mt19937_64 rng(2024);
  std::vector<int> hits(196, 0);
  for (int draw = 0; draw < 10000; ++draw) {
    for (auto id : sample_mask(196, 0.85, rng).visible_ids) ++hits[id];
  }
  for (int h : hits) {
    CHECK(h / 10000.0 >= 0.10);
    CHECK(h / 10000.0 <= 0.20);
  }
}

TEST_CASE("select and scatter") {
  std::mt19937_64 rng(3);
  A tokens = random_array({3, 4}, rng);
  auto plan = make_mask_plan(3, {2, 0});
  auto vis = select_visible(tokens, plan);
  CHECK(vis.shape() == Shape{2, 4});
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(vis.at(0, c) == tokens.at(0, c));
    CHECK(vis.at(1, c) == tokens.at(2, c));
  }

  A token = random_array({4}, rng);
  auto full = scatter_with_mask_tokens(vis, plan, token);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(full.at(0, c) == tokens.at(0, c));
    CHECK(full.at(1, c) == token.data()[c]);
    CHECK(full.at(2, c) == tokens.at(2, c));
  }

  auto identity = make_mask_plan(3, {0, 1, 2});
  CHECK(bitwise_equal(select_visible(tokens, identity).data(), tokens.data()));
  CHECK(bitwise_equal(scatter_with_mask_tokens(tokens, identity, token).data(), tokens.data()));

  auto one = make_mask_plan(5, {4});
  auto sparse = scatter_with_mask_tokens(random_array({1, 4}, rng), one, token);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(sparse.at(r, c) == token.data()[c]);

  CHECK(error_kind([&] { select_visible(random_array({4, 4}, rng), plan); }) == ErrorKind::Dimension);
  CHECK(error_kind([&] { scatter_with_mask_tokens(tokens, plan, token); }) == ErrorKind::Dimension);
}

TEST_CASE("round trip differs only at masked positions") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    A tokens = random_array({24, 6}, rng);
    A token = random_array({6}, rng);
    auto plan = sample_mask(24, 0.6, rng);
    auto back = scatter_with_mask_tokens(select_visible(tokens, plan), plan, token);
    std::vector<bool> masked(24, false);
    for (auto id : plan.masked_ids) masked[id] = true;
    for (std::size_t r = 0; r < 24; ++r)
      for (std::size_t c = 0; c < 6; ++c) CHECK(back.at(r, c) == (masked[r] ? token.data()[c] : tokens.at(r, c)));
  }
}

TEST_CASE("scatter gradients") {
  std::mt19937_64 rng(9);
  auto plan = make_mask_plan(5, {1, 3});
  auto f = [&](const std::vector<A>& in) {
    auto out = scatter_with_mask_tokens(select_visible(in[0], plan), plan, in[1]);
    std::mt19937_64 wrng(2);
    return sum(mul(out, random_array(out.shape(), wrng)));
  };
  CHECK(grad_check(f, {random_array({5, 3}, rng), random_array({3}, rng)}) < 1e-4);
}
