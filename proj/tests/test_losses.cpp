#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cg3d/losses/nce.hpp"
#include "cg3d/nn/ops.hpp"
#include "cg3d/training/grad_check.hpp"
#include "cg3d/util/error.hpp"

using namespace cg3d;
using nn::Tensor;

namespace {

Tensor<double> unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (auto& v : t.row(r)) {
      v = normal01(rng);
      s += v * v;
    }
    for (auto& v : t.row(r)) v /= std::sqrt(s);
  }
  return t;
}

SimilarityBlock<double> block(std::size_t n, std::vector<double> sim, std::vector<std::uint8_t> mask, double tau) {
  return {Tensor<double>(n, n, std::move(sim)), Tensor<std::uint8_t>(n, n, std::move(mask)), tau};
}

// Direct summation, written independently of the library.
double nce_oracle(const Tensor<double>& s, const Tensor<std::uint8_t>& m, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double denom = 0;
    for (std::size_t a = 0; a < s.cols(); ++a) denom += std::exp(s(i, a) / tau);
    double row = 0;
    int np = 0;
    for (std::size_t p = 0; p < s.cols(); ++p)
      if (m(i, p)) {
        row += -std::log(std::exp(s(i, p) / tau) / denom);
        ++np;
      }
    total += row / np;
  }
  return total / static_cast<double>(s.rows());
}

Tensor<double> gram(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> s(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) s(i, j) += a(i, k) * b(j, k);
  return s;
}

Tensor<double> permute(const Tensor<double>& t, const std::vector<std::size_t>& p) {
  Tensor<double> out(t.rows(), t.cols());
  for (std::size_t r = 0; r < p.size(); ++r) std::copy(t.row(p[r]).begin(), t.row(p[r]).end(), out.row(r).begin());
  return out;
}

}  // namespace

TEST_CASE("nce: closed-form examples") {
  CHECK(nce(block(1, {1.0}, {1}, 1.0)) == 0.0);

  const auto b2 = block(2, {1, 0, 0, 1}, {1, 0, 0, 1}, 1.0);
  const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(want - 0.31326) < 1e-5);
  CHECK(std::abs(nce(b2) - want) < 1e-12);
  CHECK(std::abs(nce(b2) - nce_oracle(b2.sim, b2.mask, 1.0)) < 1e-14);

  for (double tau : {0.01, 0.07, 1.0, 5.0}) {
    const auto b4 = block(4, std::vector<double>(16, 0.3), {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}, tau);
    CHECK(std::abs(nce(b4) - std::log(4.0)) < 1e-9);
  }
}

TEST_CASE("nce: matches direct summation on random multi-positive blocks") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = unit_rows(6, 5, seed), b = unit_rows(6, 5, seed + 100);
    const std::vector<int> labels{0, 1, 0, 2, 1, 0};
    const SimilarityBlock<double> blk{gram(a, b), positive_mask(labels, PositiveMode::by_class), 0.07};
    const double v = nce(blk);
    CHECK(v >= 0);
    CHECK(std::abs(v - nce_oracle(blk.sim, blk.mask, 0.07)) < 1e-10);
  }
}

TEST_CASE("nce: errors") {
  CHECK_THROWS_AS(nce(block(1, {1.0}, {1}, 0.0)), ParameterError);
  CHECK_THROWS_AS(nce(block(1, {1.0}, {1}, -1.0)), ParameterError);
  CHECK_THROWS_AS(nce(block(2, {1, 0, 0, 1}, {1, 0, 0, 0}, 1.0)), ContractError);
  CHECK_THROWS_AS(nce(block(1, {1.5}, {1}, 1.0)), ContractError);
  CHECK_THROWS_AS(nce(block(1, {std::nan("")}, {1}, 1.0)), ContractError);
  CHECK_NOTHROW(nce(block(1, {1.0 + 5e-6}, {1}, 1.0)));
}

TEST_CASE("positive mask") {
  const std::vector<int> labels{3, 1, 3};
  const auto m = positive_mask(labels, PositiveMode::by_class);
  CHECK(m == Tensor<std::uint8_t>(3, 3, std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 1, 0, 1}));
  const auto id = positive_mask(labels, PositiveMode::instance);
  CHECK(id == Tensor<std::uint8_t>(3, 3, std::vector<std::uint8_t>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
}

TEST_CASE("pair loss: symmetry, sharp limit and uniform value") {
  const auto x = unit_rows(5, 8, 1), y = unit_rows(5, 8, 2);
  const std::vector<int> labels{0, 1, 2, 1, 0};
  CHECK(std::abs(pair_loss(x, y, labels, 0.07) - pair_loss(y, x, labels, 0.07)) < 1e-12);

  const std::vector<int> distinct{0, 1, 2, 3, 4};
  CHECK(pair_loss(x, x, distinct, 0.01) < 1e-2);

  Tensor<double> same(4, 3);
  for (std::size_t r = 0; r < 4; ++r) same(r, 0) = 1;
  const std::vector<int> four{0, 1, 2, 3};
  CHECK(std::abs(pair_loss(same, same, four, 0.07) - 2 * std::log(4.0)) < 1e-9);
  CHECK(std::abs(loss_prompt(same, same, four, 0.035) - 2 * std::log(4.0)) < 1e-9);
}

TEST_CASE("loss_3d and loss_prompt follow their definitions") {
  const auto a = unit_rows(6, 8, 3), b = unit_rows(6, 8, 4), c = unit_rows(6, 8, 5);
  const std::vector<int> labels{0, 0, 1, 2, 2, 1};
  CHECK(std::abs(loss_3d(a, b, c, labels, 0.07) - (pair_loss(a, b, labels, 0.07) + pair_loss(a, c, labels, 0.07))) <
        1e-12);
  CHECK(loss_prompt(b, c, labels, 0.07) == pair_loss(b, c, labels, 0.07));

  const Tensor<double> one(1, 3, std::vector<double>{0, 1, 0});
  const std::vector<int> l1{0};
  CHECK(loss_3d(one, one, one, l1, 0.07) == 0.0);
}

TEST_CASE("losses are invariant to a joint batch permutation") {
  const auto a = unit_rows(7, 6, 6), b = unit_rows(7, 6, 7), c = unit_rows(7, 6, 8);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 3};
  std::vector<std::size_t> p{4, 2, 6, 0, 1, 5, 3};
  std::vector<int> pl;
  for (auto i : p) pl.push_back(labels[i]);
  CHECK(std::abs(loss_3d(a, b, c, labels, 0.07) - loss_3d(permute(a, p), permute(b, p), permute(c, p), pl, 0.07)) <
        1e-12);
  CHECK(std::abs(loss_prompt(b, c, labels, 0.07) - loss_prompt(permute(b, p), permute(c, p), pl, 0.07)) < 1e-12);
}

TEST_CASE("nce: analytic gradient matches finite differences on 3x3 blocks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = unit_rows(3, 4, seed), b = unit_rows(3, 4, seed + 50);
    const std::vector<int> labels{0, seed % 2 == 0 ? 0 : 1, 2};
    Tensor<double> ga, gb;
    pair_loss(a, b, labels, 0.07, PositiveMode::by_class, &ga, &gb);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < a.size(); ++i) {
      coords.push_back(&a[i]);
      analytic.push_back(ga[i]);
      coords.push_back(&b[i]);
      analytic.push_back(gb[i]);
    }
    const auto r = grad_check([&] { return pair_loss(a, b, labels, 0.07); }, coords, analytic, 1e-6);
    CHECK(r.coords == 24);
    CHECK(r.max_rel_error < 1e-4);

    // dL/dsim straight from nce.
    auto blk = SimilarityBlock<double>{gram(a, b), positive_mask(labels, PositiveMode::by_class), 0.07};
    Tensor<double> gs;
    nce(blk, &gs);
    std::vector<double*> sc;
    std::vector<double> sa;
    for (std::size_t i = 0; i < 9; ++i) {
      sc.push_back(&blk.sim[i]);
      sa.push_back(gs[i]);
    }
    CHECK(grad_check([&] { return nce(blk); }, sc, sa, 1e-5).max_rel_error < 1e-4);
  }
}

TEST_CASE("graph losses: gradients through normalization match finite differences") {
  Rng rng(11);
  auto mk = [&](const char* name) {
    Tensor<double> t(4, 5);
    for (auto& v : t.storage()) v = normal01(rng);
    return nn::Parameter<double>{name, t, {}, true};
  };
  auto p3 = mk("f3d"), p2 = mk("f2d"), pt = mk("ftext");
  const std::vector<int> labels{0, 1, 0, 2};
  const ParamList<double> params{&p3, &p2, &pt};

  auto l3d = [&](nn::Graph<double>& g) {
    const auto a = nn::ops::l2_normalize(g, g.param(p3));
    const auto b = nn::ops::l2_normalize(g, g.param(p2));
    const auto c = nn::ops::l2_normalize(g, g.param(pt));
    return nn::ops::add(g, pair_loss(g, a, b, labels, 0.07), pair_loss(g, a, c, labels, 0.07));
  };
  CHECK(grad_check(l3d, params, 1e-6).max_rel_error < 1e-4);

  auto lp = [&](nn::Graph<double>& g) {
    return pair_loss(g, nn::ops::l2_normalize(g, g.param(p2)), nn::ops::l2_normalize(g, g.param(pt)), labels, 0.07,
                     PositiveMode::instance);
  };
  CHECK(grad_check(lp, params, 1e-6).max_rel_error < 1e-4);

  // Node value equals the tensor form.
  nn::Graph<double> g(false);
  const auto v = g.value(l3d(g))[0];
  auto n = [](Tensor<double> t) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double s = 0;
      for (double x : t.row(r)) s += x * x;
      for (double& x : t.row(r)) x /= std::sqrt(s);
    }
    return t;
  };
  CHECK(std::abs(v - loss_3d(n(p3.value), n(p2.value), n(pt.value), labels, 0.07)) < 1e-12);
}

TEST_CASE("lower temperature widens the gap between a dominant and a uniform block") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<double> s(16);
    std::vector<std::uint8_t> m(16, 0);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) s[i * 4 + j] = i == j ? 0.6 + 0.3 * uniform01(rng) : 0.5 * uniform01(rng);
    for (std::size_t i = 0; i < 4; ++i) m[i * 5] = 1;
    double last_gap = -1;
    for (double tau : {1.0, 0.5, 0.2, 0.07, 0.03}) {
      const double gap = std::log(4.0) - nce(block(4, s, m, tau));
      CHECK(gap > last_gap);
      last_gap = gap;
    }
  }
}
