#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "sahgnn/contrastive.hpp"
#include "test_util.hpp"

using namespace sahgnn;
using namespace sahgnn::contrastive;

namespace {

double cos_oracle(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    dot += a(i, c) * b(j, c);
    na += a(i, c) * a(i, c);
    nb += b(j, c) * b(j, c);
  }
  return dot / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
}

// Direct evaluation of the loss definition.
double loss_oracle(const std::vector<Tensor>& emb, const ContrastiveBatch& batch) {
  double total = 0;
  std::size_t pairs = 0;
  const double t = batch.temperature;
  for (const auto& a : batch.anchors) {
    const Tensor& ea = emb[a.anchor.event];
    double denom = 0;
    for (std::size_t p : a.positives) denom += std::exp(cos_oracle(ea, a.anchor.node, ea, p) / t);
    for (std::size_t q : a.intra_negatives) denom += std::exp(cos_oracle(ea, a.anchor.node, ea, q) / t);
    for (const auto& r : a.inter_negatives) denom += std::exp(cos_oracle(ea, a.anchor.node, emb[r.event], r.node) / t);
    for (std::size_t p : a.positives) {
      total += -(cos_oracle(ea, a.anchor.node, ea, p) / t - std::log(denom));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

ContrastiveBatch single_anchor(std::vector<std::size_t> pos, std::vector<std::size_t> intra,
                               std::vector<NodeRef> inter, double tau) {
  ContrastiveBatch b;
  b.temperature = tau;
  b.anchors.push_back({{0, 0}, std::move(pos), std::move(intra), std::move(inter)});
  return b;
}

}  // namespace

TEST_CASE("equal similarities with one positive and one negative give ln 2") {
  // Anchor at 45 degrees between positive and negative.
  std::vector<Tensor> emb{Tensor::from_rows({{1, 1}, {1, 0}, {0, 1}}), Tensor::from_rows({{0, 0}})};
  for (double tau : {0.1, 0.5, 2.0}) {
    const ContrastiveBatch b = single_anchor({1}, {2}, {}, tau);
    CHECK(std::abs(contrastive_loss(emb, b) - std::log(2.0)) < 1e-9);
  }
}

TEST_CASE("aligned positive and opposite negative") {
  std::vector<Tensor> emb{Tensor::from_rows({{1, 0}, {2, 0}, {-1, 0}}), Tensor::from_rows({{0, 1}})};
  const ContrastiveBatch b = single_anchor({1}, {2}, {}, 0.5);
  const double expect = -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(-2.0)));
  CHECK(std::abs(contrastive_loss(emb, b) - expect) < 1e-12);
  CHECK(std::abs(expect - 0.01815) < 1e-5);
}

TEST_CASE("large temperature tends to the log of the denominator size") {
  std::mt19937_64 rng(1);
  std::vector<Tensor> emb{testutil::random_tensor(10, 4, rng), testutil::random_tensor(10, 4, rng)};
  const ContrastiveBatch b =
      single_anchor({1}, {2, 3, 4, 5}, {{1, 0}, {1, 3}, {1, 7}, {1, 9}}, 1e6);
  CHECK(std::abs(contrastive_loss(emb, b) - std::log(9.0)) < 1e-3);
}

TEST_CASE("moving the anchor toward its positive lowers the loss") {
  // Negatives orthogonal to the plane of motion so only s_ap changes.
  std::vector<Tensor> emb{Tensor::from_rows({{1, 0, 0}, {0.6, 0.8, 0}, {0, 0, 1}, {0, 0, -1}}),
                          Tensor::from_rows({{0, 0, 1}})};
  const ContrastiveBatch b = single_anchor({1}, {2, 3}, {{1, 0}}, 0.5);
  const double before = contrastive_loss(emb, b);
  for (std::size_t c = 0; c < 3; ++c) emb[0](0, c) += 0.01 * (emb[0](1, c) - emb[0](0, c));
  CHECK(contrastive_loss(emb, b) < before);
  CHECK(loss_oracle(emb, b) == doctest::Approx(contrastive_loss(emb, b)).epsilon(1e-12));
}

TEST_CASE("loss matches the direct definition on random batches") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> emb{testutil::random_tensor(12, 5, rng), testutil::random_tensor(12, 5, rng)};
    std::vector<Tensor> binary{Tensor(12, 12), Tensor(12, 12)};
    for (auto& g : binary)
      for (std::size_t i = 0; i < 12; ++i) g(i, (i + 1 + trial % 5) % 12) = g(i, (i + 7) % 12) = 1.0;
    Rng r = make_rng(static_cast<std::uint64_t>(trial), "test");
    const std::vector<std::size_t> anchor_events{0, 1};
    const ContrastiveBatch b = sample_pairs(binary, anchor_events, {5, 1, 3, 3}, 0.3 + 0.1 * trial, r);
    CHECK(contrastive_loss(emb, b) == doctest::Approx(loss_oracle(emb, b)).epsilon(1e-12));
  }
}

TEST_CASE("loss is invariant to positive rescaling of embedding rows") {
  std::mt19937_64 rng(4);
  std::vector<Tensor> emb{testutil::random_tensor(6, 3, rng), testutil::random_tensor(6, 3, rng)};
  const ContrastiveBatch b = single_anchor({1, 2}, {3, 4}, {{1, 1}, {1, 5}}, 0.5);
  const double base = contrastive_loss(emb, b);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (auto& e : emb)
    for (std::size_t i = 0; i < e.rows(); ++i) {
      const double s = scale(rng);
      for (std::size_t c = 0; c < e.cols(); ++c) e(i, c) *= s;
    }
  CHECK(contrastive_loss(emb, b) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1, 0}, b{0, 2}, c{-3, 0}, z{0, 0};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(a, z) == 0.0);
}

TEST_CASE("tape gradient matches finite differences") {
  std::mt19937_64 rng(5);
  const Tensor e0 = testutil::random_tensor(6, 3, rng), e1 = testutil::random_tensor(6, 3, rng);
  ContrastiveBatch b = single_anchor({1, 2}, {3, 4}, {{1, 0}, {1, 2}, {1, 5}}, 0.4);
  b.anchors.push_back({{1, 3}, {4}, {0, 1}, {{0, 5}, {0, 0}}});
  auto through_e0 = [&](ad::Tape& t, ad::Var v) {
    const std::vector<ad::Var> pool{v, t.constant(e1)};
    return contrastive_loss(pool, b);
  };
  auto through_e1 = [&](ad::Tape& t, ad::Var v) {
    const std::vector<ad::Var> pool{t.constant(e0), v};
    return contrastive_loss(pool, b);
  };
  CHECK(testutil::max_rel_error(testutil::tape_gradient(through_e0, e0), testutil::central_difference(through_e0, e0)) <
        1e-6);
  CHECK(testutil::max_rel_error(testutil::tape_gradient(through_e1, e1), testutil::central_difference(through_e1, e1)) <
        1e-6);
}

TEST_CASE("batch without pairs is rejected") {
  std::vector<Tensor> emb{Tensor(3, 2, 1.0)};
  ContrastiveBatch b;
  CHECK_THROWS_AS(contrastive_loss(emb, b), std::invalid_argument);
}

TEST_CASE("sampler draws from the right sets") {
  std::mt19937_64 rng(6);
  std::vector<Tensor> binary(3, Tensor(15, 15));
  std::bernoulli_distribution edge(0.3);
  for (auto& g : binary)
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t j = 0; j < 15; ++j)
        if (i != j && edge(rng)) g(i, j) = 1.0;
  Rng r = make_rng(9, "test");
  const std::vector<std::size_t> anchor_events{0, 2};
  const ContrastiveBatch b = sample_pairs(binary, anchor_events, {10, 2, 3, 4}, 0.5, r);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& a : b.anchors) {
    const std::size_t ev = a.anchor.event, i = a.anchor.node;
    CHECK((ev == 0 || ev == 2));
    CHECK(seen.insert({ev, i}).second);
    const Tensor& g = binary[ev];
    for (std::size_t p : a.positives) CHECK(g(i, p) == 1.0);
    for (std::size_t q : a.intra_negatives) {
      CHECK(g(i, q) == 0.0);
      CHECK(q != i);
    }
    for (const auto& n : a.inter_negatives) {
      CHECK(n.event != ev);
      CHECK(n.node < 15);
    }
    CHECK(a.inter_negatives.size() == 4);
    CHECK(a.positives.size() <= 2);
    CHECK(std::set<std::size_t>(a.positives.begin(), a.positives.end()).size() == a.positives.size());
  }
  CHECK(b.anchors.size() + b.skipped_isolated == 20);
}

TEST_CASE("sampler is deterministic for a seed") {
  std::vector<Tensor> binary(2, Tensor(8, 8));
  for (auto& g : binary)
    for (std::size_t i = 0; i < 8; ++i) g(i, (i + 1) % 8) = g(i, (i + 3) % 8) = 1.0;
  const std::vector<std::size_t> ev{0};
  Rng r1 = make_rng(5, "x"), r2 = make_rng(5, "x"), r3 = make_rng(6, "x");
  const auto a = sample_pairs(binary, ev, {}, 0.5, r1);
  const auto b = sample_pairs(binary, ev, {}, 0.5, r2);
  const auto c = sample_pairs(binary, ev, {}, 0.5, r3);
  CHECK(a.anchors == b.anchors);
  CHECK(a.anchors != c.anchors);
}

TEST_CASE("full neighbourhood leaves no intra negatives; isolated anchors are skipped") {
  std::vector<Tensor> binary{Tensor(4, 4, 1.0), Tensor(4, 4)};
  for (std::size_t i = 0; i < 4; ++i) binary[0](i, i) = 0.0;
  Rng r = make_rng(1, "x");
  const std::vector<std::size_t> both{0, 1};
  const auto b = sample_pairs(binary, both, {4, 1, 4, 2}, 0.5, r);
  CHECK(b.skipped_isolated == 4);
  CHECK(b.anchors.size() == 4);
  for (const auto& a : b.anchors) {
    CHECK(a.anchor.event == 0);
    CHECK(a.intra_negatives.empty());
  }
}

TEST_CASE("sampler input checks") {
  std::vector<Tensor> one{Tensor(4, 4)};
  Rng r = make_rng(1, "x");
  const std::vector<std::size_t> ev{0};
  CHECK_THROWS_AS(sample_pairs(one, ev, {}, 0.5, r), std::invalid_argument);
  std::vector<Tensor> two{Tensor(4, 4), Tensor(4, 4)};
  CHECK_THROWS_AS(sample_pairs(two, ev, {}, 0.0, r), std::invalid_argument);
}
