#include "sahgnn/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sahgnn::contrastive {
namespace {

constexpr double kNormFloor = 1e-12;

// First `count` entries of a uniform shuffle of `pool` (partial Fisher-Yates).
template <typename T>
std::vector<T> draw(std::vector<T> pool, std::size_t count, Rng& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::size_t ContrastiveBatch::pair_count() const {
  std::size_t n = 0;
  for (const auto& a : anchors) n += a.positives.size();
  return n;
}

ContrastiveBatch sample_pairs(std::span<const Tensor> binary, std::span<const std::size_t> anchor_events,
                              const SamplingConfig& config, double temperature, Rng& rng) {
  if (binary.size() < 2) throw std::invalid_argument("sample_pairs: need at least two events in the pool");
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_pairs: temperature must be positive");
  ContrastiveBatch batch;
  batch.temperature = temperature;
  for (std::size_t e : anchor_events) {
    if (e >= binary.size()) throw std::out_of_range("sample_pairs: anchor event outside the pool");
    const Tensor& g = binary[e];
    const std::size_t n = g.rows();
    std::vector<std::size_t> nodes(n);
    std::iota(nodes.begin(), nodes.end(), 0);
    for (std::size_t a : draw(nodes, config.anchors_per_event, rng)) {
      std::vector<std::size_t> nbr, non;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a) continue;
        (g(a, j) != 0.0 ? nbr : non).push_back(j);
      }
      if (nbr.empty()) {
        ++batch.skipped_isolated;
        continue;
      }
      AnchorSample s;
      s.anchor = {e, a};
      s.positives = draw(std::move(nbr), config.positives_per_anchor, rng);
      s.intra_negatives = draw(std::move(non), config.intra_negatives_per_anchor, rng);
      std::vector<NodeRef> others;
      for (std::size_t o = 0; o < binary.size(); ++o)
        if (o != e)
          for (std::size_t j = 0; j < binary[o].rows(); ++j) others.push_back({o, j});
      s.inter_negatives = draw(std::move(others), config.inter_negatives_per_anchor, rng);
      batch.anchors.push_back(std::move(s));
    }
  }
  return batch;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (std::max(norm(a), kNormFloor) * std::max(norm(b), kNormFloor));
}

ad::Var contrastive_loss(std::span<const ad::Var> embeddings, const ContrastiveBatch& batch) {
  if (embeddings.empty()) throw std::invalid_argument("contrastive_loss: no embeddings");
  const std::size_t pairs = batch.pair_count();
  if (pairs == 0) throw std::invalid_argument("contrastive_loss: batch has no (anchor, positive) pairs");
  const double tau = batch.temperature;
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  const std::size_t dim = embeddings[0].value().cols();
  for (const auto& e : embeddings)
    if (e.value().cols() != dim) throw ShapeError("contrastive_loss: embedding widths differ");
  auto row = [&](const NodeRef& r) {
    if (r.event >= embeddings.size() || r.node >= embeddings[r.event].value().rows())
      throw std::out_of_range("contrastive_loss: reference outside the embeddings");
    return embeddings[r.event].value().row(r.node);
  };

  // Denominator set per anchor, shared by all of its positives.
  struct Term {
    NodeRef anchor;
    std::vector<NodeRef> denom;
    std::vector<double> sims;
    std::size_t n_pos;
  };
  std::vector<Term> terms;
  double total = 0.0;
  for (const auto& a : batch.anchors) {
    Term t{a.anchor, {}, {}, a.positives.size()};
    for (std::size_t p : a.positives) t.denom.push_back({a.anchor.event, p});
    for (std::size_t q : a.intra_negatives) t.denom.push_back({a.anchor.event, q});
    for (const auto& r : a.inter_negatives) t.denom.push_back(r);
    const auto za = row(a.anchor);
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& r : t.denom) {
      t.sims.push_back(cosine_similarity(za, row(r)));
      mx = std::max(mx, t.sims.back() / tau);
    }
    double lse = 0.0;
    for (double s : t.sims) lse += std::exp(s / tau - mx);
    lse = mx + std::log(lse);
    for (std::size_t p = 0; p < t.n_pos; ++p) total += lse - t.sims[p] / tau;
    terms.push_back(std::move(t));
  }
  const double value = total / static_cast<double>(pairs);

  std::vector<ad::Var> inputs(embeddings.begin(), embeddings.end());
  ad::Tape& tape = inputs.front().tape();
  return tape.record("contrastive_loss", Tensor::scalar(value), inputs, [terms, tau, pairs](ad::BackwardContext& ctx) {
    const double g = ctx.grad_output().item() / static_cast<double>(pairs);
    auto vec = [&](const NodeRef& r) { return ctx.input(r.event).row(r.node); };
    // d sim(x, y) / d x = (u_y - sim u_x) / |x| for |x| above the floor,
    // u_y / floor otherwise.
    auto accumulate = [&](const NodeRef& x, const NodeRef& y, double sim, double coeff) {
      if (!ctx.needs_grad(x.event)) return;
      const auto vx = vec(x), vy = vec(y);
      const double nx = norm(vx), ny = std::max(norm(vy), kNormFloor);
      const double nxf = std::max(nx, kNormFloor);
      auto out = ctx.input_grad(x.event).row(x.node);
      for (std::size_t i = 0; i < vx.size(); ++i) {
        double d = vy[i] / (ny * nxf);
        if (nx > kNormFloor) d -= sim * vx[i] / (nx * nx);
        out[i] += coeff * d;
      }
    };
    for (const auto& t : terms) {
      double mx = -std::numeric_limits<double>::infinity();
      for (double s : t.sims) mx = std::max(mx, s / tau);
      std::vector<double> w(t.sims.size());
      double z = 0.0;
      for (std::size_t l = 0; l < w.size(); ++l) z += (w[l] = std::exp(t.sims[l] / tau - mx));
      for (double& x : w) x /= z;
      for (std::size_t l = 0; l < t.denom.size(); ++l) {
        // Each positive contributes softmax weight w_l; the positive's own
        // numerator contributes -1.
        double dsim = static_cast<double>(t.n_pos) * w[l];
        if (l < t.n_pos) dsim -= 1.0;
        const double coeff = g * dsim / tau;
        if (coeff == 0.0) continue;
        accumulate(t.anchor, t.denom[l], t.sims[l], coeff);
        accumulate(t.denom[l], t.anchor, t.sims[l], coeff);
      }
    }
  });
}

double contrastive_loss(std::span<const Tensor> embeddings, const ContrastiveBatch& batch) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& e : embeddings) vars.push_back(tape.constant(e));
  return contrastive_loss(vars, batch).value().item();
}

}  // namespace sahgnn::contrastive
