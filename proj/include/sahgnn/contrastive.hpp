#pragma once

// Intra/inter-event pair sampling and the temperature-scaled contrastive
// objective over cosine similarities of location embeddings.

#include <cstddef>
#include <span>
#include <vector>

#include "sahgnn/rng.hpp"
#include "sahgnn/tape.hpp"

namespace sahgnn::contrastive {

struct SamplingConfig {
  std::size_t anchors_per_event = 64;  // capped at N
  std::size_t positives_per_anchor = 1;
  std::size_t intra_negatives_per_anchor = 4;
  std::size_t inter_negatives_per_anchor = 4;
};

struct NodeRef {
  std::size_t event = 0;  // index into the event pool
  std::size_t node = 0;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct AnchorSample {
  NodeRef anchor;
  std::vector<std::size_t> positives;        // nodes of the anchor's event
  std::vector<std::size_t> intra_negatives;  // nodes of the anchor's event
  std::vector<NodeRef> inter_negatives;      // nodes of other events
  friend bool operator==(const AnchorSample&, const AnchorSample&) = default;
};

struct ContrastiveBatch {
  std::vector<AnchorSample> anchors;
  double temperature = 0.5;
  std::size_t skipped_isolated = 0;
  std::size_t pair_count() const;
};

/// Draws anchors (uniformly, without replacement) from each listed event of
/// the pool, positives among each anchor's neighbours in that event's binary
/// graph row, intra-event negatives among its non-neighbours (self
/// excluded), and inter-event negatives uniformly over (other event, node).
/// Anchors without neighbours are skipped and counted. Throws
/// std::invalid_argument for a pool of fewer than two events or a
/// non-positive temperature.
ContrastiveBatch sample_pairs(std::span<const Tensor> binary, std::span<const std::size_t> anchor_events,
                              const SamplingConfig& config, double temperature, Rng& rng);

/// Cosine similarity with each norm floored at 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Mean over (anchor, positive) pairs of
///   -log( exp(s_ap / t) / sum_{l in P u N_intra u N_inter} exp(s_al / t) ).
/// embeddings[e] holds the rows of pool event e. Differentiable wrt every
/// embedding input. Throws std::invalid_argument when the batch has no pairs.
ad::Var contrastive_loss(std::span<const ad::Var> embeddings, const ContrastiveBatch& batch);
double contrastive_loss(std::span<const Tensor> embeddings, const ContrastiveBatch& batch);

}  // namespace sahgnn::contrastive
