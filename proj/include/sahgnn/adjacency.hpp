#pragma once

// Event-specific graph learning: a bilinear score matrix over locations,
// its top-k sparsification, and the alignment penalty against a prior.

#include <cstddef>

#include "sahgnn/graph.hpp"
#include "sahgnn/rng.hpp"
#include "sahgnn/tape.hpp"

namespace sahgnn::adj {

struct AdjacencyLearner {
  Tensor w1;  // F_d x d
  Tensor w2;  // F_d x d
  std::size_t d = 16;
  std::size_t k = 8;
};

/// Glorot-uniform W1, W2.
AdjacencyLearner make_learner(std::size_t f_dynamic, std::size_t d, std::size_t k, Rng& rng);

struct LearnedGraph {
  Tensor scores;  // N x N, rows sum to 1
  Tensor binary;  // N x N, k ones per row, zero diagonal
  std::size_t k = 0;
};

/// row_softmax(tanh(X W1) tanh(X W2)^T) on the tape.
ad::Var adjacency_scores(ad::Var x, ad::Var w1, ad::Var w2);

/// Top-k per row of the scores with the diagonal excluded. Not differentiable.
Tensor binarize(const Tensor& scores, std::size_t k);

/// Value-only evaluation. Throws std::invalid_argument when k >= N.
LearnedGraph learn_adjacency(const AdjacencyLearner& learner, const Tensor& x_dynamic);

/// mean((prior - scores)^2) over all N^2 entries.
ad::Var adjacency_loss(ad::Var scores, const graph::Graph& prior);
double adjacency_loss(const Tensor& scores, const graph::Graph& prior);

/// D^-1/2 (A + I) D^-1/2 as a differentiable op, for weighted adjacencies
/// that depend on parameters.
ad::Var normalize_for_gcn(ad::Var adjacency);

}  // namespace sahgnn::adj
