#include "sahgnn/adjacency.hpp"

#include <cmath>
#include <stdexcept>

#include "sahgnn/init.hpp"

namespace sahgnn::adj {

AdjacencyLearner make_learner(std::size_t f_dynamic, std::size_t d, std::size_t k, Rng& rng) {
  if (f_dynamic == 0 || d == 0) throw std::invalid_argument("adjacency learner needs F_d >= 1 and d >= 1");
  AdjacencyLearner l;
  l.w1 = glorot_uniform(f_dynamic, d, rng);
  l.w2 = glorot_uniform(f_dynamic, d, rng);
  l.d = d;
  l.k = k;
  return l;
}

ad::Var adjacency_scores(ad::Var x, ad::Var w1, ad::Var w2) {
  ad::Tape::Scope scope(x.tape(), "adjacency");
  const ad::Var left = ad::tanh(ad::matmul(x, w1));
  const ad::Var right = ad::tanh(ad::matmul(x, w2));
  return ad::row_softmax(ad::matmul(left, ad::transpose(right)));
}

Tensor binarize(const Tensor& scores, std::size_t k) { return graph::top_k_largest(scores, k); }

LearnedGraph learn_adjacency(const AdjacencyLearner& learner, const Tensor& x) {
  if (learner.k >= x.rows())
    throw std::invalid_argument("learn_adjacency: k=" + std::to_string(learner.k) + " must be below N=" +
                                std::to_string(x.rows()));
  ad::Tape tape;
  const ad::Var s = adjacency_scores(tape.constant(x), tape.constant(learner.w1), tape.constant(learner.w2));
  LearnedGraph g;
  g.scores = s.value();
  g.binary = binarize(g.scores, learner.k);
  g.k = learner.k;
  return g;
}

ad::Var adjacency_loss(ad::Var scores, const graph::Graph& prior) {
  if (!scores.value().same_shape(prior.adjacency))
    throw ShapeError("adjacency_loss: scores " + scores.value().shape_string() + " vs prior " +
                     prior.adjacency.shape_string());
  ad::Tape& tape = scores.tape();
  const ad::Var diff = ad::sub(tape.constant(prior.adjacency), scores);
  return ad::mean(ad::mul(diff, diff));
}

double adjacency_loss(const Tensor& scores, const graph::Graph& prior) {
  ad::Tape tape;
  return adjacency_loss(tape.constant(scores), prior).value().item();
}

ad::Var normalize_for_gcn(ad::Var a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw ShapeError("normalize_for_gcn: adjacency must be square");
  const std::size_t n = av.rows();
  std::vector<double> degree(n, 1.0), s(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) degree[i] += av(i, j);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(degree[i] > 0.0)) throw NumericError("normalize_for_gcn: non-positive degree at node " + std::to_string(i));
    s[i] = 1.0 / std::sqrt(degree[i]);
  }
  Tensor out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = (av(i, j) + (i == j ? 1.0 : 0.0)) * s[i] * s[j];
  return a.tape().record("normalize_for_gcn", std::move(out), {a}, [degree, s](ad::BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& av = ctx.input(0);
    const std::size_t n = av.rows();
    // Output (i, l) depends on A_il directly and on every A_i* and A_l*
    // through the degrees.
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) {
        const double ail = av(i, l) + (i == l ? 1.0 : 0.0);
        const double ali = av(l, i) + (i == l ? 1.0 : 0.0);
        acc += g(i, l) * ail * s[l] + g(l, i) * ali * s[l];
      }
      c[i] = -0.5 * s[i] / degree[i] * acc;
    }
    Tensor& ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(i, j) * s[i] * s[j] + c[i];
  });
}

}  // namespace sahgnn::adj
