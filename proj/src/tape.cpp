#include "sahgnn/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>

#include "sahgnn/kernels.hpp"

namespace sahgnn::ad {

namespace testing {
namespace {
std::mutex g_fault_mutex;
std::string g_fault_op;
std::atomic<bool> g_fault_set{false};
}  // namespace

void inject_backward_fault(std::string_view op) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = std::string(op);
  g_fault_set.store(!op.empty());
}

bool backward_fault_active(std::string_view op) {
  if (!g_fault_set.load()) return false;
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op == op;
}
}  // namespace testing

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

const Tensor& BackwardContext::input(std::size_t i) const { return tape_.nodes_[inputs_[i]].value; }

bool BackwardContext::needs_grad(std::size_t i) const {
  return tape_.nodes_[inputs_[i]].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t i) { return tape_.grad_buffer(inputs_[i]); }

Tape::Scope::Scope(Tape& tape, std::string label) : tape_(tape) {
  tape_.scopes_.push_back(std::move(label));
}
Tape::Scope::~Scope() { tape_.scopes_.pop_back(); }

std::string Tape::current_scope() const {
  std::string out;
  for (const auto& s : scopes_) {
    if (!out.empty()) out += '/';
    out += s;
  }
  return out;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite parameter value in " + current_scope());
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant in " + current_scope());
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    const std::string scope = current_scope();
    throw NumericError("non-finite output from op '" + std::string(op) + "'" +
                       (scope.empty() ? std::string() : " in " + scope));
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw std::logic_error("operand recorded on a different tape");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) throw std::logic_error("backward() already ran on this tape");
  if (loss.value().size() != 1) throw ShapeError("backward() needs a scalar loss");
  backward_done_ = true;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    BackwardContext ctx(*this, n.inputs, n.value, n.grad);
    n.backward(ctx);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.rows(), n.value.cols());
}

// ---------------------------------------------------------------------------

namespace {

Tape& common_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands on different tapes");
  return a.tape();
}

enum class Broadcast { same, scalar_left, scalar_right };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::same;
  if (a.size() == 1) return Broadcast::scalar_left;
  if (b.size() == 1) return Broadcast::scalar_right;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

double sum_values(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc;
}

template <typename Fn>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast kind, Fn fn) {
  const Tensor& shape = kind == Broadcast::scalar_left ? b : a;
  Tensor out(shape.rows(), shape.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Broadcast::scalar_left ? a[0] : a[i];
    const double y = kind == Broadcast::scalar_right ? b[0] : b[i];
    out[i] = fn(x, y);
  }
  return out;
}

// Adds `contribution` (shaped like the broadcast result) into the gradient of
// an operand that may have been a broadcast scalar.
void accumulate(Tensor& target, const Tensor& contribution) {
  if (target.same_shape(contribution)) {
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += contribution[i];
  } else {
    target[0] += sum_values(contribution.values());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ " + av.shape_string() + " * " + bv.shape_string());
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(m, n);
  kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  return tape.record("matmul", std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    if (ctx.needs_grad(0))  // dL/dA = G * B^T
      kernels::gemm_nt(m, k, n, g.data(), ctx.input(1).data(), ctx.input_grad(0).data());
    if (ctx.needs_grad(1))  // dL/dB = A^T * G
      kernels::gemm_tn(k, n, m, ctx.input(0).data(), g.data(), ctx.input_grad(1).data());
  });
}

Var transpose(Var a) {
  return a.tape().record("transpose", a.value().transposed(), {a}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    Tensor& ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
  });
}

Var tanh(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
  return a.tape().record("tanh", std::move(out), {a}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& y = ctx.output();
    Tensor& ga = ctx.input_grad(0);
    const double fault = testing::backward_fault_active("tanh") ? 1.5 : 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += fault * g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return a.tape().record("relu", std::move(out), {a}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& x = ctx.input(0);
    Tensor& ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "add");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x + y; });
  return tape.record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) accumulate(ctx.input_grad(0), ctx.grad_output());
    if (ctx.needs_grad(1)) accumulate(ctx.input_grad(1), ctx.grad_output());
  });
}

Var sub(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "sub");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x - y; });
  return tape.record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    if (ctx.needs_grad(0)) accumulate(ctx.input_grad(0), g);
    if (ctx.needs_grad(1)) {
      Tensor neg = g;
      for (double& v : neg.values()) v = -v;
      accumulate(ctx.input_grad(1), neg);
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "mul");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x * y; });
  return tape.record("mul", std::move(out), {a, b}, [kind](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& av = ctx.input(0);
    const Tensor& bv = ctx.input(1);
    if (ctx.needs_grad(0))
      accumulate(ctx.input_grad(0), zip(g, bv, kind == Broadcast::scalar_right ? kind : Broadcast::same,
                                        [](double x, double y) { return x * y; }));
    if (ctx.needs_grad(1))
      accumulate(ctx.input_grad(1), zip(g, av, kind == Broadcast::scalar_left ? Broadcast::scalar_right : Broadcast::same,
                                        [](double x, double y) { return x * y; }));
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return a.tape().record("scale", std::move(out), {a}, [factor](BackwardContext& ctx) {
    kernels::axpy(ctx.grad_output().size(), factor, ctx.grad_output().data(), ctx.input_grad(0).data());
  });
}

Var add_bias(Var a, Var bias) {
  Tape& tape = common_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw ShapeError("add_bias: bias " + bv.shape_string() + " does not fit " + av.shape_string());
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return tape.record("add_bias", std::move(out), {a, bias}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    if (ctx.needs_grad(0)) accumulate(ctx.input_grad(0), g);
    if (ctx.needs_grad(1)) {
      Tensor& gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
    }
  });
}

Var row_softmax(Var a) {
  const Tensor& av = a.value();
  if (!av.all_finite()) throw NumericError("row_softmax: non-finite input");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto in = av.row(i);
    auto o = out.row(i);
    const double mx = in.empty() ? 0.0 : *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return a.tape().record("row_softmax", std::move(out), {a}, [](BackwardContext& ctx) {
    // dx_j = y_j * (g_j - sum_l g_l y_l), per row
    const Tensor& g = ctx.grad_output();
    const Tensor& y = ctx.output();
    Tensor& ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double inner = kernels::scalar_table().dot(y.cols(), g.row(i).data(), y.row(i).data());
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - inner);
    }
  });
}

Var sum(Var a) {
  return a.tape().record("sum", Tensor::scalar(sum_values(a.value().values())), {a},
                         [](BackwardContext& ctx) {
                           const double g = ctx.grad_output()[0];
                           for (double& v : ctx.input_grad(0).values()) v += g;
                         });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return a.tape().record("mean", Tensor::scalar(sum_values(a.value().values()) / static_cast<double>(n)),
                         {a}, [n](BackwardContext& ctx) {
                           const double g = ctx.grad_output()[0] / static_cast<double>(n);
                           for (double& v : ctx.input_grad(0).values()) v += g;
                         });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) out[i] = sum_values(av.row(i));
  return a.tape().record("row_sum", std::move(out), {a}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    Tensor& ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[i];
  });
}

Var concat_cols(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows())
    throw ShapeError("concat_cols: row counts differ " + av.shape_string() + " vs " + bv.shape_string());
  const std::size_t p = av.cols(), q = bv.cols();
  Tensor out(av.rows(), p + q);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy(av.row(i).begin(), av.row(i).end(), out.row(i).begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(p));
  }
  return tape.record("concat_cols", std::move(out), {a, b}, [p, q](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (ctx.needs_grad(0)) {
        Tensor& ga = ctx.input_grad(0);
        for (std::size_t j = 0; j < p; ++j) ga(i, j) += g(i, j);
      }
      if (ctx.needs_grad(1)) {
        Tensor& gb = ctx.input_grad(1);
        for (std::size_t j = 0; j < q; ++j) gb(i, j) += g(i, p + j);
      }
    }
  });
}

}  // namespace sahgnn::ad
