#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records each operation as it is evaluated. Nodes are appended in
// evaluation order, so the sequence is already topological; backward() walks
// it once in reverse. A tape is rebuilt for every forward pass and must stay
// on the thread that created it.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "sahgnn/tensor.hpp"

namespace sahgnn::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// View handed to a backward rule: the upstream gradient plus lazily
/// zero-initialised gradient buffers for each input.
class BackwardContext {
 public:
  const Tensor& grad_output() const { return *grad_out_; }
  const Tensor& output() const { return *output_; }
  const Tensor& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  Tensor& input_grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, const std::vector<std::size_t>& inputs, const Tensor& output,
                  const Tensor& grad_out)
      : tape_(tape), inputs_(inputs), output_(&output), grad_out_(&grad_out) {}

  Tape& tape_;
  const std::vector<std::size_t>& inputs_;
  const Tensor* output_;
  const Tensor* grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var parameter(Tensor value);
  /// Leaf treated as a constant.
  Var constant(Tensor value);

  /// Append an operation result. The value must be finite; a NumericError
  /// naming the op and current scope is thrown otherwise. The backward rule
  /// is dropped when no input requires a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Seed d(loss)/d(loss) = 1 and propagate. loss must be 1 x 1. May be
  /// called once per tape.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  /// Gradient accumulated by backward(); zeros when the node was unreached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Label prefixed to numeric errors raised while it is alive.
  class Scope {
   public:
    Scope(Tape& tape, std::string label);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
  };
  std::string current_scope() const;

 private:
  friend class BackwardContext;

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(Node node);
  Tensor& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;
  std::vector<std::string> scopes_;
  bool backward_done_ = false;
};

// Operations. All inputs must live on the same tape.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var tanh(Var a);
/// relu'(0) is taken as 0.
Var relu(Var a);
/// Same-shape or scalar-with-tensor broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a(m x n) + bias(1 x n) added to every row.
Var add_bias(Var a, Var bias);
/// Per-row softmax with max subtraction.
Var row_softmax(Var a);
Var sum(Var a);
/// Throws ShapeError on an empty tensor.
Var mean(Var a);
/// m x n -> m x 1
Var row_sum(Var a);
Var concat_cols(Var a, Var b);

namespace testing {
/// Corrupt the backward rule of a named op ("tanh") so verification
/// tooling can be shown to catch it. Empty string clears.
void inject_backward_fault(std::string_view op);
bool backward_fault_active(std::string_view op);
}  // namespace testing

}  // namespace sahgnn::ad
