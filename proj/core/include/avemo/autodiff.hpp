#pragma once

#include <functional>
#include <span>
#include <vector>

#include "avemo/tensor.hpp"

namespace avemo {

class Tape;

/// Handle into a Tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& val() const;
};

/// Reverse-mode tape over Tensor-valued ops. Nodes are appended in
/// topological order during the forward pass; backward() walks them in
/// reverse. Gradients accumulate additively when a node has several
/// consumers. Single-threaded per graph.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Elementwise / structural.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_const(Var a, const Tensor& c);  // c is not differentiated
  Var add_rowvec(Var x, Var b);           // x: [n,d], b: [d]
  Var transpose(Var a);
  Var matmul(Var a, Var b);
  Var slice_cols(Var a, int c0, int c1);  // [n, c1-c0)
  Var slice_rows(Var a, int r0, int r1);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var gather_rows(Var table, std::vector<int> idx);
  Var reshape(Var a, std::vector<int> shape);

  // Nonlinearities & norms.
  Var gelu(Var x);  // tanh approximation, see gelu_scalar
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var softmax_rows(Var x, double temperature);

  // Rotary positions: rows of x are per-position vectors split into
  // n_heads heads; pairs within each head are rotated by pos-dependent
  // angles. Linear in x.
  Var rope(Var x, const std::vector<int>& positions, int n_heads, double base);

  // Reductions & losses (all produce scalar [1] unless noted).
  Var sum(Var a);
  Var mean_pool(Var x);  // [L,d] -> [d]
  Var sum_sq(Var a);     // sum of squares
  Var soft_cross_entropy(const Tensor& target_probs, Var logits,
                         double temperature);
  Var cross_entropy_rows(Var logits, const std::vector<int>& targets);

  void backward(Var loss);
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const;
  size_t size() const { return nodes_.size(); }

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&, int)> backfn;  // (tape, own id)
  };

  std::vector<Node> nodes_;

  int push(Tensor value, bool requires_grad,
           std::function<void(Tape&, int)> backfn);
  Tensor& grad_ref(int id);
  void check_finite(const Tensor& t, const char* op) const;

  friend struct Var;
};

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

inline const Tensor& Var::val() const { return tape->value(id); }

}  // namespace avemo
