#pragma once

#include <functional>
#include <string>
#include <vector>

#include "recon/tensor.hpp"

namespace recon {

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
};

class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks them once in reverse
// and accumulates gradients additively.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::string name;
    std::function<void(Tape&, int)> backward;
  };

  // When true (default) every produced value is scanned for NaN/Inf and a
  // NonFiniteError naming the node is thrown.
  bool check_finite = true;

  int push(Tensor value, std::string name, bool needs_grad,
           std::function<void(Tape&, int)> backward);

  Var leaf(Tensor value, std::string name);       // differentiable input
  Var constant(Tensor value, std::string name = "const");  // gradient stops here

  const Tensor& val(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  Tensor& grad(int id);
  bool node_has_grad(int id) const { return nodes_[id].has_grad; }
  void accumulate(int id, const Tensor& g);
  // Accumulates `g` scaled elementwise; used by ops with diagonal Jacobians.
  std::size_t num_nodes() const { return nodes_.size(); }
  const std::string& node_name(int id) const { return nodes_[id].name; }

  // Runs reverse-mode accumulation from `loss` (must be a single scalar).
  void backward(Var loss);

  const Tensor* grad_of(Var v) const;

 private:
  std::vector<Node> nodes_;
};

// ---- primitive operations -------------------------------------------------

Var add(Var a, Var b);                    // same shape
Var add_rowvec(Var a, Var b);             // a: [N,C], b: [C] or [1,C]
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);                    // elementwise, same shape
Var mul_scalarv(Var a, Var s);            // s: single element
Var mul_colvec(Var a, Var c);             // a: [N,C], c: [N,1]
Var vdiv(Var a, Var b);                   // elementwise
Var scale(Var a, double c);
Var offset(Var a, double c);
Var matmul(Var a, Var b);
Var softplus(Var a, double sharpness = 1.0);
Var sigmoid(Var a);
Var vexp(Var a);
Var vlog(Var a);
Var vsqrt(Var a);
Var vsin(Var a);
Var vcos(Var a);
Var vabs(Var a);
Var clampv(Var a, double lo, double hi);  // zero gradient outside [lo,hi]
Var sum_all(Var a);                       // -> [1]
Var mean_all(Var a);                      // -> [1]; empty input sums to 0
Var row_sum(Var a);                       // [N,C] -> [N,1]
Var block_sum_rows(Var a, std::size_t block);   // [R*B,C] -> [R,C]
Var repeat_rows(Var a, std::size_t n);          // [C] or [1,C] -> [N,C]
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(Var a, std::size_t c0, std::size_t c1);
Var concat_rows(const std::vector<Var>& xs);
Var reshape(Var a, std::vector<std::size_t> shape);
Var cumsum_exclusive_rows(Var a);         // per-row prefix sums, exclusive
Var inverse4(Var a);                      // [N,16] batch of 4x4 inverses
// out_i = R_i p_i + t_i with M_i = [R|t] taken from mats row i; pts constant.
Var transform_points(Var mats, const Tensor& pts);
// out_i = g_i^T R_i (upper-left 3x3 of mats row i); both differentiable.
Var rotate_covector(Var mats, Var g);
// CDF of a zero-mean Laplace distribution with scale beta, applied
// elementwise; differentiable in both the input and beta.
Var laplace_cdf(Var xi, Var beta);

}  // namespace recon
