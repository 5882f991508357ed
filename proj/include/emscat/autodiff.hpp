#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "emscat/common.hpp"

namespace emscat::ad {

using Index = Eigen::Index;

// Dense real tensor. Constants carry node = -1 and never receive gradients;
// tracked tensors reference a node on the tape that produced them. Data is
// shared, never mutated after construction.
struct Tensor {
  std::vector<Index> shape;
  std::shared_ptr<std::vector<double>> data;
  int node = -1;

  Index size() const {
    Index s = 1;
    for (Index d : shape) s *= d;
    return s;
  }
  Index rows() const { return shape.empty() ? 1 : shape[0]; }
  Index cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool tracked() const { return node >= 0; }
  double scalar() const {
    if (size() != 1) throw ValidationError("Tensor::scalar: size != 1");
    return (*data)[0];
  }
  const double* ptr() const { return data->data(); }
};

Tensor constant(std::vector<Index> shape, std::vector<double> values);
Tensor scalar_const(double v);

enum class Act { Identity, Relu, Sigmoid };

// Reverse-mode tape. Ops append nodes in topological order; backward() visits
// each node exactly once and is single-use until reset(). One tape per
// thread; tensors themselves are immutable values.
class Tape {
 public:
  // Tracked parameter leaf sharing the given storage. Binding the same
  // storage twice returns the same node, so a network can be re-bound freely
  // within a step.
  Tensor leaf(std::vector<Index> shape, std::shared_ptr<std::vector<double>> storage);

  // --- operations -------------------------------------------------------
  Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N]
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
  Tensor affine(const Tensor& x, double k, double c);    // k*x + c
  Tensor add_rowvec(const Tensor& x, const Tensor& b);   // [R,C] + [C]
  Tensor colvec_mul(const Tensor& x, const Tensor& v);   // [R,C] .* v[R]
  Tensor relu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor square(const Tensor& x);
  Tensor sqrt(const Tensor& x);                           // x >= 0
  Tensor hypot(const Tensor& a, const Tensor& b);         // sqrt(a^2 + b^2)
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor block_mean(const Tensor& x, Index s_blocks);     // [S*R,C] -> [R,C]
  Tensor l2norm(const Tensor& x);                         // sqrt(sum x^2)
  Tensor sum_col_norms(const Tensor& a);                  // sum_c ||a[:,c]||
  Tensor sum_col_norms(const Tensor& a, const Tensor& b); // complex pairs
  // channel ch of a [m*N, n_ch] stack, regrouped to [N, m]
  Tensor regroup_cols(const Tensor& x, Index m, Index n, Index ch);
  // same data, new shape (no copy on the forward pass)
  Tensor reshape(const Tensor& x, std::vector<Index> shape);
  // anisotropic total variation of an n x n field, normalized by N = n^2
  Tensor tv2d(const Tensor& x, Index n_side);
  // fused y = act(x*W + b); the workhorse of MLP layers
  Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Act act);

  // --- engine -----------------------------------------------------------
  void backward(const Tensor& out);  // out must be a tracked scalar
  const std::vector<double>& grad(const Tensor& t);
  const std::vector<double>* grad_by_storage(const void* data_ptr) const;
  void reset();
  bool backward_has_run() const { return backward_done_; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Index size = 0;
    bool is_leaf = false;
    std::vector<double> grad;
    std::function<void()> back;  // empty for leaves
  };

  int push_node(Index size, bool is_leaf, std::function<void()> back);
  std::vector<double>& grad_buf(int node);

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_by_storage_;
  bool backward_done_ = false;
};

// Max relative error between reverse-mode gradients and central finite
// differences over every component of every leaf. `program` must return a
// scalar tensor built from the given leaves.
using Program = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
double grad_check(const Program& program,
                  const std::vector<std::vector<Index>>& leaf_shapes,
                  const std::vector<std::vector<double>>& leaf_values,
                  double h = 1e-5);

}  // namespace emscat::ad
