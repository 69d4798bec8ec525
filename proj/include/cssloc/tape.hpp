#pragma once

// Reverse-mode tape over batched tensors for the fixed layer set of the
// localization networks. Ops are recorded in call order; backward() replays
// them in exact reverse, accumulating gradients additively. Values created
// with constant() carry no gradient buffer at all.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cssloc/kernels.hpp"
#include "cssloc/tensor.hpp"

namespace cssloc {

template <typename T>
class Tape {
 public:
  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
  };

  explicit Tape(kernels::Backend backend = kernels::Backend::omp) : backend_(backend) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  kernels::Backend backend() const { return backend_; }

  Var constant(Tensor<T> value);
  Var parameter(Tensor<T> value);

  // x [N,Cin,H,W], w [Cout,Cin,3,3], b [Cout] -> [N,Cout,H,W]; stride 1, pad 1.
  Var conv2d(Var x, Var w, Var b);
  // x [N,C,H,W] -> [N,C,H/k,W/k]; k in {2,3}.
  Var maxpool2d(Var x, std::size_t k);
  Var relu(Var x);
  // Collapse all trailing dims: [N,...] -> [N, prod(...)].
  Var flatten(Var x);
  // x [N,in], w [out,in], b [out] -> [N,out].
  Var linear(Var x, Var w, Var b);
  // Row-wise softmax of [N,C].
  Var softmax(Var x);
  // Row-wise unit normalisation of [N,d]; throws DegenerateVectorError on a zero row.
  Var l2_normalize(Var x);
  // Mean over rows of -log softmax(logits)[label].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);
  // Copy of x cut from the graph: no gradient flows back through it.
  Var detach(Var x);
  // Sum of x * weights, for projecting a tensor output onto a scalar.
  Var weighted_sum(Var x, const Tensor<T>& weights);

  // Mean InfoNCE over N queries. query/positive are [N,d], negatives [K,d].
  // With in_batch_negatives the negatives of row i are positive rows j != i and
  // `negatives` is ignored. Inputs are expected to be unit rows.
  Var info_nce(Var query, Var positive, Var negatives, T temperature, bool in_batch_negatives = false);

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  // Empty tensor when v does not require gradients.
  const Tensor<T>& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  // Count of nodes that own a gradient buffer.
  std::size_t grad_buffers() const;

  // Seeds d(loss)/d(loss) = 1 for a single-element tensor and runs the tape backward.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Tensor<T> value, bool requires_grad);
  Tensor<T>& gbuf(Var v);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  kernels::Backend backend_;
  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cssloc
