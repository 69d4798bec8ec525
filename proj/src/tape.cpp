#include "cssloc/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cssloc {

using kernels::for_each_index;

template <typename T>
typename Tape<T>::Var Tape<T>::push(Tensor<T> value, bool requires_grad) {
  Node n;
  if (requires_grad) n.grad = Tensor<T>(value.shape());
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::gbuf(Var v) {
  return nodes_[v.id].grad;
}

template <typename T>
std::size_t Tape<T>::grad_buffers() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.grad.empty(); }));
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::parameter(Tensor<T> value) {
  return push(std::move(value), true);
}

namespace {

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
typename Tape<T>::Var Tape<T>::conv2d(Var x, Var w, Var b) {
  const auto& xv = value(x);
  const auto& wv = value(w);
  if (xv.rank() != 4 || wv.rank() != 4) throw ShapeError("conv2d: expected 4-d input and kernels");
  if (wv.dim(2) != 3 || wv.dim(3) != 3) throw ShapeError("conv2d: kernels must be 3x3");
  if (wv.dim(1) != xv.dim(1))
    throw ShapeError("conv2d: kernel expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                     std::to_string(xv.dim(1)));
  require_shape(value(b), {wv.dim(0)}, "conv2d bias");
  const kernels::ConvDims d{xv.dim(0), xv.dim(1), wv.dim(0), xv.dim(2), xv.dim(3), 3};
  Tensor<T> y({d.batch, d.out_channels, d.height, d.width});
  kernels::conv2d_forward<T>(backend_, d, xv.data(), wv.data(), value(b).data(), y.data());
  const bool rg = needs(x) || needs(w) || needs(b);
  Var out = push(std::move(y), rg);
  if (rg) {
    nodes_[out.id].backward = [this, x, w, b, out, d] {
      const auto& dy = nodes_[out.id].grad;
      if (needs(x)) {
        Tensor<T> dx(value(x).shape());
        kernels::conv2d_backward_input<T>(backend_, d, dy.data(), value(w).data(), dx.data());
        add_into<T>(gbuf(x).data(), dx.data());
      }
      if (needs(w) || needs(b)) {
        Tensor<T> dw(value(w).shape()), db(value(b).shape());
        kernels::conv2d_backward_params<T>(backend_, d, dy.data(), value(x).data(), dw.data(), db.data());
        if (needs(w)) add_into<T>(gbuf(w).data(), dw.data());
        if (needs(b)) add_into<T>(gbuf(b).data(), db.data());
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::maxpool2d(Var x, std::size_t k) {
  const auto& xv = value(x);
  if (xv.rank() != 4) throw ShapeError("maxpool2d: expected 4-d input");
  if (k != 2 && k != 3) throw ShapeError("maxpool2d: window must be 2 or 3");
  if (xv.dim(2) < k || xv.dim(3) < k) throw ShapeError("maxpool2d: window larger than input");
  const kernels::PoolDims d{xv.dim(0) * xv.dim(1), xv.dim(2), xv.dim(3), k};
  Tensor<T> y({xv.dim(0), xv.dim(1), d.out_height(), d.out_width()});
  std::vector<std::size_t> arg(y.size());
  kernels::maxpool_forward<T>(backend_, d, xv.data(), y.data(), arg);
  Var out = push(std::move(y), needs(x));
  if (needs(x)) {
    nodes_[out.id].backward = [this, x, out, d, arg = std::move(arg)] {
      Tensor<T> dx(value(x).shape());
      kernels::maxpool_backward<T>(backend_, d, nodes_[out.id].grad.data(), arg, dx.data());
      add_into<T>(gbuf(x).data(), dx.data());
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::relu(Var x) {
  Tensor<T> y = value(x);
  for (auto& v : y.data()) v = v <= T{0} ? T{0} : v;  // NaN passes through
  Var out = push(std::move(y), needs(x));
  if (needs(x)) {
    nodes_[out.id].backward = [this, x, out] {
      const auto& xv = value(x);
      const auto& dy = nodes_[out.id].grad;
      auto& dx = gbuf(x);
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (xv[i] > T{0}) dx[i] += dy[i];
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::flatten(Var x) {
  const auto& xv = value(x);
  if (xv.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = xv.dim(0);
  Var out = push(xv.reshaped({n, n == 0 ? 0 : xv.size() / n}), needs(x));
  if (needs(x)) {
    nodes_[out.id].backward = [this, x, out] { add_into<T>(gbuf(x).data(), nodes_[out.id].grad.data()); };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::linear(Var x, Var w, Var b) {
  const auto& xv = value(x);
  const auto& wv = value(w);
  if (xv.rank() != 2 || wv.rank() != 2) throw ShapeError("linear: expected [N,in] input and [out,in] weights");
  if (wv.dim(1) != xv.dim(1))
    throw ShapeError("linear: weight expects " + std::to_string(wv.dim(1)) + " inputs, got " +
                     std::to_string(xv.dim(1)));
  require_shape(value(b), {wv.dim(0)}, "linear bias");
  const kernels::LinearDims d{xv.dim(0), xv.dim(1), wv.dim(0)};
  Tensor<T> y({d.batch, d.out});
  kernels::linear_forward<T>(backend_, d, xv.data(), wv.data(), value(b).data(), y.data());
  const bool rg = needs(x) || needs(w) || needs(b);
  Var out = push(std::move(y), rg);
  if (rg) {
    nodes_[out.id].backward = [this, x, w, b, out, d] {
      const auto& dy = nodes_[out.id].grad;
      if (needs(x)) {
        Tensor<T> dx(value(x).shape());
        kernels::linear_backward_input<T>(backend_, d, dy.data(), value(w).data(), dx.data());
        add_into<T>(gbuf(x).data(), dx.data());
      }
      if (needs(w) || needs(b)) {
        Tensor<T> dw(value(w).shape()), db(value(b).shape());
        kernels::linear_backward_params<T>(backend_, d, dy.data(), value(x).data(), dw.data(), db.data());
        if (needs(w)) add_into<T>(gbuf(w).data(), dw.data());
        if (needs(b)) add_into<T>(gbuf(b).data(), db.data());
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax(Var x) {
  const auto& xv = value(x);
  if (xv.rank() != 2) throw ShapeError("softmax: expected [N,C]");
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = cssloc::softmax<T>(xv.data().subspan(i * c, c));
    std::copy(row.begin(), row.end(), y.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  Var out = push(std::move(y), needs(x));
  if (needs(x)) {
    nodes_[out.id].backward = [this, x, out, n, c] {
      const auto& yv = nodes_[out.id].value;
      const auto& dy = nodes_[out.id].grad;
      auto& dx = gbuf(x);
      for (std::size_t i = 0; i < n; ++i) {
        T s{0};
        for (std::size_t j = 0; j < c; ++j) s += dy[i * c + j] * yv[i * c + j];
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += yv[i * c + j] * (dy[i * c + j] - s);
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::l2_normalize(Var x) {
  const auto& xv = value(x);
  if (xv.rank() != 2) throw ShapeError("l2_normalize: expected [N,d]");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor<T> y(xv.shape());
  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = xv.data().subspan(i * d, d);
    const T nrm = std::sqrt(dot<T>(row, row));
    if (nrm <= static_cast<T>(kNormEpsilon))  // a NaN norm propagates to the loss
      throw DegenerateVectorError("l2_normalize: row " + std::to_string(i) + " has zero norm");
    norms[i] = nrm;
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = row[j] / nrm;
  }
  Var out = push(std::move(y), needs(x));
  if (needs(x)) {
    nodes_[out.id].backward = [this, x, out, n, d, norms = std::move(norms)] {
      const auto& yv = nodes_[out.id].value;
      const auto& dy = nodes_[out.id].grad;
      auto& dx = gbuf(x);
      for (std::size_t i = 0; i < n; ++i) {
        T s{0};
        for (std::size_t j = 0; j < d; ++j) s += yv[i * d + j] * dy[i * d + j];
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += (dy[i * d + j] - yv[i * d + j] * s) / norms[i];
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const auto& lv = value(logits);
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) throw ShapeError("softmax_cross_entropy: label count mismatch");
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  Tensor<T> probs(lv.shape());
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) throw IndexError("label out of range");
    auto row = lv.data().subspan(i * c, c);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    loss += std::log(sum) + mx - row[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx) / sum;
  }
  loss /= static_cast<T>(std::max<std::size_t>(n, 1));
  Var out = push(Tensor<T>({1}, {loss}), needs(logits));
  if (needs(logits)) {
    std::vector<int> lab(labels.begin(), labels.end());
    nodes_[out.id].backward = [this, logits, out, n, c, probs = std::move(probs), lab = std::move(lab)] {
      const T g = nodes_[out.id].grad[0] / static_cast<T>(n);
      auto& dx = gbuf(logits);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const T onehot = static_cast<std::size_t>(lab[i]) == j ? T{1} : T{0};
          dx[i * c + j] += g * (probs[i * c + j] - onehot);
        }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::detach(Var x) {
  return push(value(x), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::weighted_sum(Var x, const Tensor<T>& weights) {
  require_shape(weights, value(x).shape(), "weighted_sum");
  T acc{0};
  const auto& xv = value(x);
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * weights[i];
  Var out = push(Tensor<T>({1}, {acc}), needs(x));
  if (needs(x)) {
    nodes_[out.id].backward = [this, x, out, weights] {
      const T g = nodes_[out.id].grad[0];
      auto& dx = gbuf(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::info_nce(Var query, Var positive, Var negatives, T temperature,
                                       bool in_batch_negatives) {
  if (!(temperature > T{0})) throw ConfigError("info_nce: temperature must be positive");
  const auto& q = value(query);
  const auto& k = value(positive);
  if (q.rank() != 2 || q.shape() != k.shape()) throw ShapeError("info_nce: query/positive shape mismatch");
  const std::size_t n = q.dim(0), dim = q.dim(1);
  const Tensor<T>* neg = &k;
  if (!in_batch_negatives) {
    neg = &value(negatives);
    if (neg->rank() != 2 || neg->dim(1) != dim) throw ShapeError("info_nce: negatives must be [K,d]");
  }
  const std::size_t m = neg->dim(0);
#ifndef NDEBUG
  auto check_unit = [&](const Tensor<T>& t, const char* what) {
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      auto row = t.data().subspan(i * dim, dim);
      if (std::abs(dot<T>(row, row) - T{1}) > static_cast<T>(1e-3))
        throw ShapeError(std::string("info_nce: ") + what + " rows must be unit-norm");
    }
  };
  check_unit(q, "query");
  check_unit(k, "positive");
  if (!in_batch_negatives) check_unit(*neg, "negative");
#endif

  // logits: positive similarity plus one column per negative
  std::vector<T> sneg(n * m);
  kernels::gram<T>(backend_, n, m, dim, q.data(), neg->data(), sneg);
  std::vector<T> spos(n), p0(n), rowloss(n);
  const T inv_t = T{1} / temperature;
  for_each_index(backend_, n, [&](std::size_t i) {
    spos[i] = dot<T>(q.data().subspan(i * dim, dim), k.data().subspan(i * dim, dim));
    const T l0 = spos[i] * inv_t;
    T mx = l0;
    for (std::size_t j = 0; j < m; ++j)
      if (!(in_batch_negatives && j == i)) mx = std::max(mx, sneg[i * m + j] * inv_t);
    T rest{0};
    for (std::size_t j = 0; j < m; ++j) {
      T& s = sneg[i * m + j];
      if (in_batch_negatives && j == i) {
        s = T{0};
        continue;
      }
      s = std::exp(s * inv_t - mx);  // becomes unnormalised probability
      rest += s;
    }
    const T sum = std::exp(l0 - mx) + rest;
    for (std::size_t j = 0; j < m; ++j) sneg[i * m + j] /= sum;
    p0[i] = std::exp(l0 - mx) / sum;
    // log1p keeps the loss accurate when the positive dominates
    rowloss[i] = mx == l0 ? std::log1p(rest) : std::log(sum) + mx - l0;
  });
  T loss{0};
  for (auto v : rowloss) loss += v;
  loss /= static_cast<T>(std::max<std::size_t>(n, 1));

  const bool neg_grad = !in_batch_negatives && needs(negatives);
  const bool rg = needs(query) || needs(positive) || neg_grad;
  Var out = push(Tensor<T>({1}, {loss}), rg);
  if (rg) {
    nodes_[out.id].backward = [this, query, positive, negatives, out, n, m, dim, inv_t, in_batch_negatives,
                               neg_grad, probs = std::move(sneg), p0 = std::move(p0)] {
      const T coef = nodes_[out.id].grad[0] / static_cast<T>(n) * inv_t;
      const auto& qv = value(query);
      const auto& kv = value(positive);
      const auto& nv = in_batch_negatives ? kv : value(negatives);
      if (needs(query)) {
        auto& dq = gbuf(query);
        for_each_index(backend_, n, [&](std::size_t i) {
          T* out_row = dq.data().data() + i * dim;
          const T c0 = coef * (p0[i] - T{1});
          for (std::size_t t = 0; t < dim; ++t) out_row[t] += c0 * kv[i * dim + t];
          for (std::size_t j = 0; j < m; ++j) {
            const T c = coef * probs[i * m + j];
            if (c == T{0}) continue;
            for (std::size_t t = 0; t < dim; ++t) out_row[t] += c * nv[j * dim + t];
          }
        });
      }
      // d/d(negative_j) = sum_i coef * P_ij * q_i, reduced over i in order
      auto scatter_rows = [&](Tensor<T>& dst) {
        for_each_index(backend_, m, [&](std::size_t j) {
          T* out_row = dst.data().data() + j * dim;
          for (std::size_t i = 0; i < n; ++i) {
            const T c = coef * probs[i * m + j];
            if (c == T{0}) continue;
            for (std::size_t t = 0; t < dim; ++t) out_row[t] += c * qv[i * dim + t];
          }
        });
      };
      if (needs(positive)) {
        auto& dk = gbuf(positive);
        for_each_index(backend_, n, [&](std::size_t i) {
          const T c0 = coef * (p0[i] - T{1});
          for (std::size_t t = 0; t < dim; ++t) dk[i * dim + t] += c0 * qv[i * dim + t];
        });
        if (in_batch_negatives) scatter_rows(dk);
      }
      if (neg_grad) scatter_rows(gbuf(negatives));
    };
  }
  return out;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) throw ShapeError("backward: loss must be a single element");
  if (!root.requires_grad) return;
  root.grad[0] += T{1};
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.requires_grad && node.backward) node.backward();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cssloc
