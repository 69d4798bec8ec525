#pragma once

// Batched layer kernels. Every kernel has a serial reference path and an OpenMP
// path; both evaluate each output element with the same ordered sum, so the two
// backends agree bit for bit.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace cssloc::kernels {

enum class Backend { serial, omp };

std::string to_string(Backend b);

// Runs body(i) for i in [0, n). The OpenMP path only distributes indices; each
// body invocation is the same code in both paths.
template <typename F>
void for_each_index(Backend be, std::size_t n, F&& body) {
  if (be == Backend::omp) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
}

struct ConvDims {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 3;  // odd; padding = kernel / 2, stride 1
};

// y[n,co,i,j] = b[co] + sum_{ci,u,v} x[n,ci,i+u-p,j+v-p] * w[co,ci,u,v]
template <typename T>
void conv2d_forward(Backend be, const ConvDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);

template <typename T>
void conv2d_backward_input(Backend be, const ConvDims& d, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);

template <typename T>
void conv2d_backward_params(Backend be, const ConvDims& d, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db);

struct PoolDims {
  std::size_t planes = 1;  // batch * channels
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t window = 2;  // non-overlapping k x k
  std::size_t out_height() const { return height / window; }
  std::size_t out_width() const { return width / window; }
};

// argmax receives the flat input index of the first (row-major) maximum per window.
template <typename T>
void maxpool_forward(Backend be, const PoolDims& d, std::span<const T> x, std::span<T> y,
                     std::span<std::size_t> argmax);

template <typename T>
void maxpool_backward(Backend be, const PoolDims& d, std::span<const T> dy, std::span<const std::size_t> argmax,
                      std::span<T> dx);

struct LinearDims {
  std::size_t batch = 1;
  std::size_t in = 1;
  std::size_t out = 1;
};

// y[n,o] = b[o] + sum_i x[n,i] * W[o,i]
template <typename T>
void linear_forward(Backend be, const LinearDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);

template <typename T>
void linear_backward_input(Backend be, const LinearDims& d, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);

template <typename T>
void linear_backward_params(Backend be, const LinearDims& d, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db);

// Row-block similarity: s[i,j] = <a_i, b_j> over dim columns.
template <typename T>
void gram(Backend be, std::size_t rows_a, std::size_t rows_b, std::size_t dim, std::span<const T> a,
          std::span<const T> b, std::span<T> s);

}  // namespace cssloc::kernels
