#include "cssloc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cssloc/errors.hpp"

namespace cssloc::kernels {

std::string to_string(Backend b) { return b == Backend::omp ? "omp" : "serial"; }

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

void check_conv(const ConvDims& d, std::size_t x, std::size_t w, std::size_t y) {
  check(d.kernel % 2 == 1, "conv2d: kernel size must be odd");
  check(x == d.batch * d.in_channels * d.height * d.width, "conv2d: input size mismatch");
  check(w == d.out_channels * d.in_channels * d.kernel * d.kernel, "conv2d: kernel size mismatch");
  check(y == d.batch * d.out_channels * d.height * d.width, "conv2d: output size mismatch");
}

}  // namespace

template <typename T>
void conv2d_forward(Backend be, const ConvDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  check_conv(d, x.size(), w.size(), y.size());
  check(b.size() == d.out_channels, "conv2d: bias size mismatch");
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(d.height), W = static_cast<std::ptrdiff_t>(d.width);
  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(d.kernel), P = K / 2;
  const std::size_t plane = d.height * d.width;
  for_each_index(be, d.batch * d.out_channels, [&](std::size_t nc) {
    const std::size_t n = nc / d.out_channels, co = nc % d.out_channels;
    T* out = y.data() + nc * plane;
    for (std::ptrdiff_t i = 0; i < H; ++i) {
      for (std::ptrdiff_t j = 0; j < W; ++j) {
        T acc = b[co];
        for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
          const T* xin = x.data() + (n * d.in_channels + ci) * plane;
          const T* ker = w.data() + (co * d.in_channels + ci) * d.kernel * d.kernel;
          for (std::ptrdiff_t u = 0; u < K; ++u) {
            const std::ptrdiff_t xi = i + u - P;
            if (xi < 0 || xi >= H) continue;
            for (std::ptrdiff_t v = 0; v < K; ++v) {
              const std::ptrdiff_t xj = j + v - P;
              if (xj < 0 || xj >= W) continue;
              acc += xin[xi * W + xj] * ker[u * K + v];
            }
          }
        }
        out[i * W + j] = acc;
      }
    }
  });
}

template <typename T>
void conv2d_backward_input(Backend be, const ConvDims& d, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  check_conv(d, dx.size(), w.size(), dy.size());
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(d.height), W = static_cast<std::ptrdiff_t>(d.width);
  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(d.kernel), P = K / 2;
  const std::size_t plane = d.height * d.width;
  for_each_index(be, d.batch * d.in_channels, [&](std::size_t nc) {
    const std::size_t n = nc / d.in_channels, ci = nc % d.in_channels;
    T* out = dx.data() + nc * plane;
    for (std::ptrdiff_t i = 0; i < H; ++i) {
      for (std::ptrdiff_t j = 0; j < W; ++j) {
        T acc{0};
        for (std::size_t co = 0; co < d.out_channels; ++co) {
          const T* g = dy.data() + (n * d.out_channels + co) * plane;
          const T* ker = w.data() + (co * d.in_channels + ci) * d.kernel * d.kernel;
          for (std::ptrdiff_t u = 0; u < K; ++u) {
            const std::ptrdiff_t oi = i - u + P;
            if (oi < 0 || oi >= H) continue;
            for (std::ptrdiff_t v = 0; v < K; ++v) {
              const std::ptrdiff_t oj = j - v + P;
              if (oj < 0 || oj >= W) continue;
              acc += g[oi * W + oj] * ker[u * K + v];
            }
          }
        }
        out[i * W + j] = acc;
      }
    }
  });
}

template <typename T>
void conv2d_backward_params(Backend be, const ConvDims& d, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db) {
  check_conv(d, x.size(), dw.size(), dy.size());
  check(db.size() == d.out_channels, "conv2d: bias gradient size mismatch");
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(d.height), W = static_cast<std::ptrdiff_t>(d.width);
  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(d.kernel), P = K / 2;
  const std::size_t plane = d.height * d.width;
  const std::size_t kk = d.kernel * d.kernel;
  for_each_index(be, dw.size(), [&](std::size_t e) {
    const std::size_t co = e / (d.in_channels * kk);
    const std::size_t ci = (e / kk) % d.in_channels;
    const std::ptrdiff_t u = static_cast<std::ptrdiff_t>((e % kk) / d.kernel);
    const std::ptrdiff_t v = static_cast<std::ptrdiff_t>(e % d.kernel);
    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, P - u), i1 = std::min(H, H + P - u);
    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, P - v), j1 = std::min(W, W + P - v);
    T acc{0};
    for (std::size_t n = 0; n < d.batch; ++n) {
      const T* g = dy.data() + (n * d.out_channels + co) * plane;
      const T* xin = x.data() + (n * d.in_channels + ci) * plane;
      for (std::ptrdiff_t i = i0; i < i1; ++i)
        for (std::ptrdiff_t j = j0; j < j1; ++j) acc += g[i * W + j] * xin[(i + u - P) * W + (j + v - P)];
    }
    dw[e] = acc;
  });
  for_each_index(be, d.out_channels, [&](std::size_t co) {
    T acc{0};
    for (std::size_t n = 0; n < d.batch; ++n) {
      const T* g = dy.data() + (n * d.out_channels + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += g[p];
    }
    db[co] = acc;
  });
}

template <typename T>
void maxpool_forward(Backend be, const PoolDims& d, std::span<const T> x, std::span<T> y,
                     std::span<std::size_t> argmax) {
  check(d.window >= 1 && d.height >= d.window && d.width >= d.window, "maxpool: window larger than input");
  const std::size_t oh = d.out_height(), ow = d.out_width();
  check(x.size() == d.planes * d.height * d.width, "maxpool: input size mismatch");
  check(y.size() == d.planes * oh * ow && argmax.size() == y.size(), "maxpool: output size mismatch");
  for_each_index(be, d.planes, [&](std::size_t p) {
    const std::size_t base = p * d.height * d.width;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + (i * d.window) * d.width + j * d.window;
        for (std::size_t u = 0; u < d.window; ++u)
          for (std::size_t v = 0; v < d.window; ++v) {
            const std::size_t idx = base + (i * d.window + u) * d.width + (j * d.window + v);
            if (x[idx] > x[best] || std::isnan(x[idx])) best = idx;  // NaN wins, as in a plain max
          }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = x[best];
        argmax[o] = best;
      }
  });
}

template <typename T>
void maxpool_backward(Backend be, const PoolDims& d, std::span<const T> dy, std::span<const std::size_t> argmax,
                      std::span<T> dx) {
  const std::size_t per_plane = d.out_height() * d.out_width();
  check(dx.size() == d.planes * d.height * d.width, "maxpool: gradient size mismatch");
  check(dy.size() == d.planes * per_plane && argmax.size() == dy.size(), "maxpool: gradient size mismatch");
  for_each_index(be, d.planes, [&](std::size_t p) {
    T* plane = dx.data() + p * d.height * d.width;
    std::fill(plane, plane + d.height * d.width, T{0});
    for (std::size_t o = p * per_plane; o < (p + 1) * per_plane; ++o) dx[argmax[o]] += dy[o];
  });
}

template <typename T>
void linear_forward(Backend be, const LinearDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  check(x.size() == d.batch * d.in && w.size() == d.out * d.in && b.size() == d.out &&
            y.size() == d.batch * d.out,
        "linear: shape mismatch");
  for_each_index(be, d.batch, [&](std::size_t n) {
    const T* xr = x.data() + n * d.in;
    for (std::size_t o = 0; o < d.out; ++o) {
      const T* wr = w.data() + o * d.in;
      T acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += xr[i] * wr[i];
      y[n * d.out + o] = acc;
    }
  });
}

template <typename T>
void linear_backward_input(Backend be, const LinearDims& d, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  check(dx.size() == d.batch * d.in && w.size() == d.out * d.in && dy.size() == d.batch * d.out,
        "linear: gradient shape mismatch");
  for_each_index(be, d.batch, [&](std::size_t n) {
    T* out = dx.data() + n * d.in;
    std::fill(out, out + d.in, T{0});
    for (std::size_t o = 0; o < d.out; ++o) {
      const T g = dy[n * d.out + o];
      const T* wr = w.data() + o * d.in;
      for (std::size_t i = 0; i < d.in; ++i) out[i] += g * wr[i];
    }
  });
}

template <typename T>
void linear_backward_params(Backend be, const LinearDims& d, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw, std::span<T> db) {
  check(x.size() == d.batch * d.in && dw.size() == d.out * d.in && db.size() == d.out &&
            dy.size() == d.batch * d.out,
        "linear: gradient shape mismatch");
  for_each_index(be, d.out, [&](std::size_t o) {
    T* wr = dw.data() + o * d.in;
    std::fill(wr, wr + d.in, T{0});
    T bacc{0};
    for (std::size_t n = 0; n < d.batch; ++n) {
      const T g = dy[n * d.out + o];
      bacc += g;
      const T* xr = x.data() + n * d.in;
      for (std::size_t i = 0; i < d.in; ++i) wr[i] += g * xr[i];
    }
    db[o] = bacc;
  });
}

template <typename T>
void gram(Backend be, std::size_t rows_a, std::size_t rows_b, std::size_t dim, std::span<const T> a,
          std::span<const T> b, std::span<T> s) {
  check(a.size() == rows_a * dim && b.size() == rows_b * dim && s.size() == rows_a * rows_b,
        "gram: shape mismatch");
  for_each_index(be, rows_a, [&](std::size_t i) {
    const T* ar = a.data() + i * dim;
    for (std::size_t j = 0; j < rows_b; ++j) {
      const T* br = b.data() + j * dim;
      T acc{0};
      for (std::size_t k = 0; k < dim; ++k) acc += ar[k] * br[k];
      s[i * rows_b + j] = acc;
    }
  });
}

#define CSSLOC_INSTANTIATE_KERNELS(T)                                                                       \
  template void conv2d_forward<T>(Backend, const ConvDims&, std::span<const T>, std::span<const T>,        \
                                  std::span<const T>, std::span<T>);                                       \
  template void conv2d_backward_input<T>(Backend, const ConvDims&, std::span<const T>, std::span<const T>, \
                                         std::span<T>);                                                    \
  template void conv2d_backward_params<T>(Backend, const ConvDims&, std::span<const T>, std::span<const T>, \
                                          std::span<T>, std::span<T>);                                     \
  template void maxpool_forward<T>(Backend, const PoolDims&, std::span<const T>, std::span<T>,             \
                                   std::span<std::size_t>);                                                \
  template void maxpool_backward<T>(Backend, const PoolDims&, std::span<const T>,                          \
                                    std::span<const std::size_t>, std::span<T>);                           \
  template void linear_forward<T>(Backend, const LinearDims&, std::span<const T>, std::span<const T>,      \
                                  std::span<const T>, std::span<T>);                                       \
  template void linear_backward_input<T>(Backend, const LinearDims&, std::span<const T>, std::span<const T>, \
                                         std::span<T>);                                                    \
  template void linear_backward_params<T>(Backend, const LinearDims&, std::span<const T>, std::span<const T>, \
                                          std::span<T>, std::span<T>);                                     \
  template void gram<T>(Backend, std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                        std::span<T>);

CSSLOC_INSTANTIATE_KERNELS(float)
CSSLOC_INSTANTIATE_KERNELS(double)

}  // namespace cssloc::kernels
