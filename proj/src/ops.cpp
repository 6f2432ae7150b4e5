#include "unlearn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace unlearn {
namespace kernels {
namespace {

constexpr std::size_t kColumnTile = 256;

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnTile) {
    const std::size_t jn = std::min(kColumnTile, n - j0);
    for (std::size_t i = 0; i < m; ++i) {
      T* __restrict crow = c + i * n + j0;
      if (!accumulate) std::fill(crow, crow + jn, T{0});
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T{0}) continue;
        const T* __restrict brow = b + p * n + j0;
        for (std::size_t j = 0; j < jn; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnTile) {
    const std::size_t jn = std::min(kColumnTile, n - j0);
    for (std::size_t i = 0; i < m; ++i) {
      T* __restrict crow = c + i * n + j0;
      if (!accumulate) std::fill(crow, crow + jn, T{0});
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        if (av == T{0}) continue;
        const T* __restrict brow = b + p * n + j0;
        for (std::size_t j = 0; j < jn; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock);
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
      }
    }
  }
}

template void gemm_nn(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nn(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_tn(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_tn(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_nt(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nt(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void transpose(std::size_t, std::size_t, const float*, float*);
template void transpose(std::size_t, std::size_t, const double*, double*);

}  // namespace kernels

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, a.ptr(), b.ptr(), out.ptr(), false);
  return out;
}

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                           std::size_t padding) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError("conv2d expects input [N,C,H,W] and kernel [O,C,kh,kw], got " +
                         shape_to_string(input) + " and " + shape_to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw DimensionError("conv2d channel mismatch: input " + shape_to_string(input) + ", kernel " +
                         shape_to_string(kernel));
  }
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.padding = padding;
  if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding) {
    throw DimensionError("conv2d kernel " + shape_to_string(kernel) + " larger than padded input " +
                         shape_to_string(input) + " (padding " + std::to_string(padding) + ")");
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

template <typename T>
void im2col(const ConvGeometry& g, const T* input, T* col) {
  const std::size_t cols = g.columns();
  const std::size_t plane = g.height * g.width;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        std::size_t q = 0;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* src = input + (n * g.in_channels + c) * plane;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
            const bool row_ok = ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.height);
            for (std::size_t ow = 0; ow < g.out_w; ++ow, ++q) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
              row[q] = (row_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width))
                           ? src[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)]
                           : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* grad_input) {
  const std::size_t cols = g.columns();
  const std::size_t plane = g.height * g.width;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        std::size_t q = 0;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* dst = grad_input + (n * g.in_channels + c) * plane;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
            const bool row_ok = ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.height);
            for (std::size_t ow = 0; ow < g.out_w; ++ow, ++q) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
              if (row_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) {
                dst[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)] += row[q];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  std::vector<T> col(g.patch_size() * g.columns());
  im2col(g, input.ptr(), col.data());
  std::vector<T> out_t(g.out_channels * g.columns());
  kernels::gemm_nn(g.out_channels, g.columns(), g.patch_size(), kernel.ptr(), col.data(),
                   out_t.data(), false);
  BasicTensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
  const std::size_t p = g.positions();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      std::copy_n(out_t.data() + o * g.columns() + n * p, p, out.ptr() + (n * g.out_channels + o) * p);
    }
  }
  return out;
}

namespace {

template <typename T>
void check_logits(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("logits must be [N,K], got " + shape_to_string(logits.shape()));
  }
  if (labels.size() != logits.dim(0)) {
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match logits " +
                         shape_to_string(logits.shape()));
  }
  const auto k = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw IndexError("label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    }
  }
}

}  // namespace

template <typename T>
std::vector<double> softmax_rows(const BasicTensor<T>& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax expects [N,K], got " + shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(static_cast<double>(row[j]) - mx);
      z += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
  }
  return probs;
}

template <typename T>
std::vector<double> cross_entropy_per_sample(const BasicTensor<T>& logits,
                                             std::span<const int> labels) {
  check_logits(logits, labels);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> losses(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    losses[i] = std::log(z) + mx - static_cast<double>(row[static_cast<std::size_t>(labels[i])]);
  }
  return losses;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  check_logits(logits, labels);
  if (logits.dim(0) == 0) throw DimensionError("softmax_cross_entropy needs N >= 1");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossAndGrad<T> out;
  out.grad_logits = BasicTensor<T>(logits.shape());
  const std::vector<double> probs = softmax_rows(logits);
  const std::vector<double> losses = cross_entropy_per_sample(logits, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += losses[i];
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = (static_cast<int>(j) == labels[i]) ? 1.0 : 0.0;
      out.grad_logits[i * k + j] = static_cast<T>((probs[i * k + j] - onehot) / static_cast<double>(n));
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

template Tensor matmul(const Tensor&, const Tensor&);
template Tensor64 matmul(const Tensor64&, const Tensor64&);
template void im2col(const ConvGeometry&, const float*, float*);
template void im2col(const ConvGeometry&, const double*, double*);
template void col2im(const ConvGeometry&, const float*, float*);
template void col2im(const ConvGeometry&, const double*, double*);
template Tensor conv2d(const Tensor&, const Tensor&, std::size_t, std::size_t);
template Tensor64 conv2d(const Tensor64&, const Tensor64&, std::size_t, std::size_t);
template LossAndGrad<float> softmax_cross_entropy(const Tensor&, std::span<const int>);
template LossAndGrad<double> softmax_cross_entropy(const Tensor64&, std::span<const int>);
template std::vector<double> cross_entropy_per_sample(const Tensor&, std::span<const int>);
template std::vector<double> cross_entropy_per_sample(const Tensor64&, std::span<const int>);
template std::vector<double> softmax_rows(const Tensor&);
template std::vector<double> softmax_rows(const Tensor64&);

}  // namespace unlearn
