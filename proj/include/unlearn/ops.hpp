#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unlearn/tensor.hpp"

namespace unlearn {

// Raw row-major GEMM kernels. Every output element is reduced over the
// inner dimension in ascending order, so results are bit-reproducible
// regardless of tiling.
namespace kernels {

/// C[MxN] (+)= A[MxK] * B[KxN]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// C[MxN] (+)= A^T * B, with A stored as [KxM].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// C[MxN] (+)= A * B^T, with B stored as [NxK].
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// dst[cols x rows] = transpose(src[rows x cols])
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

}  // namespace kernels

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Geometry of a 2-D convolution over a batch.
struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
  std::size_t columns() const { return batch * out_h * out_w; }
};

/// Validates shapes and derives output extents. Throws DimensionError when the
/// kernel does not fit in the padded input or channel counts disagree.
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                           std::size_t padding);

/// Unfolds input [N,C,H,W] into columns [C*kh*kw, N*OH*OW] (zero padding).
template <typename T>
void im2col(const ConvGeometry& g, const T* input, T* col);

/// Adjoint of im2col: accumulates columns back into grad_input [N,C,H,W].
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* grad_input);

/// Cross-correlation (no kernel flip) with zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::size_t stride,
                      std::size_t padding);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  BasicTensor<T> grad_logits;
};

/// Mean softmax cross-entropy over the batch together with its gradient
/// (softmax - onehot) / N. Logits are max-shifted before exponentiation.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Per-sample cross-entropy losses, evaluated in double precision.
template <typename T>
std::vector<double> cross_entropy_per_sample(const BasicTensor<T>& logits,
                                             std::span<const int> labels);

/// Row-wise softmax of a [N,K] tensor, evaluated in double precision.
template <typename T>
std::vector<double> softmax_rows(const BasicTensor<T>& logits);

}  // namespace unlearn
