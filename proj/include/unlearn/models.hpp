#pragma once

#include <cstdint>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

struct CnnOptions {
  std::size_t in_channels = 3;
  std::size_t kernel = 3;
};

/// Residual CNN: stem conv -> one residual block per entry of `channels`
/// (conv-norm-ReLU x2 plus skip, stride 2 after the first) -> mean pool ->
/// linear head. Conv/linear weights are Kaiming-uniform (fan-in).
template <typename T>
Model<T> build_small_cnn(const std::vector<std::size_t>& channels, std::size_t class_count, std::uint64_t seed,
                         const CnnOptions& options = {});

struct VitOptions {
  std::size_t in_channels = 3;
  std::size_t image_size = 16;
  std::size_t mlp_ratio = 2;
};

/// Patch embedding -> depth x (pre-norm attention block, pre-norm MLP block)
/// -> LayerNorm -> token mean pool -> linear head. Attention projections are
/// Gaussian(0, 0.02); other linears Kaiming-uniform.
template <typename T>
Model<T> build_tiny_vit(std::size_t patch, std::size_t dim, std::size_t heads, std::size_t depth,
                        std::size_t class_count, std::uint64_t seed, const VitOptions& options = {});

/// Builds either desk architecture from its descriptor.
template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed);

}  // namespace unlearn
