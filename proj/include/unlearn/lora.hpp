#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::vector<std::string> selectors;  // see pruning.hpp for the selector grammar
  bool train_head = true;
};

/// Attaches adapters to every resolved target (attention layers expand to
/// their four projections), freezes all base parameters and leaves only the
/// adapters, plus the classifier head when `train_head`, trainable.
/// Adapters on pruned weights inherit row/column masks. Returns the adapted
/// layer paths.
template <typename T>
std::vector<std::string> attach_adapters(Model<T>& model, const LoraConfig& cfg, std::uint64_t seed);

/// Eval-mode forward of a single adapted layer: base(x) + scale * B (A x).
template <typename T>
BasicTensor<T> lora_forward(WeightLayer<T>& layer, const BasicTensor<T>& x);

/// Folds the adapter into the base weight and re-applies the base mask.
template <typename T>
void merge_adapter(WeightLayer<T>& layer);

/// Merges every adapter in the model; returns how many were merged.
template <typename T>
std::size_t merge_all_adapters(Model<T>& model);

/// Sum of rank * (d_in + d_out) over attached adapters plus the trainable
/// head parameters.
template <typename T>
std::size_t lora_trainable_count(Model<T>& model);

}  // namespace unlearn
