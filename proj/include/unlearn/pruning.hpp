#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

// Layer selectors shared by pruning and LoRA targeting. Each entry is one of
// the keywords below or an explicit layer path such as "layers.3.body.0".
inline constexpr const char* kSelectAllConv = "all-conv";
inline constexpr const char* kSelectLastLinear = "last-linear";
inline constexpr const char* kSelectLastAttention = "last-attention";

/// Resolves selectors to Conv2d, Linear or MultiHeadAttention layers in model
/// order, without duplicates. "last-linear" skips the classifier head and
/// projections owned by attention or patch-embedding layers. Throws
/// ConfigError when a selector matches nothing.
template <typename T>
std::vector<NamedLayer<T>> resolve_targets(Model<T>& model, const std::vector<std::string>& selectors);

struct PruneTargetSpec {
  std::vector<std::string> selectors;
  double sparsity = 0.5;
};

enum class StructureAxis {
  kOutput,  // slices along dim 0: conv output channels, linear output rows
  kInput,   // slices along dim 1
};

/// L2 norm of each structure. Consecutive `group` slices along `axis` form
/// one structure (attention heads group head_dim rows).
template <typename T>
std::vector<double> compute_structure_norms(const BasicTensor<T>& param, StructureAxis axis, std::size_t group = 1);

/// Indices of the floor(sparsity * n) smallest norms; ties go to the lower
/// index. Returned ascending.
std::vector<std::size_t> select_prune_set(std::span<const double> norms, double sparsity);

/// Structures removed from one target layer.
struct PruneMask {
  std::string layer_path;
  std::size_t total_structures = 0;
  std::vector<std::size_t> pruned;                // structure indices
  std::vector<std::string> parameter_names;       // parameters carrying the mask
};

/// Zeroes the selected structures of every target, records the masks on the
/// model parameters and returns a summary. Output-row pruning also masks the
/// matching bias entries; attention pruning removes whole heads (q/k/v rows
/// and biases, o_proj columns). Re-pruning a masked target raises StateError.
template <typename T>
std::vector<PruneMask> apply_prune(Model<T>& model, const PruneTargetSpec& spec);

/// Re-zeroes every masked element (no-op without masks).
template <typename T>
void enforce_masks(Model<T>& model);

/// Derives adapter masks from a pruned base weight: fully pruned output rows
/// mask the matching rows of B, fully pruned input columns mask columns of A,
/// so the adapter can never revive a pruned structure.
template <typename T>
void sync_adapter_masks(WeightLayer<T>& layer);

struct SparsityEntry {
  std::string layer_path;
  LayerKind kind = LayerKind::kLinear;
  std::size_t total_structures = 0;
  std::size_t pruned_structures = 0;
  double zero_fraction = 0.0;
};

/// One entry per Linear/Conv2d outside attention layers and one per attention
/// layer (head structures). Pruned counts come from masks, zero fractions from
/// scanning the weights.
template <typename T>
std::vector<SparsityEntry> sparsity_report(Model<T>& model);

}  // namespace unlearn
