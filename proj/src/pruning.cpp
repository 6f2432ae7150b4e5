#include "unlearn/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace unlearn {

namespace {

template <typename T>
bool is_weight_layer(const Layer<T>* l) {
  return l->kind() == LayerKind::kLinear || l->kind() == LayerKind::kConv2d;
}

template <typename T>
bool owned_projection(const NamedLayer<T>& nl) {
  return nl.parent != nullptr && (nl.parent->kind() == LayerKind::kMultiHeadAttention ||
                                  nl.parent->kind() == LayerKind::kPatchEmbed);
}

/// Marks rows [first, first+count) of a [rows, cols] mask as pruned.
void mask_rows(std::vector<std::uint8_t>& mask, std::size_t cols, std::size_t first, std::size_t count) {
  std::fill(mask.begin() + static_cast<std::ptrdiff_t>(first * cols),
            mask.begin() + static_cast<std::ptrdiff_t>((first + count) * cols), std::uint8_t{0});
}

void mask_cols(std::vector<std::uint8_t>& mask, std::size_t rows, std::size_t cols, std::size_t first,
               std::size_t count) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = first; c < first + count; ++c) mask[r * cols + c] = 0;
  }
}

template <typename T>
void install_mask(Parameter<T>& p, std::vector<std::uint8_t> mask) {
  p.mask = std::move(mask);
  p.apply_mask();
}

template <typename T>
PruneMask prune_weight_layer(const std::string& path, WeightLayer<T>& layer, double sparsity) {
  if (layer.weight().has_mask()) throw StateError("target " + path + " is already pruned");
  const std::size_t rows = layer.d_out(), cols = layer.d_in();
  const BasicTensor<T> flat = layer.weight().value.reshaped({rows, cols});
  const std::vector<double> norms = compute_structure_norms(flat, StructureAxis::kOutput);
  PruneMask pm;
  pm.layer_path = path;
  pm.total_structures = rows;
  pm.pruned = select_prune_set(norms, sparsity);

  std::vector<std::uint8_t> wmask(rows * cols, 1);
  for (auto r : pm.pruned) mask_rows(wmask, cols, r, 1);
  install_mask(layer.weight(), std::move(wmask));
  pm.parameter_names.push_back(join_path(path, "weight"));
  if (layer.has_bias()) {
    std::vector<std::uint8_t> bmask(rows, 1);
    for (auto r : pm.pruned) bmask[r] = 0;
    install_mask(layer.bias(), std::move(bmask));
    pm.parameter_names.push_back(join_path(path, "bias"));
  }
  if (layer.has_adapter()) sync_adapter_masks(layer);
  return pm;
}

template <typename T>
PruneMask prune_attention(const std::string& path, MultiHeadAttention<T>& attn, double sparsity) {
  for (Linear<T>* l : {&attn.q_proj(), &attn.k_proj(), &attn.v_proj(), &attn.o_proj()}) {
    if (l->weight().has_mask()) throw StateError("target " + path + " is already pruned");
  }
  const std::size_t heads = attn.heads(), dh = attn.head_dim(), dim = attn.dim();
  std::vector<double> sq(heads, 0.0);
  for (Linear<T>* l : {&attn.q_proj(), &attn.k_proj(), &attn.v_proj()}) {
    const auto n = compute_structure_norms(l->weight().value, StructureAxis::kOutput, dh);
    for (std::size_t h = 0; h < heads; ++h) sq[h] += n[h] * n[h];
  }
  const auto on = compute_structure_norms(attn.o_proj().weight().value, StructureAxis::kInput, dh);
  for (std::size_t h = 0; h < heads; ++h) sq[h] += on[h] * on[h];
  std::vector<double> norms(heads);
  for (std::size_t h = 0; h < heads; ++h) norms[h] = std::sqrt(sq[h]);

  PruneMask pm;
  pm.layer_path = path;
  pm.total_structures = heads;
  pm.pruned = select_prune_set(norms, sparsity);
  const char* names[] = {"q_proj", "k_proj", "v_proj"};
  Linear<T>* projs[] = {&attn.q_proj(), &attn.k_proj(), &attn.v_proj()};
  for (int i = 0; i < 3; ++i) {
    std::vector<std::uint8_t> wmask(dim * dim, 1), bmask(dim, 1);
    for (auto h : pm.pruned) {
      mask_rows(wmask, dim, h * dh, dh);
      std::fill(bmask.begin() + static_cast<std::ptrdiff_t>(h * dh),
                bmask.begin() + static_cast<std::ptrdiff_t>((h + 1) * dh), std::uint8_t{0});
    }
    install_mask(projs[i]->weight(), std::move(wmask));
    install_mask(projs[i]->bias(), std::move(bmask));
    const std::string base = join_path(path, names[i]);
    pm.parameter_names.push_back(join_path(base, "weight"));
    pm.parameter_names.push_back(join_path(base, "bias"));
  }
  std::vector<std::uint8_t> omask(dim * dim, 1);
  for (auto h : pm.pruned) mask_cols(omask, dim, dim, h * dh, dh);
  install_mask(attn.o_proj().weight(), std::move(omask));
  pm.parameter_names.push_back(join_path(join_path(path, "o_proj"), "weight"));
  for (Linear<T>* l : {&attn.q_proj(), &attn.k_proj(), &attn.v_proj(), &attn.o_proj()}) {
    if (l->has_adapter()) sync_adapter_masks(*l);
  }
  return pm;
}

template <typename T>
double zero_fraction(std::initializer_list<const Parameter<T>*> params) {
  std::size_t zeros = 0, total = 0;
  for (const auto* p : params) {
    for (const T v : p->value.data()) zeros += (v == T{0}) ? 1 : 0;
    total += p->numel();
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

}  // namespace

template <typename T>
std::vector<NamedLayer<T>> resolve_targets(Model<T>& model, const std::vector<std::string>& selectors) {
  if (selectors.empty()) throw ConfigError("no target selectors given");
  const auto all = model.layers();
  const std::string head = model.head_path();
  std::vector<NamedLayer<T>> out;
  auto add = [&](const NamedLayer<T>& nl) {
    for (const auto& e : out) {
      if (e.layer == nl.layer) return;
    }
    out.push_back(nl);
  };
  for (const auto& sel : selectors) {
    bool matched = false;
    if (sel == kSelectAllConv) {
      for (const auto& nl : all) {
        if (nl.layer->kind() == LayerKind::kConv2d) {
          add(nl);
          matched = true;
        }
      }
    } else if (sel == kSelectLastLinear) {
      for (auto it = all.rbegin(); it != all.rend(); ++it) {
        if (it->layer->kind() == LayerKind::kLinear && it->path != head && !owned_projection(*it)) {
          add(*it);
          matched = true;
          break;
        }
      }
    } else if (sel == kSelectLastAttention) {
      for (auto it = all.rbegin(); it != all.rend(); ++it) {
        if (it->layer->kind() == LayerKind::kMultiHeadAttention) {
          add(*it);
          matched = true;
          break;
        }
      }
    } else {
      std::string path = sel;
      if (path.size() > 7 && path.ends_with(".weight")) path.resize(path.size() - 7);
      for (const auto& nl : all) {
        if (nl.path == path && (is_weight_layer(nl.layer) || nl.layer->kind() == LayerKind::kMultiHeadAttention)) {
          add(nl);
          matched = true;
        }
      }
    }
    if (!matched) throw ConfigError("target selector '" + sel + "' matches no prunable layer");
  }
  std::stable_sort(out.begin(), out.end(), [&](const NamedLayer<T>& a, const NamedLayer<T>& b) {
    auto pos = [&](const NamedLayer<T>& x) {
      for (std::size_t i = 0; i < all.size(); ++i) {
        if (all[i].layer == x.layer) return i;
      }
      return all.size();
    };
    return pos(a) < pos(b);
  });
  return out;
}

template <typename T>
std::vector<double> compute_structure_norms(const BasicTensor<T>& param, StructureAxis axis, std::size_t group) {
  if (param.rank() < 1 || (axis == StructureAxis::kInput && param.rank() < 2)) {
    throw ConfigError("structure axis invalid for parameter shape " + shape_to_string(param.shape()));
  }
  if (group == 0) throw ConfigError("structure group size must be positive");
  const std::size_t rows = param.dim(0);
  const std::size_t cols = param.size() / rows;
  const std::size_t slices = axis == StructureAxis::kOutput ? rows : param.dim(1);
  if (slices % group != 0) {
    throw ConfigError("group size " + std::to_string(group) + " does not divide " + std::to_string(slices) +
                      " slices of " + shape_to_string(param.shape()));
  }
  std::vector<double> sq(slices / group, 0.0);
  if (axis == StructureAxis::kOutput) {
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = static_cast<double>(param[r * cols + c]);
        acc += v * v;
      }
      sq[r / group] += acc;
    }
  } else {
    // dim 1 slices; any trailing dims (conv kernels) belong to the slice.
    const std::size_t d1 = param.dim(1), inner = cols / d1;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d1; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const double v = static_cast<double>(param[(r * d1 + c) * inner + i]);
          acc += v * v;
        }
        sq[c / group] += acc;
      }
    }
  }
  for (auto& v : sq) v = std::sqrt(v);
  return sq;
}

std::vector<std::size_t> select_prune_set(std::span<const double> norms, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("sparsity must lie in [0, 1), got " + std::to_string(sparsity));
  }
  const auto count = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(norms.size())));
  std::vector<std::size_t> order(norms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

template <typename T>
std::vector<PruneMask> apply_prune(Model<T>& model, const PruneTargetSpec& spec) {
  if (!(spec.sparsity >= 0.0 && spec.sparsity < 1.0)) {
    throw ConfigError("sparsity must lie in [0, 1), got " + std::to_string(spec.sparsity));
  }
  const auto targets = resolve_targets(model, spec.selectors);
  for (const auto& nl : targets) {
    if (nl.layer->kind() == LayerKind::kMultiHeadAttention) {
      auto& attn = static_cast<MultiHeadAttention<T>&>(*nl.layer);
      if (attn.q_proj().weight().has_mask()) throw StateError("target " + nl.path + " is already pruned");
    } else if (static_cast<WeightLayer<T>&>(*nl.layer).weight().has_mask()) {
      throw StateError("target " + nl.path + " is already pruned");
    }
  }
  std::vector<PruneMask> masks;
  for (const auto& nl : targets) {
    if (nl.layer->kind() == LayerKind::kMultiHeadAttention) {
      masks.push_back(prune_attention(nl.path, static_cast<MultiHeadAttention<T>&>(*nl.layer), spec.sparsity));
    } else {
      masks.push_back(prune_weight_layer(nl.path, static_cast<WeightLayer<T>&>(*nl.layer), spec.sparsity));
    }
  }
  return masks;
}

template <typename T>
void enforce_masks(Model<T>& model) {
  model.enforce_masks();
}

template <typename T>
void sync_adapter_masks(WeightLayer<T>& layer) {
  if (!layer.has_adapter() || !layer.weight().has_mask()) return;
  auto& ad = layer.adapter();
  const std::size_t rows = layer.d_out(), cols = layer.d_in(), r = ad.rank;
  const auto& wm = layer.weight().mask;
  std::vector<std::uint8_t> bmask(rows * r, 1), amask(r * cols, 1);
  bool any_b = false, any_a = false;
  for (std::size_t o = 0; o < rows; ++o) {
    bool dead = true;
    for (std::size_t i = 0; i < cols && dead; ++i) dead = wm[o * cols + i] == 0;
    if (dead) {
      mask_rows(bmask, r, o, 1);
      any_b = true;
    }
  }
  for (std::size_t i = 0; i < cols; ++i) {
    bool dead = true;
    for (std::size_t o = 0; o < rows && dead; ++o) dead = wm[o * cols + i] == 0;
    if (dead) {
      mask_cols(amask, r, cols, i, 1);
      any_a = true;
    }
  }
  if (any_b) install_mask(ad.b, std::move(bmask));
  if (any_a) install_mask(ad.a, std::move(amask));
}

template <typename T>
std::vector<SparsityEntry> sparsity_report(Model<T>& model) {
  std::vector<SparsityEntry> out;
  for (const auto& nl : model.layers()) {
    if (nl.layer->kind() == LayerKind::kMultiHeadAttention) {
      auto& attn = static_cast<MultiHeadAttention<T>&>(*nl.layer);
      SparsityEntry e{nl.path, LayerKind::kMultiHeadAttention, attn.heads(), 0, 0.0};
      const auto& qm = attn.q_proj().weight().mask;
      const std::size_t dim = attn.dim(), dh = attn.head_dim();
      if (!qm.empty()) {
        for (std::size_t h = 0; h < attn.heads(); ++h) {
          const bool dead = std::all_of(qm.begin() + static_cast<std::ptrdiff_t>(h * dh * dim),
                                        qm.begin() + static_cast<std::ptrdiff_t>((h + 1) * dh * dim),
                                        [](std::uint8_t m) { return m == 0; });
          e.pruned_structures += dead ? 1 : 0;
        }
      }
      e.zero_fraction = zero_fraction<T>({&attn.q_proj().weight(), &attn.k_proj().weight(),
                                          &attn.v_proj().weight(), &attn.o_proj().weight()});
      out.push_back(e);
    } else if (is_weight_layer(nl.layer) &&
               !(nl.parent && nl.parent->kind() == LayerKind::kMultiHeadAttention)) {
      auto& wl = static_cast<WeightLayer<T>&>(*nl.layer);
      SparsityEntry e{nl.path, nl.layer->kind(), wl.d_out(), 0, 0.0};
      const auto& m = wl.weight().mask;
      const std::size_t cols = wl.d_in();
      if (!m.empty()) {
        for (std::size_t o = 0; o < wl.d_out(); ++o) {
          const bool dead = std::all_of(m.begin() + static_cast<std::ptrdiff_t>(o * cols),
                                        m.begin() + static_cast<std::ptrdiff_t>((o + 1) * cols),
                                        [](std::uint8_t v) { return v == 0; });
          e.pruned_structures += dead ? 1 : 0;
        }
      }
      e.zero_fraction = zero_fraction<T>({&wl.weight()});
      out.push_back(e);
    }
  }
  return out;
}

#define UNLEARN_INSTANTIATE_PRUNING(T)                                                                \
  template std::vector<NamedLayer<T>> resolve_targets(Model<T>&, const std::vector<std::string>&);   \
  template std::vector<double> compute_structure_norms(const BasicTensor<T>&, StructureAxis, std::size_t); \
  template std::vector<PruneMask> apply_prune(Model<T>&, const PruneTargetSpec&);                     \
  template void enforce_masks(Model<T>&);                                                             \
  template void sync_adapter_masks(WeightLayer<T>&);                                                  \
  template std::vector<SparsityEntry> sparsity_report(Model<T>&);

UNLEARN_INSTANTIATE_PRUNING(float)
UNLEARN_INSTANTIATE_PRUNING(double)

}  // namespace unlearn
