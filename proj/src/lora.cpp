#include "unlearn/lora.hpp"

#include <random>

#include "unlearn/pruning.hpp"

namespace unlearn {

namespace {

template <typename T>
std::vector<NamedLayer<T>> adapter_targets(Model<T>& model, const std::vector<std::string>& selectors) {
  std::vector<NamedLayer<T>> out;
  for (const auto& nl : resolve_targets(model, selectors)) {
    if (nl.layer->kind() == LayerKind::kMultiHeadAttention) {
      auto& attn = static_cast<MultiHeadAttention<T>&>(*nl.layer);
      out.push_back({join_path(nl.path, "q_proj"), &attn.q_proj(), nl.layer});
      out.push_back({join_path(nl.path, "k_proj"), &attn.k_proj(), nl.layer});
      out.push_back({join_path(nl.path, "v_proj"), &attn.v_proj(), nl.layer});
      out.push_back({join_path(nl.path, "o_proj"), &attn.o_proj(), nl.layer});
    } else {
      out.push_back(nl);
    }
  }
  return out;
}

template <typename T>
std::vector<WeightLayer<T>*> adapted_layers(Model<T>& model) {
  std::vector<WeightLayer<T>*> out;
  for (const auto& nl : model.layers()) {
    if (nl.layer->kind() == LayerKind::kLinear || nl.layer->kind() == LayerKind::kConv2d) {
      auto* wl = static_cast<WeightLayer<T>*>(nl.layer);
      if (wl->has_adapter()) out.push_back(wl);
    }
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<std::string> attach_adapters(Model<T>& model, const LoraConfig& cfg, std::uint64_t seed) {
  if (cfg.rank == 0) throw ConfigError("LoRA rank must be >= 1");
  if (!(cfg.alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
  const auto targets = adapter_targets(model, cfg.selectors);
  for (const auto& nl : targets) {
    auto& wl = static_cast<WeightLayer<T>&>(*nl.layer);
    if (wl.has_adapter()) throw StateError("target " + nl.path + " already has an adapter");
    if (cfg.rank >= std::min(wl.d_in(), wl.d_out())) {
      throw ConfigError("LoRA rank " + std::to_string(cfg.rank) + " not below min(d_in, d_out) = " +
                        std::to_string(std::min(wl.d_in(), wl.d_out())) + " for " + nl.path);
    }
  }
  model.set_trainable(false);
  std::mt19937_64 rng(seed);
  std::vector<std::string> paths;
  for (const auto& nl : targets) {
    auto& wl = static_cast<WeightLayer<T>&>(*nl.layer);
    wl.attach_adapter(cfg.rank, cfg.alpha, rng);
    sync_adapter_masks(wl);
    paths.push_back(nl.path);
  }
  for (auto& np : model.parameters()) {
    if (np.role != ParamRole::kParam) np.param->trainable = true;
  }
  if (cfg.train_head) {
    model.head().weight().trainable = true;
    if (model.head().has_bias()) model.head().bias().trainable = true;
  }
  return paths;
}

template <typename T>
BasicTensor<T> lora_forward(WeightLayer<T>& layer, const BasicTensor<T>& x) {
  if (!layer.has_adapter()) throw StateError("lora_forward: layer has no adapter");
  return layer.forward(x, Mode::kEval);
}

template <typename T>
void merge_adapter(WeightLayer<T>& layer) {
  layer.merge_adapter();
  layer.weight().apply_mask();
}

template <typename T>
std::size_t merge_all_adapters(Model<T>& model) {
  const auto layers = adapted_layers(model);
  for (auto* wl : layers) merge_adapter(*wl);
  return layers.size();
}

template <typename T>
std::size_t lora_trainable_count(Model<T>& model) {
  std::size_t total = 0;
  for (auto* wl : adapted_layers(model)) {
    total += wl->adapter().rank * (wl->d_in() + wl->d_out());
  }
  auto& head = model.head();
  if (head.weight().trainable) total += head.weight().numel();
  if (head.has_bias() && head.bias().trainable) total += head.bias().numel();
  return total;
}

#define UNLEARN_INSTANTIATE_LORA(T)                                                                  \
  template std::vector<std::string> attach_adapters(Model<T>&, const LoraConfig&, std::uint64_t);  \
  template BasicTensor<T> lora_forward(WeightLayer<T>&, const BasicTensor<T>&);                      \
  template void merge_adapter(WeightLayer<T>&);                                                      \
  template std::size_t merge_all_adapters(Model<T>&);                                                \
  template std::size_t lora_trainable_count(Model<T>&);

UNLEARN_INSTANTIATE_LORA(float)
UNLEARN_INSTANTIATE_LORA(double)

}  // namespace unlearn
