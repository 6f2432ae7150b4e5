#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "unlearn/layers.hpp"

namespace unlearn {

enum class ModelKind { kSmallCnn, kTinyVit, kCustom };

/// Architecture descriptor. Its text form doubles as the model name stored
/// in checkpoints, which is enough to rebuild the layer graph on load.
struct ModelSpec {
  ModelKind kind = ModelKind::kCustom;
  std::size_t class_count = 0;
  std::size_t in_channels = 3;
  std::size_t image_size = 0;         // tiny-vit only
  std::vector<std::size_t> channels;  // small-cnn only
  std::size_t patch = 0, dim = 0, heads = 0, depth = 0, mlp_ratio = 2;
  std::string label;                  // custom models only

  std::string to_string() const;
  static ModelSpec parse(const std::string& text);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Ordered layer graph ending in a linear classifier head.
template <typename T>
class Model {
 public:
  using LayerList = std::vector<std::unique_ptr<Layer<T>>>;

  Model(ModelSpec spec, LayerList layers);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  std::string name() const { return spec_.to_string(); }
  std::size_t class_count() const { return spec_.class_count; }

  /// Logits [N, K]. Train mode populates the caches backward consumes.
  BasicTensor<T> forward(const BasicTensor<T>& batch, Mode mode);
  /// Accumulates dLoss/dparam into every trainable parameter.
  void backward(const BasicTensor<T>& grad_logits);

  std::vector<NamedParameter<T>> parameters();
  std::vector<NamedLayer<T>> layers();
  Parameter<T>* find_parameter(const std::string& name);

  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  /// The final Linear layer; its path is "layers.<last>".
  Linear<T>& head();
  std::string head_path() const { return "layers." + std::to_string(layers_.size() - 1); }

  void zero_grad();
  void set_trainable(bool trainable);
  /// Re-zeroes every masked parameter element.
  void enforce_masks();

 private:
  ModelSpec spec_;
  LayerList layers_;
  bool pending_backward_ = false;
};

/// Sum of parameter element counts (adapters included); `trainable_only`
/// filters by the per-parameter flag.
template <typename T>
std::size_t count_params(Model<T>& model, bool trainable_only);

}  // namespace unlearn
