#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "unlearn/ops.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

enum class LayerKind {
  kLinear,
  kConv2d,
  kMultiHeadAttention,
  kLayerNorm,
  kReLU,
  kGELU,
  kPatchEmbed,
  kResidualBlock,
  kFlatten,
  kMeanPool,
};

std::string_view to_string(LayerKind kind);

enum class Mode { kTrain, kEval };

/// A value/gradient pair plus the bookkeeping unlearning needs: a trainable
/// flag and an optional structured-pruning mask (1 = kept, 0 = pruned).
template <typename T>
struct Parameter {
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
  std::vector<std::uint8_t> mask;

  Parameter() = default;
  explicit Parameter(Shape shape) : value(shape), grad(shape) {}

  bool has_mask() const noexcept { return !mask.empty(); }
  std::size_t numel() const noexcept { return value.size(); }
  std::size_t unmasked_count() const noexcept;
  void zero_grad() { grad.fill(T{0}); }
  /// Re-zeroes masked elements of `value`. No-op without a mask.
  void apply_mask();
  /// grad += delta (element-wise), skipped for frozen parameters.
  void accumulate(std::span<const T> delta);
};

enum class ParamRole { kParam, kLoraA, kLoraB };

template <typename T>
struct NamedParameter {
  std::string name;
  Parameter<T>* param = nullptr;
  ParamRole role = ParamRole::kParam;
};

/// Low-rank update scale * B * A attached to a weight viewed as
/// [d_out, d_in] (conv kernels flatten to [O, C*kh*kw]).
template <typename T>
struct LoraAdapter {
  Parameter<T> a;  // [rank, d_in]
  Parameter<T> b;  // [d_out, rank]
  std::size_t rank = 0;
  double alpha = 0.0;

  T scale() const { return static_cast<T>(alpha / static_cast<double>(rank)); }
};

template <typename T>
class Layer;

template <typename T>
struct NamedLayer {
  std::string path;
  Layer<T>* layer = nullptr;
  Layer<T>* parent = nullptr;
};

/// Forward/backward contract shared by every layer.
///
/// A train-mode forward caches what backward needs; backward consumes the
/// cache. Calling backward without a preceding train-mode forward raises
/// StateError. Parameter gradients accumulate (+=) and are skipped entirely
/// for frozen parameters.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) = 0;
  /// Returns dL/dx, or an empty tensor when `need_input_grad` is false.
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual void collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out);
  virtual void collect_layers(const std::string& prefix, Layer* parent, std::vector<NamedLayer<T>>& out);

  bool has_cache() const noexcept { return cached_; }

 protected:
  void begin_forward(Mode mode) { cached_ = (mode == Mode::kTrain); }
  void begin_backward(const char* who);
  void end_backward() { cached_ = false; }

 private:
  bool cached_ = false;
};

std::string join_path(const std::string& prefix, const std::string& name);

/// Shared base of Linear and Conv2d: a weight viewed as [d_out, d_in], an
/// optional bias, and an optional LoRA adapter.
template <typename T>
class WeightLayer : public Layer<T> {
 public:
  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  bool has_bias() const noexcept { return has_bias_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& bias() const { return bias_; }

  std::size_t d_out() const { return weight_.value.dim(0); }
  std::size_t d_in() const { return weight_.value.size() / weight_.value.dim(0); }

  bool has_adapter() const noexcept { return adapter_.has_value(); }
  LoraAdapter<T>& adapter();
  const LoraAdapter<T>& adapter() const;

  /// Installs an adapter with A ~ Gaussian(0, std = 1/rank) and B = 0.
  void attach_adapter(std::size_t rank, double alpha, std::mt19937_64& rng);
  /// Installs an adapter with explicit factors (used by checkpoint loading).
  void set_adapter(LoraAdapter<T> adapter);
  /// W <- W + scale * B * A, then drops the adapter.
  void merge_adapter();

  void collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;

 protected:
  WeightLayer(Shape weight_shape, std::size_t bias_size, bool bias);

  Parameter<T> weight_;
  Parameter<T> bias_;
  bool has_bias_ = false;
  std::optional<LoraAdapter<T>> adapter_;
};

/// y = x W^T + b over the last dimension of x.
template <typename T>
class Linear final : public WeightLayer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features, bool bias = true);

  LayerKind kind() const override { return LayerKind::kLinear; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

  std::size_t in_features() const { return this->d_in(); }
  std::size_t out_features() const { return this->d_out(); }

 private:
  BasicTensor<T> input_;
  std::vector<T> lora_hidden_;  // x A^T, [rows, rank]
};

template <typename T>
class Conv2d final : public WeightLayer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool bias = false);

  LayerKind kind() const override { return LayerKind::kConv2d; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }
  std::size_t kernel_size() const { return this->weight_.value.dim(2); }

 private:
  std::size_t stride_;
  std::size_t padding_;
  ConvGeometry geom_;
  std::vector<T> col_;
  std::vector<T> lora_hidden_;  // A col, [rank, columns]
};

enum class NormLayout {
  kLastDim,        // [..., D]: normalize over D, affine over D
  kChannelsFirst,  // [N, C, H, W]: normalize over C*H*W per sample, affine per channel
};

template <typename T>
class LayerNorm final : public Layer<T> {
 public:
  LayerNorm(std::size_t features, NormLayout layout, double eps = 1e-5);

  LayerKind kind() const override { return LayerKind::kLayerNorm; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LayerNorm>(*this); }
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  NormLayout layout() const { return layout_; }

 private:
  std::size_t group_size(const Shape& shape) const;

  Parameter<T> gamma_;
  Parameter<T> beta_;
  NormLayout layout_;
  double eps_;
  BasicTensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kReLU; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  BasicTensor<T> input_;
};

/// Exact (erf-based) GELU.
template <typename T>
class GELU final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kGELU; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GELU>(*this); }

 private:
  BasicTensor<T> input_;
};

/// [N, ...] -> [N, prod(...)]
template <typename T>
class Flatten final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kFlatten; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  Shape input_shape_;
};

/// Spatial mean for [N,C,H,W] -> [N,C]; token mean for [N,T,D] -> [N,D].
template <typename T>
class MeanPool final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::kMeanPool; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MeanPool>(*this); }

 private:
  Shape input_shape_;
};

/// Multi-head self-attention over [N, T, D] with scaled dot-product scores.
template <typename T>
class MultiHeadAttention final : public Layer<T> {
 public:
  MultiHeadAttention(std::size_t dim, std::size_t heads);
  MultiHeadAttention(const MultiHeadAttention& other);

  LayerKind kind() const override { return LayerKind::kMultiHeadAttention; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MultiHeadAttention>(*this); }
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  void collect_layers(const std::string& prefix, Layer<T>* parent, std::vector<NamedLayer<T>>& out) override;

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return dim_ / heads_; }

  Linear<T>& q_proj() { return *q_; }
  Linear<T>& k_proj() { return *k_; }
  Linear<T>& v_proj() { return *v_; }
  Linear<T>& o_proj() { return *o_; }

  /// Attention probabilities of the most recent forward, [N, heads, T, T].
  const std::vector<T>& last_attention() const { return probs_; }

 private:
  std::size_t dim_;
  std::size_t heads_;
  std::unique_ptr<Linear<T>> q_, k_, v_, o_;
  Shape input_shape_;
  BasicTensor<T> q_out_, k_out_, v_out_;
  std::vector<T> probs_;
};

/// Splits [N,C,H,W] into non-overlapping patches, projects each to `dim`
/// and adds a learned position embedding. Output [N, T, dim].
template <typename T>
class PatchEmbed final : public Layer<T> {
 public:
  PatchEmbed(std::size_t in_channels, std::size_t image_size, std::size_t patch, std::size_t dim);
  PatchEmbed(const PatchEmbed& other);

  LayerKind kind() const override { return LayerKind::kPatchEmbed; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<PatchEmbed>(*this); }
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  void collect_layers(const std::string& prefix, Layer<T>* parent, std::vector<NamedLayer<T>>& out) override;

  Linear<T>& proj() { return *proj_; }
  Parameter<T>& position() { return pos_; }
  std::size_t tokens() const { return tokens_; }

 private:
  std::size_t in_channels_, image_size_, patch_, dim_, tokens_;
  std::unique_ptr<Linear<T>> proj_;
  Parameter<T> pos_;
  Shape input_shape_;
};

/// y = body(x) + shortcut(x); an empty shortcut is the identity.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  using LayerList = std::vector<std::unique_ptr<Layer<T>>>;

  ResidualBlock(LayerList body, LayerList shortcut);
  ResidualBlock(const ResidualBlock& other);

  LayerKind kind() const override { return LayerKind::kResidualBlock; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, bool need_input_grad = true) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  void collect_layers(const std::string& prefix, Layer<T>* parent, std::vector<NamedLayer<T>>& out) override;

  LayerList& body() { return body_; }
  LayerList& shortcut() { return shortcut_; }

 private:
  LayerList body_;
  LayerList shortcut_;
};

}  // namespace unlearn
