#include "unlearn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace unlearn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kLinear: return "Linear";
    case LayerKind::kConv2d: return "Conv2d";
    case LayerKind::kMultiHeadAttention: return "MultiHeadAttention";
    case LayerKind::kLayerNorm: return "LayerNorm";
    case LayerKind::kReLU: return "ReLU";
    case LayerKind::kGELU: return "GELU";
    case LayerKind::kPatchEmbed: return "PatchEmbed";
    case LayerKind::kResidualBlock: return "ResidualBlock";
    case LayerKind::kFlatten: return "Flatten";
    case LayerKind::kMeanPool: return "MeanPool";
  }
  return "?";
}

std::string join_path(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// ---------------------------------------------------------------------------
// Parameter

template <typename T>
std::size_t Parameter<T>::unmasked_count() const noexcept {
  if (mask.empty()) return value.size();
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

template <typename T>
void Parameter<T>::apply_mask() {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) value[i] = T{0};
  }
}

template <typename T>
void Parameter<T>::accumulate(std::span<const T> delta) {
  if (!trainable) return;
  T* g = grad.ptr();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

// ---------------------------------------------------------------------------
// Layer

template <typename T>
void Layer<T>::collect_parameters(const std::string&, std::vector<NamedParameter<T>>&) {}

template <typename T>
void Layer<T>::collect_layers(const std::string& prefix, Layer* parent, std::vector<NamedLayer<T>>& out) {
  out.push_back({prefix, this, parent});
}

template <typename T>
void Layer<T>::begin_backward(const char* who) {
  if (!cached_) {
    throw StateError(std::string(who) + ": backward called without a preceding train-mode forward");
  }
}

// ---------------------------------------------------------------------------
// WeightLayer

template <typename T>
WeightLayer<T>::WeightLayer(Shape weight_shape, std::size_t bias_size, bool bias)
    : weight_(std::move(weight_shape)), has_bias_(bias) {
  if (bias) bias_ = Parameter<T>({bias_size});
}

template <typename T>
LoraAdapter<T>& WeightLayer<T>::adapter() {
  if (!adapter_) throw StateError("layer has no LoRA adapter");
  return *adapter_;
}

template <typename T>
const LoraAdapter<T>& WeightLayer<T>::adapter() const {
  if (!adapter_) throw StateError("layer has no LoRA adapter");
  return *adapter_;
}

template <typename T>
void WeightLayer<T>::attach_adapter(std::size_t rank, double alpha, std::mt19937_64& rng) {
  if (adapter_) throw StateError("LoRA adapter already attached");
  if (rank == 0 || rank >= std::min(d_in(), d_out())) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " must be in [1, min(d_in, d_out)) = [1, " +
                      std::to_string(std::min(d_in(), d_out())) + ")");
  }
  if (!(alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
  LoraAdapter<T> ad;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.a = Parameter<T>({rank, d_in()});
  ad.b = Parameter<T>({d_out(), rank});
  std::normal_distribution<double> normal(0.0, 1.0 / static_cast<double>(rank));
  for (auto& v : ad.a.value.data()) v = static_cast<T>(normal(rng));
  adapter_ = std::move(ad);
}

template <typename T>
void WeightLayer<T>::set_adapter(LoraAdapter<T> adapter) {
  if (adapter_) throw StateError("LoRA adapter already attached");
  if (adapter.a.value.shape() != Shape{adapter.rank, d_in()} ||
      adapter.b.value.shape() != Shape{d_out(), adapter.rank}) {
    throw DimensionError("LoRA factor shapes do not match weight [" + std::to_string(d_out()) + "x" +
                         std::to_string(d_in()) + "] at rank " + std::to_string(adapter.rank));
  }
  adapter_ = std::move(adapter);
}

template <typename T>
void WeightLayer<T>::merge_adapter() {
  if (!adapter_) throw StateError("merge_adapter: no adapter attached");
  const LoraAdapter<T>& ad = *adapter_;
  std::vector<T> delta(d_out() * d_in());
  kernels::gemm_nn(d_out(), d_in(), ad.rank, ad.b.value.ptr(), ad.a.value.ptr(), delta.data(), false);
  const T s = ad.scale();
  T* w = weight_.value.ptr();
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (delta[i] != T{0}) w[i] += s * delta[i];
  }
  adapter_.reset();
}

template <typename T>
void WeightLayer<T>::collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  out.push_back({join_path(prefix, "weight"), &weight_, ParamRole::kParam});
  if (has_bias_) out.push_back({join_path(prefix, "bias"), &bias_, ParamRole::kParam});
  if (adapter_) {
    out.push_back({join_path(prefix, "lora_A"), &adapter_->a, ParamRole::kLoraA});
    out.push_back({join_path(prefix, "lora_B"), &adapter_->b, ParamRole::kLoraB});
  }
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, bool bias)
    : WeightLayer<T>({out_features, in_features}, out_features, bias) {}

template <typename T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& x, Mode mode) {
  const std::size_t in = this->d_in(), out_f = this->d_out();
  if (x.rank() < 1 || x.shape().back() != in) {
    throw DimensionError("Linear expects [..., " + std::to_string(in) + "], got " + shape_to_string(x.shape()));
  }
  this->begin_forward(mode);
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  BasicTensor<T> y(out_shape);
  kernels::gemm_nt(rows, out_f, in, x.ptr(), this->weight_.value.ptr(), y.ptr(), false);
  if (this->has_bias_) {
    const T* b = this->bias_.value.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      T* yr = y.ptr() + r * out_f;
      for (std::size_t j = 0; j < out_f; ++j) yr[j] += b[j];
    }
  }
  if (this->adapter_) {
    const auto& ad = *this->adapter_;
    std::vector<T> hidden(rows * ad.rank);
    kernels::gemm_nt(rows, ad.rank, in, x.ptr(), ad.a.value.ptr(), hidden.data(), false);
    std::vector<T> upd(rows * out_f);
    kernels::gemm_nt(rows, out_f, ad.rank, hidden.data(), ad.b.value.ptr(), upd.data(), false);
    const T s = ad.scale();
    for (std::size_t i = 0; i < upd.size(); ++i) y[i] += s * upd[i];
    if (mode == Mode::kTrain) lora_hidden_ = std::move(hidden);
  }
  if (mode == Mode::kTrain) input_ = x;
  return y;
}

template <typename T>
BasicTensor<T> Linear<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("Linear");
  const std::size_t in = this->d_in(), out_f = this->d_out();
  const std::size_t rows = input_.size() / in;
  if (grad_out.size() != rows * out_f) {
    throw DimensionError("Linear backward: grad " + shape_to_string(grad_out.shape()) +
                         " does not match output rows " + std::to_string(rows));
  }
  const T* dy = grad_out.ptr();
  if (this->weight_.trainable) {
    std::vector<T> dw(out_f * in);
    kernels::gemm_tn(out_f, in, rows, dy, input_.ptr(), dw.data(), false);
    this->weight_.accumulate(dw);
  }
  if (this->has_bias_ && this->bias_.trainable) {
    std::vector<T> db(out_f, T{0});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out_f; ++j) db[j] += dy[r * out_f + j];
    }
    this->bias_.accumulate(db);
  }
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = BasicTensor<T>(input_.shape());
    kernels::gemm_nn(rows, in, out_f, dy, this->weight_.value.ptr(), dx.ptr(), false);
  }
  if (this->adapter_) {
    auto& ad = *this->adapter_;
    const T s = ad.scale();
    const std::size_t r = ad.rank;
    if (ad.b.trainable) {
      std::vector<T> db(out_f * r);
      kernels::gemm_tn(out_f, r, rows, dy, lora_hidden_.data(), db.data(), false);
      for (auto& v : db) v *= s;
      ad.b.accumulate(db);
    }
    std::vector<T> dh(rows * r);
    kernels::gemm_nn(rows, r, out_f, dy, ad.b.value.ptr(), dh.data(), false);
    for (auto& v : dh) v *= s;
    if (ad.a.trainable) {
      std::vector<T> da(r * in);
      kernels::gemm_tn(r, in, rows, dh.data(), input_.ptr(), da.data(), false);
      ad.a.accumulate(da);
    }
    if (need_input_grad) kernels::gemm_nn(rows, in, r, dh.data(), ad.a.value.ptr(), dx.ptr(), true);
    lora_hidden_.clear();
  }
  input_ = BasicTensor<T>();
  this->end_backward();
  return dx;
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t padding, bool bias)
    : WeightLayer<T>({out_channels, in_channels, kernel, kernel}, out_channels, bias),
      stride_(stride),
      padding_(padding) {
  if (stride == 0) throw ConfigError("Conv2d stride must be positive");
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x, Mode mode) {
  const ConvGeometry g = conv_geometry(x.shape(), this->weight_.value.shape(), stride_, padding_);
  this->begin_forward(mode);
  const std::size_t q = g.columns(), ckk = g.patch_size(), o = g.out_channels;
  std::vector<T> col(ckk * q);
  im2col(g, x.ptr(), col.data());
  std::vector<T> yt(o * q);
  kernels::gemm_nn(o, q, ckk, this->weight_.value.ptr(), col.data(), yt.data(), false);
  std::vector<T> hidden;
  if (this->adapter_) {
    const auto& ad = *this->adapter_;
    hidden.resize(ad.rank * q);
    kernels::gemm_nn(ad.rank, q, ckk, ad.a.value.ptr(), col.data(), hidden.data(), false);
    std::vector<T> upd(o * q);
    kernels::gemm_nn(o, q, ad.rank, ad.b.value.ptr(), hidden.data(), upd.data(), false);
    const T s = ad.scale();
    for (std::size_t i = 0; i < upd.size(); ++i) yt[i] += s * upd[i];
  }
  BasicTensor<T> y({g.batch, o, g.out_h, g.out_w});
  const std::size_t p = g.positions();
  for (std::size_t oc = 0; oc < o; ++oc) {
    const T bv = this->has_bias_ ? this->bias_.value[oc] : T{0};
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* src = yt.data() + oc * q + n * p;
      T* dst = y.ptr() + (n * o + oc) * p;
      for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] + bv;
    }
  }
  if (mode == Mode::kTrain) {
    geom_ = g;
    col_ = std::move(col);
    lora_hidden_ = std::move(hidden);
  }
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("Conv2d");
  const ConvGeometry& g = geom_;
  const std::size_t q = g.columns(), ckk = g.patch_size(), o = g.out_channels, p = g.positions();
  if (grad_out.shape() != Shape{g.batch, o, g.out_h, g.out_w}) {
    throw DimensionError("Conv2d backward: unexpected grad shape " + shape_to_string(grad_out.shape()));
  }
  std::vector<T> dyt(o * q);
  for (std::size_t oc = 0; oc < o; ++oc) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      std::copy_n(grad_out.ptr() + (n * o + oc) * p, p, dyt.data() + oc * q + n * p);
    }
  }
  if (this->weight_.trainable) {
    std::vector<T> dw(o * ckk);
    kernels::gemm_nt(o, ckk, q, dyt.data(), col_.data(), dw.data(), false);
    this->weight_.accumulate(dw);
  }
  if (this->has_bias_ && this->bias_.trainable) {
    std::vector<T> db(o, T{0});
    for (std::size_t oc = 0; oc < o; ++oc) {
      for (std::size_t i = 0; i < q; ++i) db[oc] += dyt[oc * q + i];
    }
    this->bias_.accumulate(db);
  }
  std::vector<T> dcol;
  if (need_input_grad) {
    dcol.resize(ckk * q);
    kernels::gemm_tn(ckk, q, o, this->weight_.value.ptr(), dyt.data(), dcol.data(), false);
  }
  if (this->adapter_) {
    auto& ad = *this->adapter_;
    const T s = ad.scale();
    const std::size_t r = ad.rank;
    if (ad.b.trainable) {
      std::vector<T> db(o * r);
      kernels::gemm_nt(o, r, q, dyt.data(), lora_hidden_.data(), db.data(), false);
      for (auto& v : db) v *= s;
      ad.b.accumulate(db);
    }
    std::vector<T> dh(r * q);
    kernels::gemm_tn(r, q, o, ad.b.value.ptr(), dyt.data(), dh.data(), false);
    for (auto& v : dh) v *= s;
    if (ad.a.trainable) {
      std::vector<T> da(r * ckk);
      kernels::gemm_nt(r, ckk, q, dh.data(), col_.data(), da.data(), false);
      ad.a.accumulate(da);
    }
    if (need_input_grad) kernels::gemm_tn(ckk, q, r, ad.a.value.ptr(), dh.data(), dcol.data(), true);
  }
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = BasicTensor<T>({g.batch, g.in_channels, g.height, g.width});
    col2im(g, dcol.data(), dx.ptr());
  }
  col_.clear();
  col_.shrink_to_fit();
  lora_hidden_.clear();
  this->end_backward();
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t features, NormLayout layout, double eps)
    : gamma_({features}), beta_({features}), layout_(layout), eps_(eps) {
  gamma_.value.fill(T{1});
}

template <typename T>
std::size_t LayerNorm<T>::group_size(const Shape& shape) const {
  const std::size_t f = gamma_.value.size();
  if (layout_ == NormLayout::kLastDim) {
    if (shape.empty() || shape.back() != f) {
      throw DimensionError("LayerNorm expects [..., " + std::to_string(f) + "], got " + shape_to_string(shape));
    }
    return f;
  }
  if (shape.size() != 4 || shape[1] != f) {
    throw DimensionError("LayerNorm expects [N, " + std::to_string(f) + ", H, W], got " + shape_to_string(shape));
  }
  return shape[1] * shape[2] * shape[3];
}

template <typename T>
BasicTensor<T> LayerNorm<T>::forward(const BasicTensor<T>& x, Mode mode) {
  const std::size_t gsize = group_size(x.shape());
  this->begin_forward(mode);
  const std::size_t groups = x.size() / gsize;
  const std::size_t plane = gsize / gamma_.value.size();
  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat(x.shape());
  std::vector<T> inv_std(groups);
  const T* gm = gamma_.value.ptr();
  const T* bt = beta_.value.ptr();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* xs = x.ptr() + gi * gsize;
    T mean{0};
    for (std::size_t j = 0; j < gsize; ++j) mean += xs[j];
    mean /= static_cast<T>(gsize);
    T var{0};
    for (std::size_t j = 0; j < gsize; ++j) var += (xs[j] - mean) * (xs[j] - mean);
    var /= static_cast<T>(gsize);
    const T istd = T{1} / std::sqrt(var + static_cast<T>(eps_));
    inv_std[gi] = istd;
    T* xh = xhat.ptr() + gi * gsize;
    T* ys = y.ptr() + gi * gsize;
    for (std::size_t j = 0; j < gsize; ++j) {
      xh[j] = (xs[j] - mean) * istd;
      const std::size_t a = j / plane;
      ys[j] = gm[a] * xh[j] + bt[a];
    }
  }
  if (mode == Mode::kTrain) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  }
  return y;
}

template <typename T>
BasicTensor<T> LayerNorm<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("LayerNorm");
  if (grad_out.shape() != xhat_.shape()) {
    throw DimensionError("LayerNorm backward: grad " + shape_to_string(grad_out.shape()) + " vs cached " +
                         shape_to_string(xhat_.shape()));
  }
  const std::size_t gsize = group_size(xhat_.shape());
  const std::size_t groups = xhat_.size() / gsize;
  const std::size_t features = gamma_.value.size();
  const std::size_t plane = gsize / features;
  std::vector<T> dgamma(features, T{0}), dbeta(features, T{0});
  BasicTensor<T> dx;
  if (need_input_grad) dx = BasicTensor<T>(xhat_.shape());
  const T* gm = gamma_.value.ptr();
  std::vector<T> dxhat(gsize);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* dy = grad_out.ptr() + gi * gsize;
    const T* xh = xhat_.ptr() + gi * gsize;
    T sum_d{0}, sum_dx{0};
    for (std::size_t j = 0; j < gsize; ++j) {
      const std::size_t a = j / plane;
      dgamma[a] += dy[j] * xh[j];
      dbeta[a] += dy[j];
      dxhat[j] = dy[j] * gm[a];
      sum_d += dxhat[j];
      sum_dx += dxhat[j] * xh[j];
    }
    if (need_input_grad) {
      const T mean_d = sum_d / static_cast<T>(gsize);
      const T mean_dx = sum_dx / static_cast<T>(gsize);
      T* out = dx.ptr() + gi * gsize;
      for (std::size_t j = 0; j < gsize; ++j) out[j] = inv_std_[gi] * (dxhat[j] - mean_d - xh[j] * mean_dx);
    }
  }
  gamma_.accumulate(dgamma);
  beta_.accumulate(dbeta);
  xhat_ = BasicTensor<T>();
  inv_std_.clear();
  this->end_backward();
  return dx;
}

template <typename T>
void LayerNorm<T>::collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  out.push_back({join_path(prefix, "gamma"), &gamma_, ParamRole::kParam});
  out.push_back({join_path(prefix, "beta"), &beta_, ParamRole::kParam});
}

// ---------------------------------------------------------------------------
// Element-wise and reshaping layers

template <typename T>
BasicTensor<T> ReLU<T>::forward(const BasicTensor<T>& x, Mode mode) {
  this->begin_forward(mode);
  BasicTensor<T> y = x;
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  if (mode == Mode::kTrain) input_ = x;
  return y;
}

template <typename T>
BasicTensor<T> ReLU<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("ReLU");
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(input_[i] > T{0})) dx[i] = T{0};
    }
  }
  input_ = BasicTensor<T>();
  this->end_backward();
  return dx;
}

template <typename T>
BasicTensor<T> GELU<T>::forward(const BasicTensor<T>& x, Mode mode) {
  this->begin_forward(mode);
  BasicTensor<T> y(x.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = T{0.5} * x[i] * (T{1} + std::erf(x[i] * inv_sqrt2));
  }
  if (mode == Mode::kTrain) input_ = x;
  return y;
}

template <typename T>
BasicTensor<T> GELU<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("GELU");
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = BasicTensor<T>(grad_out.shape());
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T x = input_[i];
      const T cdf = T{0.5} * (T{1} + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * x * x);
      dx[i] = grad_out[i] * (cdf + x * pdf);
    }
  }
  input_ = BasicTensor<T>();
  this->end_backward();
  return dx;
}

template <typename T>
BasicTensor<T> Flatten<T>::forward(const BasicTensor<T>& x, Mode mode) {
  if (x.rank() < 2) throw DimensionError("Flatten expects rank >= 2, got " + shape_to_string(x.shape()));
  this->begin_forward(mode);
  if (mode == Mode::kTrain) input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

template <typename T>
BasicTensor<T> Flatten<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("Flatten");
  BasicTensor<T> dx;
  if (need_input_grad) dx = grad_out.reshaped(input_shape_);
  this->end_backward();
  return dx;
}

template <typename T>
BasicTensor<T> MeanPool<T>::forward(const BasicTensor<T>& x, Mode mode) {
  std::size_t n = 0, features = 0, count = 0;
  bool channels_first = false;
  if (x.rank() == 4) {
    n = x.dim(0), features = x.dim(1), count = x.dim(2) * x.dim(3);
    channels_first = true;
  } else if (x.rank() == 3) {
    n = x.dim(0), count = x.dim(1), features = x.dim(2);
  } else {
    throw DimensionError("MeanPool expects [N,C,H,W] or [N,T,D], got " + shape_to_string(x.shape()));
  }
  this->begin_forward(mode);
  BasicTensor<T> y({n, features});
  const T inv = T{1} / static_cast<T>(count);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      T acc{0};
      for (std::size_t c = 0; c < count; ++c) {
        acc += channels_first ? x[(i * features + f) * count + c] : x[(i * count + c) * features + f];
      }
      y[i * features + f] = acc * inv;
    }
  }
  if (mode == Mode::kTrain) input_shape_ = x.shape();
  return y;
}

template <typename T>
BasicTensor<T> MeanPool<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("MeanPool");
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = BasicTensor<T>(input_shape_);
    const bool channels_first = input_shape_.size() == 4;
    const std::size_t n = input_shape_[0];
    const std::size_t features = channels_first ? input_shape_[1] : input_shape_[2];
    const std::size_t count = channels_first ? input_shape_[2] * input_shape_[3] : input_shape_[1];
    const T inv = T{1} / static_cast<T>(count);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t f = 0; f < features; ++f) {
        const T g = grad_out[i * features + f] * inv;
        for (std::size_t c = 0; c < count; ++c) {
          if (channels_first) {
            dx[(i * features + f) * count + c] = g;
          } else {
            dx[(i * count + c) * features + f] = g;
          }
        }
      }
    }
  }
  this->end_backward();
  return dx;
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t dim, std::size_t heads)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  q_ = std::make_unique<Linear<T>>(dim, dim);
  k_ = std::make_unique<Linear<T>>(dim, dim);
  v_ = std::make_unique<Linear<T>>(dim, dim);
  o_ = std::make_unique<Linear<T>>(dim, dim);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const MultiHeadAttention& other)
    : Layer<T>(other),
      dim_(other.dim_),
      heads_(other.heads_),
      q_(std::make_unique<Linear<T>>(*other.q_)),
      k_(std::make_unique<Linear<T>>(*other.k_)),
      v_(std::make_unique<Linear<T>>(*other.v_)),
      o_(std::make_unique<Linear<T>>(*other.o_)),
      input_shape_(other.input_shape_),
      q_out_(other.q_out_),
      k_out_(other.k_out_),
      v_out_(other.v_out_),
      probs_(other.probs_) {}

template <typename T>
BasicTensor<T> MultiHeadAttention<T>::forward(const BasicTensor<T>& x, Mode mode) {
  if (x.rank() != 3 || x.dim(2) != dim_) {
    throw DimensionError("attention expects [N, T, " + std::to_string(dim_) + "], got " + shape_to_string(x.shape()));
  }
  this->begin_forward(mode);
  const std::size_t n = x.dim(0), t = x.dim(1), dh = head_dim();
  BasicTensor<T> q = q_->forward(x, mode);
  BasicTensor<T> k = k_->forward(x, mode);
  BasicTensor<T> v = v_->forward(x, mode);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  probs_.assign(n * heads_ * t * t, T{0});
  BasicTensor<T> mixed({n, t, dim_});
  std::vector<T> row(t);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t h = 0; h < heads_; ++h) {
      T* pb = probs_.data() + (b * heads_ + h) * t * t;
      for (std::size_t i = 0; i < t; ++i) {
        const T* qi = q.ptr() + (b * t + i) * dim_ + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < t; ++j) {
          const T* kj = k.ptr() + (b * t + j) * dim_ + h * dh;
          T s{0};
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          row[j] = s * scale;
          mx = std::max(mx, row[j]);
        }
        T z{0};
        for (std::size_t j = 0; j < t; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        T* out = mixed.ptr() + (b * t + i) * dim_ + h * dh;
        for (std::size_t j = 0; j < t; ++j) {
          const T pij = row[j] / z;
          pb[i * t + j] = pij;
          const T* vj = v.ptr() + (b * t + j) * dim_ + h * dh;
          for (std::size_t d = 0; d < dh; ++d) out[d] += pij * vj[d];
        }
      }
    }
  }
  BasicTensor<T> y = o_->forward(mixed, mode);
  if (mode == Mode::kTrain) {
    input_shape_ = x.shape();
    q_out_ = std::move(q);
    k_out_ = std::move(k);
    v_out_ = std::move(v);
  }
  return y;
}

template <typename T>
BasicTensor<T> MultiHeadAttention<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("MultiHeadAttention");
  const std::size_t n = input_shape_[0], t = input_shape_[1], dh = head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  BasicTensor<T> dmixed = o_->backward(grad_out, true);
  BasicTensor<T> dq(q_out_.shape()), dk(k_out_.shape()), dv(v_out_.shape());
  std::vector<T> dp(t), ds(t);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const T* pb = probs_.data() + (b * heads_ + h) * t * t;
      for (std::size_t i = 0; i < t; ++i) {
        const T* dout = dmixed.ptr() + (b * t + i) * dim_ + h * dh;
        T dot{0};
        for (std::size_t j = 0; j < t; ++j) {
          const T* vj = v_out_.ptr() + (b * t + j) * dim_ + h * dh;
          T* dvj = dv.ptr() + (b * t + j) * dim_ + h * dh;
          const T pij = pb[i * t + j];
          T s{0};
          for (std::size_t d = 0; d < dh; ++d) {
            s += dout[d] * vj[d];
            dvj[d] += pij * dout[d];
          }
          dp[j] = s;
          dot += s * pij;
        }
        const T* qi = q_out_.ptr() + (b * t + i) * dim_ + h * dh;
        T* dqi = dq.ptr() + (b * t + i) * dim_ + h * dh;
        for (std::size_t j = 0; j < t; ++j) {
          const T dsij = pb[i * t + j] * (dp[j] - dot) * scale;
          const T* kj = k_out_.ptr() + (b * t + j) * dim_ + h * dh;
          T* dkj = dk.ptr() + (b * t + j) * dim_ + h * dh;
          for (std::size_t d = 0; d < dh; ++d) {
            dqi[d] += dsij * kj[d];
            dkj[d] += dsij * qi[d];
          }
        }
      }
    }
  }
  BasicTensor<T> dx_q = q_->backward(dq, need_input_grad);
  BasicTensor<T> dx_k = k_->backward(dk, need_input_grad);
  BasicTensor<T> dx_v = v_->backward(dv, need_input_grad);
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = std::move(dx_q);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_k[i] + dx_v[i];
  }
  q_out_ = k_out_ = v_out_ = BasicTensor<T>();
  this->end_backward();
  return dx;
}

template <typename T>
void MultiHeadAttention<T>::collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  q_->collect_parameters(join_path(prefix, "q_proj"), out);
  k_->collect_parameters(join_path(prefix, "k_proj"), out);
  v_->collect_parameters(join_path(prefix, "v_proj"), out);
  o_->collect_parameters(join_path(prefix, "o_proj"), out);
}

template <typename T>
void MultiHeadAttention<T>::collect_layers(const std::string& prefix, Layer<T>* parent,
                                           std::vector<NamedLayer<T>>& out) {
  out.push_back({prefix, this, parent});
  q_->collect_layers(join_path(prefix, "q_proj"), this, out);
  k_->collect_layers(join_path(prefix, "k_proj"), this, out);
  v_->collect_layers(join_path(prefix, "v_proj"), this, out);
  o_->collect_layers(join_path(prefix, "o_proj"), this, out);
}

// ---------------------------------------------------------------------------
// PatchEmbed

template <typename T>
PatchEmbed<T>::PatchEmbed(std::size_t in_channels, std::size_t image_size, std::size_t patch, std::size_t dim)
    : in_channels_(in_channels), image_size_(image_size), patch_(patch), dim_(dim) {
  if (patch == 0 || image_size % patch != 0) {
    throw ConfigError("image side " + std::to_string(image_size) + " not divisible by patch " +
                      std::to_string(patch));
  }
  tokens_ = (image_size / patch) * (image_size / patch);
  proj_ = std::make_unique<Linear<T>>(in_channels * patch * patch, dim);
  pos_ = Parameter<T>({tokens_, dim});
}

template <typename T>
PatchEmbed<T>::PatchEmbed(const PatchEmbed& other)
    : Layer<T>(other),
      in_channels_(other.in_channels_),
      image_size_(other.image_size_),
      patch_(other.patch_),
      dim_(other.dim_),
      tokens_(other.tokens_),
      proj_(std::make_unique<Linear<T>>(*other.proj_)),
      pos_(other.pos_),
      input_shape_(other.input_shape_) {}

template <typename T>
BasicTensor<T> PatchEmbed<T>::forward(const BasicTensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != in_channels_ || x.dim(2) != image_size_ || x.dim(3) != image_size_) {
    throw DimensionError("PatchEmbed expects [N, " + std::to_string(in_channels_) + ", " +
                         std::to_string(image_size_) + ", " + std::to_string(image_size_) + "], got " +
                         shape_to_string(x.shape()));
  }
  this->begin_forward(mode);
  const std::size_t n = x.dim(0), side = image_size_ / patch_, feat = in_channels_ * patch_ * patch_;
  BasicTensor<T> patches({n, tokens_, feat});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t pi = 0; pi < side; ++pi) {
      for (std::size_t pj = 0; pj < side; ++pj) {
        T* dst = patches.ptr() + (b * tokens_ + pi * side + pj) * feat;
        for (std::size_t c = 0; c < in_channels_; ++c) {
          for (std::size_t di = 0; di < patch_; ++di) {
            const T* src = x.ptr() + ((b * in_channels_ + c) * image_size_ + pi * patch_ + di) * image_size_ + pj * patch_;
            std::copy_n(src, patch_, dst + (c * patch_ + di) * patch_);
          }
        }
      }
    }
  }
  BasicTensor<T> y = proj_->forward(patches, mode);
  for (std::size_t b = 0; b < n; ++b) {
    T* yb = y.ptr() + b * tokens_ * dim_;
    for (std::size_t i = 0; i < tokens_ * dim_; ++i) yb[i] += pos_.value[i];
  }
  if (mode == Mode::kTrain) input_shape_ = x.shape();
  return y;
}

template <typename T>
BasicTensor<T> PatchEmbed<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("PatchEmbed");
  const std::size_t n = input_shape_[0], side = image_size_ / patch_, feat = in_channels_ * patch_ * patch_;
  if (pos_.trainable) {
    std::vector<T> dpos(tokens_ * dim_, T{0});
    for (std::size_t b = 0; b < n; ++b) {
      const T* g = grad_out.ptr() + b * tokens_ * dim_;
      for (std::size_t i = 0; i < dpos.size(); ++i) dpos[i] += g[i];
    }
    pos_.accumulate(dpos);
  }
  BasicTensor<T> dpatches = proj_->backward(grad_out, need_input_grad);
  BasicTensor<T> dx;
  if (need_input_grad) {
    dx = BasicTensor<T>(input_shape_);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t pi = 0; pi < side; ++pi) {
        for (std::size_t pj = 0; pj < side; ++pj) {
          const T* src = dpatches.ptr() + (b * tokens_ + pi * side + pj) * feat;
          for (std::size_t c = 0; c < in_channels_; ++c) {
            for (std::size_t di = 0; di < patch_; ++di) {
              T* dst = dx.ptr() + ((b * in_channels_ + c) * image_size_ + pi * patch_ + di) * image_size_ + pj * patch_;
              std::copy_n(src + (c * patch_ + di) * patch_, patch_, dst);
            }
          }
        }
      }
    }
  }
  this->end_backward();
  return dx;
}

template <typename T>
void PatchEmbed<T>::collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  proj_->collect_parameters(join_path(prefix, "proj"), out);
  out.push_back({join_path(prefix, "pos"), &pos_, ParamRole::kParam});
}

template <typename T>
void PatchEmbed<T>::collect_layers(const std::string& prefix, Layer<T>* parent, std::vector<NamedLayer<T>>& out) {
  out.push_back({prefix, this, parent});
  proj_->collect_layers(join_path(prefix, "proj"), this, out);
}

// ---------------------------------------------------------------------------
// ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(LayerList body, LayerList shortcut)
    : body_(std::move(body)), shortcut_(std::move(shortcut)) {
  if (body_.empty()) throw ConfigError("residual block needs a non-empty body");
}

template <typename T>
ResidualBlock<T>::ResidualBlock(const ResidualBlock& other) : Layer<T>(other) {
  for (const auto& l : other.body_) body_.push_back(l->clone());
  for (const auto& l : other.shortcut_) shortcut_.push_back(l->clone());
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::forward(const BasicTensor<T>& x, Mode mode) {
  this->begin_forward(mode);
  BasicTensor<T> y = x;
  for (auto& l : body_) y = l->forward(y, mode);
  BasicTensor<T> skip = x;
  for (auto& l : shortcut_) skip = l->forward(skip, mode);
  if (skip.shape() != y.shape()) {
    throw DimensionError("residual shapes disagree: body " + shape_to_string(y.shape()) + ", shortcut " +
                         shape_to_string(skip.shape()));
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += skip[i];
  return y;
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::backward(const BasicTensor<T>& grad_out, bool need_input_grad) {
  this->begin_backward("ResidualBlock");
  BasicTensor<T> g = grad_out;
  for (std::size_t i = body_.size(); i-- > 0;) g = body_[i]->backward(g, need_input_grad || i > 0);
  BasicTensor<T> gs = grad_out;
  for (std::size_t i = shortcut_.size(); i-- > 0;) gs = shortcut_[i]->backward(gs, need_input_grad || i > 0);
  this->end_backward();
  if (!need_input_grad) return {};
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs[i];
  return g;
}

template <typename T>
void ResidualBlock<T>::collect_parameters(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
  for (std::size_t i = 0; i < body_.size(); ++i) {
    body_[i]->collect_parameters(join_path(prefix, "body." + std::to_string(i)), out);
  }
  for (std::size_t i = 0; i < shortcut_.size(); ++i) {
    shortcut_[i]->collect_parameters(join_path(prefix, "shortcut." + std::to_string(i)), out);
  }
}

template <typename T>
void ResidualBlock<T>::collect_layers(const std::string& prefix, Layer<T>* parent, std::vector<NamedLayer<T>>& out) {
  out.push_back({prefix, this, parent});
  for (std::size_t i = 0; i < body_.size(); ++i) {
    body_[i]->collect_layers(join_path(prefix, "body." + std::to_string(i)), this, out);
  }
  for (std::size_t i = 0; i < shortcut_.size(); ++i) {
    shortcut_[i]->collect_layers(join_path(prefix, "shortcut." + std::to_string(i)), this, out);
  }
}

#define UNLEARN_INSTANTIATE_LAYERS(T)  \
  template struct Parameter<T>;        \
  template class Layer<T>;             \
  template class WeightLayer<T>;       \
  template class Linear<T>;            \
  template class Conv2d<T>;            \
  template class LayerNorm<T>;         \
  template class ReLU<T>;              \
  template class GELU<T>;              \
  template class Flatten<T>;           \
  template class MeanPool<T>;          \
  template class MultiHeadAttention<T>; \
  template class PatchEmbed<T>;        \
  template class ResidualBlock<T>;

UNLEARN_INSTANTIATE_LAYERS(float)
UNLEARN_INSTANTIATE_LAYERS(double)

}  // namespace unlearn
