#include "unlearn/models.hpp"

#include <cmath>
#include <random>

namespace unlearn {

namespace {

template <typename T>
void kaiming_uniform(Parameter<T>& p, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void gaussian(Parameter<T>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : p.value.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
std::unique_ptr<Conv2d<T>> make_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                                     std::size_t pad, std::mt19937_64& rng) {
  auto conv = std::make_unique<Conv2d<T>>(in, out, k, stride, pad, false);
  kaiming_uniform(conv->weight(), in * k * k, rng);
  return conv;
}

template <typename T>
std::unique_ptr<Linear<T>> make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  auto lin = std::make_unique<Linear<T>>(in, out, true);
  kaiming_uniform(lin->weight(), in, rng);
  return lin;
}

}  // namespace

template <typename T>
Model<T> build_small_cnn(const std::vector<std::size_t>& channels, std::size_t class_count, std::uint64_t seed,
                         const CnnOptions& options) {
  if (channels.empty()) throw ConfigError("small-cnn needs at least one channel stage");
  if (class_count < 2) throw ConfigError("small-cnn needs at least two classes");
  for (auto c : channels) {
    if (c == 0) throw ConfigError("small-cnn channel counts must be positive");
  }
  std::mt19937_64 rng(seed);
  const std::size_t k = options.kernel, pad = k / 2;
  typename Model<T>::LayerList layers;
  layers.push_back(make_conv<T>(options.in_channels, channels[0], k, 1, pad, rng));
  layers.push_back(std::make_unique<LayerNorm<T>>(channels[0], NormLayout::kChannelsFirst));
  layers.push_back(std::make_unique<ReLU<T>>());
  std::size_t prev = channels[0];
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::size_t c = channels[i];
    const std::size_t stride = i == 0 ? 1 : 2;
    typename ResidualBlock<T>::LayerList body, shortcut;
    body.push_back(make_conv<T>(prev, c, k, stride, pad, rng));
    body.push_back(std::make_unique<LayerNorm<T>>(c, NormLayout::kChannelsFirst));
    body.push_back(std::make_unique<ReLU<T>>());
    body.push_back(make_conv<T>(c, c, k, 1, pad, rng));
    body.push_back(std::make_unique<LayerNorm<T>>(c, NormLayout::kChannelsFirst));
    body.push_back(std::make_unique<ReLU<T>>());
    if (stride != 1 || prev != c) shortcut.push_back(make_conv<T>(prev, c, 1, stride, 0, rng));
    layers.push_back(std::make_unique<ResidualBlock<T>>(std::move(body), std::move(shortcut)));
    prev = c;
  }
  layers.push_back(std::make_unique<MeanPool<T>>());
  layers.push_back(make_linear<T>(prev, class_count, rng));

  ModelSpec spec;
  spec.kind = ModelKind::kSmallCnn;
  spec.class_count = class_count;
  spec.in_channels = options.in_channels;
  spec.channels = channels;
  return Model<T>(std::move(spec), std::move(layers));
}

template <typename T>
Model<T> build_tiny_vit(std::size_t patch, std::size_t dim, std::size_t heads, std::size_t depth,
                        std::size_t class_count, std::uint64_t seed, const VitOptions& options) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("tiny-vit dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (depth == 0) throw ConfigError("tiny-vit depth must be positive");
  if (class_count < 2) throw ConfigError("tiny-vit needs at least two classes");
  std::mt19937_64 rng(seed);
  typename Model<T>::LayerList layers;
  auto embed = std::make_unique<PatchEmbed<T>>(options.in_channels, options.image_size, patch, dim);
  kaiming_uniform(embed->proj().weight(), options.in_channels * patch * patch, rng);
  gaussian(embed->position(), 0.02, rng);
  layers.push_back(std::move(embed));
  const std::size_t hidden = dim * options.mlp_ratio;
  for (std::size_t d = 0; d < depth; ++d) {
    typename ResidualBlock<T>::LayerList attn_body, mlp_body;
    attn_body.push_back(std::make_unique<LayerNorm<T>>(dim, NormLayout::kLastDim));
    auto attn = std::make_unique<MultiHeadAttention<T>>(dim, heads);
    for (Linear<T>* proj : {&attn->q_proj(), &attn->k_proj(), &attn->v_proj(), &attn->o_proj()}) {
      gaussian(proj->weight(), 0.02, rng);
    }
    attn_body.push_back(std::move(attn));
    layers.push_back(std::make_unique<ResidualBlock<T>>(std::move(attn_body), typename ResidualBlock<T>::LayerList{}));

    mlp_body.push_back(std::make_unique<LayerNorm<T>>(dim, NormLayout::kLastDim));
    mlp_body.push_back(make_linear<T>(dim, hidden, rng));
    mlp_body.push_back(std::make_unique<GELU<T>>());
    mlp_body.push_back(make_linear<T>(hidden, dim, rng));
    layers.push_back(std::make_unique<ResidualBlock<T>>(std::move(mlp_body), typename ResidualBlock<T>::LayerList{}));
  }
  layers.push_back(std::make_unique<LayerNorm<T>>(dim, NormLayout::kLastDim));
  layers.push_back(std::make_unique<MeanPool<T>>());
  layers.push_back(make_linear<T>(dim, class_count, rng));

  ModelSpec spec;
  spec.kind = ModelKind::kTinyVit;
  spec.class_count = class_count;
  spec.in_channels = options.in_channels;
  spec.image_size = options.image_size;
  spec.patch = patch;
  spec.dim = dim;
  spec.heads = heads;
  spec.depth = depth;
  spec.mlp_ratio = options.mlp_ratio;
  return Model<T>(std::move(spec), std::move(layers));
}

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case ModelKind::kSmallCnn:
      return build_small_cnn<T>(spec.channels, spec.class_count, seed, CnnOptions{spec.in_channels, 3});
    case ModelKind::kTinyVit:
      return build_tiny_vit<T>(spec.patch, spec.dim, spec.heads, spec.depth, spec.class_count, seed,
                               VitOptions{spec.in_channels, spec.image_size, spec.mlp_ratio});
    case ModelKind::kCustom:
      break;
  }
  throw ConfigError("cannot rebuild a custom model from its descriptor: " + spec.to_string());
}

template Model<float> build_small_cnn(const std::vector<std::size_t>&, std::size_t, std::uint64_t, const CnnOptions&);
template Model<double> build_small_cnn(const std::vector<std::size_t>&, std::size_t, std::uint64_t, const CnnOptions&);
template Model<float> build_tiny_vit(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::uint64_t,
                                     const VitOptions&);
template Model<double> build_tiny_vit(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::uint64_t,
                                      const VitOptions&);
template Model<float> build_model(const ModelSpec&, std::uint64_t);
template Model<double> build_model(const ModelSpec&, std::uint64_t);

}  // namespace unlearn
