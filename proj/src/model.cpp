#include "unlearn/model.hpp"

#include <sstream>

namespace unlearn {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("model descriptor: bad value '" + text + "' for " + key);
  }
}

}  // namespace

std::string ModelSpec::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case ModelKind::kSmallCnn:
      os << "small-cnn classes=" << class_count << " in=" << in_channels << " channels=" << join_sizes(channels);
      break;
    case ModelKind::kTinyVit:
      os << "tiny-vit classes=" << class_count << " in=" << in_channels << " image=" << image_size
         << " patch=" << patch << " dim=" << dim << " heads=" << heads << " depth=" << depth
         << " mlp=" << mlp_ratio;
      break;
    case ModelKind::kCustom:
      os << "custom classes=" << class_count;
      if (!label.empty()) os << " label=" << label;
      break;
  }
  return os.str();
}

ModelSpec ModelSpec::parse(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  ModelSpec spec;
  if (kind == "small-cnn") {
    spec.kind = ModelKind::kSmallCnn;
  } else if (kind == "tiny-vit") {
    spec.kind = ModelKind::kTinyVit;
  } else if (kind == "custom") {
    spec.kind = ModelKind::kCustom;
  } else {
    throw FormatError("unknown model kind in descriptor '" + text + "'");
  }
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("model descriptor token '" + tok + "' lacks '='");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "classes") {
      spec.class_count = parse_size(key, val);
    } else if (key == "in") {
      spec.in_channels = parse_size(key, val);
    } else if (key == "image") {
      spec.image_size = parse_size(key, val);
    } else if (key == "patch") {
      spec.patch = parse_size(key, val);
    } else if (key == "dim") {
      spec.dim = parse_size(key, val);
    } else if (key == "heads") {
      spec.heads = parse_size(key, val);
    } else if (key == "depth") {
      spec.depth = parse_size(key, val);
    } else if (key == "mlp") {
      spec.mlp_ratio = parse_size(key, val);
    } else if (key == "label") {
      spec.label = val;
    } else if (key == "channels") {
      std::istringstream cs(val);
      std::string part;
      while (std::getline(cs, part, ',')) spec.channels.push_back(parse_size(key, part));
    } else {
      throw FormatError("unknown model descriptor key '" + key + "'");
    }
  }
  return spec;
}

template <typename T>
Model<T>::Model(ModelSpec spec, LayerList layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
  if (layers_.empty() || layers_.back()->kind() != LayerKind::kLinear) {
    throw ConfigError("a model must end in a Linear classifier head");
  }
  auto& h = static_cast<Linear<T>&>(*layers_.back());
  if (spec_.class_count == 0) spec_.class_count = h.out_features();
  if (h.out_features() != spec_.class_count) {
    throw ConfigError("head width " + std::to_string(h.out_features()) + " does not match class count " +
                      std::to_string(spec_.class_count));
  }
}

template <typename T>
Model<T>::Model(const Model& other) : spec_(other.spec_), pending_backward_(other.pending_backward_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Model<T>& Model<T>::operator=(const Model& other) {
  if (this != &other) {
    Model tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

template <typename T>
BasicTensor<T> Model<T>::forward(const BasicTensor<T>& batch, Mode mode) {
  BasicTensor<T> x = batch;
  for (auto& l : layers_) x = l->forward(x, mode);
  if (x.rank() != 2 || x.dim(1) != spec_.class_count) {
    throw DimensionError("model output " + shape_to_string(x.shape()) + " is not [N, " +
                         std::to_string(spec_.class_count) + "]");
  }
  pending_backward_ = (mode == Mode::kTrain);
  return x;
}

template <typename T>
void Model<T>::backward(const BasicTensor<T>& grad_logits) {
  if (!pending_backward_) throw StateError("model backward called without a train-mode forward");
  BasicTensor<T> g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, i > 0);
  pending_backward_ = false;
}

template <typename T>
std::vector<NamedParameter<T>> Model<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_parameters("layers." + std::to_string(i), out);
  }
  return out;
}

template <typename T>
std::vector<NamedLayer<T>> Model<T>::layers() {
  std::vector<NamedLayer<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_layers("layers." + std::to_string(i), nullptr, out);
  }
  return out;
}

template <typename T>
Parameter<T>* Model<T>::find_parameter(const std::string& name) {
  for (auto& np : parameters()) {
    if (np.name == name) return np.param;
  }
  return nullptr;
}

template <typename T>
Linear<T>& Model<T>::head() {
  return static_cast<Linear<T>&>(*layers_.back());
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& np : parameters()) np.param->zero_grad();
}

template <typename T>
void Model<T>::set_trainable(bool trainable) {
  for (auto& np : parameters()) np.param->trainable = trainable;
}

template <typename T>
void Model<T>::enforce_masks() {
  for (auto& np : parameters()) np.param->apply_mask();
}

template <typename T>
std::size_t count_params(Model<T>& model, bool trainable_only) {
  std::size_t total = 0;
  for (auto& np : model.parameters()) {
    if (!trainable_only || np.param->trainable) total += np.param->numel();
  }
  return total;
}

template class Model<float>;
template class Model<double>;
template std::size_t count_params(Model<float>&, bool);
template std::size_t count_params(Model<double>&, bool);

}  // namespace unlearn
