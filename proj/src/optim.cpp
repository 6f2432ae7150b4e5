#include "unlearn/optim.hpp"

#include <cmath>

#include "unlearn/errors.hpp"

namespace unlearn {

template <typename T>
std::size_t OptimState<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& t : m) n += t.size();
  for (const auto& t : v) n += t.size();
  return n;
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 const AdamConfig& c) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adam_update: parameter has " + std::to_string(param.size()) + " elements, grad " +
                         std::to_string(grad.size()) + ", moments " + std::to_string(m.size()) + "/" +
                         std::to_string(v.size()));
  }
  if (t < 1) throw StateError("adam_update: step counter must be >= 1");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
    const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
  }
}

template <typename T>
OptimState<T> make_optim_state(const std::vector<Parameter<T>*>& params, const AdamConfig& config) {
  OptimState<T> s;
  s.config = config;
  for (const auto* p : params) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, OptimState<T>& state) {
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but state for " +
                         std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = *params[i];
    if (p.value.shape() != state.m[i].shape() || p.grad.shape() != p.value.shape()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " shape " + shape_to_string(p.value.shape()) +
                           " vs state " + shape_to_string(state.m[i].shape()));
    }
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (!p.trainable) continue;
    adam_update<T>(p.value.data(), p.grad.data(), state.m[i].data(), state.v[i].data(), state.t, state.config);
    p.apply_mask();
  }
}

template <typename T>
std::vector<Parameter<T>*> trainable_parameters(Model<T>& model) {
  std::vector<Parameter<T>*> out;
  for (auto& np : model.parameters()) {
    if (np.param->trainable) out.push_back(np.param);
  }
  return out;
}

template <typename T>
std::size_t memory_proxy(Model<T>& model) {
  std::size_t n = 0;
  for (auto& np : model.parameters()) {
    if (np.param->trainable) n += np.param->unmasked_count();
  }
  return 12 * n;
}

#define UNLEARN_INSTANTIATE_OPTIM(T)                                                                        \
  template struct OptimState<T>;                                                                            \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::int64_t, \
                               const AdamConfig&);                                                          \
  template OptimState<T> make_optim_state<T>(const std::vector<Parameter<T>*>&, const AdamConfig&);         \
  template void adam_step<T>(const std::vector<Parameter<T>*>&, OptimState<T>&);                            \
  template std::vector<Parameter<T>*> trainable_parameters<T>(Model<T>&);                                   \
  template std::size_t memory_proxy<T>(Model<T>&);

UNLEARN_INSTANTIATE_OPTIM(float)
UNLEARN_INSTANTIATE_OPTIM(double)

}  // namespace unlearn
