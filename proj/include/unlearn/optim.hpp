#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments for a fixed, ordered parameter list.
template <typename T>
struct OptimState {
  AdamConfig config;
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;
  std::int64_t t = 0;

  std::size_t element_count() const;
};

/// One Adam update on raw arrays at step `t` (already incremented, t >= 1).
/// Arithmetic runs in double regardless of T.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 const AdamConfig& config);

/// Zeroed moments shaped like `params`.
template <typename T>
OptimState<T> make_optim_state(const std::vector<Parameter<T>*>& params, const AdamConfig& config = {});

/// Advances t by one and updates every trainable parameter from its grad.
/// Frozen parameters are untouched; masked parameters are re-masked after the
/// update. Shape disagreement with the state raises DimensionError.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, OptimState<T>& state);

/// Trainable parameters of a model in registration order.
template <typename T>
std::vector<Parameter<T>*> trainable_parameters(Model<T>& model);

/// 4 bytes x (value + m + v) for every unmasked trainable element.
template <typename T>
std::size_t memory_proxy(Model<T>& model);

}  // namespace unlearn
