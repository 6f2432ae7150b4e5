#pragma once

// Shared helpers for the unit tests and the acceptance runner.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "unlearn/grad_check.hpp"
#include "unlearn/model.hpp"
#include "unlearn/ops.hpp"

namespace testsupport {

using unlearn::BasicTensor;
using unlearn::Shape;

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(k) - 1);
  std::vector<int> out(n);
  for (auto& l : out) l = d(rng);
  return out;
}

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst;  // parameter name of the worst element
  std::size_t checked = 0;
};

inline void note(GradReport& r, double err, const std::string& where) {
  ++r.checked;
  if (err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst = where;
  }
}

/// Layer-level check of L = <layer(x), R> against central differences, over
/// every parameter (adapters included) and the input.
template <typename T>
GradReport check_layer(unlearn::Layer<T>& layer, const BasicTensor<T>& x, std::mt19937_64& rng, double eps = 1e-4) {
  using unlearn::Mode;
  auto probe_out = layer.forward(x, Mode::kEval);
  const auto r = random_tensor<T>(probe_out.shape(), rng);
  auto loss = [&](const BasicTensor<T>& input) {
    const auto y = layer.forward(input, Mode::kEval);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * static_cast<double>(r[i]);
    return s;
  };

  std::vector<unlearn::NamedParameter<T>> params;
  layer.collect_parameters("", params);
  for (auto& p : params) p.param->zero_grad();
  layer.forward(x, Mode::kTrain);
  const auto dx = layer.backward(r, true);

  GradReport rep;
  const auto num_dx = unlearn::finite_difference_grad(loss, x, eps);
  for (std::size_t i = 0; i < x.size(); ++i) note(rep, unlearn::relative_error(dx[i], num_dx[i]), "input");

  for (auto& p : params) {
    if (!p.param->trainable) continue;
    auto& value = p.param->value;
    const auto saved = value;
    auto f = [&](const BasicTensor<T>& w) {
      value = w;
      return loss(x);
    };
    const auto num = unlearn::finite_difference_grad(f, saved, eps);
    value = saved;
    for (std::size_t i = 0; i < num.size(); ++i) {
      note(rep, unlearn::relative_error(p.param->grad[i], num[i]), p.name);
    }
  }
  return rep;
}

/// End-to-end check of mean cross-entropy through a whole model.
template <typename T>
GradReport check_model(unlearn::Model<T>& model, const BasicTensor<T>& x, const std::vector<int>& labels,
                       double eps = 1e-4) {
  using unlearn::Mode;
  auto loss = [&]() {
    return unlearn::softmax_cross_entropy(model.forward(x, Mode::kEval), labels).loss;
  };
  model.zero_grad();
  const auto logits = model.forward(x, Mode::kTrain);
  model.backward(unlearn::softmax_cross_entropy(logits, labels).grad_logits);

  GradReport rep;
  for (auto& p : model.parameters()) {
    if (!p.param->trainable) continue;
    auto& value = p.param->value;
    const auto saved = value;
    auto f = [&](const BasicTensor<T>& w) {
      value = w;
      return loss();
    };
    const auto num = unlearn::finite_difference_grad(f, saved, eps);
    value = saved;
    for (std::size_t i = 0; i < num.size(); ++i) {
      note(rep, unlearn::relative_error(p.param->grad[i], num[i]), p.name);
    }
  }
  return rep;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("unlearn_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
