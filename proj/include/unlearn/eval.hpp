#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

inline constexpr std::size_t kEvalBatch = 256;

/// Eval-mode logits for a whole dataset, in storage order.
Tensor predict_logits(Model<float>& model, const Dataset& data);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

/// 100 * correct / N. Empty datasets and arity mismatches raise ConfigError.
double accuracy(Model<float>& model, const Dataset& data);

/// 100 - accuracy on the forget set.
double unlearning_accuracy(Model<float>& model, const Dataset& forget);

/// Softmax probability of each sample's true label.
std::vector<double> confidence_feature(Model<float>& model, const Dataset& data);

/// Single-threshold membership rule: confidence >= threshold means member.
struct MiaPredictor {
  double threshold = 0.0;
  double balanced_accuracy = 0.0;
};

/// Scans the minimum, the maximum and every midpoint between consecutive
/// distinct pooled features; keeps the best balanced accuracy, smallest
/// threshold on ties. Sides must be nonempty and equal-sized.
MiaPredictor train_mia(std::span<const double> member_feats, std::span<const double> nonmember_feats);

/// 100 * (features below threshold) / N.
double mia_efficacy(const MiaPredictor& predictor, std::span<const double> forget_feats);
double mia_efficacy(const MiaPredictor& predictor, Model<float>& model, const Dataset& forget);

struct LossSplit {
  std::vector<double> test_losses;
  std::vector<double> forget_losses;
  double mean_test = 0.0;
  double mean_forget = 0.0;
};

LossSplit loss_split(Model<float>& model, const Dataset& test_retain, const Dataset& forget);

struct MetricsReport {
  std::string paradigm;
  int epochs = 0;
  double ua = 0.0;
  double mia_efficacy = 0.0;
  double ra = 0.0;
  double ta = 0.0;
  std::optional<double> rte;  // seconds per epoch; omitted in deterministic reports
  std::size_t memory_proxy_bytes = 0;
  std::size_t trainable_params = 0;
};

struct EvalOptions {
  std::size_t mia_per_side = 2000;  // capped by the available retain test data
  std::uint64_t mia_seed = 0;
};

/// UA, MIA-Efficacy, RA and TA for one unlearned model. The MIA predictor is
/// fitted on this model's features over a balanced retain/test-retain sample.
MetricsReport evaluate_model(Model<float>& model, const ClassSplit& split, const EvalOptions& options);

}  // namespace unlearn
