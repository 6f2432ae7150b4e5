#include "unlearn/eval.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "unlearn/errors.hpp"
#include "unlearn/ops.hpp"

namespace unlearn {

namespace {

void check_arity(Model<float>& model, const Dataset& data, const char* who) {
  if (data.empty()) throw ConfigError(std::string(who) + ": empty dataset " + data.name);
  if (data.class_count > model.class_count()) {
    throw ConfigError(std::string(who) + ": dataset " + data.name + " has " + std::to_string(data.class_count) +
                      " classes but the model outputs " + std::to_string(model.class_count()));
  }
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Tensor predict_logits(Model<float>& model, const Dataset& data) {
  const std::size_t k = model.class_count();
  std::vector<float> out(data.size() * k);
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(begin + kEvalBatch, data.size());
    const Tensor logits = model.forward(slice_images(data, begin, end), Mode::kEval);
    std::memcpy(out.data() + begin * k, logits.ptr(), logits.size() * sizeof(float));
  }
  return Tensor({data.size(), k}, std::move(out));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [N,K], got " + shape_to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(Model<float>& model, const Dataset& data) {
  check_arity(model, data, "accuracy");
  const auto pred = argmax_rows(predict_logits(model, data));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

double unlearning_accuracy(Model<float>& model, const Dataset& forget) { return 100.0 - accuracy(model, forget); }

std::vector<double> confidence_feature(Model<float>& model, const Dataset& data) {
  check_arity(model, data, "confidence_feature");
  const Tensor logits = predict_logits(model, data);
  const auto probs = softmax_rows(logits);
  const std::size_t k = logits.dim(1);
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = probs[i * k + static_cast<std::size_t>(data.labels[i])];
  return out;
}

MiaPredictor train_mia(std::span<const double> member_feats, std::span<const double> nonmember_feats) {
  if (member_feats.empty() || nonmember_feats.empty()) throw ConfigError("train_mia needs both sides nonempty");
  if (member_feats.size() != nonmember_feats.size()) {
    throw ConfigError("train_mia needs a balanced sample, got " + std::to_string(member_feats.size()) + " members and " +
                      std::to_string(nonmember_feats.size()) + " non-members");
  }
  // Sweep thresholds upward over the pooled, sorted features. Predicting
  // "member" for f >= theta, correct = members at or above + non-members below.
  struct Point {
    double f;
    bool member;
  };
  std::vector<Point> pts;
  pts.reserve(member_feats.size() * 2);
  for (double f : member_feats) pts.push_back({f, true});
  for (double f : nonmember_feats) pts.push_back({f, false});
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.f < b.f; });

  const std::size_t n = member_feats.size();
  std::size_t members_below = 0, nonmembers_below = 0;
  auto score = [&] { return (n - members_below) + nonmembers_below; };

  // theta = minimum: nothing lies below it.
  double best_theta = pts.front().f;
  std::size_t best = score();
  std::size_t i = 0;
  while (i < pts.size()) {
    const double f = pts[i].f;
    while (i < pts.size() && pts[i].f == f) {
      (pts[i].member ? members_below : nonmembers_below) += 1;
      ++i;
    }
    if (i == pts.size()) break;
    const double theta = (f + pts[i].f) / 2.0;
    if (score() > best) {
      best = score();
      best_theta = theta;
    }
  }
  // theta = maximum classifies exactly like the last midpoint, so it never wins.
  return {best_theta, static_cast<double>(best) / static_cast<double>(2 * n)};
}

double mia_efficacy(const MiaPredictor& predictor, std::span<const double> forget_feats) {
  if (forget_feats.empty()) throw ConfigError("mia_efficacy needs a nonempty forget set");
  const auto tn = std::count_if(forget_feats.begin(), forget_feats.end(),
                                [&](double f) { return f < predictor.threshold; });
  return 100.0 * static_cast<double>(tn) / static_cast<double>(forget_feats.size());
}

double mia_efficacy(const MiaPredictor& predictor, Model<float>& model, const Dataset& forget) {
  if (forget.empty()) throw ConfigError("mia_efficacy needs a nonempty forget set");
  const auto feats = confidence_feature(model, forget);
  return mia_efficacy(predictor, feats);
}

LossSplit loss_split(Model<float>& model, const Dataset& test_retain, const Dataset& forget) {
  check_arity(model, test_retain, "loss_split");
  check_arity(model, forget, "loss_split");
  LossSplit s;
  s.test_losses = cross_entropy_per_sample(predict_logits(model, test_retain), test_retain.labels);
  s.forget_losses = cross_entropy_per_sample(predict_logits(model, forget), forget.labels);
  s.mean_test = mean(s.test_losses);
  s.mean_forget = mean(s.forget_losses);
  return s;
}

MetricsReport evaluate_model(Model<float>& model, const ClassSplit& split, const EvalOptions& options) {
  MetricsReport r;
  r.ua = unlearning_accuracy(model, split.forget);
  r.ra = accuracy(model, split.retain);
  r.ta = accuracy(model, split.test_retain);
  const std::size_t per_side = std::min({options.mia_per_side, split.test_retain.size(), split.retain.size()});
  auto [members, nonmembers] = balanced_mia_sample(split.retain, split.test_retain, per_side, options.mia_seed);
  const auto predictor = train_mia(confidence_feature(model, members), confidence_feature(model, nonmembers));
  r.mia_efficacy = mia_efficacy(predictor, model, split.forget);
  return r;
}

}  // namespace unlearn
