#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "unlearn/lora.hpp"
#include "unlearn/models.hpp"
#include "unlearn/optim.hpp"
#include "unlearn/pruning.hpp"

using namespace unlearn;
using testsupport::random_tensor;

namespace {

Model<float> two_layer_mlp() {
  std::vector<std::unique_ptr<Layer<float>>> layers;
  layers.push_back(std::make_unique<Linear<float>>(100, 100));
  layers.push_back(std::make_unique<ReLU<float>>());
  layers.push_back(std::make_unique<Linear<float>>(100, 10));
  return Model<float>(ModelSpec{}, std::move(layers));
}

}  // namespace

TEST_CASE("attach-time forward is bit-identical to the base") {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<float>({3, 3, 8, 8}, rng, 0, 1);
  auto cnn = build_small_cnn<float>({4, 8}, 5, 1);
  const auto before = cnn.forward(x, Mode::kEval);
  attach_adapters(cnn, LoraConfig{3, 6.0, {kSelectAllConv}, true}, 2);
  CHECK(bit_identical(before, cnn.forward(x, Mode::kEval)));

  auto vit = build_tiny_vit<float>(4, 16, 2, 2, 5, 1, VitOptions{3, 8, 2});
  const auto vb = vit.forward(x, Mode::kEval);
  attach_adapters(vit, LoraConfig{4, 8.0, {kSelectLastAttention}, true}, 2);
  CHECK(bit_identical(vb, vit.forward(x, Mode::kEval)));
}

TEST_CASE("lora forward hand example") {
  std::vector<std::unique_ptr<Layer<float>>> layers;
  layers.push_back(std::make_unique<Linear<float>>(2, 2, false));
  Model<float> m(ModelSpec{}, std::move(layers));
  auto& lin = m.head();
  LoraAdapter<float> ad;
  ad.rank = 1;
  ad.alpha = 1.0;
  ad.a = Parameter<float>({1, 2});
  ad.a.value = Tensor({1, 2}, {1, 0});
  ad.b = Parameter<float>({2, 1});
  ad.b.value = Tensor({2, 1}, {2, 0});
  lin.set_adapter(ad);
  CHECK(lora_forward(lin, Tensor({1, 2}, {1, 0})) == Tensor({1, 2}, {2, 0}));

  merge_adapter(lin);
  CHECK_FALSE(lin.has_adapter());
  CHECK(lin.weight().value == Tensor({2, 2}, {2, 0, 0, 0}));
  CHECK_THROWS_AS(merge_adapter(lin), StateError);
  CHECK_THROWS_AS(lora_forward(lin, Tensor({1, 2})), StateError);
}

TEST_CASE("adapter init: B zero, A scaled by rank") {
  Linear<double> l(400, 300);
  std::mt19937_64 rng(1);
  l.attach_adapter(4, 8.0, rng);
  const auto& ad = l.adapter();
  for (double v : ad.b.value.data()) CHECK(v == 0.0);
  double s = 0.0, s2 = 0.0;
  for (double v : ad.a.value.data()) {
    s += v;
    s2 += v * v;
  }
  const double n = double(ad.a.numel());
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.25).epsilon(0.03));
  CHECK(double(ad.scale()) == 2.0);
}

TEST_CASE("trainable parameter counts") {
  auto m = two_layer_mlp();
  attach_adapters(m, LoraConfig{4, 8.0, {"layers.0"}, false}, 1);
  CHECK(lora_trainable_count(m) == 800);
  CHECK(count_params(m, true) == 800);

  auto h = two_layer_mlp();
  attach_adapters(h, LoraConfig{4, 8.0, {"layers.0"}, true}, 1);
  CHECK(lora_trainable_count(h) == 800 + 1010);
  CHECK(count_params(h, true) == 800 + 1010);

  auto none = two_layer_mlp();
  none.set_trainable(false);
  CHECK(lora_trainable_count(none) == 0);
}

TEST_CASE("attach errors") {
  auto m = two_layer_mlp();
  CHECK_THROWS_AS(attach_adapters(m, LoraConfig{100, 8.0, {"layers.0"}, false}, 1), ConfigError);
  CHECK_THROWS_AS(attach_adapters(m, LoraConfig{0, 8.0, {"layers.0"}, false}, 1), ConfigError);
  attach_adapters(m, LoraConfig{4, 8.0, {"layers.0"}, false}, 1);
  CHECK_THROWS_AS(attach_adapters(m, LoraConfig{4, 8.0, {"layers.0"}, false}, 1), StateError);
}

TEST_CASE("merge with B = 0 leaves W bit-exact") {
  auto m = build_small_cnn<float>({4}, 3, 1);
  auto ref = m;
  attach_adapters(m, LoraConfig{2, 4.0, {kSelectAllConv}, true}, 1);
  CHECK(merge_all_adapters(m) == 3);
  auto pa = m.parameters(), pb = ref.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_identical(pa[i].param->value, pb[i].param->value));
}

TEST_CASE("adapters on pruned weights cannot revive pruned rows") {
  auto m = build_small_cnn<float>({6}, 3, 1);
  apply_prune(m, PruneTargetSpec{{kSelectAllConv}, 0.5});
  attach_adapters(m, LoraConfig{2, 4.0, {kSelectAllConv}, true}, 3);
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>({4, 3, 6, 6}, rng, 0, 1);
  const std::vector<int> labels{0, 1, 2, 0};
  auto params = trainable_parameters(m);
  auto state = make_optim_state(params, AdamConfig{1e-2});
  for (int i = 0; i < 20; ++i) {
    m.zero_grad();
    m.backward(softmax_cross_entropy(m.forward(x, Mode::kTrain), labels).grad_logits);
    adam_step(params, state);
  }
  merge_all_adapters(m);
  for (auto& p : m.parameters()) {
    if (!p.param->has_mask()) continue;
    for (std::size_t i = 0; i < p.param->numel(); ++i) {
      if (!p.param->mask[i]) CHECK(p.param->value[i] == 0.0f);
    }
  }
}

TEST_CASE("merged and unmerged forwards agree after training") {
  auto m = build_tiny_vit<float>(4, 16, 2, 2, 4, 1, VitOptions{3, 8, 2});
  attach_adapters(m, LoraConfig{4, 8.0, {kSelectLastAttention}, true}, 5);
  std::mt19937_64 rng(6);
  const auto x = random_tensor<float>({8, 3, 8, 8}, rng, 0, 1);
  const auto labels = testsupport::random_labels(8, 4, rng);
  auto params = trainable_parameters(m);
  auto state = make_optim_state(params, AdamConfig{1e-2});
  for (int i = 0; i < 10; ++i) {
    m.zero_grad();
    m.backward(softmax_cross_entropy(m.forward(x, Mode::kTrain), labels).grad_logits);
    adam_step(params, state);
  }
  auto merged = m;
  merge_all_adapters(merged);
  const auto probe = random_tensor<float>({10, 3, 8, 8}, rng, 0, 1);
  const auto a = m.forward(probe, Mode::kEval), b = merged.forward(probe, Mode::kEval);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, double(std::abs(a[i] - b[i])));
  CHECK(diff < 1e-5);
}
