#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/models.hpp"

using namespace unlearn;

namespace {

// A model whose logits equal its input: images are [N,1,1,K] rows.
Model<float> passthrough(std::size_t k) {
  std::vector<std::unique_ptr<Layer<float>>> layers;
  layers.push_back(std::make_unique<Flatten<float>>());
  auto lin = std::make_unique<Linear<float>>(k, k);
  lin->weight().value.fill(0.0f);
  for (std::size_t i = 0; i < k; ++i) lin->weight().value.at(i, i) = 1.0f;
  layers.push_back(std::move(lin));
  return Model<float>(ModelSpec{}, std::move(layers));
}

Dataset logits_dataset(const std::vector<std::vector<float>>& rows, const std::vector<int>& labels, std::size_t k) {
  Dataset d;
  std::vector<float> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  d.images = Tensor({rows.size(), 1, 1, k}, flat);
  d.labels = labels;
  d.class_count = k;
  d.name = "fixture";
  return d;
}

struct Oracle {
  double threshold;
  std::size_t correct;
};

// Every threshold that can separate the pooled features, scanned in
// ascending order; strict improvement keeps the smallest on ties.
Oracle scan(const std::vector<double>& mem, const std::vector<double>& non) {
  std::set<double> vals(mem.begin(), mem.end());
  vals.insert(non.begin(), non.end());
  std::vector<double> cand{*vals.begin()};
  for (auto it = vals.begin(); std::next(it) != vals.end(); ++it) cand.push_back((*it + *std::next(it)) / 2.0);
  cand.push_back(*vals.rbegin());
  Oracle best{0.0, 0};
  bool first = true;
  for (double th : cand) {
    std::size_t c = 0;
    for (double f : mem) c += f >= th;
    for (double f : non) c += f < th;
    if (first || c > best.correct) best = {th, c};
    first = false;
  }
  return best;
}

double count_below(const std::vector<double>& f, double th) {
  std::size_t n = 0;
  for (double v : f) n += v < th;
  return 100.0 * double(n) / double(f.size());
}

}  // namespace

TEST_CASE("accuracy and unlearning accuracy") {
  auto m = passthrough(10);
  std::vector<std::vector<float>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> r(10, 0.0f);
    r[0] = 1.0f;  // always predicts class 0
    rows.push_back(r);
    labels.push_back(i % 10);
  }
  CHECK(accuracy(m, logits_dataset(rows, labels, 10)) == 10.0);

  for (int i = 0; i < 100; ++i) {
    std::fill(rows[i].begin(), rows[i].end(), 0.0f);
    rows[i][labels[i]] = 2.0f;
  }
  const auto perfect = logits_dataset(rows, labels, 10);
  CHECK(accuracy(m, perfect) == 100.0);
  CHECK(unlearning_accuracy(m, perfect) == 0.0);

  Dataset empty;
  empty.class_count = 10;
  CHECK_THROWS_AS(accuracy(m, empty), ConfigError);
  auto wide = perfect;
  wide.class_count = 11;
  CHECK_THROWS_AS(accuracy(m, wide), ConfigError);
}

TEST_CASE("argmax ties go to the lowest index") {
  Tensor t({2, 3}, {1, 1, 0, 0, 2, 2});
  CHECK(argmax_rows(t) == std::vector<int>{0, 1});
}

TEST_CASE("UA is exactly 100 minus accuracy on random models") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto m = build_small_cnn<float>({4}, 5, seed);
    const auto d = gen_synthetic_blobs(seed, 5, 7, 3, 4, 4, 0.5);
    const auto pred = argmax_rows(predict_logits(m, d));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) correct += pred[i] == d.labels[i];
    const double acc = 100.0 * double(correct) / double(d.size());
    CHECK(accuracy(m, d) == acc);
    CHECK(unlearning_accuracy(m, d) == 100.0 - acc);
  }
}

TEST_CASE("confidence feature") {
  auto m = passthrough(10);
  std::vector<std::vector<float>> rows(3, std::vector<float>(10, 0.3f));
  for (double f : confidence_feature(m, logits_dataset(rows, {0, 4, 9}, 10))) {
    CHECK(f == doctest::Approx(0.1).epsilon(1e-12));
  }
  rows[0][2] = 100.0f;
  CHECK(confidence_feature(m, logits_dataset({rows[0]}, {2}, 10))[0] == doctest::Approx(1.0));
}

TEST_CASE("train_mia hand cases") {
  const std::vector<double> hi(5, 0.99), lo(5, 0.01);
  const auto p = train_mia(hi, lo);
  CHECK(p.balanced_accuracy == 1.0);
  CHECK(p.threshold > 0.01);
  CHECK(p.threshold < 0.99);

  const std::vector<double> same{0.2, 0.4, 0.6, 0.8};
  CHECK(train_mia(same, same).balanced_accuracy == 0.5);

  CHECK_THROWS_AS(train_mia(hi, std::vector<double>(4, 0.1)), ConfigError);
  CHECK_THROWS_AS(train_mia(std::vector<double>{}, std::vector<double>{}), ConfigError);
}

TEST_CASE("mia efficacy hand cases") {
  const MiaPredictor p{0.5, 0.0};
  const std::vector<double> f{0.1, 0.2, 0.3, 0.4, 0.45, 0.49, 0.01, 0.5, 0.7, 0.9};
  CHECK(mia_efficacy(p, f) == 70.0);
  CHECK(mia_efficacy(p, std::vector<double>(4, 0.1)) == 100.0);
  CHECK_THROWS_AS(mia_efficacy(p, std::vector<double>{}), ConfigError);
}

TEST_CASE("train_mia and mia_efficacy match brute force") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nd(1, 40), grid(0, 12);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = std::size_t(nd(rng));
    const bool coarse = trial % 3 == 0;  // many ties
    auto draw = [&](double shift) {
      std::vector<double> v(n);
      for (auto& x : v) x = coarse ? grid(rng) / 12.0 : std::min(1.0, ud(rng) * 0.8 + shift);
      return v;
    };
    const auto mem = draw(0.2), non = draw(0.0), forget = draw(0.1);
    const auto got = train_mia(mem, non);
    const auto ref = scan(mem, non);
    CHECK(got.threshold == ref.threshold);
    CHECK(got.balanced_accuracy == double(ref.correct) / double(2 * n));
    CHECK(got.balanced_accuracy >= 0.5);
    CHECK(mia_efficacy(got, forget) == count_below(forget, got.threshold));

    // Strictly increasing transform applied to every feature and the threshold.
    auto g = [](double x) { return x * x * x + 2.0 * x - 5.0; };
    std::vector<double> tf;
    for (double x : forget) tf.push_back(g(x));
    CHECK(mia_efficacy(MiaPredictor{g(got.threshold), 0.0}, tf) == mia_efficacy(got, forget));
    std::vector<double> tm, tn;
    for (double x : mem) tm.push_back(g(x));
    for (double x : non) tn.push_back(g(x));
    const auto tp = train_mia(tm, tn);
    CHECK(tp.balanced_accuracy == got.balanced_accuracy);
  }
}

TEST_CASE("loss split") {
  auto m = passthrough(3);
  const auto d = logits_dataset({{2, 0, 0}, {0, 1, 0}}, {0, 1}, 3);
  const auto s = loss_split(m, d, d);
  CHECK(s.test_losses == s.forget_losses);
  CHECK(s.mean_test == s.mean_forget);
  const double l0 = std::log(std::exp(2.0) + 2.0) - 2.0, l1 = std::log(std::exp(1.0) + 2.0) - 1.0;
  CHECK(s.test_losses[0] == doctest::Approx(l0).epsilon(1e-6));
  CHECK(s.mean_test == doctest::Approx((l0 + l1) / 2).epsilon(1e-6));

  // Confident on the kept classes, ignorant of the forgotten one.
  const auto test = logits_dataset({{0, 5, 0}, {0, 0, 5}}, {1, 2}, 3);
  const auto forget = logits_dataset({{0, 5, 0}, {0, 0, 5}}, {0, 0}, 3);
  const auto u = loss_split(m, test, forget);
  CHECK(u.mean_forget > u.mean_test);
}

TEST_CASE("evaluate_model is pure") {
  const auto train = gen_synthetic_blobs(1, 3, 20, 3, 4, 4, 0.4);
  const auto test = gen_synthetic_blobs(1, 3, 10, 3, 4, 4, 0.4, 1);
  const auto split = split_by_class(train, test, 1);
  auto m = build_small_cnn<float>({4}, 3, 1);
  const auto a = evaluate_model(m, split, EvalOptions{50, 3});
  const auto b = evaluate_model(m, split, EvalOptions{50, 3});
  CHECK(a.ua == b.ua);
  CHECK(a.mia_efficacy == b.mia_efficacy);
  CHECK(a.ra == b.ra);
  CHECK(a.ta == b.ta);
  CHECK(a.ua == 100.0 - accuracy(m, split.forget));
  CHECK(a.ra == accuracy(m, split.retain));
  CHECK(a.ta == accuracy(m, split.test_retain));
}
