// Acceptance runner: one PASS/FAIL line per criterion, details indented
// underneath. Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/cli.hpp"
#include "unlearn/config.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/lora.hpp"
#include "unlearn/models.hpp"
#include "unlearn/optim.hpp"
#include "unlearn/pruning.hpp"
#include "unlearn/report.hpp"

using namespace unlearn;
using testsupport::random_tensor;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    pass = pass && ok;
  }
  void note(const std::string& what) { notes.push_back("     " + what); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

Tensor64 away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  auto t = random_tensor<double>(shape, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = sign(rng) ? -v : v;
  return t;
}

template <typename L>
void randomize(L& layer, std::mt19937_64& rng) {
  std::vector<NamedParameter<double>> ps;
  layer.collect_parameters("", ps);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (auto& p : ps)
    for (auto& v : p.param->value.data()) v = d(rng);
}

Outcome gradient_correctness() {
  constexpr double kTol = 1e-4;
  constexpr int kSeeds = 20;
  const auto t0 = Clock::now();
  Outcome out;
  std::map<std::string, double> worst;
  auto record = [&](const std::string& what, const testsupport::GradReport& r) {
    worst[what] = std::max(worst[what], r.max_rel_error);
  };
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    {
      Linear<double> l(5, 4);
      randomize(l, rng);
      record("Linear", testsupport::check_layer(l, random_tensor<double>({3, 5}, rng), rng));
      l.attach_adapter(2, 4.0, rng);
      randomize(l, rng);
      record("Linear+LoRA", testsupport::check_layer(l, random_tensor<double>({3, 5}, rng), rng));
    }
    {
      Conv2d<double> c(2, 3, 3, 2, 1, true);
      randomize(c, rng);
      record("Conv2d", testsupport::check_layer(c, random_tensor<double>({2, 2, 5, 5}, rng), rng));
      Conv2d<double> d(3, 4, 3, 1, 1);
      d.attach_adapter(2, 4.0, rng);
      randomize(d, rng);
      record("Conv2d+LoRA", testsupport::check_layer(d, random_tensor<double>({2, 3, 4, 4}, rng), rng));
    }
    {
      MultiHeadAttention<double> a(8, 2);
      randomize(a, rng);
      record("MultiHeadAttention", testsupport::check_layer(a, random_tensor<double>({2, 4, 8}, rng), rng));
    }
    {
      LayerNorm<double> n(6, NormLayout::kLastDim);
      randomize(n, rng);
      record("LayerNorm", testsupport::check_layer(n, random_tensor<double>({2, 3, 6}, rng), rng));
      LayerNorm<double> c(3, NormLayout::kChannelsFirst);
      randomize(c, rng);
      record("LayerNorm", testsupport::check_layer(c, random_tensor<double>({2, 3, 3, 3}, rng), rng));
    }
    {
      ReLU<double> r;
      record("ReLU", testsupport::check_layer(r, away_from_zero({3, 7}, rng), rng));
      GELU<double> g;
      record("GELU", testsupport::check_layer(g, random_tensor<double>({3, 7}, rng, -3, 3), rng));
      Flatten<double> f;
      record("Flatten", testsupport::check_layer(f, random_tensor<double>({2, 3, 2, 2}, rng), rng));
      MeanPool<double> p;
      record("MeanPool", testsupport::check_layer(p, random_tensor<double>({2, 3, 4, 4}, rng), rng));
      record("MeanPool", testsupport::check_layer(p, random_tensor<double>({2, 5, 3}, rng), rng));
    }
    {
      PatchEmbed<double> p(2, 4, 2, 6);
      randomize(p, rng);
      record("PatchEmbed", testsupport::check_layer(p, random_tensor<double>({2, 2, 4, 4}, rng), rng));
    }
    {
      ResidualBlock<double>::LayerList body, shortcut;
      body.push_back(std::make_unique<Conv2d<double>>(2, 3, 3, 1, 1));
      body.push_back(std::make_unique<LayerNorm<double>>(3, NormLayout::kChannelsFirst));
      body.push_back(std::make_unique<GELU<double>>());
      shortcut.push_back(std::make_unique<Conv2d<double>>(2, 3, 1, 1, 0));
      ResidualBlock<double> block(std::move(body), std::move(shortcut));
      randomize(block, rng);
      record("ResidualBlock", testsupport::check_layer(block, random_tensor<double>({2, 2, 3, 3}, rng), rng));
    }
    {
      const auto x = random_tensor<double>({2, 3, 4, 4}, rng, 0, 1);
      const auto labels = testsupport::random_labels(2, 3, rng);
      auto cnn = build_small_cnn<double>({4, 6}, 3, seed);
      record("small-cnn end to end", testsupport::check_model(cnn, x, labels));
      auto vit = build_tiny_vit<double>(2, 8, 2, 2, 3, seed, VitOptions{3, 4, 2});
      record("tiny-vit end to end", testsupport::check_model(vit, x, labels));
    }
  }
  for (const auto& [name, err] : worst) out.require(err < kTol, name + ": max rel error " + fmt("%.3g", err));
  const double secs = seconds_since(t0);
  out.require(secs < 120.0, std::to_string(kSeeds) + " seeds in " + fmt("%.1f", secs) + " s (budget 120 s)");
  return out;
}

// ---------------------------------------------------------------- 2

Outcome lora_identity_and_merge() {
  const auto t0 = Clock::now();
  Outcome out;
  const auto data = gen_synthetic_blobs(1, 10, 20, 3, 8, 8, 0.8);
  std::mt19937_64 rng(2);
  const auto probe = random_tensor<float>({100, 3, 8, 8}, rng, 0, 1);

  struct Arch {
    std::string name;
    Model<float> model;
  };
  std::vector<Arch> archs;
  archs.push_back({"small-cnn", build_small_cnn<float>({16, 32, 64}, 10, 1)});
  archs.push_back({"tiny-vit", build_tiny_vit<float>(4, 64, 4, 4, 10, 1, VitOptions{3, 8, 2})});
  for (auto& [name, model] : archs) {
    train_epochs(model, data, 1, TrainConfig{32, AdamConfig{}, 1});
    const auto before = model.forward(probe, Mode::kEval);
    attach_adapters(model, default_lora_config(model.spec()), 3);
    out.require(bit_identical(before, model.forward(probe, Mode::kEval)), name + ": attach-time forward bit-identical");
    train_epochs(model, data, 2, TrainConfig{32, AdamConfig{}, 2});
    auto merged = model;
    merge_all_adapters(merged);
    const auto a = model.forward(probe, Mode::kEval), b = merged.forward(probe, Mode::kEval);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, double(std::abs(a[i] - b[i])));
    out.require(diff < 1e-5, name + ": merged vs unmerged max abs diff " + fmt("%.3g", diff) + " over 100 inputs");
  }
  const double secs = seconds_since(t0);
  out.require(secs < 60.0, fmt("%.1f", secs) + " s (budget 60 s)");
  return out;
}

// ---------------------------------------------------------------- 3

Outcome pruning_invariants() {
  const auto t0 = Clock::now();
  Outcome out;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> nd(1, 256);
  std::uniform_real_distribution<double> sd(0.0, 0.999), vd(0.0, 5.0);
  bool counts_ok = true;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = nd(rng);
    const double s = sd(rng);
    std::vector<double> norms(n);
    for (auto& v : norms) v = vd(rng);
    counts_ok = counts_ok && select_prune_set(norms, s).size() == std::size_t(std::floor(s * double(n)));
  }
  out.require(counts_ok, "|pruned| == floor(s*n) on 1000 random (n, s)");

  const auto data = gen_synthetic_blobs(4, 10, 8, 3, 8, 8, 0.8);
  std::vector<std::pair<std::string, Model<float>>> models;
  models.emplace_back("small-cnn", build_small_cnn<float>({16, 32, 64}, 10, 4));
  models.emplace_back("tiny-vit", build_tiny_vit<float>(4, 64, 4, 4, 10, 4, VitOptions{3, 8, 2}));
  for (auto& [name, model] : models) {
    auto before = model;
    const auto masks = apply_prune(model, *default_prune_spec(model.spec()));
    std::set<std::string> masked;
    for (const auto& m : masks)
      for (const auto& p : m.parameter_names) masked.insert(p);
    auto pb = before.parameters();
    auto pa = model.parameters();
    bool untouched = true;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!masked.count(pa[i].name)) untouched = untouched && bit_identical(pa[i].param->value, pb[i].param->value);
    }
    out.require(untouched, name + ": non-target parameters bit-unchanged by apply_prune");

    auto params = trainable_parameters(model);
    auto state = make_optim_state(params, AdamConfig{1e-2});
    Batch batch;
    int steps = 0;
    for (std::uint64_t epoch = 1; steps < 50; ++epoch) {
      BatchIterator it(data, 16, 5, epoch);
      while (steps < 50 && it.next(batch)) {
        model.zero_grad();
        model.backward(softmax_cross_entropy(model.forward(batch.images, Mode::kTrain), batch.labels).grad_logits);
        adam_step(params, state);
        ++steps;
      }
    }
    // L2 norm of every pruned structure, straight from the mask.
    double worst = 0.0;
    for (auto& p : model.parameters()) {
      if (!p.param->has_mask()) continue;
      double sq = 0.0;
      for (std::size_t i = 0; i < p.param->numel(); ++i) {
        if (!p.param->mask[i]) sq += double(p.param->value[i]) * double(p.param->value[i]);
      }
      worst = std::max(worst, std::sqrt(sq));
    }
    out.require(worst == 0.0, name + ": pruned-structure L2 norm after 50 Adam steps = " + fmt("%g", worst));
  }
  const double secs = seconds_since(t0);
  out.require(secs < 60.0, fmt("%.1f", secs) + " s (budget 60 s)");
  return out;
}

// ---------------------------------------------------------------- 4

Outcome mia_oracle() {
  const auto t0 = Clock::now();
  Outcome out;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> nd(1, 60), grid(0, 20);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  int threshold_ok = 0, efficacy_ok = 0;
  const int instances = 200;
  for (int t = 0; t < instances; ++t) {
    const std::size_t n = std::size_t(nd(rng));
    auto draw = [&](double shift) {
      std::vector<double> v(n);
      for (auto& x : v) x = (t % 4 == 0) ? grid(rng) / 20.0 : std::min(1.0, 0.7 * ud(rng) + shift);
      return v;
    };
    const auto mem = draw(0.3), non = draw(0.0), forget = draw(0.15);

    // Exhaustive scan: min, max and every midpoint of the pooled features,
    // keeping the first (smallest) threshold with the best score.
    std::set<double> vals(mem.begin(), mem.end());
    vals.insert(non.begin(), non.end());
    std::vector<double> cand{*vals.begin(), *vals.rbegin()};
    for (auto it = vals.begin(); std::next(it) != vals.end(); ++it) cand.push_back((*it + *std::next(it)) / 2.0);
    std::sort(cand.begin(), cand.end());
    double best_th = cand.front();
    std::size_t best = 0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      std::size_t c = 0;
      for (double f : mem) c += f >= cand[i];
      for (double f : non) c += f < cand[i];
      if (i == 0 || c > best) best = c, best_th = cand[i];
    }
    const auto got = train_mia(mem, non);
    threshold_ok += got.threshold == best_th && got.balanced_accuracy == double(best) / double(2 * n);

    std::size_t tn = 0;
    for (double f : forget) tn += f < got.threshold;
    efficacy_ok += mia_efficacy(got, forget) == 100.0 * double(tn) / double(forget.size());
  }
  out.require(threshold_ok == instances,
              std::to_string(threshold_ok) + "/" + std::to_string(instances) + " thresholds equal the exhaustive scan");
  out.require(efficacy_ok == instances,
              std::to_string(efficacy_ok) + "/" + std::to_string(instances) + " efficacies equal brute-force counts");
  const double secs = seconds_since(t0);
  out.require(secs < 60.0, fmt("%.2f", secs) + " s (budget 60 s)");
  return out;
}

// ---------------------------------------------------------------- 5

Outcome metric_identities() {
  Outcome out;
  bool exact = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto m = build_small_cnn<float>({4, 8}, 10, seed);
    const auto d = gen_synthetic_blobs(seed, 10, 10, 3, 8, 8, 0.8);
    const auto split = split_by_class(d, d, int(seed % 10));
    const auto pred = argmax_rows(predict_logits(m, split.forget));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == split.forget.labels[i];
    const double acc = 100.0 * double(correct) / double(pred.size());
    exact = exact && unlearning_accuracy(m, split.forget) == 100.0 - acc;
  }
  out.require(exact, "UA == 100 - Acc(Df) exactly on 10 random models");

  MetricsReport r;
  r.paradigm = "prune-lora";
  r.epochs = 5;
  r.ua = 100.0;
  r.mia_efficacy = 99.999;
  r.ra = 97.9612;
  r.ta = 95.18;
  const std::string csv = metrics_to_table_csv({r});
  const std::string row = csv.substr(csv.find('\n') + 1);
  out.require(row == "prune-lora,100.00,100.00,97.96,95.18,-,0,0\n", "table row: " + row.substr(0, row.size() - 1));
  out.require(format_percent(97.96) == "97.96", "format_percent(97.96) == \"97.96\"");
  const auto back = metrics_from_json(metrics_to_json({r}));
  out.require(back[0].ra == 97.96, "metrics.json stores RA as 97.96");
  return out;
}

// ---------------------------------------------------------------- 6 and 7

struct DeskRun {
  std::uint64_t seed;
  std::vector<MetricsReport> rows;
  std::map<std::string, LossSplit> losses;  // by paradigm, 10-epoch setting
};

LossSplit read_loss_csv(const fs::path& p) {
  LossSplit s;
  std::istringstream is(read_text_file(p));
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    const double v = std::stod(line.substr(comma + 1));
    (line.substr(0, comma) == "test" ? s.test_losses : s.forget_losses).push_back(v);
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  s.mean_test = mean(s.test_losses);
  s.mean_forget = mean(s.forget_losses);
  return s;
}

struct DeskResults {
  std::vector<DeskRun> runs;
  double seconds = 0.0;
};

DeskResults run_desk(const fs::path& root) {
  DeskResults res;
  const auto t0 = Clock::now();
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.output = (root / ("seed" + std::to_string(seed))).string();
    std::ostringstream log;
    DeskRun run{seed, cmd_all(cfg, true, log), {}};
    ArtifactLayout layout{cfg.output};
    for (Paradigm p : kAllParadigms) {
      run.losses[std::string(to_string(p))] = read_loss_csv(layout.loss_split(run_tag(p, 10)));
    }
    std::cout << "  seed " << seed << " finished at " << fmt("%.0f", seconds_since(t0)) << " s" << std::endl;
    res.runs.push_back(std::move(run));
  }
  res.seconds = seconds_since(t0);
  return res;
}

Outcome desk_trend(const DeskResults& desk) {
  Outcome out;
  // paradigm -> epochs -> summed metrics
  std::map<std::string, std::map<int, MetricsReport>> avg;
  for (const auto& run : desk.runs) {
    for (const auto& r : run.rows) {
      auto& a = avg[r.paradigm][r.epochs];
      a.paradigm = r.paradigm;
      a.epochs = r.epochs;
      a.ua += r.ua / 3.0;
      a.mia_efficacy += r.mia_efficacy / 3.0;
      a.ra += r.ra / 3.0;
      a.ta += r.ta / 3.0;
      a.trainable_params = r.trainable_params;
      a.memory_proxy_bytes = r.memory_proxy_bytes;
      a.rte = a.rte.value_or(0.0) + r.rte.value_or(0.0) / 3.0;
    }
  }
  std::vector<MetricsReport> table;
  for (const auto& [p, by_e] : avg)
    for (const auto& [e, r] : by_e) table.push_back(r);
  out.note("seed-averaged table:");
  std::istringstream csv(metrics_to_table_csv(table));
  for (std::string line; std::getline(csv, line);) out.note("  " + line);

  for (const char* p : {"retrain", "finetune", "prune-ft", "prune-lora"}) {
    for (int e : {5, 10}) {
      const double ua = avg[p][e].ua;
      out.require(ua >= 95.0, std::string("(a) UA ") + p + "@" + std::to_string(e) + " = " + fmt("%.2f", ua) + " >= 95.00");
    }
  }
  for (int e : {5, 10}) {
    const auto& pl = avg["prune-lora"][e];
    const auto& pft = avg["prune-ft"][e];
    const auto& rt = avg["retrain"][e];
    const std::string at = "@" + std::to_string(e);
    out.require(pl.ra >= pft.ra - 0.5,
                "(b) RA prune-lora" + at + " " + fmt("%.2f", pl.ra) + " >= RA prune-ft - 0.5 = " + fmt("%.2f", pft.ra - 0.5));
    out.require(pl.ra >= rt.ra - 3.0,
                "(b) RA prune-lora" + at + " " + fmt("%.2f", pl.ra) + " >= RA retrain - 3.0 = " + fmt("%.2f", rt.ra - 3.0));
    out.require(pl.ta >= pft.ta,
                "(c) TA prune-lora" + at + " " + fmt("%.2f", pl.ta) + " >= TA prune-ft " + fmt("%.2f", pft.ta));
  }
  const double ft = double(avg["finetune"][10].trainable_params);
  for (const char* p : {"lora-ft", "prune-lora"}) {
    const double n = double(avg[p][10].trainable_params);
    out.require(n < 0.1 * ft, std::string("(d) trainable ") + p + " " + fmt("%.0f", n) + " = " +
                                  fmt("%.2f", 100.0 * n / ft) + "% of finetune " + fmt("%.0f", ft));
  }
  out.require(desk.seconds < 900.0, "3 seeds in " + fmt("%.0f", desk.seconds) + " s (budget 900 s)");
  return out;
}

Outcome forget_loss_property(const DeskResults& desk) {
  Outcome out;
  for (const auto& run : desk.runs) {
    for (const char* p : {"finetune", "prune-ft", "lora-ft", "prune-lora"}) {
      const auto& s = run.losses.at(p);
      out.require(s.mean_forget > s.mean_test, "seed " + std::to_string(run.seed) + " " + p + "@10: forget " +
                                                   fmt("%.3f", s.mean_forget) + " > test " + fmt("%.3f", s.mean_test));
    }
  }
  return out;
}

// ---------------------------------------------------------------- 8

Outcome determinism(const fs::path& root, double desk_seconds) {
  const auto t0 = Clock::now();
  Outcome out;
  for (const char* sub : {"a", "b"}) {
    ExperimentConfig cfg;
    cfg.deterministic = true;
    cfg.output = (root / sub).string();
    std::ostringstream log;
    cmd_all(cfg, true, log);
  }
  const double secs = seconds_since(t0);
  ArtifactLayout a{root / "a"}, b{root / "b"};
  auto same_dir = [&](const fs::path& da, const fs::path& db, const std::string& what) {
    std::size_t files = 0, equal = 0;
    for (const auto& e : fs::directory_iterator(da)) {
      if (!e.is_regular_file()) continue;
      ++files;
      const auto other = db / e.path().filename();
      equal += fs::exists(other) && read_text_file(e.path()) == read_text_file(other);
    }
    out.require(files > 0 && files == equal, what + ": " + std::to_string(equal) + "/" + std::to_string(files) + " identical");
  };
  same_dir(a.checkpoints(), b.checkpoints(), "checkpoints");
  same_dir(a.reports(), b.reports(), "report files");
  same_dir(a.rows(), b.rows(), "report rows");
  same_dir(a.loss_splits(), b.loss_splits(), "loss splits");
  out.require(secs < 2.0 * desk_seconds,
              "two runs in " + fmt("%.0f", secs) + " s (budget 2 x " + fmt("%.0f", desk_seconds) + " s)");
  return out;
}

// ---------------------------------------------------------------- 9

Outcome adam_reference() {
  const auto t0 = Clock::now();
  Outcome out;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> lr(1e-4, 1e-1), b1(0.5, 0.95), b2(0.9, 0.9999);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const AdamConfig cfg{lr(rng), b1(rng), b2(rng), 1e-8};
    const std::size_t n = 64;
    Parameter<double> p({n});
    std::vector<double> w(n), m(n, 0.0), v(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) w[i] = p.value[i] = nd(rng);
    std::vector<Parameter<double>*> ps{&p};
    auto state = make_optim_state(ps, cfg);
    for (int t = 1; t <= 100; ++t) {
      for (std::size_t i = 0; i < n; ++i) p.grad[i] = nd(rng) * std::exp(nd(rng));
      adam_step(ps, state);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = p.grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mh = m[i] / (1.0 - std::pow(cfg.beta1, t));
        const double vh = v[i] / (1.0 - std::pow(cfg.beta2, t));
        w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      }
    }
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(w[i] - p.value[i]));
  }
  out.require(worst < 1e-6, "10 configs x 100 steps, max abs diff " + fmt("%.3g", worst));
  const double secs = seconds_since(t0);
  out.require(secs < 10.0, fmt("%.3f", secs) + " s (budget 10 s)");
  return out;
}

}  // namespace

int main() {
  testsupport::TempDir scratch("acceptance");
  int failures = 0;
  auto report = [&](int id, const std::string& title, const Outcome& o) {
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << id << ": " << title << "\n";
    for (const auto& n : o.notes) std::cout << "         " << n << "\n";
    std::cout.flush();
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Outcome o;
      o.require(false, std::string("exception: ") + e.what());
      return o;
    }
  };

  report(1, "gradient correctness", guarded(gradient_correctness));
  report(2, "LoRA identity and merge", guarded(lora_identity_and_merge));
  report(3, "pruning invariants", guarded(pruning_invariants));
  report(4, "MIA oracle equivalence", guarded(mia_oracle));
  report(5, "metric identities and formatting", guarded(metric_identities));
  report(9, "Adam reference", guarded(adam_reference));

  std::cout << "running the desk experiment (3 seeds)..." << std::endl;
  DeskResults desk;
  bool desk_ok = true;
  try {
    desk = run_desk(scratch / "desk");
  } catch (const std::exception& e) {
    desk_ok = false;
    Outcome o;
    o.require(false, std::string("exception: ") + e.what());
    report(6, "desk-scale trend", o);
    report(7, "forget loss above test loss", o);
  }
  if (desk_ok) {
    report(6, "desk-scale trend", desk_trend(desk));
    report(7, "forget loss above test loss", forget_loss_property(desk));
  }
  const double budget = desk_ok ? desk.seconds : 900.0;
  report(8, "determinism", guarded([&] { return determinism(scratch / "det", budget); }));

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
