#include "unlearn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "unlearn/errors.hpp"
#include "unlearn/models.hpp"

namespace unlearn {

RunRecord train_epochs(Model<float>& model, const Dataset& data, int epochs, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  if (epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
  if (data.empty()) throw ConfigError("cannot train on an empty dataset");
  const auto params = trainable_parameters(model);
  OptimState<float> state = make_optim_state(params, config.adam);

  RunRecord rec;
  rec.trainable_params = count_params(model, true);
  rec.optimizer_state_elements = state.element_count();
  rec.memory_proxy_bytes = memory_proxy(model);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    BatchIterator it(data, config.batch_size, config.seed, static_cast<std::uint64_t>(epoch));
    Batch batch;
    double loss_sum = 0.0;
    int batch_index = 0;
    while (it.next(batch)) {
      model.zero_grad();
      const Tensor logits = model.forward(batch.images, Mode::kTrain);
      auto lg = softmax_cross_entropy(logits, batch.labels);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError(epoch, batch_index, "non-finite training loss at epoch " + std::to_string(epoch) +
                                                      ", batch " + std::to_string(batch_index));
      }
      model.backward(lg.grad_logits);
      adam_step(params, state);
      loss_sum += lg.loss;
      ++batch_index;
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    rec.epoch_seconds.push_back(std::max(elapsed.count(), 1e-9));
    rec.epoch_losses.push_back(loss_sum / batch_index);
    rec.epochs = epoch;
    rec.optimizer_steps = state.t;
    rec.seconds_per_epoch =
        std::accumulate(rec.epoch_seconds.begin(), rec.epoch_seconds.end(), 0.0) / rec.epoch_seconds.size();
    if (on_epoch) on_epoch(epoch, model, rec);
  }
  return rec;
}

std::string_view to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kRetrain: return "retrain";
    case Paradigm::kFinetune: return "finetune";
    case Paradigm::kPruneFT: return "prune-ft";
    case Paradigm::kLoraFT: return "lora-ft";
    case Paradigm::kPruneLora: return "prune-lora";
  }
  return "?";
}

Paradigm parse_paradigm(std::string_view name) {
  for (Paradigm p : kAllParadigms) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown paradigm '" + std::string(name) +
                    "' (expected retrain, finetune, prune-ft, lora-ft or prune-lora)");
}

std::optional<PruneTargetSpec> default_prune_spec(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::kSmallCnn: return PruneTargetSpec{{kSelectAllConv}, 0.5};
    case ModelKind::kTinyVit: return PruneTargetSpec{{kSelectLastLinear, kSelectLastAttention}, 0.5};
    case ModelKind::kCustom: break;
  }
  return std::nullopt;
}

LoraConfig default_lora_config(const ModelSpec& spec) {
  LoraConfig cfg;
  if (spec.kind == ModelKind::kSmallCnn) {
    // rank 4 on every conv of the default CNN trains ~11% of its weights;
    // rank 3 keeps the adapter budget under a tenth.
    cfg.rank = 3;
    cfg.alpha = 6.0;
    cfg.selectors = {kSelectAllConv};
  } else {
    cfg.selectors = {kSelectLastAttention};
  }
  return cfg;
}

ParadigmConfig default_paradigm_config(Paradigm p, const ModelSpec& spec, int epochs) {
  ParadigmConfig cfg;
  cfg.paradigm = p;
  cfg.epochs = epochs;
  if (p == Paradigm::kPruneFT || p == Paradigm::kPruneLora) cfg.prune = default_prune_spec(spec);
  if (p == Paradigm::kLoraFT || p == Paradigm::kPruneLora) cfg.lora = default_lora_config(spec);
  return cfg;
}

void validate_paradigm_config(const ParadigmConfig& cfg) {
  const bool wants_prune = cfg.paradigm == Paradigm::kPruneFT || cfg.paradigm == Paradigm::kPruneLora;
  const bool wants_lora = cfg.paradigm == Paradigm::kLoraFT || cfg.paradigm == Paradigm::kPruneLora;
  const std::string name(to_string(cfg.paradigm));
  if (wants_prune != cfg.prune.has_value()) {
    throw ConfigError(name + (wants_prune ? " requires a prune spec" : " does not take a prune spec"));
  }
  if (wants_lora != cfg.lora.has_value()) {
    throw ConfigError(name + (wants_lora ? " requires a LoRA config" : " does not take a LoRA config"));
  }
  if (cfg.epochs < 1) throw ConfigError(name + ": epochs must be at least 1");
}

namespace {

Model<float> prepare(const Model<float>& base, const ParadigmConfig& cfg) {
  if (cfg.paradigm == Paradigm::kRetrain) return build_model<float>(base.spec(), cfg.seed);
  Model<float> model = base;
  model.set_trainable(true);
  if (cfg.prune) apply_prune(model, *cfg.prune);
  if (cfg.lora) attach_adapters(model, *cfg.lora, cfg.seed);
  return model;
}

void finalize(Model<float>& model, const ParadigmConfig& cfg) {
  if (cfg.paradigm == Paradigm::kPruneLora) merge_all_adapters(model);
}

RunRecord truncated(const RunRecord& rec, int epochs) {
  RunRecord out = rec;
  out.epochs = epochs;
  out.epoch_losses.resize(static_cast<std::size_t>(epochs));
  out.epoch_seconds.resize(static_cast<std::size_t>(epochs));
  out.seconds_per_epoch = std::accumulate(out.epoch_seconds.begin(), out.epoch_seconds.end(), 0.0) / epochs;
  out.optimizer_steps = rec.optimizer_steps / rec.epochs * epochs;
  return out;
}

}  // namespace

ParadigmResult run_paradigm(const Model<float>& base, const ClassSplit& split, const ParadigmConfig& cfg) {
  validate_paradigm_config(cfg);
  Model<float> model = prepare(base, cfg);
  RunRecord rec = train_epochs(model, split.retain, cfg.epochs, cfg.train);
  rec.paradigm = std::string(to_string(cfg.paradigm));
  finalize(model, cfg);
  return {std::move(model), std::move(rec)};
}

std::vector<ParadigmResult> run_paradigm_schedule(const Model<float>& base, const ClassSplit& split,
                                                  const ParadigmConfig& cfg, std::vector<int> epoch_settings) {
  if (epoch_settings.empty()) throw ConfigError("no epoch settings given");
  for (int e : epoch_settings) {
    if (e < 1) throw ConfigError("epoch settings must be positive, got " + std::to_string(e));
  }
  if (cfg.paradigm == Paradigm::kRetrain) {
    ParadigmResult r = run_paradigm(base, split, cfg);
    return std::vector<ParadigmResult>(epoch_settings.size(), r);
  }
  std::vector<int> sorted = epoch_settings;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  ParadigmConfig run_cfg = cfg;
  run_cfg.epochs = sorted.back();
  validate_paradigm_config(run_cfg);
  Model<float> model = prepare(base, run_cfg);

  std::vector<std::optional<ParadigmResult>> snaps(sorted.size());
  auto on_epoch = [&](int epoch, Model<float>& m, const RunRecord& so_far) {
    auto it = std::find(sorted.begin(), sorted.end(), epoch);
    if (it == sorted.end()) return;
    ParadigmResult snap{m, truncated(so_far, epoch)};
    snap.record.paradigm = std::string(to_string(cfg.paradigm));
    finalize(snap.model, cfg);
    snaps[static_cast<std::size_t>(it - sorted.begin())].emplace(std::move(snap));
  };
  train_epochs(model, split.retain, run_cfg.epochs, run_cfg.train, on_epoch);

  std::vector<ParadigmResult> out;
  for (int e : epoch_settings) {
    const auto idx = static_cast<std::size_t>(std::find(sorted.begin(), sorted.end(), e) - sorted.begin());
    out.push_back(*snaps[idx]);
  }
  return out;
}

}  // namespace unlearn
