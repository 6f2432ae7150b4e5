#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/lora.hpp"
#include "unlearn/model.hpp"
#include "unlearn/optim.hpp"
#include "unlearn/pruning.hpp"

namespace unlearn {

struct TrainConfig {
  std::size_t batch_size = 64;
  AdamConfig adam;
  std::uint64_t seed = 0;  // shuffle seed
};

struct RunRecord {
  std::string paradigm;
  int epochs = 0;
  double seconds_per_epoch = 0.0;
  std::size_t trainable_params = 0;
  std::size_t optimizer_state_elements = 0;
  std::size_t memory_proxy_bytes = 0;
  std::int64_t optimizer_steps = 0;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
  std::vector<double> epoch_seconds;
};

/// Called after each completed epoch (1-based), outside the timed region.
using EpochCallback = std::function<void(int epoch, Model<float>& model, const RunRecord& so_far)>;

/// Adam on mean cross-entropy over shuffled batches; batch order depends only
/// on (config.seed, epoch). A non-finite batch loss raises DivergenceError.
RunRecord train_epochs(Model<float>& model, const Dataset& data, int epochs, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

enum class Paradigm { kRetrain, kFinetune, kPruneFT, kLoraFT, kPruneLora };

inline constexpr Paradigm kAllParadigms[] = {Paradigm::kRetrain, Paradigm::kFinetune, Paradigm::kPruneFT,
                                             Paradigm::kLoraFT, Paradigm::kPruneLora};

std::string_view to_string(Paradigm p);
/// Accepts the to_string names ("retrain", "finetune", "prune-ft", "lora-ft",
/// "prune-lora"); anything else raises ConfigError.
Paradigm parse_paradigm(std::string_view name);

inline constexpr int kRetrainEpochs = 30;

struct ParadigmConfig {
  Paradigm paradigm = Paradigm::kFinetune;
  int epochs = 5;
  std::optional<PruneTargetSpec> prune;
  std::optional<LoraConfig> lora;
  TrainConfig train;
  std::uint64_t seed = 0;  // fresh-init and adapter-init seed
};

/// Prune/LoRA defaults per architecture: the CNN prunes and adapts every
/// convolution; the ViT prunes the last MLP projection and last attention
/// layer and adapts the last attention layer.
std::optional<PruneTargetSpec> default_prune_spec(const ModelSpec& spec);
LoraConfig default_lora_config(const ModelSpec& spec);
ParadigmConfig default_paradigm_config(Paradigm p, const ModelSpec& spec, int epochs);

/// Throws ConfigError when the paradigm lacks a required prune spec or LoRA
/// config, or carries one it does not use.
void validate_paradigm_config(const ParadigmConfig& cfg);

struct ParadigmResult {
  Model<float> model;
  RunRecord record;
};

/// Fine-tunes a copy of `base` on the retain set per the paradigm; Retrain
/// ignores the base weights and starts from a fresh initialization. The
/// PruneLora model is returned with adapters merged.
ParadigmResult run_paradigm(const Model<float>& base, const ClassSplit& split, const ParadigmConfig& cfg);

/// One training run observed at several epoch counts: each setting gets the
/// model and record as they stood after that many epochs (equal to separate
/// runs because batch order depends only on seed and epoch). Retrain trains
/// once for cfg.epochs and the result is reused for every setting.
std::vector<ParadigmResult> run_paradigm_schedule(const Model<float>& base, const ClassSplit& split,
                                                  const ParadigmConfig& cfg, std::vector<int> epoch_settings);

}  // namespace unlearn
