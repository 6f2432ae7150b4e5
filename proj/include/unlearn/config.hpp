#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/model.hpp"
#include "unlearn/pipeline.hpp"

namespace unlearn {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx | cifar10-bin
  std::optional<std::uint64_t> seed;  // defaults to the experiment seed
  std::size_t classes = 10;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t channels = 3;
  std::size_t image_size = 8;
  double spread = 0.8;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // cifar10-bin
  std::vector<std::string> train_files, test_files;
};

struct ModelConfig {
  std::string kind = "small-cnn";  // small-cnn | tiny-vit
  std::vector<std::size_t> channels = {16, 32, 64};
  std::size_t patch = 4, dim = 64, heads = 4, depth = 4, mlp_ratio = 2;
};

struct PruneConfig {
  double sparsity = 0.5;
  std::vector<std::string> targets;  // empty: architecture default
};

struct LoraSettings {
  std::optional<std::size_t> rank;   // architecture default when absent
  std::optional<double> alpha;
  std::vector<std::string> targets;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  int forget_class = 0;
  std::vector<std::string> paradigms = {"retrain", "finetune", "prune-ft", "lora-ft", "prune-lora"};
  std::vector<int> epochs = {5, 10};
  int retrain_epochs = kRetrainEpochs;
  int base_epochs = 4;
  std::size_t batch_size = 64;
  PruneConfig prune;
  LoraSettings lora;
  AdamConfig optimizer;
  std::uint64_t seed = 1;
  std::size_t mia_per_side = 2000;
  std::string output = "runs";
  bool deterministic = false;
};

/// Unknown keys and wrong types raise ConfigError.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

/// Range checks plus existence of every referenced data file.
void validate_config(const ExperimentConfig& config);

struct LoadedData {
  Dataset train;
  Dataset test;
};
LoadedData load_datasets(const ExperimentConfig& config);

/// Model descriptor sized for the configured dataset.
ModelSpec model_spec_for(const ExperimentConfig& config, const Dataset& train);

/// Paradigm settings with config overrides applied on top of the
/// architecture defaults.
ParadigmConfig paradigm_config_for(const ExperimentConfig& config, Paradigm p, const ModelSpec& spec, int epochs);

TrainConfig train_config_for(const ExperimentConfig& config);

}  // namespace unlearn
