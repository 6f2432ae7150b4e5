#include "unlearn/config.hpp"

#include <filesystem>
#include <set>

#include <json.hpp>

#include "unlearn/errors.hpp"
#include "unlearn/report.hpp"

namespace unlearn {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

template <typename V>
void read(const json& j, const char* key, std::optional<V>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<V>();
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, "", {"dataset", "model", "forget_class", "paradigms", "epochs", "retrain_epochs", "base_epochs",
                       "batch_size", "prune", "lora", "optimizer", "seed", "mia_per_side", "output", "deterministic"});
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, "dataset", {"kind", "seed", "classes", "train_per_class", "test_per_class", "channels",
                                "image_size", "spread", "train_images", "train_labels", "test_images", "test_labels",
                                "train_files", "test_files"});
      auto& o = c.dataset;
      read(d, "kind", o.kind);
      read(d, "seed", o.seed);
      read(d, "classes", o.classes);
      read(d, "train_per_class", o.train_per_class);
      read(d, "test_per_class", o.test_per_class);
      read(d, "channels", o.channels);
      read(d, "image_size", o.image_size);
      read(d, "spread", o.spread);
      read(d, "train_images", o.train_images);
      read(d, "train_labels", o.train_labels);
      read(d, "test_images", o.test_images);
      read(d, "test_labels", o.test_labels);
      read(d, "train_files", o.train_files);
      read(d, "test_files", o.test_files);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, "model", {"kind", "channels", "patch", "dim", "heads", "depth", "mlp_ratio"});
      auto& o = c.model;
      read(m, "kind", o.kind);
      read(m, "channels", o.channels);
      read(m, "patch", o.patch);
      read(m, "dim", o.dim);
      read(m, "heads", o.heads);
      read(m, "depth", o.depth);
      read(m, "mlp_ratio", o.mlp_ratio);
    }
    if (j.contains("prune")) {
      const json& p = j.at("prune");
      check_keys(p, "prune", {"sparsity", "targets"});
      read(p, "sparsity", c.prune.sparsity);
      read(p, "targets", c.prune.targets);
    }
    if (j.contains("lora")) {
      const json& l = j.at("lora");
      check_keys(l, "lora", {"rank", "alpha", "targets"});
      read(l, "rank", c.lora.rank);
      read(l, "alpha", c.lora.alpha);
      read(l, "targets", c.lora.targets);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      check_keys(o, "optimizer", {"lr", "beta1", "beta2", "eps"});
      read(o, "lr", c.optimizer.lr);
      read(o, "beta1", c.optimizer.beta1);
      read(o, "beta2", c.optimizer.beta2);
      read(o, "eps", c.optimizer.eps);
    }
    read(j, "forget_class", c.forget_class);
    read(j, "paradigms", c.paradigms);
    read(j, "epochs", c.epochs);
    read(j, "retrain_epochs", c.retrain_epochs);
    read(j, "base_epochs", c.base_epochs);
    read(j, "batch_size", c.batch_size);
    read(j, "seed", c.seed);
    read(j, "mia_per_side", c.mia_per_side);
    read(j, "output", c.output);
    read(j, "deterministic", c.deterministic);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  json d;
  d["kind"] = c.dataset.kind;
  d["seed"] = c.dataset.seed ? json(*c.dataset.seed) : json(nullptr);
  d["classes"] = c.dataset.classes;
  d["train_per_class"] = c.dataset.train_per_class;
  d["test_per_class"] = c.dataset.test_per_class;
  d["channels"] = c.dataset.channels;
  d["image_size"] = c.dataset.image_size;
  d["spread"] = c.dataset.spread;
  d["train_images"] = c.dataset.train_images;
  d["train_labels"] = c.dataset.train_labels;
  d["test_images"] = c.dataset.test_images;
  d["test_labels"] = c.dataset.test_labels;
  d["train_files"] = c.dataset.train_files;
  d["test_files"] = c.dataset.test_files;
  j["dataset"] = d;
  j["model"] = {{"kind", c.model.kind},   {"channels", c.model.channels}, {"patch", c.model.patch},
                {"dim", c.model.dim},     {"heads", c.model.heads},       {"depth", c.model.depth},
                {"mlp_ratio", c.model.mlp_ratio}};
  j["forget_class"] = c.forget_class;
  j["paradigms"] = c.paradigms;
  j["epochs"] = c.epochs;
  j["retrain_epochs"] = c.retrain_epochs;
  j["base_epochs"] = c.base_epochs;
  j["batch_size"] = c.batch_size;
  j["prune"] = {{"sparsity", c.prune.sparsity}, {"targets", c.prune.targets}};
  j["lora"] = {{"rank", c.lora.rank ? json(*c.lora.rank) : json(nullptr)},
               {"alpha", c.lora.alpha ? json(*c.lora.alpha) : json(nullptr)},
               {"targets", c.lora.targets}};
  j["optimizer"] = {{"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["seed"] = c.seed;
  j["mia_per_side"] = c.mia_per_side;
  j["output"] = c.output;
  j["deterministic"] = c.deterministic;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  return config_from_json(read_text_file(path));
}

void validate_config(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  auto need_file = [](const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string("dataset.") + what + " is required");
    if (!std::filesystem::exists(path)) throw ConfigError(std::string("dataset.") + what + " not found: " + path);
  };
  if (d.kind == "synthetic") {
    if (d.classes < 2) throw ConfigError("dataset.classes must be at least 2");
    if (d.train_per_class == 0 || d.test_per_class == 0) throw ConfigError("dataset per-class counts must be positive");
    if (d.channels == 0 || d.image_size == 0) throw ConfigError("dataset image dimensions must be positive");
    if (!(d.spread >= 0.0)) throw ConfigError("dataset.spread must be non-negative");
  } else if (d.kind == "idx") {
    need_file(d.train_images, "train_images");
    need_file(d.train_labels, "train_labels");
    need_file(d.test_images, "test_images");
    need_file(d.test_labels, "test_labels");
  } else if (d.kind == "cifar10-bin") {
    if (d.train_files.empty() || d.test_files.empty()) throw ConfigError("cifar10-bin needs train_files and test_files");
    for (const auto& f : d.train_files) need_file(f, "train_files");
    for (const auto& f : d.test_files) need_file(f, "test_files");
  } else {
    throw ConfigError("unknown dataset.kind '" + d.kind + "' (expected synthetic, idx or cifar10-bin)");
  }
  if (c.model.kind == "small-cnn") {
    if (c.model.channels.empty()) throw ConfigError("model.channels must not be empty");
  } else if (c.model.kind == "tiny-vit") {
    if (c.model.heads == 0 || c.model.dim % c.model.heads != 0) throw ConfigError("model.dim must divide into heads");
  } else {
    throw ConfigError("unknown model.kind '" + c.model.kind + "' (expected small-cnn or tiny-vit)");
  }
  if (c.forget_class < 0) throw ConfigError("forget_class must be non-negative");
  if (d.kind == "synthetic" && static_cast<std::size_t>(c.forget_class) >= d.classes) {
    throw ConfigError("forget_class " + std::to_string(c.forget_class) + " outside the " + std::to_string(d.classes) +
                      " dataset classes");
  }
  if (c.paradigms.empty()) throw ConfigError("paradigms must not be empty");
  for (const auto& p : c.paradigms) parse_paradigm(p);
  if (c.epochs.empty()) throw ConfigError("epochs must not be empty");
  for (int e : c.epochs) {
    if (e <= 0) throw ConfigError("epochs must be positive, got " + std::to_string(e));
  }
  if (c.retrain_epochs <= 0 || c.base_epochs <= 0) throw ConfigError("retrain_epochs and base_epochs must be positive");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.prune.sparsity >= 0.0 && c.prune.sparsity < 1.0)) throw ConfigError("prune.sparsity must lie in [0, 1)");
  if (c.lora.rank && *c.lora.rank == 0) throw ConfigError("lora.rank must be at least 1");
  if (c.lora.alpha && !(*c.lora.alpha > 0.0)) throw ConfigError("lora.alpha must be positive");
  if (!(c.optimizer.lr > 0.0) || !(c.optimizer.eps > 0.0)) throw ConfigError("optimizer lr and eps must be positive");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0 && c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (c.mia_per_side == 0) throw ConfigError("mia_per_side must be positive");
  if (c.output.empty()) throw ConfigError("output directory must not be empty");
}

LoadedData load_datasets(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  LoadedData out;
  if (d.kind == "synthetic") {
    const std::uint64_t seed = d.seed.value_or(c.seed);
    out.train = gen_synthetic_blobs(seed, d.classes, d.train_per_class, d.channels, d.image_size, d.image_size,
                                    d.spread, 0);
    out.test = gen_synthetic_blobs(seed, d.classes, d.test_per_class, d.channels, d.image_size, d.image_size,
                                   d.spread, 1);
    out.train.name = "synthetic-train";
    out.test.name = "synthetic-test";
  } else if (d.kind == "idx") {
    out.train = load_idx(d.train_images, d.train_labels);
    out.test = load_idx(d.test_images, d.test_labels);
    const std::size_t k = std::max(out.train.class_count, out.test.class_count);
    out.train.class_count = out.test.class_count = k;
  } else if (d.kind == "cifar10-bin") {
    std::vector<std::filesystem::path> tr(d.train_files.begin(), d.train_files.end());
    std::vector<std::filesystem::path> te(d.test_files.begin(), d.test_files.end());
    out.train = load_cifar10_bin(tr);
    out.test = load_cifar10_bin(te);
  } else {
    throw ConfigError("unknown dataset.kind '" + d.kind + "'");
  }
  return out;
}

ModelSpec model_spec_for(const ExperimentConfig& c, const Dataset& train) {
  ModelSpec s;
  s.class_count = train.class_count;
  s.in_channels = train.images.dim(1);
  if (c.model.kind == "small-cnn") {
    s.kind = ModelKind::kSmallCnn;
    s.channels = c.model.channels;
  } else if (c.model.kind == "tiny-vit") {
    if (train.images.dim(2) != train.images.dim(3)) throw ConfigError("tiny-vit needs square images");
    s.kind = ModelKind::kTinyVit;
    s.image_size = train.images.dim(2);
    s.patch = c.model.patch;
    s.dim = c.model.dim;
    s.heads = c.model.heads;
    s.depth = c.model.depth;
    s.mlp_ratio = c.model.mlp_ratio;
  } else {
    throw ConfigError("unknown model.kind '" + c.model.kind + "'");
  }
  return s;
}

TrainConfig train_config_for(const ExperimentConfig& c) {
  TrainConfig t;
  t.batch_size = c.batch_size;
  t.adam = c.optimizer;
  t.seed = c.seed;
  return t;
}

ParadigmConfig paradigm_config_for(const ExperimentConfig& c, Paradigm p, const ModelSpec& spec, int epochs) {
  ParadigmConfig pc = default_paradigm_config(p, spec, p == Paradigm::kRetrain ? c.retrain_epochs : epochs);
  if (pc.prune) {
    pc.prune->sparsity = c.prune.sparsity;
    if (!c.prune.targets.empty()) pc.prune->selectors = c.prune.targets;
  }
  if (pc.lora) {
    if (c.lora.rank) pc.lora->rank = *c.lora.rank;
    if (c.lora.alpha) pc.lora->alpha = *c.lora.alpha;
    if (!c.lora.targets.empty()) pc.lora->selectors = c.lora.targets;
  }
  pc.train = train_config_for(c);
  pc.seed = c.seed;
  return pc;
}

}  // namespace unlearn
