#include "unlearn/cli.hpp"

#include <algorithm>
#include <ostream>

#include <CLI11.hpp>

#include "unlearn/checkpoint.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/models.hpp"
#include "unlearn/report.hpp"

namespace unlearn {

namespace fs = std::filesystem;

void ArtifactLayout::create() const {
  std::error_code ec;
  for (const auto& dir : {checkpoints(), records(), reports(), loss_splits(), rows()}) {
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
}

std::string run_tag(Paradigm p, int epochs) { return std::string(to_string(p)) + "_e" + std::to_string(epochs); }

namespace {

struct Prepared {
  LoadedData data;
  ClassSplit split;
  ModelSpec spec;
  ArtifactLayout layout;
};

Prepared prepare(const ExperimentConfig& c) {
  validate_config(c);
  Prepared p;
  p.data = load_datasets(c);
  p.data.train.validate();
  p.data.test.validate();
  p.split = split_by_class(p.data.train, p.data.test, c.forget_class);
  p.spec = model_spec_for(c, p.data.train);
  p.layout.root = c.output;
  p.layout.create();
  return p;
}

void check_model_fits(const Model<float>& model, const Prepared& p, const fs::path& where) {
  if (model.class_count() != p.spec.class_count) {
    throw ConfigError(where.string() + " predicts " + std::to_string(model.class_count()) + " classes, dataset has " +
                      std::to_string(p.spec.class_count));
  }
}

Model<float> load_base(const Prepared& p) {
  const fs::path path = p.layout.base_checkpoint();
  if (!fs::exists(path)) throw ConfigError("base checkpoint " + path.string() + " not found; run 'train' first");
  Model<float> base = load_checkpoint(path);
  check_model_fits(base, p, path);
  return base;
}

Model<float> train_base(const ExperimentConfig& c, const Prepared& p, std::ostream& log) {
  Model<float> model = build_model<float>(p.spec, c.seed);
  RunRecord rec = train_epochs(model, p.data.train, c.base_epochs, train_config_for(c));
  rec.paradigm = "base";
  save_checkpoint(model, p.layout.base_checkpoint());
  write_text_file(p.layout.base_record(), run_record_to_json(rec));
  log << "base: " << p.spec.to_string() << ", " << c.base_epochs << " epochs, final loss " << rec.epoch_losses.back()
      << ", test accuracy " << format_percent(accuracy(model, p.data.test)) << "\n";
  return model;
}

MetricsReport evaluate_and_write(Model<float>& model, const Prepared& p, const ExperimentConfig& c,
                                 const RunRecord* record, const std::string& paradigm, int epochs,
                                 const std::string& tag) {
  MetricsReport row = evaluate_model(model, p.split, EvalOptions{c.mia_per_side, c.seed});
  row.paradigm = paradigm;
  row.epochs = epochs;
  if (record) {
    if (!c.deterministic) row.rte = record->seconds_per_epoch;
    row.memory_proxy_bytes = record->memory_proxy_bytes;
    row.trainable_params = record->trainable_params;
  }
  write_text_file(p.layout.row(tag), metrics_to_json({row}));
  write_text_file(p.layout.loss_split(tag), loss_split_to_csv(loss_split(model, p.split.test_retain, p.split.forget)));
  return row;
}

void log_row(std::ostream& log, const MetricsReport& r) {
  log << r.paradigm << " @" << r.epochs << ": UA " << format_percent(r.ua) << ", MIA " << format_percent(r.mia_efficacy)
      << ", RA " << format_percent(r.ra) << ", TA " << format_percent(r.ta) << ", trainable " << r.trainable_params
      << "\n";
}

std::size_t paradigm_index(const std::string& name) { return static_cast<std::size_t>(parse_paradigm(name)); }

void sort_rows(std::vector<MetricsReport>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricsReport& a, const MetricsReport& b) {
    const auto pa = paradigm_index(a.paradigm), pb = paradigm_index(b.paradigm);
    return pa != pb ? pa < pb : a.epochs < b.epochs;
  });
}

}  // namespace

void cmd_train(const ExperimentConfig& config, std::ostream& log) {
  const Prepared p = prepare(config);
  train_base(config, p, log);
}

void cmd_unlearn(const ExperimentConfig& config, Paradigm paradigm, int epochs, std::ostream& log) {
  const Prepared p = prepare(config);
  const Model<float> base = load_base(p);
  const ParadigmConfig pc = paradigm_config_for(config, paradigm, p.spec, epochs);
  ParadigmResult result = run_paradigm(base, p.split, pc);
  const std::string tag = run_tag(paradigm, epochs);
  save_checkpoint(result.model, p.layout.checkpoint(tag));
  write_text_file(p.layout.record(tag), run_record_to_json(result.record));
  log << tag << ": trained " << result.record.epochs << " epochs, " << result.record.trainable_params
      << " trainable parameters\n";
}

MetricsReport cmd_evaluate(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& record_path,
                           const std::string& paradigm, int epochs, const std::string& tag, std::ostream& log) {
  const Prepared p = prepare(config);
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint " + checkpoint.string() + " not found");
  Model<float> model = load_checkpoint(checkpoint);
  check_model_fits(model, p, checkpoint);
  std::optional<RunRecord> record;
  if (!record_path.empty() && fs::exists(record_path)) record = run_record_from_json(read_text_file(record_path));
  const MetricsReport row = evaluate_and_write(model, p, config, record ? &*record : nullptr, paradigm, epochs, tag);
  log_row(log, row);
  return row;
}

std::vector<MetricsReport> cmd_report(const ExperimentConfig& config, std::ostream& log) {
  ArtifactLayout layout{config.output};
  if (!fs::is_directory(layout.rows())) throw ConfigError("no evaluated runs under " + layout.rows().string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(layout.rows())) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricsReport> rows;
  for (const auto& f : files) {
    for (auto& r : metrics_from_json(read_text_file(f))) rows.push_back(std::move(r));
  }
  sort_rows(rows);
  build_report(rows, layout.reports());
  log << "report: " << rows.size() << " rows -> " << (layout.reports() / "table1.csv").string() << "\n";
  return rows;
}

std::vector<MetricsReport> cmd_all(const ExperimentConfig& config, bool force_retrain, std::ostream& log) {
  const Prepared p = prepare(config);
  std::optional<Model<float>> base;
  if (!force_retrain && fs::exists(p.layout.base_checkpoint())) {
    base.emplace(load_base(p));
    if (base->spec() != p.spec) {
      throw ConfigError("existing base checkpoint was built for '" + base->name() + "', config asks for '" +
                        p.spec.to_string() + "'; pass --force-retrain");
    }
    log << "base: reusing " << p.layout.base_checkpoint().string() << "\n";
  } else {
    base.emplace(train_base(config, p, log));
  }

  std::vector<MetricsReport> rows;
  for (const auto& name : config.paradigms) {
    const Paradigm paradigm = parse_paradigm(name);
    const ParadigmConfig pc = paradigm_config_for(config, paradigm, p.spec, config.epochs.front());
    auto results = run_paradigm_schedule(*base, p.split, pc, config.epochs);
    for (std::size_t i = 0; i < results.size(); ++i) {
      const int setting = config.epochs[i];
      const std::string tag = run_tag(paradigm, setting);
      save_checkpoint(results[i].model, p.layout.checkpoint(tag));
      write_text_file(p.layout.record(tag), run_record_to_json(results[i].record));
      rows.push_back(evaluate_and_write(results[i].model, p, config, &results[i].record, name, setting, tag));
      log_row(log, rows.back());
    }
  }
  sort_rows(rows);
  build_report(rows, p.layout.reports());
  write_text_file(p.layout.root / "config.json", config_to_json(config));
  log << "report: " << rows.size() << " rows -> " << (p.layout.reports() / "table1.csv").string() << "\n";
  return rows;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Class unlearning experiments: prune, adapt with low-rank adapters, then fine-tune."};
  app.require_subcommand(1, 1);

  std::string config_path, paradigm_name, out_dir, checkpoint_path;
  std::uint64_t seed = 0;
  int epochs = 0, forget_class = 0;
  bool deterministic = false, force_retrain = false;

  std::vector<CLI::Option*> seed_opt, epochs_opt, forget_opt, out_opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    seed_opt.push_back(sub->add_option("--seed", seed, "Seed for data, initialization and shuffling"));
    sub->add_option("--paradigm", paradigm_name, "retrain | finetune | prune-ft | lora-ft | prune-lora");
    epochs_opt.push_back(sub->add_option("--epochs", epochs, "Fine-tuning epochs")->check(CLI::PositiveNumber));
    forget_opt.push_back(sub->add_option("--forget-class", forget_class, "Class to forget")->check(CLI::NonNegativeNumber));
    sub->add_flag("--deterministic", deterministic, "Omit wall-clock timings from reports");
    sub->add_flag("--force-retrain", force_retrain, "Retrain the base model even if a checkpoint exists");
    out_opt.push_back(sub->add_option("--out", out_dir, "Output directory"));
  };
  CLI::App* train = app.add_subcommand("train", "Train the base model on the full train set");
  CLI::App* unlearn = app.add_subcommand("unlearn", "Run one unlearning paradigm from the base checkpoint");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate an unlearned checkpoint");
  CLI::App* report = app.add_subcommand("report", "Combine evaluated runs into the report files");
  CLI::App* all = app.add_subcommand("all", "Train, unlearn with every paradigm, evaluate and report");
  for (CLI::App* sub : {train, unlearn, evaluate, report, all}) add_common(sub);
  evaluate->add_option("--checkpoint", checkpoint_path, "Checkpoint to evaluate (default: from --paradigm/--epochs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  auto given = [](const std::vector<CLI::Option*>& opts) {
    return std::any_of(opts.begin(), opts.end(), [](CLI::Option* o) { return o->count() > 0; });
  };

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (given(seed_opt)) cfg.seed = seed;
    if (given(forget_opt)) cfg.forget_class = forget_class;
    if (given(out_opt)) cfg.output = out_dir;
    if (deterministic) cfg.deterministic = true;
    if (given(epochs_opt) && all->parsed()) cfg.epochs = {epochs};
    const int setting = given(epochs_opt) ? epochs : cfg.epochs.front();

    if (train->parsed()) {
      cmd_train(cfg, out);
    } else if (unlearn->parsed()) {
      if (paradigm_name.empty()) throw ConfigError("unlearn needs --paradigm");
      cmd_unlearn(cfg, parse_paradigm(paradigm_name), setting, out);
    } else if (evaluate->parsed()) {
      ArtifactLayout layout{cfg.output};
      if (checkpoint_path.empty()) {
        if (paradigm_name.empty()) throw ConfigError("evaluate needs --checkpoint or --paradigm");
        const Paradigm p = parse_paradigm(paradigm_name);
        const std::string tag = run_tag(p, setting);
        cmd_evaluate(cfg, layout.checkpoint(tag), layout.record(tag), paradigm_name, setting, tag, out);
      } else {
        const fs::path ckpt(checkpoint_path);
        const std::string tag = ckpt.stem().string();
        const std::string name = paradigm_name.empty() ? tag : paradigm_name;
        if (!paradigm_name.empty()) parse_paradigm(paradigm_name);
        cmd_evaluate(cfg, ckpt, layout.record(tag), name, setting, tag, out);
      }
    } else if (report->parsed()) {
      cmd_report(cfg, out);
    } else if (all->parsed()) {
      if (!paradigm_name.empty()) cfg.paradigms = {paradigm_name};
      cmd_all(cfg, force_retrain, out);
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace unlearn
