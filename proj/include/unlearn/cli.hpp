#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "unlearn/config.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/pipeline.hpp"

namespace unlearn {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitDivergence = 3,
  kExitIo = 4,
};

/// Output tree under the configured directory.
struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path records() const { return root / "records"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path loss_splits() const { return root / "loss_splits"; }
  std::filesystem::path rows() const { return reports() / "rows"; }

  std::filesystem::path base_checkpoint() const { return checkpoints() / "base.plun"; }
  std::filesystem::path base_record() const { return records() / "base.json"; }
  std::filesystem::path checkpoint(const std::string& tag) const { return checkpoints() / (tag + ".plun"); }
  std::filesystem::path record(const std::string& tag) const { return records() / (tag + ".json"); }
  std::filesystem::path row(const std::string& tag) const { return rows() / (tag + ".json"); }
  std::filesystem::path loss_split(const std::string& tag) const { return loss_splits() / (tag + ".csv"); }

  void create() const;
};

/// "<paradigm>_e<epochs>"
std::string run_tag(Paradigm p, int epochs);

/// Trains the base model on the full train set and writes its checkpoint and
/// training record.
void cmd_train(const ExperimentConfig& config, std::ostream& log);

/// Runs one paradigm from the base checkpoint and writes the unlearned
/// checkpoint and run record. Retrain trains for retrain_epochs and is filed
/// under the requested epoch setting.
void cmd_unlearn(const ExperimentConfig& config, Paradigm paradigm, int epochs, std::ostream& log);

/// Evaluates a checkpoint; writes the report row and loss-split data for
/// `tag`. Run-record fields are attached when `record_path` exists.
MetricsReport cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& record_path, const std::string& paradigm, int epochs,
                           const std::string& tag, std::ostream& log);

/// Collects every evaluated row into reports/metrics.json and table1.csv.
std::vector<MetricsReport> cmd_report(const ExperimentConfig& config, std::ostream& log);

/// Base model (reused unless `force_retrain`), every paradigm at every epoch
/// setting, evaluation and the combined report.
std::vector<MetricsReport> cmd_all(const ExperimentConfig& config, bool force_retrain, std::ostream& log);

/// Parses arguments, dispatches and maps failures onto exit codes:
/// 2 configuration/usage, 3 divergence, 4 I/O.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace unlearn
