#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpdd/config.hpp"
#include "dpdd/dos.hpp"
#include "dpdd/eval.hpp"
#include "dpdd/privacy.hpp"

namespace dpdd {

// Fixed artifact layout under one run directory. Filenames are relative and
// content carries no timestamps, so byte-level comparison across runs works.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config_file() const { return root / "config.txt"; }
  std::filesystem::path store() const { return root / "signals.dsss"; }
  std::filesystem::path ledger() const { return root / "privacy_ledger.txt"; }
  std::filesystem::path synthetic() const { return root / "synthetic.dsrt"; }
  std::filesystem::path loss_csv() const { return root / "optimize_loss.csv"; }
  std::filesystem::path preview() const { return root / "synthetic_preview.png"; }
  std::filesystem::path sample_manifest() const { return root / "manifest_sample.txt"; }
  std::filesystem::path optimize_manifest() const { return root / "manifest_optimize.txt"; }
  std::filesystem::path eval_report() const { return root / "eval_report.txt"; }
};

ToyTaskConfig toy_config(const RunConfig& cfg);
ToyTask load_toy_task(const RunConfig& cfg);
Dataset load_train_dataset(const RunConfig& cfg);
std::vector<Index> train_class_counts(const RunConfig& cfg);

struct CalibrationSummary {
  PrivacyBudget target;
  PrivacyBudget distill;                    // after any auxiliary carve-out
  std::optional<PrivacyBudget> aux_share;   // set when the aux data is private
  double sampling_rate = 0.0;
  long long steps = 0;
  double sensitivity = 0.0;
  CalibrationResult calibration;

  std::string report() const;  // deterministic text, printed by `calibrate`
};

// Pure: derives class counts from config (or the label sidecar), never the
// image payload.
CalibrationSummary calibrate_run(const RunConfig& cfg);

// The only stage that reads private images. Writes store, ledger, config
// snapshot, and manifest atomically under paths.root.
void stage_sample(const RunConfig& cfg, const RunPaths& paths);

// Post-processing only: consumes the sealed store, never a dataset. Writes
// the distilled set, loss trace, preview grid, and manifest.
OptimizeResult stage_optimize(const RunConfig& cfg, const RunPaths& paths);

// Trains the fixed evaluation classifier on the distilled set, tests on the
// toy task's held-out split, writes a report.
EvalReport stage_evaluate(const RunConfig& cfg, const RunPaths& paths);

struct AblationRun {
  std::string arm;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double epsilon = 0.0;
};

struct AblationArmSummary {
  std::string arm;
  bool dos = false;
  bool ser = false;
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // sample std, 0 for a single seed
  double epsilon = 0.0; // max realized over seeds
};

struct AblationTable {
  std::vector<AblationRun> runs;
  std::vector<AblationArmSummary> arms;  // both, dos_only, ser_only, neither

  std::string runs_csv() const;
  std::string summary_csv() const;
  const AblationArmSummary& arm(const std::string& name) const;
};

// Full 2x2 grid over {DOS on/off} x {SER on/off}, one pipeline run per
// (arm, seed) under work_root/<arm>/seed_<s>. All arms share the privacy
// section, so calibration (and hence sigma) is identical across them; the
// DOS-off arms couple the optimizer to the sampler (I2 = I1, sequential).
AblationTable ablation_suite(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                             const std::filesystem::path& work_root);

void write_ablation_csvs(const AblationTable& table, const std::filesystem::path& dir);

}  // namespace dpdd
