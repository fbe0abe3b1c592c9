#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/eval.hpp"
#include "ulab/model.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

struct PretrainConfig {
  int steps = 1200;
  int batch_size = 16;
  double learning_rate = 3e-3;
  int min_count = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  int log_every = 100;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One structured key-value file per experiment. Relative paths resolve
// against the config file's directory; only seed and out_dir may be
// overridden from the command line.
struct ExperimentConfig {
  std::filesystem::path config_dir;
  std::filesystem::path out_dir = "runs/experiment";
  std::uint64_t seed = 42;

  ModelConfig model;        // vocab_size is filled in at pretrain time
  PretrainConfig pretrain;
  UnlearnConfig unlearn;
  SynthConfig synth;

  std::optional<std::string> unlearn_lexicon;  // comma-separated fallback mask words

  // Optional path overrides; empty means the out_dir-relative default.
  std::map<std::string, std::string> paths;

  static ExperimentConfig load(const std::filesystem::path& path);

  // Resolved artifact locations.
  std::filesystem::path bundle_dir() const;
  std::filesystem::path pretrain_corpus() const;
  std::filesystem::path vocab_file() const;
  std::filesystem::path baseline_checkpoint() const;
  std::filesystem::path run_dir() const;
  std::filesystem::path unlearn_data() const;
  std::filesystem::path unlearn_test_data() const;
  std::filesystem::path pairs_file() const;
  std::filesystem::path triads_file() const;
  std::filesystem::path retain_file() const;
  std::filesystem::path report_csv() const;
  std::filesystem::path report_text() const;
};

// Deterministic per-stage seed derived from the experiment seed.
std::uint64_t stage_seed(std::uint64_t base, std::string_view stage);

struct PretrainResult {
  double first_loss = 0.0;
  double final_loss = 0.0;
};

// Standard next-token NLL descent with global grad clipping.
PretrainResult pretrain_lm(TransformerLM& model, std::span<const TokenSequence> corpus,
                           const PretrainConfig& cfg, std::ostream* log);

struct SynthOutput {
  std::filesystem::path bundle_dir;
  SynthBundle bundle;
};

struct PretrainOutput {
  std::filesystem::path vocab_path;
  std::filesystem::path checkpoint_path;
  PretrainResult losses;
  double corpus_perplexity = 0.0;
};

struct UnlearnOutput {
  std::filesystem::path manifest_path;
  RunManifest manifest;
};

struct EvalOutput {
  std::filesystem::path csv_path;
  std::filesystem::path text_path;
  TransferMatrix matrix;
};

SynthOutput run_synth(const ExperimentConfig& cfg, std::ostream& log);
PretrainOutput run_pretrain(const ExperimentConfig& cfg, std::ostream& log);
UnlearnOutput run_unlearn(const ExperimentConfig& cfg, std::ostream& log);
EvalOutput run_eval(const ExperimentConfig& cfg, std::ostream& log);

struct CriterionResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ReproOutput {
  bool pass = false;
  std::vector<CriterionResult> criteria;
  std::filesystem::path summary_path;
};

// The acceptance experiment: builds rho=1 and rho=0 bundles, pretrains a
// baseline on each, runs masked unlearning on both plus a full-sequence
// run on the rho=1 baseline, evaluates everything, and checks the
// pinned trend thresholds.
ReproOutput run_repro(const ExperimentConfig& cfg, std::ostream& log);

// Pinned acceptance thresholds.
inline constexpr double kRetainPplMaxRatio = 1.10;
inline constexpr double kLmScoreMaxDrop = 5.0;
inline constexpr double kUnlearnPplMinRatio = 1.5;
inline constexpr double kCrowsMinDrop = 2.0;
inline constexpr double kCrowsFloor = 45.0;

}  // namespace ulab
