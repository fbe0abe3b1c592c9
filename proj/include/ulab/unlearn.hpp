#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ulab/model.hpp"
#include "ulab/tensor.hpp"
#include "ulab/text.hpp"

namespace ulab {

// Exact-word set of surfaces to unlearn, normalized like the tokenizer.
struct MaskLexicon {
  std::set<std::string> words;

  static MaskLexicon from_words(std::span<const std::string> words);  // InputError if empty
};

struct MaskedExample {
  TokenSequence seq;
  std::vector<int> mask_positions;  // sorted indices into seq.ids
  std::string target_group;
  bool lexicon_missed = false;  // set when the lexicon matched nothing
};

// Marks every position whose surface word is in the lexicon.
MaskedExample apply_lexicon_mask(const TokenSequence& seq, const MaskLexicon& lexicon);

// Mean over all masked positions of log P(x_i | x_<i). This is the
// quantity the optimizer descends on: pushing it down is gradient ascent
// on the masked tokens' NLL. Tokens after a mask contribute nothing.
// When traces is given it receives one ForwardTrace per example, in
// batch order (examples without masks get a default-constructed slot).
Tensor unlearning_loss(Graph& graph, const TransformerLM& model,
                       std::span<const MaskedExample> batch,
                       std::vector<ForwardTrace>* traces = nullptr);

// Mean log-likelihood over every position of every sequence; the
// whole-sequence ascent baseline.
Tensor full_sequence_unlearning_loss(Graph& graph, const TransformerLM& model,
                                     std::span<const TokenSequence> batch);

enum class OptimizerKind { adam, sgd };
enum class UnlearnMode { masked, full_sequence };

struct UnlearnConfig {
  int steps = 50;
  int batch_size = 8;
  double learning_rate = 1e-5;
  int checkpoint_every = 10;
  UnlearnMode mode = UnlearnMode::masked;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;

  void validate() const;
};

// One optimizer step. Returns the batch's mean masked log-probability
// (the value being minimized). NumericError on NaN loss.
double unlearn_step(TransformerLM& model, std::span<const MaskedExample> batch,
                    AdamState& opt_state, const UnlearnConfig& cfg);

struct CheckpointEntry {
  int step;
  std::string path;  // relative to the manifest's directory
  std::uint64_t checksum;
};

struct StepLogEntry {
  int step;
  double loss;       // mean masked log P (Eq-style objective value)
  double grad_norm;  // pre-clip global norm
};

// Structured-text record of one unlearning run: config echo, ladder of
// checkpoints with content checksums, per-step loss table.
struct RunManifest {
  UnlearnConfig cfg;
  std::string vocab_path;
  std::vector<CheckpointEntry> checkpoints;
  std::vector<StepLogEntry> losses;
  int warned_empty_masks = 0;

  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);

  // Directory the relative checkpoint paths resolve against.
  std::filesystem::path dir;
};

// Runs the whole schedule: checkpoint at step 0 (bit-identical to the
// input model) and at every multiple of checkpoint_every. Batches are
// drawn with replacement under the run seed. On failure all partial
// checkpoints are removed before the error propagates.
RunManifest run_unlearning(TransformerLM& model, std::span<const MaskedExample> dataset,
                           const UnlearnConfig& cfg, const std::filesystem::path& out_dir,
                           const std::string& vocab_path);

}  // namespace ulab
