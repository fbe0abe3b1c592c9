#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ulab/model.hpp"
#include "ulab/text.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

// Bumped whenever scoring semantics change; stamped into every report so
// numbers are never compared across scorer revisions.
inline constexpr const char* kScorerVersion = "ulab-scorer-1";

struct EvalPair {
  std::string stereo;
  std::string anti;
  std::string bias_domain;
};

struct EvalTriad {
  std::string stereo;
  std::string anti;
  std::string unrelated;
  std::string bias_domain;
};

struct StereoSetScores {
  double bias_score;
  double lm_score;
};

// Preference rate for the stereotypical sentence, in percent. Sentences
// are compared by mean per-token log-likelihood; exact ties earn half
// credit, so an indifferent model scores exactly 50.
double crows_bias_score(const ScoringModel& model, std::span<const EvalPair> pairs,
                        const Vocabulary& vocab);

// bias: stereo-vs-anti preference as above. lm: fraction of the 2N
// meaningful-vs-unrelated comparisons the meaningful sentence wins.
StereoSetScores stereoset_scores(const ScoringModel& model, std::span<const EvalTriad> triads,
                                 const Vocabulary& vocab);

struct BiasReport {
  int step = 0;
  std::string domain;
  double crows = 0.0;
  double ss_bias = 0.0;
  double ss_lm = 0.0;
  std::map<std::string, double> perplexities;  // corpus name -> ppl
};

struct NamedCorpus {
  std::string name;
  std::vector<TokenSequence> sequences;
};

struct SweepRow {
  int step = 0;
  std::map<std::string, double> perplexities;
};

// Perplexity of every manifest checkpoint on every named corpus.
// Checkpoint bytes are verified against the manifest checksums first;
// a mismatch raises ChecksumError naming the file.
std::vector<SweepRow> perplexity_sweep(const RunManifest& manifest,
                                       std::span<const NamedCorpus> corpora);

struct DomainEvalSet {
  std::string domain;
  std::vector<EvalPair> pairs;
  std::vector<EvalTriad> triads;
};

struct TransferMatrix {
  std::vector<BiasReport> rows;            // ordered step asc, then domain asc
  std::string unlearned_domain;            // flagged in reports
  std::vector<std::string> skipped_domains;  // had zero eval items
};

// Full bias report per checkpoint per domain, with the sweep's
// perplexities attached to every row of the same step.
TransferMatrix transfer_matrix(const RunManifest& manifest,
                               std::span<const DomainEvalSet> domains,
                               std::span<const NamedCorpus> corpora, const Vocabulary& vocab,
                               const std::string& unlearned_domain);

// CSV columns: step,domain,crows,ss_bias,ss_lm,ppl_retain,
// ppl_unlearn_train,ppl_unlearn_test. First line carries the scorer
// version as a comment.
void write_report_csv(const TransferMatrix& matrix, const std::filesystem::path& path);
void write_report_text(const TransferMatrix& matrix, const std::filesystem::path& path);

}  // namespace ulab
