#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ulab/eval.hpp"

namespace ulab {

struct HateSpeechRecord {
  std::string text;
  std::string target_group;
  std::vector<std::string> mask_words;  // each occurs in text (word-normalized)
};

struct RejectedRow {
  int line;  // 1-based line number in the source file
  std::string reason;
};

template <typename T>
struct LoadResult {
  std::vector<T> records;
  std::vector<RejectedRow> rejected;
};

// CSV with header stereo,anti,domain (RFC-4180 quoting). Malformed rows
// are rejected with their line numbers and loading continues.
LoadResult<EvalPair> load_pairs_csv(const std::filesystem::path& path);
void save_pairs_csv(std::span<const EvalPair> pairs, const std::filesystem::path& path);

// JSON array of {"stereo","anti","unrelated","domain"} objects.
LoadResult<EvalTriad> load_triads_json(const std::filesystem::path& path);
void save_triads_json(std::span<const EvalTriad> triads, const std::filesystem::path& path);

// JSON-lines of {"text","target_group","mask_words"?}. Optional
// target_group filter keeps only matching records.
LoadResult<HateSpeechRecord> load_hatespeech_jsonl(
    const std::filesystem::path& path, const std::optional<std::string>& target_group = {});
void save_hatespeech_jsonl(std::span<const HateSpeechRecord> records,
                           const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic bundle generator

struct DomainSpec {
  std::string name;
  std::vector<std::string> disadvantaged;  // attribute terms that co-occur with toxic contexts
  std::vector<std::string> contrast;       // attribute terms that never do
};

struct ToxicTemplate {
  std::string text;                      // contains exactly one {ATTR} slot
  std::vector<std::string> toxic_words;  // content words to annotate for masking
};

struct SynthConfig {
  std::vector<DomainSpec> domains;  // >= 2; domains[0] is the unlearning target
  std::vector<ToxicTemplate> toxic_templates;
  std::vector<std::string> neutral_templates;    // {ATTR} slot, filled with any term
  std::vector<std::string> unrelated_templates;  // {ATTR} slot, filled with unrelated words only
  std::vector<std::string> neutral_fillers;      // extra non-attribute fillers
  std::vector<std::string> unrelated_words;      // StereoSet-style unrelated substitutes

  double overlap_factor = 1.0;  // rho: fraction of toxic templates shared across domains
  int toxic_per_domain = 200;
  int neutral_count = 2000;
  int retain_count = 200;
  int pairs_per_domain = 40;
  int triads_per_domain = 40;
  int unrelated_repeats = 10;  // copies of each unrelated-carrier sentence
  double unlearn_test_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;  // ConfigError naming the offending entry
};

struct SynthBundle {
  std::vector<std::string> pretrain;  // shuffled mixture, one sentence per string
  std::vector<std::string> retain;    // held-out neutral sentences
  std::vector<HateSpeechRecord> unlearn_set;   // domain-0 toxic, mask-annotated
  std::vector<HateSpeechRecord> unlearn_test;  // unseen-by-unlearning domain-0 toxic
  std::vector<EvalPair> pairs;
  std::vector<EvalTriad> triads;
  int shared_template_count = 0;
};

// Deterministic per seed. Fraction rho of toxic templates is instantiated
// for every domain's disadvantaged terms; the remainder is split
// disjointly between domains.
SynthBundle generate_synthetic(const SynthConfig& cfg);

int shared_template_count(const SynthConfig& cfg);

// Writes pretrain.txt, retain.txt, unlearn.jsonl, unlearn_test.jsonl,
// pairs.csv, triads.json plus bundle_manifest.txt with per-file checksums.
void write_bundle(const SynthBundle& bundle, const SynthConfig& cfg,
                  const std::filesystem::path& dir);

// The calibrated bias-injection floor recorded in every bundle manifest:
// a freshly pretrained model must prefer stereo on domain 0 at least
// this often for the unlearning experiment to be meaningful.
inline constexpr double kBiasInjectionMinCrows = 60.0;

}  // namespace ulab
