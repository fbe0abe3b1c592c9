#include "ulab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ulab/error.hpp"
#include "ulab/io.hpp"

namespace ulab {

namespace {

// ---------------------------------------------------------------------------
// CSV (RFC-4180 quoting, one record per line)

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::vector<std::string> csv_split(const std::string& line, int line_no) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"' && current.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (quoted) {
    throw ParseError("line " + std::to_string(line_no) + ", col " + std::to_string(line.size()) +
                     ": unterminated quoted field");
  }
  fields.push_back(std::move(current));
  return fields;
}

}  // namespace

LoadResult<EvalPair> load_pairs_csv(const std::filesystem::path& path) {
  std::vector<std::string> lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(path.string() + ": empty file, expected header");
  if (csv_split(lines[0], 1) != std::vector<std::string>{"stereo", "anti", "domain"}) {
    throw ParseError(path.string() + ": line 1: header must be stereo,anti,domain");
  }
  LoadResult<EvalPair> result;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    if (lines[i].empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = csv_split(lines[i], line_no);
    } catch (const ParseError& e) {
      result.rejected.push_back({line_no, e.what()});
      continue;
    }
    if (fields.size() != 3) {
      result.rejected.push_back({line_no, "expected 3 fields, got " + std::to_string(fields.size())});
      continue;
    }
    EvalPair pair{fields[0], fields[1], fields[2]};
    if (pair.stereo.empty() || pair.anti.empty()) {
      result.rejected.push_back({line_no, "stereo and anti must be non-empty"});
      continue;
    }
    if (pair.stereo == pair.anti) {
      result.rejected.push_back({line_no, "stereo equals anti"});
      continue;
    }
    result.records.push_back(std::move(pair));
  }
  return result;
}

void save_pairs_csv(std::span<const EvalPair> pairs, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "stereo,anti,domain\n";
  for (const EvalPair& p : pairs) {
    out << csv_escape(p.stereo) << "," << csv_escape(p.anti) << "," << csv_escape(p.bias_domain)
        << "\n";
  }
  write_text_file_atomic(path, out.str());
}

LoadResult<EvalTriad> load_triads_json(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(path.string() + ": top-level value must be an array");
  LoadResult<EvalTriad> result;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const int record_no = static_cast<int>(i) + 1;
    const auto& item = doc[i];
    if (!item.is_object() || !item.contains("stereo") || !item.contains("anti") ||
        !item.contains("unrelated") || !item.contains("domain") ||
        !item["stereo"].is_string() || !item["anti"].is_string() ||
        !item["unrelated"].is_string() || !item["domain"].is_string()) {
      result.rejected.push_back({record_no, "record " + std::to_string(record_no) +
                                                ": expected string fields stereo/anti/unrelated/domain"});
      continue;
    }
    EvalTriad triad{item["stereo"].get<std::string>(), item["anti"].get<std::string>(),
                    item["unrelated"].get<std::string>(), item["domain"].get<std::string>()};
    if (triad.stereo.empty() || triad.anti.empty() || triad.unrelated.empty()) {
      result.rejected.push_back({record_no, "record " + std::to_string(record_no) + ": empty sentence"});
      continue;
    }
    if (triad.stereo == triad.anti || triad.stereo == triad.unrelated ||
        triad.anti == triad.unrelated) {
      result.rejected.push_back(
          {record_no, "record " + std::to_string(record_no) + ": sentences must be distinct"});
      continue;
    }
    result.records.push_back(std::move(triad));
  }
  return result;
}

void save_triads_json(std::span<const EvalTriad> triads, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const EvalTriad& t : triads) {
    doc.push_back({{"stereo", t.stereo},
                   {"anti", t.anti},
                   {"unrelated", t.unrelated},
                   {"domain", t.bias_domain}});
  }
  write_text_file_atomic(path, doc.dump(2) + "\n");
}

namespace {

bool mask_words_occur(const HateSpeechRecord& record) {
  std::vector<std::string> toks = tokenize_words(record.text);
  std::set<std::string> present(toks.begin(), toks.end());
  for (const std::string& w : record.mask_words) {
    std::vector<std::string> norm = tokenize_words(w);
    if (norm.size() != 1 || !present.count(norm[0])) return false;
  }
  return true;
}

}  // namespace

LoadResult<HateSpeechRecord> load_hatespeech_jsonl(const std::filesystem::path& path,
                                                   const std::optional<std::string>& target_group) {
  std::vector<std::string> lines = read_lines(path);
  LoadResult<HateSpeechRecord> result;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    if (lines[i].empty()) continue;
    nlohmann::json item;
    try {
      item = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      result.rejected.push_back({line_no, e.what()});
      continue;
    }
    if (!item.is_object() || !item.contains("text") || !item.contains("target_group") ||
        !item["text"].is_string() || !item["target_group"].is_string()) {
      result.rejected.push_back({line_no, "expected object with string text and target_group"});
      continue;
    }
    HateSpeechRecord record;
    record.text = item["text"].get<std::string>();
    record.target_group = item["target_group"].get<std::string>();
    if (record.text.empty()) {
      result.rejected.push_back({line_no, "text must be non-empty"});
      continue;
    }
    if (item.contains("mask_words")) {
      if (!item["mask_words"].is_array()) {
        result.rejected.push_back({line_no, "mask_words must be an array of strings"});
        continue;
      }
      bool ok = true;
      for (const auto& w : item["mask_words"]) {
        if (!w.is_string()) {
          ok = false;
          break;
        }
        record.mask_words.push_back(w.get<std::string>());
      }
      if (!ok) {
        result.rejected.push_back({line_no, "mask_words must be an array of strings"});
        continue;
      }
      if (!mask_words_occur(record)) {
        result.rejected.push_back({line_no, "a mask word does not occur in text"});
        continue;
      }
    }
    if (target_group && record.target_group != *target_group) continue;
    result.records.push_back(std::move(record));
  }
  return result;
}

void save_hatespeech_jsonl(std::span<const HateSpeechRecord> records,
                           const std::filesystem::path& path) {
  std::ostringstream out;
  for (const HateSpeechRecord& r : records) {
    nlohmann::json item{{"text", r.text}, {"target_group", r.target_group}};
    if (!r.mask_words.empty()) item["mask_words"] = r.mask_words;
    out << item.dump() << "\n";
  }
  write_text_file_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

constexpr const char* kAttrSlot = "{ATTR}";

int slot_count(const std::string& text) {
  int count = 0;
  std::size_t pos = 0;
  while ((pos = text.find(kAttrSlot, pos)) != std::string::npos) {
    ++count;
    pos += std::strlen(kAttrSlot);
  }
  return count;
}

std::string instantiate(const std::string& tmpl, const std::string& term) {
  std::string out = tmpl;
  const std::size_t pos = out.find(kAttrSlot);
  out.replace(pos, std::strlen(kAttrSlot), term);
  return out;
}

void require_single_word(const std::string& term, const char* role) {
  std::vector<std::string> toks = tokenize_words(term);
  if (toks.size() != 1 || toks[0] != term) {
    throw ConfigError(std::string("synth: ") + role + " term \"" + term +
                      "\" must be a single normalized word");
  }
}

void require_one_slot(const std::string& tmpl, const char* kind) {
  if (slot_count(tmpl) != 1) {
    throw ConfigError(std::string("synth: ") + kind + " template \"" + tmpl +
                      "\" must contain exactly one " + kAttrSlot + " slot");
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (domains.size() < 2) throw ConfigError("synth: need at least 2 domains");
  std::set<std::string> names;
  std::set<std::string> all_terms;
  auto claim_term = [&](const std::string& term, const char* role) {
    require_single_word(term, role);
    if (!all_terms.insert(term).second) {
      throw ConfigError("synth: term \"" + term + "\" appears in more than one role");
    }
  };
  for (const DomainSpec& d : domains) {
    if (d.name.empty() || !names.insert(d.name).second) {
      throw ConfigError("synth: domain names must be non-empty and distinct");
    }
    if (d.disadvantaged.empty() || d.contrast.empty()) {
      throw ConfigError("synth: domain " + d.name + " needs disadvantaged and contrast terms");
    }
    for (const std::string& t : d.disadvantaged) claim_term(t, "disadvantaged");
    for (const std::string& t : d.contrast) claim_term(t, "contrast");
  }
  for (const std::string& t : neutral_fillers) claim_term(t, "neutral filler");
  for (const std::string& t : unrelated_words) claim_term(t, "unrelated");
  if (unrelated_words.empty()) throw ConfigError("synth: need unrelated words for triads");

  if (toxic_templates.empty()) throw ConfigError("synth: need toxic templates");
  for (const ToxicTemplate& t : toxic_templates) {
    require_one_slot(t.text, "toxic");
    std::vector<std::string> body = tokenize_words(instantiate(t.text, "x"));
    std::set<std::string> present(body.begin(), body.end());
    for (const std::string& w : t.toxic_words) {
      std::vector<std::string> norm = tokenize_words(w);
      if (norm.size() != 1 || !present.count(norm[0])) {
        throw ConfigError("synth: toxic word \"" + w + "\" not found in template \"" + t.text +
                          "\"");
      }
    }
  }
  if (neutral_templates.empty()) throw ConfigError("synth: need neutral templates");
  for (const std::string& t : neutral_templates) require_one_slot(t, "neutral");
  if (unrelated_templates.empty()) throw ConfigError("synth: need unrelated-carrier templates");
  for (const std::string& t : unrelated_templates) require_one_slot(t, "unrelated-carrier");

  if (overlap_factor < 0.0 || overlap_factor > 1.0) {
    throw ConfigError("synth: overlap_factor must lie in [0,1]");
  }
  if (toxic_per_domain < 1 || neutral_count < 1 || retain_count < 1 || pairs_per_domain < 1 ||
      triads_per_domain < 1 || unrelated_repeats < 1) {
    throw ConfigError("synth: all counts must be >= 1");
  }
  if (unlearn_test_fraction <= 0.0 || unlearn_test_fraction >= 1.0) {
    throw ConfigError("synth: unlearn_test_fraction must lie in (0,1)");
  }

  const int shared = shared_template_count(*this);
  const int exclusive = static_cast<int>(toxic_templates.size()) - shared;
  if (shared == 0 && exclusive < static_cast<int>(domains.size())) {
    throw ConfigError("synth: not enough toxic templates to give every domain one at this overlap");
  }
}

int shared_template_count(const SynthConfig& cfg) {
  return static_cast<int>(
      std::lround(cfg.overlap_factor * static_cast<double>(cfg.toxic_templates.size())));
}

namespace {

struct Combo {
  int tmpl;
  int term;
};

}  // namespace

SynthBundle generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SynthBundle bundle;

  // Partition toxic templates: a shared prefix of a shuffled order, then
  // round-robin exclusives.
  const int n_templates = static_cast<int>(cfg.toxic_templates.size());
  std::vector<int> order(static_cast<std::size_t>(n_templates));
  for (int i = 0; i < n_templates; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const int shared_n = shared_template_count(cfg);
  bundle.shared_template_count = shared_n;

  const std::size_t n_domains = cfg.domains.size();
  std::vector<std::vector<int>> domain_templates(n_domains);
  for (int i = 0; i < shared_n; ++i) {
    for (std::size_t d = 0; d < n_domains; ++d) {
      domain_templates[d].push_back(order[static_cast<std::size_t>(i)]);
    }
  }
  for (int i = shared_n; i < n_templates; ++i) {
    domain_templates[static_cast<std::size_t>(i - shared_n) % n_domains].push_back(
        order[static_cast<std::size_t>(i)]);
  }

  std::vector<std::string> toxic_sentences;

  auto make_record = [&](int tmpl_idx, const std::string& term,
                         const std::string& group) -> HateSpeechRecord {
    const ToxicTemplate& tmpl = cfg.toxic_templates[static_cast<std::size_t>(tmpl_idx)];
    HateSpeechRecord rec;
    rec.text = instantiate(tmpl.text, term);
    rec.target_group = group;
    rec.mask_words.push_back(term);
    for (const std::string& w : tmpl.toxic_words) rec.mask_words.push_back(w);
    return rec;
  };

  for (std::size_t d = 0; d < n_domains; ++d) {
    const DomainSpec& domain = cfg.domains[d];
    std::vector<Combo> combos;
    for (int t : domain_templates[d]) {
      for (std::size_t w = 0; w < domain.disadvantaged.size(); ++w) {
        combos.push_back({t, static_cast<int>(w)});
      }
    }
    std::shuffle(combos.begin(), combos.end(), rng);

    if (d == 0) {
      // Unlearning target: split combos into an unlearn set and a
      // held-out test set; both appear in pretraining.
      if (combos.size() < 2) {
        throw ConfigError("synth: domain " + domain.name + " needs at least 2 toxic combos");
      }
      std::size_t n_test = static_cast<std::size_t>(
          std::lround(cfg.unlearn_test_fraction * static_cast<double>(combos.size())));
      n_test = std::clamp<std::size_t>(n_test, 1, combos.size() - 1);
      for (std::size_t i = 0; i < combos.size(); ++i) {
        const std::string& term =
            domain.disadvantaged[static_cast<std::size_t>(combos[i].term)];
        HateSpeechRecord rec = make_record(combos[i].tmpl, term, domain.name);
        if (i < n_test) {
          bundle.unlearn_test.push_back(std::move(rec));
        } else {
          bundle.unlearn_set.push_back(std::move(rec));
        }
      }
    }

    const int copies = (cfg.toxic_per_domain + static_cast<int>(combos.size()) - 1) /
                       static_cast<int>(combos.size());
    for (const Combo& c : combos) {
      const std::string& term = domain.disadvantaged[static_cast<std::size_t>(c.term)];
      const std::string sentence =
          instantiate(cfg.toxic_templates[static_cast<std::size_t>(c.tmpl)].text, term);
      for (int r = 0; r < copies; ++r) toxic_sentences.push_back(sentence);
    }
  }

  // Neutral sentences cover every attribute term (disadvantaged and
  // contrast alike) plus plain fillers; a slice of held-out combos
  // becomes the retain set.
  std::vector<std::string> fillers;
  for (const DomainSpec& d : cfg.domains) {
    fillers.insert(fillers.end(), d.disadvantaged.begin(), d.disadvantaged.end());
    fillers.insert(fillers.end(), d.contrast.begin(), d.contrast.end());
  }
  fillers.insert(fillers.end(), cfg.neutral_fillers.begin(), cfg.neutral_fillers.end());

  std::vector<Combo> neutral_combos;
  for (std::size_t t = 0; t < cfg.neutral_templates.size(); ++t) {
    for (std::size_t w = 0; w < fillers.size(); ++w) {
      neutral_combos.push_back({static_cast<int>(t), static_cast<int>(w)});
    }
  }
  std::shuffle(neutral_combos.begin(), neutral_combos.end(), rng);
  if (static_cast<int>(neutral_combos.size()) <= cfg.retain_count) {
    throw ConfigError("synth: retain_count " + std::to_string(cfg.retain_count) +
                      " leaves no neutral combos for pretraining (have " +
                      std::to_string(neutral_combos.size()) + ")");
  }
  auto neutral_sentence = [&](const Combo& c) {
    return instantiate(cfg.neutral_templates[static_cast<std::size_t>(c.tmpl)],
                       fillers[static_cast<std::size_t>(c.term)]);
  };
  for (int i = 0; i < cfg.retain_count; ++i) {
    bundle.retain.push_back(neutral_sentence(neutral_combos[static_cast<std::size_t>(i)]));
  }
  std::vector<std::string> neutral_pretrain;
  {
    const std::size_t first = static_cast<std::size_t>(cfg.retain_count);
    for (int i = 0; i < cfg.neutral_count; ++i) {
      const std::size_t idx =
          first + (static_cast<std::size_t>(i) % (neutral_combos.size() - first));
      neutral_pretrain.push_back(neutral_sentence(neutral_combos[idx]));
    }
  }

  // Unrelated words are taught in their own carrier contexts so they are
  // in-vocabulary yet never follow an attribute slot.
  std::vector<std::string> carrier_sentences;
  for (const std::string& tmpl : cfg.unrelated_templates) {
    for (const std::string& word : cfg.unrelated_words) {
      for (int r = 0; r < cfg.unrelated_repeats; ++r) {
        carrier_sentences.push_back(instantiate(tmpl, word));
      }
    }
  }

  bundle.pretrain = toxic_sentences;
  bundle.pretrain.insert(bundle.pretrain.end(), neutral_pretrain.begin(), neutral_pretrain.end());
  bundle.pretrain.insert(bundle.pretrain.end(), carrier_sentences.begin(),
                         carrier_sentences.end());
  std::shuffle(bundle.pretrain.begin(), bundle.pretrain.end(), rng);

  // Eval pairs and triads: swap disadvantaged and contrast terms inside
  // toxic templates; triads substitute a held-out unrelated word.
  for (std::size_t d = 0; d < n_domains; ++d) {
    const DomainSpec& domain = cfg.domains[d];
    const std::vector<int>& templates = domain_templates[d];
    struct PairCombo {
      int tmpl;
      int disadv;
      int contrast;
    };
    std::vector<PairCombo> pair_combos;
    for (int t : templates) {
      for (std::size_t i = 0; i < domain.disadvantaged.size(); ++i) {
        for (std::size_t j = 0; j < domain.contrast.size(); ++j) {
          pair_combos.push_back({t, static_cast<int>(i), static_cast<int>(j)});
        }
      }
    }
    if (static_cast<int>(pair_combos.size()) < cfg.pairs_per_domain ||
        static_cast<int>(pair_combos.size()) < cfg.triads_per_domain) {
      throw ConfigError("synth: domain " + domain.name + " has only " +
                        std::to_string(pair_combos.size()) +
                        " distinct template/term combos; lower pairs_per_domain");
    }
    std::shuffle(pair_combos.begin(), pair_combos.end(), rng);
    for (int i = 0; i < cfg.pairs_per_domain; ++i) {
      const PairCombo& c = pair_combos[static_cast<std::size_t>(i)];
      const std::string& tmpl = cfg.toxic_templates[static_cast<std::size_t>(c.tmpl)].text;
      bundle.pairs.push_back(
          {instantiate(tmpl, domain.disadvantaged[static_cast<std::size_t>(c.disadv)]),
           instantiate(tmpl, domain.contrast[static_cast<std::size_t>(c.contrast)]),
           domain.name});
    }
    std::shuffle(pair_combos.begin(), pair_combos.end(), rng);
    for (int i = 0; i < cfg.triads_per_domain; ++i) {
      const PairCombo& c = pair_combos[static_cast<std::size_t>(i)];
      const std::string& tmpl = cfg.toxic_templates[static_cast<std::size_t>(c.tmpl)].text;
      const std::string& unrelated =
          cfg.unrelated_words[static_cast<std::size_t>(i) % cfg.unrelated_words.size()];
      bundle.triads.push_back(
          {instantiate(tmpl, domain.disadvantaged[static_cast<std::size_t>(c.disadv)]),
           instantiate(tmpl, domain.contrast[static_cast<std::size_t>(c.contrast)]),
           instantiate(tmpl, unrelated), domain.name});
    }
  }

  return bundle;
}

void write_bundle(const SynthBundle& bundle, const SynthConfig& cfg,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_sentences = [&](const std::vector<std::string>& sentences,
                             const std::filesystem::path& path) {
    std::string out;
    for (const std::string& s : sentences) {
      out += s;
      out.push_back('\n');
    }
    write_text_file_atomic(path, out);
  };
  write_sentences(bundle.pretrain, dir / "pretrain.txt");
  write_sentences(bundle.retain, dir / "retain.txt");
  save_hatespeech_jsonl(bundle.unlearn_set, dir / "unlearn.jsonl");
  save_hatespeech_jsonl(bundle.unlearn_test, dir / "unlearn_test.jsonl");
  save_pairs_csv(bundle.pairs, dir / "pairs.csv");
  save_triads_json(bundle.triads, dir / "triads.json");

  std::ostringstream manifest;
  manifest << "ulab_bundle_manifest v1\n";
  manifest << "seed = " << cfg.seed << "\n";
  manifest << "overlap_factor = " << format_double(cfg.overlap_factor) << "\n";
  manifest << "shared_toxic_templates = " << bundle.shared_template_count << "\n";
  manifest << "toxic_per_domain = " << cfg.toxic_per_domain << "\n";
  manifest << "neutral_count = " << cfg.neutral_count << "\n";
  manifest << "retain_count = " << cfg.retain_count << "\n";
  manifest << "pairs_per_domain = " << cfg.pairs_per_domain << "\n";
  manifest << "triads_per_domain = " << cfg.triads_per_domain << "\n";
  manifest << "domains =";
  for (const DomainSpec& d : cfg.domains) manifest << " " << d.name;
  manifest << "\n";
  manifest << "bias_injection_min_crows = " << format_double(kBiasInjectionMinCrows) << "\n";
  manifest << "[files]\n";
  for (const char* name : {"pretrain.txt", "retain.txt", "unlearn.jsonl", "unlearn_test.jsonl",
                           "pairs.csv", "triads.json"}) {
    manifest << name << " " << checksum_hex(fnv1a64_file(dir / name)) << "\n";
  }
  write_text_file_atomic(dir / "bundle_manifest.txt", manifest.str());
}

}  // namespace ulab
