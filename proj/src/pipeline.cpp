#include "ulab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "ulab/error.hpp"
#include "ulab/io.hpp"

namespace ulab {

// ---------------------------------------------------------------------------
// Config file parsing

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(trim(s.substr(start)));
      break;
    }
    parts.push_back(trim(s.substr(start, pos - start)));
    start = pos + 1;
  }
  return parts;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (std::string& part : split_on(s, ',')) {
    if (!part.empty()) out.push_back(std::move(part));
  }
  return out;
}

int parse_int(const std::string& value, const std::string& key) {
  try {
    return std::stoi(value);
  } catch (...) {
    throw ConfigError("config: " + key + " expects an integer, got \"" + value + "\"");
  }
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    return std::stod(value);
  } catch (...) {
    throw ConfigError("config: " + key + " expects a number, got \"" + value + "\"");
  }
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  try {
    return std::stoull(value);
  } catch (...) {
    throw ConfigError("config: " + key + " expects an unsigned integer, got \"" + value + "\"");
  }
}

OptimizerKind parse_optimizer(const std::string& value, const std::string& key) {
  if (value == "adam") return OptimizerKind::adam;
  if (value == "sgd") return OptimizerKind::sgd;
  throw ConfigError("config: " + key + " must be adam or sgd, got \"" + value + "\"");
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::vector<std::string> lines = read_lines(path);
  ExperimentConfig cfg;
  cfg.config_dir = std::filesystem::absolute(path).parent_path();

  std::string section;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config " + where + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qual = section + "." + key;

    if (section == "experiment") {
      if (key == "out_dir") cfg.out_dir = value;
      else if (key == "seed") cfg.seed = parse_u64(value, qual);
      else throw ConfigError("config " + where + ": unknown key " + qual);
    } else if (section == "model") {
      if (key == "n_layers") cfg.model.n_layers = parse_int(value, qual);
      else if (key == "n_heads") cfg.model.n_heads = parse_int(value, qual);
      else if (key == "d_model") cfg.model.d_model = parse_int(value, qual);
      else if (key == "d_ff") cfg.model.d_ff = parse_int(value, qual);
      else if (key == "context_length") cfg.model.context_length = parse_int(value, qual);
      else throw ConfigError("config " + where + ": unknown key " + qual);
    } else if (section == "pretrain") {
      if (key == "steps") cfg.pretrain.steps = parse_int(value, qual);
      else if (key == "batch_size") cfg.pretrain.batch_size = parse_int(value, qual);
      else if (key == "learning_rate") cfg.pretrain.learning_rate = parse_double(value, qual);
      else if (key == "min_count") cfg.pretrain.min_count = parse_int(value, qual);
      else if (key == "optimizer") cfg.pretrain.optimizer = parse_optimizer(value, qual);
      else if (key == "log_every") cfg.pretrain.log_every = parse_int(value, qual);
      else throw ConfigError("config " + where + ": unknown key " + qual);
    } else if (section == "unlearn") {
      if (key == "steps") cfg.unlearn.steps = parse_int(value, qual);
      else if (key == "batch_size") cfg.unlearn.batch_size = parse_int(value, qual);
      else if (key == "learning_rate") cfg.unlearn.learning_rate = parse_double(value, qual);
      else if (key == "checkpoint_every") cfg.unlearn.checkpoint_every = parse_int(value, qual);
      else if (key == "optimizer") cfg.unlearn.optimizer = parse_optimizer(value, qual);
      else if (key == "lexicon") cfg.unlearn_lexicon = value;
      else if (key == "mode") {
        if (value == "masked") cfg.unlearn.mode = UnlearnMode::masked;
        else if (value == "full-sequence") cfg.unlearn.mode = UnlearnMode::full_sequence;
        else throw ConfigError("config " + where + ": mode must be masked or full-sequence");
      } else throw ConfigError("config " + where + ": unknown key " + qual);
    } else if (section == "synth") {
      if (key == "overlap_factor") cfg.synth.overlap_factor = parse_double(value, qual);
      else if (key == "toxic_per_domain") cfg.synth.toxic_per_domain = parse_int(value, qual);
      else if (key == "neutral_count") cfg.synth.neutral_count = parse_int(value, qual);
      else if (key == "retain_count") cfg.synth.retain_count = parse_int(value, qual);
      else if (key == "pairs_per_domain") cfg.synth.pairs_per_domain = parse_int(value, qual);
      else if (key == "triads_per_domain") cfg.synth.triads_per_domain = parse_int(value, qual);
      else if (key == "unrelated_repeats") cfg.synth.unrelated_repeats = parse_int(value, qual);
      else if (key == "unlearn_test_fraction")
        cfg.synth.unlearn_test_fraction = parse_double(value, qual);
      else if (key == "domain") {
        std::vector<std::string> parts = split_on(value, ':');
        if (parts.size() != 3) {
          throw ConfigError("config " + where + ": domain expects name : terms : contrast-terms");
        }
        DomainSpec d;
        d.name = parts[0];
        d.disadvantaged = split_list(parts[1]);
        d.contrast = split_list(parts[2]);
        cfg.synth.domains.push_back(std::move(d));
      } else if (key == "toxic_template") {
        std::vector<std::string> parts = split_on(value, '|');
        if (parts.empty() || parts.size() > 2) {
          throw ConfigError("config " + where + ": toxic_template expects text | toxic-words");
        }
        ToxicTemplate t;
        t.text = parts[0];
        if (parts.size() == 2) t.toxic_words = split_list(parts[1]);
        cfg.synth.toxic_templates.push_back(std::move(t));
      } else if (key == "neutral_template") {
        cfg.synth.neutral_templates.push_back(value);
      } else if (key == "unrelated_template") {
        cfg.synth.unrelated_templates.push_back(value);
      } else if (key == "neutral_filler") {
        for (std::string& w : split_list(value)) cfg.synth.neutral_fillers.push_back(std::move(w));
      } else if (key == "unrelated_word") {
        for (std::string& w : split_list(value)) cfg.synth.unrelated_words.push_back(std::move(w));
      } else {
        throw ConfigError("config " + where + ": unknown key " + qual);
      }
    } else if (section == "paths") {
      cfg.paths[key] = value;
    } else {
      throw ConfigError("config " + where + ": unknown section [" + section + "]");
    }
  }
  return cfg;
}

namespace {

std::filesystem::path resolve_override(const ExperimentConfig& cfg, const std::string& key,
                                       const std::filesystem::path& fallback) {
  auto it = cfg.paths.find(key);
  if (it == cfg.paths.end()) return fallback;
  std::filesystem::path p = it->second;
  return p.is_absolute() ? p : cfg.config_dir / p;
}

}  // namespace

std::filesystem::path ExperimentConfig::bundle_dir() const {
  return resolve_override(*this, "bundle_dir", out_dir / "bundle");
}
std::filesystem::path ExperimentConfig::pretrain_corpus() const {
  return resolve_override(*this, "pretrain_corpus", bundle_dir() / "pretrain.txt");
}
std::filesystem::path ExperimentConfig::vocab_file() const {
  return resolve_override(*this, "vocab", out_dir / "vocab.txt");
}
std::filesystem::path ExperimentConfig::baseline_checkpoint() const {
  return resolve_override(*this, "baseline", out_dir / "baseline.ckpt");
}
std::filesystem::path ExperimentConfig::run_dir() const {
  return resolve_override(*this, "run_dir", out_dir / "run");
}
std::filesystem::path ExperimentConfig::unlearn_data() const {
  return resolve_override(*this, "unlearn_data", bundle_dir() / "unlearn.jsonl");
}
std::filesystem::path ExperimentConfig::unlearn_test_data() const {
  return resolve_override(*this, "unlearn_test_data", bundle_dir() / "unlearn_test.jsonl");
}
std::filesystem::path ExperimentConfig::pairs_file() const {
  return resolve_override(*this, "pairs", bundle_dir() / "pairs.csv");
}
std::filesystem::path ExperimentConfig::triads_file() const {
  return resolve_override(*this, "triads", bundle_dir() / "triads.json");
}
std::filesystem::path ExperimentConfig::retain_file() const {
  return resolve_override(*this, "retain", bundle_dir() / "retain.txt");
}
std::filesystem::path ExperimentConfig::report_csv() const {
  return resolve_override(*this, "report_csv", out_dir / "report.csv");
}
std::filesystem::path ExperimentConfig::report_text() const {
  return resolve_override(*this, "report_text", out_dir / "report.txt");
}

std::uint64_t stage_seed(std::uint64_t base, std::string_view stage) {
  std::string material(stage);
  material += ":";
  material += std::to_string(base);
  return fnv1a64(material);
}

// ---------------------------------------------------------------------------
// Pretraining

void PretrainConfig::validate() const {
  if (steps < 1) throw ConfigError("pretrain: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
  if (min_count < 1) throw ConfigError("pretrain: min_count must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("pretrain: learning_rate must be >= 0");
  if (log_every < 1) throw ConfigError("pretrain: log_every must be >= 1");
}

PretrainResult pretrain_lm(TransformerLM& model, std::span<const TokenSequence> corpus,
                           const PretrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (corpus.empty()) throw InputError("pretrain: empty corpus");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  AdamState opt_state;
  std::vector<Tensor> params = model.parameters();
  PretrainResult result;

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<TokenSequence> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(corpus[pick(rng)]);

    Graph g;
    // Descend on mean NLL: the negation of the mean log-likelihood.
    Tensor loss = g.scale(full_sequence_unlearning_loss(g, model, batch), -1.0);
    const double loss_value = loss.item();
    if (std::isnan(loss_value) || std::isinf(loss_value)) {
      throw NumericError("pretrain step " + std::to_string(step) + ": non-finite loss");
    }
    g.backward(loss);
    const double norm = clip_global_grad_norm(params, cfg.grad_clip);
    if (cfg.optimizer == OptimizerKind::adam) {
      adam_step(params, cfg.learning_rate, opt_state);
    } else {
      sgd_step(params, cfg.learning_rate);
    }
    zero_grads(params);

    if (step == 1) result.first_loss = loss_value;
    result.final_loss = loss_value;
    if (log && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)) {
      *log << "pretrain step " << step << " loss " << format_double(loss_value) << " gnorm "
           << format_double(norm) << "\n";
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Subcommands

SynthOutput run_synth(const ExperimentConfig& cfg, std::ostream& log) {
  SynthConfig synth = cfg.synth;
  synth.seed = stage_seed(cfg.seed, "synth");
  SynthBundle bundle = generate_synthetic(synth);
  const std::filesystem::path dir = cfg.bundle_dir();
  write_bundle(bundle, synth, dir);
  log << "synth: wrote bundle to " << dir.string() << " (pretrain " << bundle.pretrain.size()
      << ", retain " << bundle.retain.size() << ", unlearn " << bundle.unlearn_set.size()
      << ", unlearn-test " << bundle.unlearn_test.size() << ", pairs " << bundle.pairs.size()
      << ", triads " << bundle.triads.size() << ", shared templates "
      << bundle.shared_template_count << ")\n";
  return {dir, std::move(bundle)};
}

namespace {

std::vector<TokenSequence> encode_corpus(const Vocabulary& vocab,
                                         std::span<const std::string> lines, int context_length) {
  std::vector<TokenSequence> out;
  for (const std::string& line : lines) {
    if (trim(line).empty()) continue;
    TokenSequence seq = vocab.encode(line);
    if (seq.length() + 1 > context_length) {
      throw LengthError("corpus sentence \"" + line + "\" exceeds context length " +
                        std::to_string(context_length));
    }
    out.push_back(std::move(seq));
  }
  if (out.empty()) throw InputError("corpus contains no usable sentences");
  return out;
}

}  // namespace

PretrainOutput run_pretrain(const ExperimentConfig& cfg, std::ostream& log) {
  const std::filesystem::path corpus_path = cfg.pretrain_corpus();
  std::vector<std::string> lines = read_lines(corpus_path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw InputError("pretrain corpus " + corpus_path.string() + " is empty");

  Vocabulary vocab = Vocabulary::build(lines, cfg.pretrain.min_count);
  std::filesystem::create_directories(cfg.out_dir);
  vocab.save(cfg.vocab_file());

  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.seed = stage_seed(cfg.seed, "model-init");
  TransformerLM model = TransformerLM::init(mc);

  std::vector<TokenSequence> corpus = encode_corpus(vocab, lines, mc.context_length);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = stage_seed(cfg.seed, "pretrain");
  PretrainResult losses = pretrain_lm(model, corpus, pc, &log);

  const double ppl = perplexity(model, corpus);
  save_checkpoint(model, cfg.baseline_checkpoint());
  log << "pretrain: vocab " << vocab.size() << ", corpus perplexity " << format_double(ppl)
      << ", checkpoint " << cfg.baseline_checkpoint().string() << "\n";
  return {cfg.vocab_file(), cfg.baseline_checkpoint(), losses, ppl};
}

UnlearnOutput run_unlearn(const ExperimentConfig& cfg, std::ostream& log) {
  TransformerLM model = load_checkpoint(cfg.baseline_checkpoint());
  Vocabulary vocab = Vocabulary::load(cfg.vocab_file());
  LoadResult<HateSpeechRecord> loaded = load_hatespeech_jsonl(cfg.unlearn_data());
  for (const RejectedRow& r : loaded.rejected) {
    log << "unlearn: rejected row " << r.line << ": " << r.reason << "\n";
  }
  if (loaded.records.empty()) {
    throw InputError("unlearn dataset " + cfg.unlearn_data().string() + " has no usable records");
  }

  std::optional<MaskLexicon> fallback;
  if (cfg.unlearn_lexicon) {
    std::vector<std::string> words = split_list(*cfg.unlearn_lexicon);
    fallback = MaskLexicon::from_words(words);
  }

  std::vector<MaskedExample> dataset;
  int empty_masks = 0;
  for (const HateSpeechRecord& rec : loaded.records) {
    TokenSequence seq = vocab.encode(rec.text);
    MaskedExample ex;
    if (!rec.mask_words.empty()) {
      ex = apply_lexicon_mask(seq, MaskLexicon::from_words(rec.mask_words));
    } else if (fallback) {
      ex = apply_lexicon_mask(seq, *fallback);
    } else {
      ex.seq = seq;
      ex.lexicon_missed = true;
    }
    ex.target_group = rec.target_group;
    if (ex.lexicon_missed) ++empty_masks;
    dataset.push_back(std::move(ex));
  }
  if (cfg.unlearn.mode == UnlearnMode::masked && empty_masks > 0) {
    log << "unlearn: warning: " << empty_masks << " of " << dataset.size()
        << " examples carry no masked position\n";
  }

  UnlearnConfig uc = cfg.unlearn;
  uc.seed = stage_seed(cfg.seed, "unlearn");

  std::filesystem::path vocab_rel;
  {
    std::error_code ec;
    vocab_rel = std::filesystem::relative(cfg.vocab_file(), cfg.run_dir(), ec);
    if (ec || vocab_rel.empty()) vocab_rel = std::filesystem::absolute(cfg.vocab_file());
  }

  RunManifest manifest =
      run_unlearning(model, dataset, uc, cfg.run_dir(), vocab_rel.generic_string());
  log << "unlearn: " << manifest.checkpoints.size() << " checkpoints in "
      << cfg.run_dir().string() << "\n";
  return {cfg.run_dir() / "run_manifest.txt", std::move(manifest)};
}

namespace {

std::vector<NamedCorpus> load_eval_corpora(const ExperimentConfig& cfg, const Vocabulary& vocab,
                                           int context_length) {
  std::vector<NamedCorpus> corpora;
  {
    NamedCorpus retain;
    retain.name = "retain";
    retain.sequences = encode_corpus(vocab, read_lines(cfg.retain_file()), context_length);
    corpora.push_back(std::move(retain));
  }
  auto from_jsonl = [&](const char* name, const std::filesystem::path& path) {
    LoadResult<HateSpeechRecord> loaded = load_hatespeech_jsonl(path);
    std::vector<std::string> texts;
    for (const HateSpeechRecord& r : loaded.records) texts.push_back(r.text);
    NamedCorpus c;
    c.name = name;
    c.sequences = encode_corpus(vocab, texts, context_length);
    corpora.push_back(std::move(c));
  };
  from_jsonl("unlearn_train", cfg.unlearn_data());
  from_jsonl("unlearn_test", cfg.unlearn_test_data());
  return corpora;
}

}  // namespace

EvalOutput run_eval(const ExperimentConfig& cfg, std::ostream& log) {
  RunManifest manifest = RunManifest::load(cfg.run_dir() / "run_manifest.txt");
  std::filesystem::path vocab_path = manifest.vocab_path;
  if (!vocab_path.is_absolute()) vocab_path = manifest.dir / vocab_path;
  Vocabulary vocab = Vocabulary::load(vocab_path);

  LoadResult<EvalPair> pairs = load_pairs_csv(cfg.pairs_file());
  LoadResult<EvalTriad> triads = load_triads_json(cfg.triads_file());
  for (const RejectedRow& r : pairs.rejected) {
    log << "eval: pairs row " << r.line << " rejected: " << r.reason << "\n";
  }
  for (const RejectedRow& r : triads.rejected) {
    log << "eval: triads record " << r.line << " rejected: " << r.reason << "\n";
  }

  std::map<std::string, DomainEvalSet> by_domain;
  for (EvalPair& p : pairs.records) {
    by_domain[p.bias_domain].domain = p.bias_domain;
    by_domain[p.bias_domain].pairs.push_back(std::move(p));
  }
  for (EvalTriad& t : triads.records) {
    by_domain[t.bias_domain].domain = t.bias_domain;
    by_domain[t.bias_domain].triads.push_back(std::move(t));
  }
  std::vector<DomainEvalSet> domains;
  for (auto& [name, set] : by_domain) domains.push_back(std::move(set));

  const ModelConfig mc = load_checkpoint(manifest.dir / manifest.checkpoints.at(0).path).config();
  std::vector<NamedCorpus> corpora = load_eval_corpora(cfg, vocab, mc.context_length);

  const std::string unlearned_domain =
      cfg.synth.domains.empty() ? std::string("unknown") : cfg.synth.domains[0].name;
  TransferMatrix matrix = transfer_matrix(manifest, domains, corpora, vocab, unlearned_domain);
  for (const std::string& skipped : matrix.skipped_domains) {
    log << "eval: warning: domain " << skipped << " skipped (no eval items)\n";
  }

  write_report_csv(matrix, cfg.report_csv());
  write_report_text(matrix, cfg.report_text());
  log << "eval: report at " << cfg.report_csv().string() << "\n";
  return {cfg.report_csv(), cfg.report_text(), std::move(matrix)};
}

// ---------------------------------------------------------------------------
// Repro: the acceptance experiment

namespace {

const BiasReport& find_row(const TransferMatrix& matrix, int step, const std::string& domain) {
  for (const BiasReport& row : matrix.rows) {
    if (row.step == step && row.domain == domain) return row;
  }
  throw InputError("report row missing for step " + std::to_string(step) + " domain " + domain);
}

double ppl_of(const BiasReport& row, const std::string& corpus) {
  auto it = row.perplexities.find(corpus);
  if (it == row.perplexities.end()) throw InputError("missing perplexity column " + corpus);
  return it->second;
}

struct ReproRun {
  EvalOutput eval;
  int final_step;
};

ExperimentConfig sub_experiment(const ExperimentConfig& base, const std::string& name) {
  ExperimentConfig sub = base;
  sub.out_dir = base.out_dir / name;
  sub.paths.clear();
  return sub;
}

}  // namespace

ReproOutput run_repro(const ExperimentConfig& cfg, std::ostream& log) {
  std::filesystem::create_directories(cfg.out_dir);

  auto full_pipeline = [&](const ExperimentConfig& sub) -> ReproRun {
    run_synth(sub, log);
    run_pretrain(sub, log);
    UnlearnOutput unlearn = run_unlearn(sub, log);
    EvalOutput eval = run_eval(sub, log);
    return {std::move(eval), unlearn.manifest.cfg.steps};
  };

  log << "repro: rho=" << format_double(cfg.synth.overlap_factor) << " pipeline\n";
  ExperimentConfig rho1 = sub_experiment(cfg, "rho1");
  ReproRun run1 = full_pipeline(rho1);

  log << "repro: rho=0 pipeline\n";
  ExperimentConfig rho0 = sub_experiment(cfg, "rho0");
  rho0.synth.overlap_factor = 0.0;
  ReproRun run0 = full_pipeline(rho0);

  log << "repro: full-sequence baseline on the rho=1 bundle\n";
  ExperimentConfig fullseq = sub_experiment(cfg, "fullseq");
  fullseq.unlearn.mode = UnlearnMode::full_sequence;
  fullseq.paths["bundle_dir"] = std::filesystem::absolute(rho1.bundle_dir()).string();
  fullseq.paths["vocab"] = std::filesystem::absolute(rho1.vocab_file()).string();
  fullseq.paths["baseline"] = std::filesystem::absolute(rho1.baseline_checkpoint()).string();
  UnlearnOutput fs_unlearn = run_unlearn(fullseq, log);
  EvalOutput fs_eval = run_eval(fullseq, log);

  const std::string domain_a = cfg.synth.domains.at(0).name;
  const std::string domain_b = cfg.synth.domains.at(1).name;
  const int last = run1.final_step;

  const BiasReport& a0 = find_row(run1.eval.matrix, 0, domain_a);
  const BiasReport& a50 = find_row(run1.eval.matrix, last, domain_a);
  const BiasReport& b0 = find_row(run1.eval.matrix, 0, domain_b);
  const BiasReport& b50 = find_row(run1.eval.matrix, last, domain_b);
  const BiasReport& r0_b0 = find_row(run0.eval.matrix, 0, domain_b);
  const BiasReport& r0_b50 = find_row(run0.eval.matrix, last, domain_b);

  std::vector<CriterionResult> criteria;
  auto check = [&](const std::string& name, bool pass, const std::string& detail) {
    criteria.push_back({name, pass, detail});
    log << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
  };

  {
    const double crows_a0 = a0.crows;
    const double crows_b0 = b0.crows;
    const double r0_crows_a0 = find_row(run0.eval.matrix, 0, domain_a).crows;
    std::ostringstream detail;
    detail << "step-0 crows rho1 " << domain_a << "=" << format_double(crows_a0) << " " << domain_b
           << "=" << format_double(crows_b0) << ", rho0 " << domain_a << "="
           << format_double(r0_crows_a0) << " (floor " << format_double(kBiasInjectionMinCrows)
           << ")";
    check("bias-injection",
          crows_a0 > kBiasInjectionMinCrows && crows_b0 > kBiasInjectionMinCrows &&
              r0_crows_a0 > kBiasInjectionMinCrows,
          detail.str());
  }

  {
    const double ratio = ppl_of(a50, "retain") / ppl_of(a0, "retain");
    double worst_lm_drop = 0.0;
    for (const std::string& d : {domain_a, domain_b}) {
      worst_lm_drop = std::max(worst_lm_drop, find_row(run1.eval.matrix, 0, d).ss_lm -
                                                  find_row(run1.eval.matrix, last, d).ss_lm);
    }
    std::ostringstream detail;
    detail << "retain ppl ratio " << format_double(ratio) << " (max "
           << format_double(kRetainPplMaxRatio) << "), worst lm drop "
           << format_double(worst_lm_drop) << " (max " << format_double(kLmScoreMaxDrop) << ")";
    check("criterion-4-retain-ppl-and-lm-score",
          ratio <= kRetainPplMaxRatio && worst_lm_drop <= kLmScoreMaxDrop, detail.str());
  }

  {
    const double train_ratio = ppl_of(a50, "unlearn_train") / ppl_of(a0, "unlearn_train");
    const double test_ratio = ppl_of(a50, "unlearn_test") / ppl_of(a0, "unlearn_test");
    std::ostringstream detail;
    detail << "unlearn-train ratio " << format_double(train_ratio) << ", unlearn-test ratio "
           << format_double(test_ratio) << " (min " << format_double(kUnlearnPplMinRatio) << ")";
    check("criterion-5-unlearn-ppl-rise",
          train_ratio >= kUnlearnPplMinRatio && test_ratio >= kUnlearnPplMinRatio, detail.str());
  }

  {
    const double drop = a0.crows - a50.crows;
    std::ostringstream detail;
    detail << domain_a << " crows " << format_double(a0.crows) << " -> "
           << format_double(a50.crows) << " (need drop >= " << format_double(kCrowsMinDrop)
           << ", stay >= " << format_double(kCrowsFloor) << ")";
    check("criterion-6-domain-a-crows-drop", drop >= kCrowsMinDrop && a50.crows >= kCrowsFloor,
          detail.str());
  }

  {
    const double delta_rho1 = b50.crows - b0.crows;
    const double delta_rho0 = r0_b50.crows - r0_b0.crows;
    std::ostringstream detail;
    detail << domain_b << " crows rho1 " << format_double(b0.crows) << " -> "
           << format_double(b50.crows) << " (delta " << format_double(delta_rho1)
           << "), rho0 delta " << format_double(delta_rho0);
    check("criterion-7-transfer-unlearning",
          delta_rho1 < 0.0 && std::abs(delta_rho0) < std::abs(delta_rho1), detail.str());
  }

  {
    const BiasReport& fs50 = find_row(fs_eval.matrix, last, domain_a);
    const double masked_retain = ppl_of(a50, "retain");
    const double fullseq_retain = ppl_of(fs50, "retain");
    std::ostringstream detail;
    detail << "retain ppl at step " << last << ": masked " << format_double(masked_retain)
           << " vs full-sequence " << format_double(fullseq_retain);
    check("criterion-8-full-sequence-contrast", fullseq_retain > masked_retain, detail.str());
  }

  ReproOutput out;
  out.pass = std::all_of(criteria.begin(), criteria.end(),
                         [](const CriterionResult& c) { return c.pass; });
  out.criteria = std::move(criteria);
  out.summary_path = cfg.out_dir / "repro_summary.txt";

  std::ostringstream summary;
  summary << "ulab repro summary (seed " << cfg.seed << ", scorer " << kScorerVersion << ")\n";
  for (const CriterionResult& c : out.criteria) {
    summary << (c.pass ? "PASS" : "FAIL") << " " << c.name << ": " << c.detail << "\n";
  }
  summary << (out.pass ? "RESULT PASS\n" : "RESULT FAIL\n");
  write_text_file_atomic(out.summary_path, summary.str());
  log << "repro: summary at " << out.summary_path.string() << "\n";
  return out;
}

}  // namespace ulab
