#include "ulab/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ulab/error.hpp"
#include "ulab/io.hpp"

namespace ulab {

MaskLexicon MaskLexicon::from_words(std::span<const std::string> words) {
  MaskLexicon lex;
  for (const std::string& w : words) {
    std::vector<std::string> toks = tokenize_words(w);
    if (toks.size() != 1) {
      throw InputError("mask lexicon entry \"" + w + "\" is not a single word");
    }
    lex.words.insert(toks[0]);
  }
  if (lex.words.empty()) throw InputError("mask lexicon is empty");
  return lex;
}

MaskedExample apply_lexicon_mask(const TokenSequence& seq, const MaskLexicon& lexicon) {
  MaskedExample ex;
  ex.seq = seq;
  std::vector<std::string> surfaces = tokenize_words(seq.source_text);
  // Surfaces line up 1:1 with ids because encode() uses the same split.
  for (std::size_t i = 0; i < surfaces.size() && i < seq.ids.size(); ++i) {
    if (lexicon.words.count(surfaces[i])) ex.mask_positions.push_back(static_cast<int>(i));
  }
  ex.lexicon_missed = ex.mask_positions.empty();
  return ex;
}

namespace {

// Builds sum of NLL over the masked positions of one example plus its
// masked-position count. Predicting ids[p] uses logits row p of the
// BOS-shifted input, so conditioning stops at x_<p.
Tensor example_masked_nll(Graph& g, const TransformerLM& model, const MaskedExample& ex,
                          ForwardTrace* trace_out) {
  std::vector<TokenId> input;
  input.reserve(ex.seq.ids.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), ex.seq.ids.begin(), ex.seq.ids.end());
  ForwardTrace trace = model.forward_traced(g, input);
  if (trace_out) *trace_out = trace;
  std::vector<int> rows;
  std::vector<TokenId> targets;
  for (int p : ex.mask_positions) {
    if (p < 0 || p >= ex.seq.length()) {
      throw IndexError("mask position " + std::to_string(p) + " out of range for sequence of " +
                       std::to_string(ex.seq.length()) + " tokens");
    }
    rows.push_back(p);
    targets.push_back(ex.seq.ids[static_cast<std::size_t>(p)]);
  }
  return g.nll_rows(trace.logits, targets, rows);
}

}  // namespace

Tensor unlearning_loss(Graph& g, const TransformerLM& model,
                       std::span<const MaskedExample> batch,
                       std::vector<ForwardTrace>* traces) {
  long total_masks = 0;
  for (const MaskedExample& ex : batch) total_masks += static_cast<long>(ex.mask_positions.size());
  if (total_masks == 0) {
    throw ContractError("unlearning_loss: batch has no masked positions; filter before calling");
  }
  if (traces) traces->assign(batch.size(), {});
  Tensor nll_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MaskedExample& ex = batch[i];
    if (ex.mask_positions.empty()) continue;
    Tensor part = example_masked_nll(g, model, ex, traces ? &(*traces)[i] : nullptr);
    nll_sum = nll_sum.defined() ? g.add(nll_sum, part) : part;
  }
  // mean log P = -(1/M) * sum NLL
  return g.scale(nll_sum, -1.0 / static_cast<double>(total_masks));
}

Tensor full_sequence_unlearning_loss(Graph& g, const TransformerLM& model,
                                     std::span<const TokenSequence> batch) {
  if (batch.empty()) throw InputError("full_sequence_unlearning_loss: empty batch");
  long total_positions = 0;
  Tensor nll_sum;
  for (const TokenSequence& seq : batch) {
    if (seq.ids.empty()) throw InputError("full_sequence_unlearning_loss: empty sequence");
    MaskedExample all;
    all.seq = seq;
    all.mask_positions.resize(seq.ids.size());
    for (std::size_t i = 0; i < seq.ids.size(); ++i) all.mask_positions[i] = static_cast<int>(i);
    Tensor part = example_masked_nll(g, model, all, nullptr);
    nll_sum = nll_sum.defined() ? g.add(nll_sum, part) : part;
    total_positions += seq.length();
  }
  return g.scale(nll_sum, -1.0 / static_cast<double>(total_positions));
}

void UnlearnConfig::validate() const {
  if (steps < 1) throw ConfigError("unlearn: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("unlearn: batch_size must be >= 1");
  if (checkpoint_every < 1 || steps % checkpoint_every != 0) {
    throw ConfigError("unlearn: checkpoint_every must divide steps (" +
                      std::to_string(checkpoint_every) + " vs " + std::to_string(steps) + ")");
  }
  if (!(learning_rate >= 0.0)) throw ConfigError("unlearn: learning_rate must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("unlearn: grad_clip must be > 0");
}

namespace {

struct StepResult {
  double loss;
  double grad_norm;
};

StepResult step_on_loss(TransformerLM& model, Graph& g, const Tensor& loss_tensor,
                        AdamState& opt_state, const UnlearnConfig& cfg) {
  const double loss = loss_tensor.item();
  if (std::isnan(loss) || std::isinf(loss)) {
    throw NumericError("unlearn step produced non-finite loss " + format_double(loss));
  }
  g.backward(loss_tensor);
  std::vector<Tensor> params = model.parameters();
  const double norm = clip_global_grad_norm(params, cfg.grad_clip);
  if (cfg.optimizer == OptimizerKind::adam) {
    adam_step(params, cfg.learning_rate, opt_state);
  } else {
    sgd_step(params, cfg.learning_rate);
  }
  zero_grads(params);
  return {loss, norm};
}

}  // namespace

double unlearn_step(TransformerLM& model, std::span<const MaskedExample> batch,
                    AdamState& opt_state, const UnlearnConfig& cfg) {
  Graph g;
  Tensor loss = unlearning_loss(g, model, batch);
  return step_on_loss(model, g, loss, opt_state, cfg).loss;
}

// ---------------------------------------------------------------------------
// RunManifest

namespace {
constexpr const char* kManifestHeader = "ulab_run_manifest v1";

const char* mode_name(UnlearnMode m) {
  return m == UnlearnMode::masked ? "masked" : "full-sequence";
}
const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
}  // namespace

void RunManifest::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << kManifestHeader << "\n";
  out << "mode = " << mode_name(cfg.mode) << "\n";
  out << "steps = " << cfg.steps << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "learning_rate = " << format_double(cfg.learning_rate) << "\n";
  out << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  out << "optimizer = " << optimizer_name(cfg.optimizer) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "grad_clip = " << format_double(cfg.grad_clip) << "\n";
  out << "vocab = " << vocab_path << "\n";
  out << "warned_empty_masks = " << warned_empty_masks << "\n";
  // The recorded loss is the mean masked log-probability; the optimizer
  // minimizes it, which is identical to gradient ascent on the masked
  // tokens' negative log-likelihood.
  out << "objective = minimize mean log P(masked | prefix) == maximize masked NLL\n";
  out << "[checkpoints]\n";
  for (const CheckpointEntry& c : checkpoints) {
    out << c.step << "\t" << c.path << "\t" << checksum_hex(c.checksum) << "\n";
  }
  out << "[losses]\n";
  for (const StepLogEntry& s : losses) {
    out << s.step << "\t" << format_double(s.loss) << "\t" << format_double(s.grad_norm) << "\n";
  }
  write_text_file_atomic(path, out.str());
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || lines[0] != kManifestHeader) {
    throw ParseError("run manifest " + path.string() + ": missing header");
  }
  RunManifest m;
  m.dir = path.parent_path();
  enum class Section { header, checkpoints, losses } section = Section::header;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    if (line == "[checkpoints]") {
      section = Section::checkpoints;
      continue;
    }
    if (line == "[losses]") {
      section = Section::losses;
      continue;
    }
    if (section == Section::header) {
      auto eq = line.find(" = ");
      if (eq == std::string::npos) {
        throw ParseError("run manifest " + path.string() + ": bad line " + std::to_string(i + 1));
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 3);
      if (key == "mode") {
        m.cfg.mode = value == "masked" ? UnlearnMode::masked : UnlearnMode::full_sequence;
      } else if (key == "steps") {
        m.cfg.steps = std::stoi(value);
      } else if (key == "batch_size") {
        m.cfg.batch_size = std::stoi(value);
      } else if (key == "learning_rate") {
        m.cfg.learning_rate = std::stod(value);
      } else if (key == "checkpoint_every") {
        m.cfg.checkpoint_every = std::stoi(value);
      } else if (key == "optimizer") {
        m.cfg.optimizer = value == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
      } else if (key == "seed") {
        m.cfg.seed = std::stoull(value);
      } else if (key == "grad_clip") {
        m.cfg.grad_clip = std::stod(value);
      } else if (key == "vocab") {
        m.vocab_path = value;
      } else if (key == "warned_empty_masks") {
        m.warned_empty_masks = std::stoi(value);
      }
      // unknown keys (objective note) are ignored
    } else if (section == Section::checkpoints) {
      std::istringstream row(line);
      CheckpointEntry e;
      std::string checksum;
      if (!(row >> e.step >> e.path >> checksum)) {
        throw ParseError("run manifest " + path.string() + ": bad checkpoint row at line " +
                         std::to_string(i + 1));
      }
      e.checksum = std::stoull(checksum, nullptr, 16);
      m.checkpoints.push_back(std::move(e));
    } else {
      std::istringstream row(line);
      StepLogEntry e;
      if (!(row >> e.step >> e.loss >> e.grad_norm)) {
        throw ParseError("run manifest " + path.string() + ": bad loss row at line " +
                         std::to_string(i + 1));
      }
      m.losses.push_back(e);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// run_unlearning

RunManifest run_unlearning(TransformerLM& model, std::span<const MaskedExample> dataset,
                           const UnlearnConfig& cfg, const std::filesystem::path& out_dir,
                           const std::string& vocab_path) {
  cfg.validate();
  if (dataset.empty()) throw InputError("run_unlearning: empty dataset");

  std::vector<std::size_t> pool;
  int warned = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (cfg.mode == UnlearnMode::masked && dataset[i].mask_positions.empty()) {
      ++warned;
      continue;
    }
    pool.push_back(i);
  }
  if (pool.empty()) {
    throw InputError("run_unlearning: no example carries a masked position");
  }

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto cleanup = [&] {
    for (const auto& p : written) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  };

  RunManifest manifest;
  manifest.cfg = cfg;
  manifest.vocab_path = vocab_path;
  manifest.dir = out_dir;
  manifest.warned_empty_masks = warned;

  try {
    auto save_ladder_checkpoint = [&](int step) {
      const std::string name = "step_" + std::to_string(step) + ".ckpt";
      const std::filesystem::path path = out_dir / name;
      save_checkpoint(model, path);
      written.push_back(path);
      manifest.checkpoints.push_back({step, name, fnv1a64_file(path)});
    };

    save_ladder_checkpoint(0);

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    AdamState opt_state;

    for (int step = 1; step <= cfg.steps; ++step) {
      std::vector<MaskedExample> batch;
      batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(dataset[pool[pick(rng)]]);

      Graph g;
      Tensor loss;
      if (cfg.mode == UnlearnMode::masked) {
        loss = unlearning_loss(g, model, batch);
      } else {
        std::vector<TokenSequence> seqs;
        seqs.reserve(batch.size());
        for (const MaskedExample& ex : batch) seqs.push_back(ex.seq);
        loss = full_sequence_unlearning_loss(g, model, seqs);
      }
      StepResult result = step_on_loss(model, g, loss, opt_state, cfg);
      manifest.losses.push_back({step, result.loss, result.grad_norm});

      if (step % cfg.checkpoint_every == 0) save_ladder_checkpoint(step);
    }

    manifest.save(out_dir / "run_manifest.txt");
  } catch (...) {
    cleanup();
    throw;
  }
  return manifest;
}

}  // namespace ulab
