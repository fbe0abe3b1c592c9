#include "ulab/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "ulab/error.hpp"
#include "ulab/io.hpp"

namespace ulab {

namespace {

const char* kReservedTokens[Vocabulary::kReservedCount] = {"<bos>", "<eos>", "<unk>", "<mask>"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const std::string& tok : tokenize_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, int min_count) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  if (min_count < 1) throw InputError("build_vocab: min_count must be >= 1");

  std::map<std::string, long> counts;  // ordered map keeps ties lexicographic
  for (const std::string& line : corpus) {
    for (std::string& tok : tokenize_words(line)) counts[std::move(tok)] += 1;
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, count] : counts) {
    if (count >= min_count) kept.emplace_back(tok, count);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary vocab;
  for (const char* reserved : kReservedTokens) vocab.append_token(reserved);
  for (const auto& [tok, count] : kept) vocab.append_token(tok);
  return vocab;
}

void Vocabulary::append_token(const std::string& token) {
  token_to_id_[token] = static_cast<TokenId>(id_to_token_.size());
  id_to_token_.push_back(token);
}

TokenId Vocabulary::id_or_unk(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range [0," +
                     std::to_string(size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(std::string_view text) const {
  TokenSequence seq;
  seq.source_text = std::string(text);
  for (const std::string& tok : tokenize_words(text)) seq.ids.push_back(id_or_unk(tok));
  if (seq.ids.empty()) {
    throw InputError("encode: no word tokens in input \"" + seq.source_text + "\"");
  }
  return seq;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string out;
  for (const std::string& tok : id_to_token_) {
    out += tok;
    out.push_back('\n');
  }
  write_text_file_atomic(path, out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::vector<std::string> lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < kReservedCount) {
    throw ParseError("vocabulary file " + path.string() + ": fewer than " +
                     std::to_string(kReservedCount) + " lines");
  }
  for (int i = 0; i < kReservedCount; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kReservedTokens[i]) {
      throw ParseError("vocabulary file " + path.string() + ": line " + std::to_string(i + 1) +
                       " must be " + kReservedTokens[i]);
    }
  }
  Vocabulary vocab;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) {
      throw ParseError("vocabulary file " + path.string() + ": empty token at line " +
                       std::to_string(i + 1));
    }
    if (vocab.token_to_id_.count(lines[i])) {
      throw ParseError("vocabulary file " + path.string() + ": duplicate token at line " +
                       std::to_string(i + 1));
    }
    vocab.append_token(lines[i]);
  }
  return vocab;
}

}  // namespace ulab
