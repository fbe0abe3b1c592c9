#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ulab/tensor.hpp"

namespace ulab {

// Lowercased word tokens: maximal runs of alphanumerics, everything else
// is a separator and is dropped. Shared by the tokenizer, the mask
// matcher, and the synthetic generator so surfaces always line up.
std::vector<std::string> tokenize_words(std::string_view text);
std::string normalize_text(std::string_view text);  // tokens joined by single spaces

struct TokenSequence {
  std::vector<TokenId> ids;
  std::string source_text;

  int length() const { return static_cast<int>(ids.size()); }
};

// Word-level vocabulary with four reserved ids. Immutable once built.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr TokenId kMask = 3;
  static constexpr int kReservedCount = 4;

  // Frequency-descending then lexicographic order; words under min_count
  // are left out and encode to UNK.
  static Vocabulary build(std::span<const std::string> corpus, int min_count);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  TokenId id_or_unk(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;  // IndexError when out of range

  TokenSequence encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // One token per line; line number equals id (reserved lines included).
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  Vocabulary() = default;
  void append_token(const std::string& token);

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace ulab
