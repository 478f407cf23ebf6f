#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace partyvec {

using TokenId = std::int32_t;

/// Splits on whitespace, then peels sentence punctuation (. , ? ! ; :) off
/// word boundaries into standalone tokens.
std::vector<std::string> split_words(std::string_view text);

/// Line-oriented vocabulary: token id == zero-based line number.
/// Id 0 is always the reserved unknown token.
class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kBosToken = "<bos>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Reserved tokens first, then `leading` in order, then the remaining
  /// words sorted bytewise. Duplicates are dropped.
  static Vocabulary build(const std::vector<std::string>& leading, const std::vector<std::string>& words);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_text() const;

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;  // kUnk when absent
  TokenId require(std::string_view token) const;  // throws UnknownValue when absent

  std::vector<TokenId> encode(std::string_view text) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace partyvec
