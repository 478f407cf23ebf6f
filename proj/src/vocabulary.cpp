#include "partyvec/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "partyvec/error.hpp"

namespace partyvec {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(char c) { return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':'; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) {
      std::string_view word = text.substr(i, j - i);
      std::vector<std::string> trailing;
      while (!word.empty() && is_punct(word.front())) {
        out.emplace_back(1, word.front());
        word.remove_prefix(1);
      }
      while (!word.empty() && is_punct(word.back())) {
        trailing.emplace_back(1, word.back());
        word.remove_suffix(1);
      }
      if (!word.empty()) out.emplace_back(word);
      out.insert(out.end(), trailing.rbegin(), trailing.rend());
    }
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) tokens_ = {std::string(kUnkToken), std::string(kBosToken)};
  if (tokens_.size() < 2 || tokens_[0] != kUnkToken || tokens_[1] != kBosToken) {
    fail(ErrorCode::InvalidConfig, "vocabulary must start with <unk> and <bos>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) fail(ErrorCode::InvalidConfig, "empty token at line " + std::to_string(i + 1));
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      fail(ErrorCode::DuplicateName, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& leading, const std::vector<std::string>& words) {
  std::vector<std::string> tokens{std::string(kUnkToken), std::string(kBosToken)};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  for (const auto& t : leading) {
    if (seen.insert(t).second) tokens.push_back(t);
  }
  std::set<std::string> rest;
  for (const auto& w : words) {
    if (!seen.contains(w)) rest.insert(w);
  }
  tokens.insert(tokens.end(), rest.begin(), rest.end());
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write vocabulary " + path.string());
  out << to_text();
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorCode::TokenOutOfVocab, "token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

TokenId Vocabulary::require(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) fail(ErrorCode::UnknownValue, "token '" + std::string(token) + "' not in vocabulary");
  return it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

}  // namespace partyvec
