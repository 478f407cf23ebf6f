#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace partyvec {

struct StatementRow {
  std::string party;
  std::string statement;
  std::string opinion;

  /// Text fed to the model: statement followed by the party's opinion.
  std::string prompt() const { return statement + " " + opinion; }
};

struct StatementCorpus {
  std::vector<StatementRow> rows;

  std::size_t count(const std::string& party) const;
  /// Throws SizeTooSmall if any party appears fewer than min_per_party times.
  void validate(const std::vector<std::string>& parties, std::size_t min_per_party) const;
};

/// Template-generated opinion statements, each opinion naming its party.
/// Parties are assigned round-robin and shuffled, so counts differ by at most one.
StatementCorpus gen_corpus(std::uint64_t seed, const std::vector<std::string>& parties, std::size_t size,
                           std::size_t min_per_party = 10);

/// Every word the generator can emit, party names excluded.
std::vector<std::string> corpus_lexicon();

/// Fraction of rows whose prompt contains one of the party's marker tokens.
double marker_rate(const StatementCorpus& corpus, const std::string& party,
                   const std::vector<std::string>& markers);

std::string corpus_to_csv(const StatementCorpus& corpus, const std::string& metadata_comment = {});
StatementCorpus corpus_from_csv(const std::filesystem::path& path);

}  // namespace partyvec
