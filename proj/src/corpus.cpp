#include "partyvec/corpus.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "partyvec/csv.hpp"
#include "partyvec/error.hpp"
#include "partyvec/rng.hpp"
#include "partyvec/vocabulary.hpp"

namespace partyvec {

namespace {

constexpr std::array kTopics = {
    "taxes",         "pensions",         "rents",           "wind power",     "coal mining",
    "the army",      "public transport", "school funding",  "broadband",      "asylum policy",
    "the minimum wage", "healthcare",    "tuition fees",    "highways",       "farm subsidies",
    "the debt brake", "nuclear energy",  "police funding",  "child benefits", "rail freight",
};
constexpr std::array kVerbs = {"expand", "reduce", "reform", "abolish", "protect", "fund", "cap", "review"};
constexpr std::array kAdjectives = {"cheaper", "greener", "simpler", "stronger", "fairer", "smaller"};
constexpr std::array kYears = {"2025", "2030", "2035", "2040"};
constexpr std::array kStances = {"agrees", "disagrees", "partly agrees", "rejects this", "supports this",
                                 "is undecided"};
constexpr std::array kReasons = {"citizens deserve fairness", "the budget is limited", "jobs depend on it",
                                 "the climate demands action", "security comes first", "freedom matters",
                                 "families need relief",      "the market works better"};

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& items) {
  return items[rng.below(N)];
}

std::string make_statement(Rng& rng) {
  switch (rng.below(3)) {
    case 0:
      return std::string("The federal government should ") + pick(rng, kVerbs) + " " + pick(rng, kTopics) + ".";
    case 1:
      return std::string("By ") + pick(rng, kYears) + " " + pick(rng, kTopics) + " must become " +
             pick(rng, kAdjectives) + ".";
    default:
      return std::string("Germany needs ") + (rng.bernoulli(0.5) ? "more" : "less") + " spending on " +
             pick(rng, kTopics) + ".";
  }
}

std::string make_opinion(Rng& rng, const std::string& party) {
  switch (rng.below(3)) {
    case 0:
      return "The " + party + " " + pick(rng, kStances) + " because " + pick(rng, kReasons) + ".";
    case 1:
      return "We, the " + party + ", " + pick(rng, kStances) + " since " + pick(rng, kReasons) + ".";
    default:
      return std::string("According to the ") + party + ", " + pick(rng, kReasons) + ".";
  }
}

}  // namespace

std::size_t StatementCorpus::count(const std::string& party) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](const StatementRow& r) { return r.party == party; }));
}

void StatementCorpus::validate(const std::vector<std::string>& parties, std::size_t min_per_party) const {
  for (const auto& p : parties) {
    if (count(p) < min_per_party) {
      fail(ErrorCode::SizeTooSmall, "party " + p + " has " + std::to_string(count(p)) + " statements, need " +
                                        std::to_string(min_per_party));
    }
  }
}

StatementCorpus gen_corpus(std::uint64_t seed, const std::vector<std::string>& parties, std::size_t size,
                           std::size_t min_per_party) {
  if (parties.empty()) fail(ErrorCode::InvalidConfig, "no parties given");
  if (size < parties.size() * min_per_party) {
    fail(ErrorCode::SizeTooSmall, "corpus size " + std::to_string(size) + " < " + std::to_string(parties.size()) +
                                      " parties x " + std::to_string(min_per_party));
  }
  Rng rng(seed, "corpus");
  std::vector<std::size_t> labels(size);
  for (std::size_t i = 0; i < size; ++i) labels[i] = i % parties.size();
  rng.shuffle(labels);

  StatementCorpus corpus;
  corpus.rows.reserve(size);
  for (std::size_t label : labels) {
    const auto& party = parties[label];
    corpus.rows.push_back({party, make_statement(rng), make_opinion(rng, party)});
  }
  return corpus;
}

std::vector<std::string> corpus_lexicon() {
  std::set<std::string> words;
  auto add = [&](std::string_view text) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  };
  for (auto* s : kTopics) add(s);
  for (auto* s : kVerbs) add(s);
  for (auto* s : kAdjectives) add(s);
  for (auto* s : kYears) add(s);
  for (auto* s : kStances) add(s);
  for (auto* s : kReasons) add(s);
  add("The federal government should . By must become Germany needs more less spending on");
  add("The because . We, the , since According to the ,");
  return {words.begin(), words.end()};
}

double marker_rate(const StatementCorpus& corpus, const std::string& party, const std::vector<std::string>& markers) {
  std::size_t total = 0;
  std::size_t hits = 0;
  for (const auto& row : corpus.rows) {
    if (row.party != party) continue;
    ++total;
    const auto words = split_words(row.prompt());
    const bool found = std::any_of(markers.begin(), markers.end(), [&](const std::string& m) {
      return std::find(words.begin(), words.end(), m) != words.end();
    });
    if (found) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

std::string corpus_to_csv(const StatementCorpus& corpus, const std::string& metadata_comment) {
  std::string out;
  if (!metadata_comment.empty()) out += metadata_comment + "\n";
  out += csv_line({"party", "statement", "opinion"});
  for (const auto& r : corpus.rows) out += csv_line({r.party, r.statement, r.opinion});
  return out;
}

StatementCorpus corpus_from_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  const auto party = table.require_column("party");
  const auto statement = table.require_column("statement");
  const auto opinion = table.require_column("opinion");
  StatementCorpus corpus;
  for (const auto& row : table.rows) corpus.rows.push_back({row[party], row[statement], row[opinion]});
  if (corpus.rows.empty()) fail(ErrorCode::EmptyCorpus, path.string() + " has no statements");
  return corpus;
}

}  // namespace partyvec
