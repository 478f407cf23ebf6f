#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "partyvec/csv.hpp"
#include "partyvec/error.hpp"
#include "partyvec/persona.hpp"
#include "partyvec/rng.hpp"

using namespace partyvec;

namespace {

const std::filesystem::path kData = std::filesystem::path(PARTYVEC_SOURCE_DIR) / "data";

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

CsvTable survey_of(const PersonaGrid& grid, const std::vector<std::pair<std::vector<std::size_t>, std::string>>& rows) {
  CsvTable t;
  for (const auto& v : grid.variables()) t.header.push_back(v.name);
  t.header.push_back("weight");
  for (const auto& [a, w] : rows) {
    std::vector<std::string> r;
    for (std::size_t v = 0; v < grid.size(); ++v) r.push_back(grid.variables()[v].values[a[v]]);
    r.push_back(w);
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace

TEST_CASE("enumeration counts match the product of cardinalities") {
  const auto grid = PersonaGrid::load(kData / "persona_grid.json");
  const auto no_year = PersonaGrid::load(kData / "persona_grid_no_year.json");
  std::uint64_t product = 1;
  for (const auto& v : grid.variables()) product *= v.values.size();
  CHECK(product == 7ULL * 2 * 5 * 3 * 3 * 5 * 2 * 2);
  CHECK(enumerate(no_year).size() == 6300);
  CHECK(enumerate(grid).size() == 12600);
  CHECK(grid.persona_count() == 12600);
  CHECK(grid.without("year_of_election").persona_count() == 6300);

  const PersonaGrid one({{"colour", {"red", "green", "blue"}}});
  const auto ps = enumerate(one);
  REQUIRE(ps.size() == 3);
  CHECK(ps[2].value(one, 0) == "blue");

  CHECK(code_of([] { enumerate(PersonaGrid({{"a", {"x"}}, {"b", {}}})); }) == ErrorCode::EmptyVariable);
}

TEST_CASE("enumeration order is lexicographic and ids invert") {
  const PersonaGrid g({{"a", {"a0", "a1"}}, {"b", {"b0", "b1", "b2"}}});
  const auto ps = enumerate(g);
  REQUIRE(ps.size() == 6);
  CHECK(ps[0].assignment == std::vector<std::size_t>{0, 0});
  CHECK(ps[1].assignment == std::vector<std::size_t>{0, 1});
  CHECK(ps[3].assignment == std::vector<std::size_t>{1, 0});
  for (const auto& p : ps) {
    CHECK(g.persona_id(p.assignment) == p.id);
    CHECK(g.assignment_of(p.id) == p.assignment);
  }
}

TEST_CASE("subsample draws distinct personas in id order, reproducibly") {
  const auto grid = PersonaGrid::load(kData / "persona_grid.json");
  const auto a = subsample(grid, 200, 9), b = subsample(grid, 200, 9), c = subsample(grid, 200, 10);
  REQUIRE(a.size() == 200);
  std::set<std::uint64_t> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(ids.insert(a[i].id).second);
    CHECK(a[i].id == b[i].id);
    if (i) CHECK(a[i - 1].id < a[i].id);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i].id != c[i].id;
  CHECK(differs);
}

TEST_CASE("render") {
  const auto grid = PersonaGrid::load(kData / "persona_grid.json");
  const auto variants = load_variants(kData / "prompt_variants.json");
  REQUIRE(variants.size() == 5);
  CHECK(variants[0].id == 0);
  CHECK(variants[0].text.find("If the elections were held in {year_of_election}") != std::string::npos);
  const auto personas = enumerate(grid);

  SUBCASE("no placeholders: verbatim") {
    const PromptVariant plain{7, "Which party? I vote for the party"};
    CHECK(render(grid, personas[5], plain) == plain.text);
  }
  SUBCASE("canonical template contains every value exactly once, and is injective") {
    std::set<std::string> seen;
    for (const auto& p : personas) {
      const auto text = render(grid, p, variants[0]);
      for (std::size_t v = 0; v < grid.size(); ++v) CHECK(occurrences(text, p.value(grid, v)) == 1);
      CHECK(text.find('{') == std::string::npos);
      seen.insert(text);
    }
    CHECK(seen.size() == personas.size());
  }
  SUBCASE("every shipped variant binds only grid variables") {
    for (const auto& v : variants) CHECK_NOTHROW(check_variant(grid, v));
  }
  SUBCASE("unbound placeholder") {
    const PromptVariant bad{1, "I live in {city}."};
    CHECK(code_of([&] { check_variant(grid, bad); }) == ErrorCode::UnboundPlaceholder);
    CHECK(code_of([&] { render(grid, personas[0], bad); }) == ErrorCode::UnboundPlaceholder);
  }
  SUBCASE("canonical text for one persona") {
    const auto text = render(grid, personas[0], variants[0]);
    CHECK(text ==
          "I am jünger als 20 years old and weiblich. I have keinen Abschluss, a niedrig household net income per "
          "month, and I am nicht beschäftigt. Ideologically, I lean towards the position stark links. I live in "
          "Westdeutschland. If the elections were held in 2021, which party would I vote for? I vote for the party");
  }
}

TEST_CASE("survey weights") {
  const PersonaGrid g({{"a", {"x", "y"}}, {"b", {"u", "v", "w"}}});
  auto ps = enumerate(g);

  SUBCASE("single matching row") {
    load_weights(g, ps, survey_of(g, {{{1, 2}, "2.5"}}));
    for (const auto& p : ps) CHECK(p.weight == (p.assignment == std::vector<std::size_t>{1, 2} ? 2.5 : 0.0));
  }
  SUBCASE("additivity") {
    load_weights(g, ps, survey_of(g, {{{0, 1}, "1.0"}, {{0, 1}, "0.5"}}));
    CHECK(ps[g.persona_id({0, 1})].weight == 1.5);
  }
  SUBCASE("rows matching no selected persona are reported, not lost silently") {
    std::vector<Persona> subset{ps[0]};
    const auto report = load_weights(g, subset, survey_of(g, {{{0, 0}, "1"}, {{1, 1}, "3"}}));
    CHECK(report.total_csv_weight == 4.0);
    CHECK(report.matched_weight == 1.0);
    CHECK(report.unmatched_rows == 1);
  }
  SUBCASE("errors") {
    auto t = survey_of(g, {{{0, 0}, "1"}});
    t.rows[0][0] = "z";
    CHECK(code_of([&] { load_weights(g, ps, t); }) == ErrorCode::UnknownValue);
    CHECK(code_of([&] { load_weights(g, ps, survey_of(g, {{{0, 0}, "-1"}})); }) == ErrorCode::NegativeWeight);
  }
}

TEST_CASE("survey weight conservation on 100 random rows") {
  const auto grid = PersonaGrid::load(kData / "persona_grid.json");
  auto ps = enumerate(grid);
  Rng rng(31);
  std::vector<std::pair<std::vector<std::size_t>, std::string>> rows;
  double total = 0;
  for (int i = 0; i < 100; ++i) {
    const auto a = grid.assignment_of(rng.below(grid.persona_count()));
    const double w = std::round(rng.uniform(0.1, 3.0) * 1000) / 1000;
    total += w;
    rows.emplace_back(a, format_number(w));
  }
  const auto report = load_weights(grid, ps, survey_of(grid, rows));
  double sum = 0;
  for (const auto& p : ps) sum += p.weight;
  CHECK(std::abs(sum - total) <= 1e-9);
  CHECK(std::abs(report.total_csv_weight - total) <= 1e-9);
  CHECK(report.unmatched_rows == 0);
}

TEST_CASE("synthetic survey generator") {
  const auto grid = PersonaGrid::load(kData / "persona_grid.json");
  const std::vector<std::string> parties{"AfD", "CDU", "FDP", "SPD", "GRÜNE", "LINKE"};
  const auto a = gen_survey(grid, parties, 500, 3), b = gen_survey(grid, parties, 500, 3);
  CHECK(a.rows == b.rows);
  CHECK(a.rows.size() == 500);
  CHECK(a.header.back() == "weight");
  auto ps = enumerate(grid);
  const auto report = load_weights(grid, ps, a);
  CHECK(report.unmatched_rows == 0);
}
