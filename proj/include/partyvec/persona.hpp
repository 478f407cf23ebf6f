#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partyvec/csv.hpp"

namespace partyvec {

struct GridVariable {
  std::string name;
  std::vector<std::string> values;
};

/// Ordered persona variables. Loaded from JSON {variable: [values...]};
/// declaration order is preserved and defines enumeration order.
class PersonaGrid {
 public:
  PersonaGrid() = default;
  explicit PersonaGrid(std::vector<GridVariable> variables);

  static PersonaGrid load(const std::filesystem::path& path);
  static PersonaGrid from_json_text(const std::string& text);
  std::string to_json_text() const;

  const std::vector<GridVariable>& variables() const noexcept { return variables_; }
  std::size_t size() const noexcept { return variables_.size(); }
  std::optional<std::size_t> variable_index(const std::string& name) const;
  std::optional<std::size_t> value_index(std::size_t variable, const std::string& value) const;

  /// Product of all cardinalities.
  std::uint64_t persona_count() const;

  /// Id of an assignment in the full enumeration (mixed radix, first variable slowest).
  std::uint64_t persona_id(const std::vector<std::size_t>& assignment) const;
  std::vector<std::size_t> assignment_of(std::uint64_t id) const;

  PersonaGrid without(const std::string& variable) const;

 private:
  std::vector<GridVariable> variables_;
};

struct Persona {
  std::uint64_t id = 0;
  std::vector<std::size_t> assignment;  // value index per grid variable
  double weight = 1.0;

  const std::string& value(const PersonaGrid& grid, std::size_t variable) const {
    return grid.variables()[variable].values[assignment[variable]];
  }
};

/// Full Cartesian product in lexicographic variable order. Throws EmptyVariable.
std::vector<Persona> enumerate(const PersonaGrid& grid);

/// `count` distinct personas drawn with the seed, returned in id order.
std::vector<Persona> subsample(const PersonaGrid& grid, std::size_t count, std::uint64_t seed);

struct PromptVariant {
  int id = 0;
  std::string text;  // template with {variable} placeholders
};

std::vector<PromptVariant> load_variants(const std::filesystem::path& path);
std::vector<PromptVariant> variants_from_json_text(const std::string& text);

/// Placeholder names used by a template, in order of appearance.
std::vector<std::string> placeholders(const std::string& tmpl);

/// Throws UnboundPlaceholder if the template names a variable outside the grid.
void check_variant(const PersonaGrid& grid, const PromptVariant& variant);

/// Substitutes every {variable}; nothing else in the template changes.
std::string render(const PersonaGrid& grid, const Persona& persona, const PromptVariant& variant);

struct WeightLoadReport {
  double total_csv_weight = 0.0;
  double matched_weight = 0.0;
  std::size_t unmatched_rows = 0;
};

/// Sets each persona's weight to the summed weight of survey rows with the
/// same assignment; personas with no rows get 0. CSV columns: every grid
/// variable plus `weight` (extra columns such as `vote` are ignored).
/// Throws UnknownValue, NegativeWeight.
WeightLoadReport load_weights(const PersonaGrid& grid, std::vector<Persona>& personas, const CsvTable& survey);

/// Seeded synthetic survey whose vote shares depend on the left_leaning
/// variable (when present). Used for desk runs without real survey data.
CsvTable gen_survey(const PersonaGrid& grid, const std::vector<std::string>& parties, std::size_t rows,
                    std::uint64_t seed);

}  // namespace partyvec
