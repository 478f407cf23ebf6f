#include "partyvec/persona.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "partyvec/error.hpp"
#include "partyvec/rng.hpp"

namespace partyvec {

PersonaGrid::PersonaGrid(std::vector<GridVariable> variables) : variables_(std::move(variables)) {
  std::set<std::string> names;
  for (const auto& v : variables_) {
    if (v.name.empty()) fail(ErrorCode::InvalidConfig, "grid variable with empty name");
    if (!names.insert(v.name).second) fail(ErrorCode::DuplicateName, "grid variable '" + v.name + "' repeated");
    if (v.values.empty()) fail(ErrorCode::EmptyVariable, "grid variable '" + v.name + "' has no values");
    std::set<std::string> seen;
    for (const auto& value : v.values) {
      if (!seen.insert(value).second) {
        fail(ErrorCode::DuplicateName, "value '" + value + "' repeated in variable '" + v.name + "'");
      }
    }
  }
}

PersonaGrid PersonaGrid::from_json_text(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("persona grid: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "persona grid must be a JSON object");
  std::vector<GridVariable> vars;
  for (const auto& [name, values] : j.items()) {
    if (!values.is_array()) fail(ErrorCode::InvalidConfig, "grid variable '" + name + "' is not a list");
    GridVariable v{name, {}};
    for (const auto& value : values) {
      v.values.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    vars.push_back(std::move(v));
  }
  return PersonaGrid(std::move(vars));
}

PersonaGrid PersonaGrid::load(const std::filesystem::path& path) { return from_json_text(read_text_file(path)); }

std::string PersonaGrid::to_json_text() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& v : variables_) j[v.name] = v.values;
  return j.dump(2) + "\n";
}

std::optional<std::size_t> PersonaGrid::variable_index(const std::string& name) const {
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (variables_[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> PersonaGrid::value_index(std::size_t variable, const std::string& value) const {
  const auto& values = variables_.at(variable).values;
  auto it = std::find(values.begin(), values.end(), value);
  if (it == values.end()) return std::nullopt;
  return static_cast<std::size_t>(it - values.begin());
}

std::uint64_t PersonaGrid::persona_count() const {
  std::uint64_t n = 1;
  for (const auto& v : variables_) n *= v.values.size();
  return n;
}

std::uint64_t PersonaGrid::persona_id(const std::vector<std::size_t>& assignment) const {
  if (assignment.size() != variables_.size()) fail(ErrorCode::ShapeMismatch, "assignment length");
  std::uint64_t id = 0;
  for (std::size_t i = 0; i < variables_.size(); ++i) {
    if (assignment[i] >= variables_[i].values.size()) fail(ErrorCode::UnknownValue, "value index out of range");
    id = id * variables_[i].values.size() + assignment[i];
  }
  return id;
}

std::vector<std::size_t> PersonaGrid::assignment_of(std::uint64_t id) const {
  if (id >= persona_count()) fail(ErrorCode::UnknownValue, "persona id " + std::to_string(id) + " out of range");
  std::vector<std::size_t> a(variables_.size());
  for (std::size_t i = variables_.size(); i-- > 0;) {
    const auto card = variables_[i].values.size();
    a[i] = static_cast<std::size_t>(id % card);
    id /= card;
  }
  return a;
}

PersonaGrid PersonaGrid::without(const std::string& variable) const {
  std::vector<GridVariable> vars;
  for (const auto& v : variables_) {
    if (v.name != variable) vars.push_back(v);
  }
  return PersonaGrid(std::move(vars));
}

std::vector<Persona> enumerate(const PersonaGrid& grid) {
  for (const auto& v : grid.variables()) {
    if (v.values.empty()) fail(ErrorCode::EmptyVariable, "grid variable '" + v.name + "' has no values");
  }
  const std::uint64_t n = grid.persona_count();
  std::vector<Persona> out;
  out.reserve(static_cast<std::size_t>(n));
  std::vector<std::size_t> a(grid.size(), 0);
  for (std::uint64_t id = 0; id < n; ++id) {
    out.push_back({id, a, 1.0});
    // odometer increment, last variable fastest
    for (std::size_t i = grid.size(); i-- > 0;) {
      if (++a[i] < grid.variables()[i].values.size()) break;
      a[i] = 0;
    }
  }
  return out;
}

std::vector<Persona> subsample(const PersonaGrid& grid, std::size_t count, std::uint64_t seed) {
  const std::uint64_t n = grid.persona_count();
  if (count >= n) return enumerate(grid);
  Rng rng(seed, "personas.subsample");
  auto picks = rng.sample_without_replacement(static_cast<std::size_t>(n), count);
  std::sort(picks.begin(), picks.end());
  std::vector<Persona> out;
  out.reserve(count);
  for (auto id : picks) out.push_back({id, grid.assignment_of(id), 1.0});
  return out;
}

std::vector<PromptVariant> variants_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("variants file: ") + e.what());
  }
  if (!j.is_array() || j.empty()) fail(ErrorCode::InvalidConfig, "variants file must be a non-empty JSON list");
  std::vector<PromptVariant> out;
  std::set<int> ids;
  for (const auto& v : j) {
    PromptVariant pv{v.at("id").get<int>(), v.at("template").get<std::string>()};
    if (!ids.insert(pv.id).second) fail(ErrorCode::DuplicateName, "variant id " + std::to_string(pv.id) + " repeated");
    out.push_back(std::move(pv));
  }
  if (!ids.contains(0)) fail(ErrorCode::InvalidConfig, "variant 0 (canonical template) missing");
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<PromptVariant> load_variants(const std::filesystem::path& path) {
  return variants_from_json_text(read_text_file(path));
}

std::vector<std::string> placeholders(const std::string& tmpl) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const auto end = tmpl.find('}', pos);
    if (end == std::string::npos) fail(ErrorCode::UnboundPlaceholder, "unterminated '{' in template");
    out.push_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

void check_variant(const PersonaGrid& grid, const PromptVariant& variant) {
  for (const auto& name : placeholders(variant.text)) {
    if (!grid.variable_index(name)) {
      fail(ErrorCode::UnboundPlaceholder, "variant " + std::to_string(variant.id) + " uses {" + name +
                                              "} which is not a grid variable");
    }
  }
}

std::string render(const PersonaGrid& grid, const Persona& persona, const PromptVariant& variant) {
  const auto& tmpl = variant.text;
  std::string out;
  out.reserve(tmpl.size() + 64);
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) fail(ErrorCode::UnboundPlaceholder, "unterminated '{' in template");
    out.append(tmpl, pos, open - pos);
    const std::string name = tmpl.substr(open + 1, close - open - 1);
    const auto var = grid.variable_index(name);
    if (!var) fail(ErrorCode::UnboundPlaceholder, "{" + name + "} is not a grid variable");
    out += persona.value(grid, *var);
    pos = close + 1;
  }
  return out;
}

WeightLoadReport load_weights(const PersonaGrid& grid, std::vector<Persona>& personas, const CsvTable& survey) {
  std::vector<std::size_t> cols;
  for (const auto& v : grid.variables()) cols.push_back(survey.require_column(v.name));
  const auto weight_col = survey.require_column("weight");

  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < personas.size(); ++i) {
    by_id[personas[i].id] = i;
    personas[i].weight = 0.0;
  }

  WeightLoadReport report;
  std::vector<std::size_t> a(grid.size());
  for (std::size_t r = 0; r < survey.rows.size(); ++r) {
    const auto& row = survey.rows[r];
    for (std::size_t v = 0; v < grid.size(); ++v) {
      const auto idx = grid.value_index(v, row[cols[v]]);
      if (!idx) {
        fail(ErrorCode::UnknownValue, "survey row " + std::to_string(r + 1) + ": '" + row[cols[v]] +
                                          "' is not a value of " + grid.variables()[v].name);
      }
      a[v] = *idx;
    }
    double w = 0.0;
    try {
      std::size_t used = 0;
      w = std::stod(row[weight_col], &used);
      if (used != row[weight_col].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      fail(ErrorCode::MalformedCsv, "survey row " + std::to_string(r + 1) + ": bad weight '" + row[weight_col] + "'");
    }
    if (!(w >= 0.0) || !std::isfinite(w)) {
      fail(ErrorCode::NegativeWeight, "survey row " + std::to_string(r + 1) + " has weight " + row[weight_col]);
    }
    report.total_csv_weight += w;
    auto it = by_id.find(grid.persona_id(a));
    if (it == by_id.end()) {
      ++report.unmatched_rows;
      continue;
    }
    personas[it->second].weight += w;
    report.matched_weight += w;
  }
  return report;
}

CsvTable gen_survey(const PersonaGrid& grid, const std::vector<std::string>& parties, std::size_t rows,
                    std::uint64_t seed) {
  if (parties.empty()) fail(ErrorCode::InvalidConfig, "no parties");
  // left-right positions on a 0..4 scale; unknown parties are spread by list order
  static const std::map<std::string, double> known = {{"LINKE", 0.0}, {"GRÜNE", 1.0}, {"SPD", 1.5},
                                                      {"FDP", 2.6},   {"CDU", 3.0},   {"AfD", 4.0}};
  std::vector<double> position(parties.size());
  for (std::size_t n = 0; n < parties.size(); ++n) {
    auto it = known.find(parties[n]);
    position[n] = it != known.end() ? it->second
                                    : (parties.size() == 1 ? 2.0 : 4.0 * static_cast<double>(n) /
                                                                       static_cast<double>(parties.size() - 1));
  }
  const auto lean = grid.variable_index("left_leaning");

  Rng rng(seed, "survey");
  CsvTable t;
  for (const auto& v : grid.variables()) t.header.push_back(v.name);
  t.header.push_back("vote");
  t.header.push_back("weight");
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<std::string> row;
    std::optional<double> voter_pos;
    for (std::size_t v = 0; v < grid.size(); ++v) {
      const auto& values = grid.variables()[v].values;
      const std::size_t idx = rng.below(values.size());
      row.push_back(values[idx]);
      if (lean && v == *lean && values.size() > 1) {
        voter_pos = 4.0 * static_cast<double>(idx) / static_cast<double>(values.size() - 1);
      }
    }
    std::vector<double> p(parties.size());
    double z = 0.0;
    for (std::size_t n = 0; n < parties.size(); ++n) {
      const double dist = voter_pos ? position[n] - *voter_pos : 0.0;
      p[n] = std::exp(-dist * dist / 1.5) + 0.03;
      z += p[n];
    }
    double u = rng.uniform() * z;
    std::size_t vote = parties.size() - 1;
    for (std::size_t n = 0; n < parties.size(); ++n) {
      if (u < p[n]) {
        vote = n;
        break;
      }
      u -= p[n];
    }
    row.push_back(parties[vote]);
    row.push_back(format_number(std::round(rng.uniform(0.5, 2.0) * 1000.0) / 1000.0));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace partyvec
