#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "partyvec/csv.hpp"
#include "partyvec/persona.hpp"
#include "partyvec/scaling.hpp"

namespace partyvec {

enum class DistSource { latent, survey };
std::string to_string(DistSource s);

/// Nonnegative distribution over an ordered party list, summing to one.
struct PartyDistribution {
  std::vector<std::string> parties;
  std::vector<double> probs;
  double clamped_mass = 0.0;  // total negative mass floored to zero before normalizing
  DistSource source = DistSource::latent;

  /// Throws InvalidConfig if an invariant is broken (tolerance 1e-9).
  void validate() const;
  nlohmann::json to_json() const;
};

/// A persona subset: a single variable level, a prompt variant, both, or all.
struct GroupKey {
  std::optional<std::string> variable;
  std::optional<std::string> value;
  std::optional<int> variant;

  static GroupKey all() { return {}; }
  static GroupKey level(std::string variable, std::string value) {
    return {std::move(variable), std::move(value), std::nullopt};
  }

  std::string label() const;
  /// Throws EmptyGroup when the variable/value is not in the grid.
  void resolve(const PersonaGrid& grid) const;
  bool matches(const PersonaGrid& grid, const Persona& persona) const;
};

/// Every single-variable level of the grid, in grid order.
std::vector<GroupKey> all_levels(const PersonaGrid& grid);

/// psi over the filtered records: m^n = sum_p sum_j w_p m^n_{p,j}, negatives
/// floored, then normalized. Throws EmptyGroup, AllNonPositive.
PartyDistribution build_psi(const std::vector<ScalingRecord>& records, const PersonaGrid& grid,
                            const std::vector<Persona>& personas, const std::vector<std::string>& parties,
                            const GroupKey& filter, bool weighted = true);

/// Shannon entropy in bits divided by log2 |N|, with 0 log 0 = 0.
double normalized_entropy(std::span<const double> probs);
double entropy(const PartyDistribution& dist);

/// Componentwise mean. Throws EmptyList, AxisMismatch.
PartyDistribution barycenter(const std::vector<PartyDistribution>& dists);

struct GroundMetric {
  enum class Kind { unit, ordered } kind = Kind::unit;
  std::vector<std::string> axis;  // party order for Kind::ordered

  static GroundMetric unit() { return {}; }
  static GroundMetric ordered(std::vector<std::string> axis) { return {Kind::ordered, std::move(axis)}; }
  std::string label() const;
};

/// Unit cost: total variation 0.5 * sum |a - b|. Ordered axis: sum over the
/// axis of |CDF_a - CDF_b|. Throws AxisMismatch.
double wasserstein(const PartyDistribution& a, const PartyDistribution& b, const GroundMetric& ground);

struct SensitivityRow {
  GroupKey group;
  int variant = 0;
  double h_norm = 0.0;
  double w = 0.0;
};

struct SensitivityTable {
  std::vector<SensitivityRow> rows;
  std::vector<std::string> excluded;  // "group|variant" cells with no usable records
};

/// For each group g and variant j: H_norm(psi_{j,g}) and W(psi_{j,g}, mean_j psi_{j,g}).
/// Throws NoValidCells when every cell is excluded.
SensitivityTable sensitivity_table(const std::vector<ScalingRecord>& records, const PersonaGrid& grid,
                                   const std::vector<Persona>& personas, const std::vector<std::string>& parties,
                                   const std::vector<GroupKey>& groups, const std::vector<int>& variants,
                                   const GroundMetric& ground, bool weighted = true);

/// Weighted vote shares from a survey table with `vote` and `weight` columns.
/// Throws EmptyGroup, UnknownParty.
PartyDistribution survey_baseline(const CsvTable& survey, const std::vector<std::string>& parties,
                                  const GroupKey& group);

}  // namespace partyvec
