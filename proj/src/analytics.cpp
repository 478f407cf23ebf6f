#include "partyvec/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "partyvec/error.hpp"

namespace partyvec {

std::string to_string(DistSource s) { return s == DistSource::latent ? "latent" : "survey"; }

void PartyDistribution::validate() const {
  if (probs.size() != parties.size()) fail(ErrorCode::AxisMismatch, "probs/parties length mismatch");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidConfig, "probability outside [0,1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::InvalidConfig, "probabilities sum to " + format_number(total));
  if (clamped_mass < 0.0) fail(ErrorCode::InvalidConfig, "negative clamped mass");
}

nlohmann::json PartyDistribution::to_json() const {
  nlohmann::ordered_json j;
  j["source"] = to_string(source);
  j["parties"] = parties;
  j["probs"] = probs;
  j["clamped_mass"] = clamped_mass;
  return nlohmann::json(j);
}

std::string GroupKey::label() const {
  std::string out;
  if (variable) out = *variable + "=" + value.value_or("");
  if (variant) out += (out.empty() ? "" : "|") + std::string("variant=") + std::to_string(*variant);
  return out.empty() ? "all" : out;
}

void GroupKey::resolve(const PersonaGrid& grid) const {
  if (!variable) return;
  const auto var = grid.variable_index(*variable);
  if (!var) fail(ErrorCode::EmptyGroup, "unknown grid variable '" + *variable + "'");
  if (!value || !grid.value_index(*var, *value)) {
    fail(ErrorCode::EmptyGroup, "'" + value.value_or("") + "' is not a value of " + *variable);
  }
}

bool GroupKey::matches(const PersonaGrid& grid, const Persona& persona) const {
  if (!variable) return true;
  const auto var = grid.variable_index(*variable);
  return var && persona.value(grid, *var) == value;
}

std::vector<GroupKey> all_levels(const PersonaGrid& grid) {
  std::vector<GroupKey> out;
  for (const auto& v : grid.variables()) {
    for (const auto& value : v.values) out.push_back(GroupKey::level(v.name, value));
  }
  return out;
}

namespace {

std::map<std::string, std::size_t> party_index(const std::vector<std::string>& parties) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < parties.size(); ++i) idx[parties[i]] = i;
  return idx;
}

PartyDistribution normalize_floored(const std::vector<std::string>& parties, std::vector<double> mass,
                                    DistSource source, const std::string& what) {
  PartyDistribution dist;
  dist.parties = parties;
  dist.source = source;
  double total = 0.0;
  for (double& m : mass) {
    if (m < 0.0) {
      dist.clamped_mass += -m;
      m = 0.0;
    }
    total += m;
  }
  if (!(total > 0.0)) fail(ErrorCode::AllNonPositive, what + ": no positive mass");
  dist.probs.resize(mass.size());
  for (std::size_t i = 0; i < mass.size(); ++i) dist.probs[i] = mass[i] / total;
  return dist;
}

}  // namespace

PartyDistribution build_psi(const std::vector<ScalingRecord>& records, const PersonaGrid& grid,
                            const std::vector<Persona>& personas, const std::vector<std::string>& parties,
                            const GroupKey& filter, bool weighted) {
  filter.resolve(grid);
  std::unordered_map<std::uint64_t, const Persona*> by_id;
  for (const auto& p : personas) by_id[p.id] = &p;
  const auto pidx = party_index(parties);

  std::vector<double> mass(parties.size(), 0.0);
  std::size_t used = 0;
  for (const auto& r : records) {
    if (filter.variant && r.variant_id != *filter.variant) continue;
    auto it = by_id.find(r.persona_id);
    if (it == by_id.end()) fail(ErrorCode::UnknownValue, "record for unknown persona " + std::to_string(r.persona_id));
    if (!filter.matches(grid, *it->second)) continue;
    auto n = pidx.find(r.party);
    if (n == pidx.end()) fail(ErrorCode::UnknownParty, "record party '" + r.party + "'");
    mass[n->second] += (weighted ? it->second->weight : 1.0) * r.m;
    ++used;
  }
  if (used == 0) fail(ErrorCode::EmptyGroup, "no records for group " + filter.label());
  return normalize_floored(parties, std::move(mass), DistSource::latent, "psi for " + filter.label());
}

double normalized_entropy(std::span<const double> probs) {
  if (probs.size() <= 1) return 0.0;
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return std::clamp(h / std::log2(static_cast<double>(probs.size())), 0.0, 1.0);
}

double entropy(const PartyDistribution& dist) { return normalized_entropy(dist.probs); }

PartyDistribution barycenter(const std::vector<PartyDistribution>& dists) {
  if (dists.empty()) fail(ErrorCode::EmptyList, "barycenter of no distributions");
  PartyDistribution out;
  out.parties = dists.front().parties;
  out.source = dists.front().source;
  out.probs.assign(out.parties.size(), 0.0);
  for (const auto& d : dists) {
    if (d.parties != out.parties) fail(ErrorCode::AxisMismatch, "barycenter over different party lists");
    for (std::size_t i = 0; i < d.probs.size(); ++i) out.probs[i] += d.probs[i];
    out.clamped_mass += d.clamped_mass;
  }
  double total = 0.0;
  for (double& p : out.probs) {
    p /= static_cast<double>(dists.size());
    total += p;
  }
  if (dists.size() > 1) {
    for (double& p : out.probs) p /= total;
  }
  return out;
}

std::string GroundMetric::label() const {
  if (kind == Kind::unit) return "unit";
  std::string s = "ordered:";
  for (std::size_t i = 0; i < axis.size(); ++i) s += (i ? "," : "") + axis[i];
  return s;
}

double wasserstein(const PartyDistribution& a, const PartyDistribution& b, const GroundMetric& ground) {
  if (a.parties != b.parties) fail(ErrorCode::AxisMismatch, "distributions over different party lists");
  if (ground.kind == GroundMetric::Kind::unit) {
    double l1 = 0.0;
    for (std::size_t i = 0; i < a.probs.size(); ++i) l1 += std::abs(a.probs[i] - b.probs[i]);
    return 0.5 * l1;
  }
  const auto idx = party_index(a.parties);
  std::set<std::string> seen(ground.axis.begin(), ground.axis.end());
  if (ground.axis.size() != a.parties.size() || seen.size() != a.parties.size()) {
    fail(ErrorCode::AxisMismatch, "axis must list every party exactly once");
  }
  double cdf_a = 0.0, cdf_b = 0.0, w = 0.0;
  for (std::size_t k = 0; k + 1 < ground.axis.size(); ++k) {
    auto it = idx.find(ground.axis[k]);
    if (it == idx.end()) fail(ErrorCode::AxisMismatch, "axis names unknown party '" + ground.axis[k] + "'");
    cdf_a += a.probs[it->second];
    cdf_b += b.probs[it->second];
    w += std::abs(cdf_a - cdf_b);
  }
  if (!idx.contains(ground.axis.back())) fail(ErrorCode::AxisMismatch, "axis names unknown party");
  return w;
}

SensitivityTable sensitivity_table(const std::vector<ScalingRecord>& records, const PersonaGrid& grid,
                                   const std::vector<Persona>& personas, const std::vector<std::string>& parties,
                                   const std::vector<GroupKey>& groups, const std::vector<int>& variants,
                                   const GroundMetric& ground, bool weighted) {
  SensitivityTable table;
  for (const auto& g : groups) {
    std::vector<int> ok_variants;
    std::vector<PartyDistribution> dists;
    for (int j : variants) {
      GroupKey cell = g;
      cell.variant = j;
      try {
        dists.push_back(build_psi(records, grid, personas, parties, cell, weighted));
        ok_variants.push_back(j);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyGroup && e.code() != ErrorCode::AllNonPositive) throw;
        table.excluded.push_back(g.label() + "|" + std::to_string(j));
      }
    }
    if (dists.empty()) continue;
    const auto center = barycenter(dists);
    for (std::size_t i = 0; i < dists.size(); ++i) {
      table.rows.push_back({g, ok_variants[i], entropy(dists[i]), wasserstein(dists[i], center, ground)});
    }
  }
  if (table.rows.empty()) fail(ErrorCode::NoValidCells, "every (group, variant) cell was empty");
  return table;
}

PartyDistribution survey_baseline(const CsvTable& survey, const std::vector<std::string>& parties,
                                  const GroupKey& group) {
  const auto vote_col = survey.require_column("vote");
  const auto weight_col = survey.require_column("weight");
  std::optional<std::size_t> group_col;
  if (group.variable) group_col = survey.require_column(*group.variable);
  const auto pidx = party_index(parties);

  std::vector<double> mass(parties.size(), 0.0);
  std::size_t rows = 0;
  for (const auto& row : survey.rows) {
    if (group_col && row[*group_col] != group.value) continue;
    auto it = pidx.find(row[vote_col]);
    if (it == pidx.end()) fail(ErrorCode::UnknownParty, "survey vote '" + row[vote_col] + "'");
    double w = 0.0;
    try {
      w = std::stod(row[weight_col]);
    } catch (const std::exception&) {
      fail(ErrorCode::MalformedCsv, "bad weight '" + row[weight_col] + "'");
    }
    if (w < 0.0) fail(ErrorCode::NegativeWeight, "survey weight " + row[weight_col]);
    mass[it->second] += w;
    ++rows;
  }
  if (rows == 0) fail(ErrorCode::EmptyGroup, "no survey rows for group " + group.label());
  double total = 0.0;
  for (double m : mass) total += m;
  if (!(total > 0.0)) fail(ErrorCode::EmptyGroup, "survey group " + group.label() + " has zero total weight");
  PartyDistribution dist;
  dist.parties = parties;
  dist.source = DistSource::survey;
  for (double m : mass) dist.probs.push_back(m / total);
  return dist;
}

}  // namespace partyvec
