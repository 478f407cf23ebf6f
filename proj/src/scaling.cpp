#include "partyvec/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "partyvec/error.hpp"

namespace partyvec {

Readout readout_from_string(const std::string& s) {
  if (s == "final") return Readout::final_token;
  if (s == "mean") return Readout::mean_over_positions;
  fail(ErrorCode::InvalidConfig, "unknown readout '" + s + "'");
}

std::vector<double> cosine_weights(const ValueVectorSet& set) {
  if (set.refs.empty()) fail(ErrorCode::EmptyValueSet, "value set for " + set.party + " is empty");
  double total = 0.0;
  for (const auto& r : set.refs) {
    if (!(r.cos > 0.0)) {
      fail(ErrorCode::NonPositiveCosineInSet, "party " + set.party + " layer " + std::to_string(r.layer) +
                                                  " index " + std::to_string(r.index));
    }
    total += r.cos;
  }
  std::vector<double> w;
  w.reserve(set.refs.size());
  for (const auto& r : set.refs) w.push_back(r.cos / total);
  return w;
}

ScalingRecord scale_one(const Model& model, const ResidualTrace& trace, const ValueVectorSet& set, Readout readout,
                        bool keep_raw) {
  const auto weights = cosine_weights(set);
  const int S = trace.positions();
  if (S == 0) fail(ErrorCode::EmptyCorpus, "empty prompt");
  ScalingRecord rec;
  rec.party = set.party;
  std::vector<double> raw(set.refs.size());
  for (std::size_t r = 0; r < set.refs.size(); ++r) {
    const auto& ref = set.refs[r];
    if (readout == Readout::final_token) {
      raw[r] = model.mlp_coefficient(ref.layer, ref.index, trace.pre_mlp(ref.layer, S - 1));
    } else {
      double acc = 0.0;
      for (int s = 0; s < S; ++s) acc += model.mlp_coefficient(ref.layer, ref.index, trace.pre_mlp(ref.layer, s));
      raw[r] = acc / S;
    }
    rec.m += raw[r] * weights[r];
  }
  if (keep_raw) rec.raw = std::move(raw);
  return rec;
}

std::vector<ScalingRecord> scan(const Model& model, const Vocabulary& vocab, const std::vector<ValueVectorSet>& sets,
                                const std::vector<PromptItem>& prompts, const ScanOptions& options) {
  if (sets.empty()) fail(ErrorCode::EmptyValueSet, "no value sets to scan");
  for (const auto& s : sets) cosine_weights(s);  // validate before any compute

  std::vector<std::vector<ScalingRecord>> per_prompt(prompts.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const auto tokens = vocab.encode(prompts[p].text);
      const auto result = model.forward(tokens);
      auto& out = per_prompt[p];
      for (const auto& set : sets) {
        auto rec = scale_one(model, result.trace, set, options.readout, options.keep_raw);
        rec.persona_id = prompts[p].persona_id;
        rec.variant_id = prompts[p].variant_id;
        out.push_back(std::move(rec));
      }
    }
  };

  const std::size_t threads = static_cast<std::size_t>(std::max(1, options.threads));
  if (threads == 1 || prompts.size() < 2) {
    work(0, prompts.size());
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::jthread> pool;
    const std::size_t chunk = (prompts.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(prompts.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, t, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::map<std::string, std::size_t> party_rank;
  for (std::size_t i = 0; i < sets.size(); ++i) party_rank.emplace(sets[i].party, i);
  std::vector<ScalingRecord> records;
  for (auto& v : per_prompt) {
    for (auto& r : v) records.push_back(std::move(r));
  }
  std::stable_sort(records.begin(), records.end(), [&](const ScalingRecord& a, const ScalingRecord& b) {
    if (a.persona_id != b.persona_id) return a.persona_id < b.persona_id;
    if (a.variant_id != b.variant_id) return a.variant_id < b.variant_id;
    return party_rank[a.party] < party_rank[b.party];
  });
  return records;
}

ScalingCube::ScalingCube(std::vector<std::uint64_t> personas, std::vector<int> variants,
                         std::vector<std::string> parties)
    : personas_(std::move(personas)),
      variants_(std::move(variants)),
      parties_(std::move(parties)),
      values_(personas_.size() * variants_.size() * parties_.size(), 0.0) {}

double ScalingCube::at(std::size_t p, std::size_t j, std::size_t n) const {
  return values_[(p * variants_.size() + j) * parties_.size() + n];
}

double& ScalingCube::at(std::size_t p, std::size_t j, std::size_t n) {
  return values_[(p * variants_.size() + j) * parties_.size() + n];
}

ScalingCube group_matrix(const std::vector<ScalingRecord>& records, const std::vector<std::uint64_t>& personas,
                         const std::vector<int>& variants, const std::vector<std::string>& parties) {
  std::map<std::uint64_t, std::size_t> pi;
  std::map<int, std::size_t> ji;
  std::map<std::string, std::size_t> ni;
  for (std::size_t i = 0; i < personas.size(); ++i) pi[personas[i]] = i;
  for (std::size_t i = 0; i < variants.size(); ++i) ji[variants[i]] = i;
  for (std::size_t i = 0; i < parties.size(); ++i) ni[parties[i]] = i;

  ScalingCube cube(personas, variants, parties);
  std::vector<char> filled(personas.size() * variants.size() * parties.size(), 0);
  for (const auto& r : records) {
    auto p = pi.find(r.persona_id);
    auto j = ji.find(r.variant_id);
    auto n = ni.find(r.party);
    if (p == pi.end() || j == ji.end() || n == ni.end()) continue;
    const std::size_t flat = (p->second * variants.size() + j->second) * parties.size() + n->second;
    if (filled[flat]) {
      fail(ErrorCode::DuplicateCell, "persona " + std::to_string(r.persona_id) + " variant " +
                                         std::to_string(r.variant_id) + " party " + r.party + " appears twice");
    }
    filled[flat] = 1;
    cube.at(p->second, j->second, n->second) = r.m;
  }
  const auto missing = static_cast<std::size_t>(std::count(filled.begin(), filled.end(), 0));
  if (missing > 0) fail(ErrorCode::IncompleteCube, std::to_string(missing) + " (persona, variant, party) cells missing");
  return cube;
}

std::string records_to_csv(const std::vector<ScalingRecord>& records, const std::string& metadata_comment,
                           bool explode_raw) {
  std::size_t raw_cols = 0;
  if (explode_raw) {
    for (const auto& r : records) raw_cols = std::max(raw_cols, r.raw.size());
  }
  std::string out;
  if (!metadata_comment.empty()) out += metadata_comment + "\n";
  std::vector<std::string> header{"persona_id", "variant_id", "party", "m"};
  for (std::size_t i = 0; i < raw_cols; ++i) header.push_back("raw_" + std::to_string(i + 1));
  out += csv_line(header);
  for (const auto& r : records) {
    std::vector<std::string> row{std::to_string(r.persona_id), std::to_string(r.variant_id), r.party,
                                 format_number(r.m)};
    for (std::size_t i = 0; i < raw_cols; ++i) row.push_back(i < r.raw.size() ? format_number(r.raw[i]) : "");
    out += csv_line(row);
  }
  return out;
}

std::vector<ScalingRecord> records_from_csv(const CsvTable& table) {
  const auto pc = table.require_column("persona_id");
  const auto vc = table.require_column("variant_id");
  const auto nc = table.require_column("party");
  const auto mc = table.require_column("m");
  std::vector<std::size_t> raw_cols;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (table.header[i].rfind("raw_", 0) == 0) raw_cols.push_back(i);
  }
  std::vector<ScalingRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    ScalingRecord r;
    try {
      r.persona_id = std::stoull(row[pc]);
      r.variant_id = std::stoi(row[vc]);
      r.party = row[nc];
      r.m = std::stod(row[mc]);
      for (auto c : raw_cols) {
        if (!row[c].empty()) r.raw.push_back(std::stod(row[c]));
      }
    } catch (const std::exception& e) {
      fail(ErrorCode::MalformedCsv, std::string("scaling record: ") + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace partyvec
