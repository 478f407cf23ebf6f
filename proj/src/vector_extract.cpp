#include "partyvec/vector_extract.hpp"

#include <algorithm>
#include <map>

#include "partyvec/error.hpp"

namespace partyvec {

bool ranks_before(const ValueVectorRef& a, const ValueVectorRef& b) noexcept {
  if (a.cos != b.cos) return a.cos > b.cos;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

std::vector<PlantSlot> ValueVectorSet::slots() const {
  std::vector<PlantSlot> out;
  for (const auto& r : refs) out.push_back({r.layer, r.index});
  return out;
}

nlohmann::json ValueVectorSet::to_json() const {
  nlohmann::ordered_json j;
  j["party"] = party;
  j["k"] = k;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : refs) arr.push_back({{"layer", r.layer}, {"index", r.index}, {"cos", r.cos}});
  j["refs"] = arr;
  j["cos_at_k"] = cos_at_k ? nlohmann::ordered_json(*cos_at_k) : nlohmann::ordered_json(nullptr);
  j["cos_at_k_plus_1"] = cos_at_k_plus_1 ? nlohmann::ordered_json(*cos_at_k_plus_1) : nlohmann::ordered_json(nullptr);
  return nlohmann::json(j);
}

ValueVectorSet ValueVectorSet::from_json(const nlohmann::json& j) {
  ValueVectorSet s;
  try {
    s.party = j.at("party").get<std::string>();
    s.k = j.at("k").get<int>();
    for (const auto& r : j.at("refs")) {
      s.refs.push_back({s.party, r.at("layer").get<int>(), r.at("index").get<int>(), r.at("cos").get<double>()});
    }
    if (j.contains("cos_at_k") && !j["cos_at_k"].is_null()) s.cos_at_k = j["cos_at_k"].get<double>();
    if (j.contains("cos_at_k_plus_1") && !j["cos_at_k_plus_1"].is_null()) {
      s.cos_at_k_plus_1 = j["cos_at_k_plus_1"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("value vector set: ") + e.what());
  }
  if (static_cast<std::size_t>(s.k) != s.refs.size()) fail(ErrorCode::MalformedHeader, "k disagrees with refs");
  return s;
}

ScoreResult score_all(const Model& model, std::span<const float> probe_weights, const std::string& party) {
  const auto& cfg = model.config();
  if (probe_weights.size() != static_cast<std::size_t>(cfg.d_model)) {
    fail(ErrorCode::ShapeMismatch, "probe width " + std::to_string(probe_weights.size()) + " vs d_model " +
                                       std::to_string(cfg.d_model));
  }
  const double probe_norm = norm(probe_weights);
  if (probe_norm == 0.0) fail(ErrorCode::ZeroNormVector, "probe weights are all zero");

  ScoreResult result;
  result.refs.reserve(static_cast<std::size_t>(cfg.layers) * static_cast<std::size_t>(cfg.d_mlp));
  for (int l = 1; l <= cfg.layers; ++l) {
    for (int i = 1; i <= cfg.d_mlp; ++i) {
      const auto v = model.value_vector(l, i);
      const double vn = norm(v);
      double c = 0.0;
      if (vn == 0.0) {
        ++result.zero_norm_rows;
      } else {
        c = std::clamp(dot(probe_weights, v) / (probe_norm * vn), -1.0, 1.0);
      }
      result.refs.push_back({party, l, i, c});
    }
  }
  return result;
}

namespace {

ValueVectorSet take_top(std::vector<ValueVectorRef> sorted, int k, const std::string& party) {
  ValueVectorSet set;
  set.party = party;
  if (static_cast<std::size_t>(k) <= sorted.size()) set.cos_at_k = sorted[static_cast<std::size_t>(k) - 1].cos;
  if (static_cast<std::size_t>(k) < sorted.size()) set.cos_at_k_plus_1 = sorted[static_cast<std::size_t>(k)].cos;
  for (int r = 0; r < k && r < static_cast<int>(sorted.size()); ++r) {
    if (sorted[static_cast<std::size_t>(r)].cos <= 0.0) break;
    set.refs.push_back(sorted[static_cast<std::size_t>(r)]);
  }
  set.k = static_cast<int>(set.refs.size());
  return set;
}

}  // namespace

ValueVectorSet select_topk(const std::vector<ValueVectorRef>& scores, int k, SelectMode mode) {
  if (k < 1) fail(ErrorCode::KTooLarge, "k must be >= 1");
  if (static_cast<std::size_t>(k) > scores.size()) {
    fail(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds " + std::to_string(scores.size()) + " scores");
  }
  const std::string party = scores.empty() ? std::string{} : scores.front().party;
  auto sorted = scores;
  std::sort(sorted.begin(), sorted.end(), ranks_before);
  if (mode == SelectMode::global) return take_top(std::move(sorted), k, party);

  std::map<int, std::vector<ValueVectorRef>> by_layer;
  for (const auto& r : sorted) by_layer[r.layer].push_back(r);
  ValueVectorSet merged;
  merged.party = party;
  for (auto& [layer, refs] : by_layer) {
    if (static_cast<std::size_t>(k) > refs.size()) {
      fail(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds layer " + std::to_string(layer) + " rows");
    }
    auto part = take_top(std::move(refs), k, party);
    merged.refs.insert(merged.refs.end(), part.refs.begin(), part.refs.end());
  }
  std::sort(merged.refs.begin(), merged.refs.end(), ranks_before);
  merged.k = static_cast<int>(merged.refs.size());
  if (!merged.refs.empty()) merged.cos_at_k = merged.refs.back().cos;
  return merged;
}

std::vector<ValueVectorRef> select_bottomk(const std::vector<ValueVectorRef>& scores, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > scores.size()) fail(ErrorCode::KTooLarge, "bad k for bottom-k");
  auto sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const ValueVectorRef& a, const ValueVectorRef& b) {
    if (a.cos != b.cos) return a.cos < b.cos;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  });
  sorted.resize(static_cast<std::size_t>(k));
  return sorted;
}

SelectMode select_mode_from_string(const std::string& s) {
  if (s == "global") return SelectMode::global;
  if (s == "per_layer") return SelectMode::per_layer;
  fail(ErrorCode::InvalidConfig, "unknown selection mode '" + s + "'");
}

}  // namespace partyvec
