#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "partyvec/model.hpp"
#include "partyvec/toy_model.hpp"

namespace partyvec {

struct ValueVectorRef {
  std::string party;
  int layer = 0;  // 1-based
  int index = 0;  // 1-based row of mlp_v
  double cos = 0.0;

  friend bool operator==(const ValueVectorRef&, const ValueVectorRef&) = default;
};

/// Ranking order: cos descending, then layer ascending, then index ascending.
bool ranks_before(const ValueVectorRef& a, const ValueVectorRef& b) noexcept;

struct ValueVectorSet {
  std::string party;
  int k = 0;  // retained count
  std::vector<ValueVectorRef> refs;
  std::optional<double> cos_at_k;
  std::optional<double> cos_at_k_plus_1;

  std::vector<PlantSlot> slots() const;

  nlohmann::json to_json() const;
  static ValueVectorSet from_json(const nlohmann::json& j);
};

struct ScoreResult {
  std::vector<ValueVectorRef> refs;  // L * d_mlp entries in (layer, index) order
  std::size_t zero_norm_rows = 0;
};

/// Cosine between the probe weights and every value vector of every layer.
/// Zero-norm rows score 0 and are counted.
ScoreResult score_all(const Model& model, std::span<const float> probe_weights, const std::string& party);

enum class SelectMode { global, per_layer };

/// The k highest-cosine refs over all (layer, index) pairs, or the k best of
/// each layer in per_layer mode. Non-positive cosines are never selected, so
/// the retained count can be below k. Throws KTooLarge.
ValueVectorSet select_topk(const std::vector<ValueVectorRef>& scores, int k, SelectMode mode = SelectMode::global);

/// The k lowest-cosine refs (the strongest suppressors), ascending by cos.
std::vector<ValueVectorRef> select_bottomk(const std::vector<ValueVectorRef>& scores, int k);

SelectMode select_mode_from_string(const std::string& s);

}  // namespace partyvec
