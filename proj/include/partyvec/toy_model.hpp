#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "partyvec/model.hpp"
#include "partyvec/tensor_store.hpp"

namespace partyvec {

struct PartyPlant {
  std::string party;
  TokenId party_token = 0;
  std::vector<TokenId> triggers;  // extra tokens embedded along the party direction
};

/// How to plant party-promoting value vectors into a random model.
struct PlantSpec {
  std::vector<PartyPlant> parties;
  int per_party = 4;           // k_plant
  double value_gain = 0.4;     // planted value row = value_gain * (e_t + value_noise * |e_t| * xi)
  double value_noise = 0.1;    // xi is a unit vector orthogonal to e_t, so cos(e_t, v) = 1/sqrt(1+noise^2)
  double key_gain = 0.75;      // planted key row = key_gain * e_t / |e_t|
  double party_norm = 3.5;     // embedding norm of party and trigger tokens
  double trigger_noise = 0.1;
  double trigger_gain = 1.0;   // trigger embeddings are trigger_gain * party_norm long
  double copy_gain = 0.2;      // attention OV circuit ~ copy_gain * identity
  double mlp_value_scale = 0.3;
  int min_layer = 1;           // planted layers are drawn from [min_layer, max_layer]
  int max_layer = 0;           // 0 means L
  bool reserve_subspace = true;  // remove party components from all other embeddings

  nlohmann::json to_json() const;
  static PlantSpec from_json(const nlohmann::json& j);
};

struct PlantSlot {
  int layer = 0;  // 1-based
  int index = 0;  // 1-based row of mlp_v / mlp_k

  friend bool operator==(const PlantSlot&, const PlantSlot&) = default;
  friend auto operator<=>(const PlantSlot&, const PlantSlot&) = default;
};

struct PartyPlantRecord {
  std::string party;
  TokenId token = 0;
  std::vector<PlantSlot> slots;
  std::vector<float> direction;  // unit planting direction
};

struct PlantManifest {
  std::vector<PartyPlantRecord> parties;
  double value_gain = 0.0;
  double key_gain = 0.0;
  double value_noise = 0.0;

  const PartyPlantRecord* find(const std::string& party) const;
  std::size_t slot_count() const;

  nlohmann::json to_json() const;
  static PlantManifest from_json(const nlohmann::json& j);
};

struct ToyModel {
  TensorStore weights;
  PlantManifest manifest;
};

/// Seeded random model with planted value vectors. Base weights are Gaussian
/// with std 1/sqrt(fan_in); with per_party > 0 the attention heads become
/// near-identity copy circuits so marker content reaches later positions.
/// Same (config, spec, seed) gives a byte-identical store.
ToyModel gen_toy_model(const ModelConfig& config, const PlantSpec& spec, std::uint64_t seed);

/// Fraction of manifest slots present in `recovered` for the given party.
double plant_recovery(const PlantManifest& manifest, const std::string& party,
                      const std::vector<PlantSlot>& recovered);

}  // namespace partyvec
