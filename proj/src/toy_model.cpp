#include "partyvec/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "partyvec/error.hpp"
#include "partyvec/rng.hpp"

namespace partyvec {

nlohmann::json PlantSpec::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json ps = nlohmann::ordered_json::array();
  for (const auto& p : parties) {
    ps.push_back({{"party", p.party}, {"party_token", p.party_token}, {"triggers", p.triggers}});
  }
  j["parties"] = ps;
  j["per_party"] = per_party;
  j["value_gain"] = value_gain;
  j["value_noise"] = value_noise;
  j["key_gain"] = key_gain;
  j["party_norm"] = party_norm;
  j["trigger_noise"] = trigger_noise;
  j["trigger_gain"] = trigger_gain;
  j["copy_gain"] = copy_gain;
  j["mlp_value_scale"] = mlp_value_scale;
  j["min_layer"] = min_layer;
  j["max_layer"] = max_layer;
  j["reserve_subspace"] = reserve_subspace;
  return nlohmann::json(j);
}

PlantSpec PlantSpec::from_json(const nlohmann::json& j) {
  PlantSpec s;
  try {
    for (const auto& p : j.at("parties")) {
      s.parties.push_back({p.at("party").get<std::string>(), p.at("party_token").get<TokenId>(),
                           p.value("triggers", std::vector<TokenId>{})});
    }
    s.per_party = j.value("per_party", s.per_party);
    s.value_gain = j.value("value_gain", s.value_gain);
    s.value_noise = j.value("value_noise", s.value_noise);
    s.key_gain = j.value("key_gain", s.key_gain);
    s.party_norm = j.value("party_norm", s.party_norm);
    s.trigger_noise = j.value("trigger_noise", s.trigger_noise);
    s.trigger_gain = j.value("trigger_gain", s.trigger_gain);
    s.copy_gain = j.value("copy_gain", s.copy_gain);
    s.mlp_value_scale = j.value("mlp_value_scale", s.mlp_value_scale);
    s.min_layer = j.value("min_layer", s.min_layer);
    s.max_layer = j.value("max_layer", s.max_layer);
    s.reserve_subspace = j.value("reserve_subspace", s.reserve_subspace);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("plant spec: ") + e.what());
  }
  return s;
}

const PartyPlantRecord* PlantManifest::find(const std::string& party) const {
  for (const auto& p : parties) {
    if (p.party == party) return &p;
  }
  return nullptr;
}

std::size_t PlantManifest::slot_count() const {
  std::size_t n = 0;
  for (const auto& p : parties) n += p.slots.size();
  return n;
}

nlohmann::json PlantManifest::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json ps = nlohmann::ordered_json::array();
  for (const auto& p : parties) {
    nlohmann::ordered_json slots = nlohmann::ordered_json::array();
    for (const auto& s : p.slots) slots.push_back({{"layer", s.layer}, {"index", s.index}});
    ps.push_back({{"party", p.party}, {"token", p.token}, {"slots", slots}, {"direction", p.direction}});
  }
  j["value_gain"] = value_gain;
  j["key_gain"] = key_gain;
  j["value_noise"] = value_noise;
  j["parties"] = ps;
  return nlohmann::json(j);
}

PlantManifest PlantManifest::from_json(const nlohmann::json& j) {
  PlantManifest m;
  try {
    m.value_gain = j.at("value_gain").get<double>();
    m.key_gain = j.at("key_gain").get<double>();
    m.value_noise = j.at("value_noise").get<double>();
    for (const auto& p : j.at("parties")) {
      PartyPlantRecord r;
      r.party = p.at("party").get<std::string>();
      r.token = p.at("token").get<TokenId>();
      r.direction = p.at("direction").get<std::vector<float>>();
      for (const auto& s : p.at("slots")) r.slots.push_back({s.at("layer").get<int>(), s.at("index").get<int>()});
      m.parties.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("plant manifest: ") + e.what());
  }
  return m;
}

namespace {

std::vector<float> gaussian(Rng& rng, std::size_t n, double stddev) {
  std::vector<float> out(n);
  for (auto& x : out) x = static_cast<float>(rng.normal() * stddev);
  return out;
}

std::vector<double> unit_random(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return v;
}

/// Removes the components of v along the (orthonormal) basis and normalizes.
std::vector<double> orthonormalize(std::vector<double> v, const std::vector<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    double p = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) p += v[i] * b[i];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n < 1e-9) fail(ErrorCode::InvalidConfig, "could not orthonormalize planting directions");
  for (auto& x : v) x /= n;
  return v;
}

void set_row(std::vector<float>& matrix, std::size_t cols, std::size_t row, const std::vector<double>& values) {
  for (std::size_t c = 0; c < cols; ++c) matrix[row * cols + c] = static_cast<float>(values[c]);
}

}  // namespace

ToyModel gen_toy_model(const ModelConfig& config, const PlantSpec& spec, std::uint64_t seed) {
  config.validate(spec.parties.size());
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto dm = static_cast<std::size_t>(config.d_mlp);
  const auto V = static_cast<std::size_t>(config.vocab_size);
  const int L = config.layers;
  const bool planted = spec.per_party > 0 && !spec.parties.empty();
  if (spec.per_party < 0) fail(ErrorCode::InvalidConfig, "per_party must be >= 0");
  if (planted && spec.parties.size() > d) {
    fail(ErrorCode::InvalidConfig, "more parties than residual dimensions");
  }

  const int lo_layer = std::max(1, spec.min_layer);
  const int hi_layer = spec.max_layer <= 0 ? L : std::min(L, spec.max_layer);
  if (planted && lo_layer > hi_layer) fail(ErrorCode::InvalidConfig, "empty planting layer range");
  const std::size_t capacity = planted ? static_cast<std::size_t>(hi_layer - lo_layer + 1) * dm : 0;
  const std::size_t wanted = planted ? spec.parties.size() * static_cast<std::size_t>(spec.per_party) : 0;
  if (wanted > capacity) {
    fail(ErrorCode::PlantCollision, std::to_string(wanted) + " planted slots requested, only " +
                                        std::to_string(capacity) + " rows available");
  }

  const double base = 1.0 / std::sqrt(static_cast<double>(d));
  const double mlp_out = spec.mlp_value_scale / std::sqrt(static_cast<double>(dm));

  Rng embed_rng(seed, "toy.embed");
  auto embed = gaussian(embed_rng, V * d, base);
  Rng pos_rng(seed, "toy.pos_embed");
  auto pos = gaussian(pos_rng, static_cast<std::size_t>(config.max_seq) * d, base);

  std::vector<std::vector<float>> wq(L), wk(L), wv(L), wo(L), mk(L), mv(L);
  for (int l = 0; l < L; ++l) {
    Rng r(seed, "toy.layer." + std::to_string(l + 1));
    wq[l] = gaussian(r, d * d, base);
    wk[l] = gaussian(r, d * d, base);
    wv[l] = gaussian(r, d * d, base);
    wo[l] = gaussian(r, d * d, base);
    mk[l] = gaussian(r, dm * d, base);
    mv[l] = gaussian(r, dm * d, mlp_out);
  }

  PlantManifest manifest;
  manifest.value_gain = spec.value_gain;
  manifest.key_gain = spec.key_gain;
  manifest.value_noise = spec.value_noise;

  if (planted) {
    Rng prng(seed, "toy.plant");
    std::set<TokenId> used_tokens;
    for (const auto& p : spec.parties) {
      for (TokenId t : std::vector<TokenId>{p.party_token}) {
        if (t < 0 || static_cast<std::size_t>(t) >= V) fail(ErrorCode::TokenOutOfVocab, "party token " + p.party);
        if (!used_tokens.insert(t).second) fail(ErrorCode::InvalidConfig, "party token reused by " + p.party);
      }
      for (TokenId t : p.triggers) {
        if (t < 0 || static_cast<std::size_t>(t) >= V) fail(ErrorCode::TokenOutOfVocab, "trigger for " + p.party);
      }
    }

    // Copy heads: value/output projections near identity.
    for (int l = 0; l < L; ++l) {
      for (std::size_t i = 0; i < d * d; ++i) {
        wv[l][i] *= 0.1f;
        wo[l][i] = static_cast<float>(spec.copy_gain * 0.1 * wo[l][i]);
      }
      for (std::size_t i = 0; i < d; ++i) {
        wv[l][i * d + i] += 1.0f;
        wo[l][i * d + i] += static_cast<float>(spec.copy_gain);
      }
    }

    std::vector<std::vector<double>> directions;
    for (std::size_t n = 0; n < spec.parties.size(); ++n) {
      directions.push_back(orthonormalize(unit_random(prng, d), directions));
    }

    // Reserve the party subspace: other tokens and positions carry no party component.
    std::set<TokenId> party_tokens;
    for (const auto& p : spec.parties) {
      party_tokens.insert(p.party_token);
      party_tokens.insert(p.triggers.begin(), p.triggers.end());
    }
    auto project_out = [&](std::vector<float>& matrix, std::size_t rows) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (const auto& u : directions) {
          double p = 0.0;
          for (std::size_t c = 0; c < d; ++c) p += matrix[r * d + c] * u[c];
          for (std::size_t c = 0; c < d; ++c) matrix[r * d + c] = static_cast<float>(matrix[r * d + c] - p * u[c]);
        }
      }
    };
    if (spec.reserve_subspace) {
      for (std::size_t t = 0; t < V; ++t) {
        if (party_tokens.contains(static_cast<TokenId>(t))) continue;
        std::vector<float> row(embed.begin() + static_cast<std::ptrdiff_t>(t * d),
                               embed.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
        project_out(row, 1);
        std::copy(row.begin(), row.end(), embed.begin() + static_cast<std::ptrdiff_t>(t * d));
      }
      project_out(pos, static_cast<std::size_t>(config.max_seq));
    }

    // Party and trigger tokens point along the party direction; unembed is tied.
    for (std::size_t n = 0; n < spec.parties.size(); ++n) {
      const auto& p = spec.parties[n];
      std::vector<double> e(d);
      for (std::size_t c = 0; c < d; ++c) e[c] = spec.party_norm * directions[n][c];
      set_row(embed, d, static_cast<std::size_t>(p.party_token), e);
      for (TokenId t : p.triggers) {
        if (t == p.party_token) continue;
        std::vector<double> te(d);
        for (std::size_t c = 0; c < d; ++c) {
          te[c] = spec.trigger_gain * spec.party_norm * (directions[n][c] + spec.trigger_noise * prng.normal() * base);
        }
        set_row(embed, d, static_cast<std::size_t>(t), te);
      }
    }

    const auto picks = prng.sample_without_replacement(capacity, wanted);
    std::size_t next = 0;
    for (std::size_t n = 0; n < spec.parties.size(); ++n) {
      PartyPlantRecord rec;
      rec.party = spec.parties[n].party;
      rec.token = spec.parties[n].party_token;
      rec.direction.assign(directions[n].begin(), directions[n].end());
      for (int k = 0; k < spec.per_party; ++k) {
        const std::size_t flat = picks[next++];
        const int layer = lo_layer + static_cast<int>(flat / dm);
        const std::size_t row = flat % dm;
        rec.slots.push_back({layer, static_cast<int>(row) + 1});

        const auto xi = orthonormalize(unit_random(prng, d), {directions[n]});
        std::vector<double> value(d), key(d);
        for (std::size_t c = 0; c < d; ++c) {
          value[c] = spec.value_gain * spec.party_norm * (directions[n][c] + spec.value_noise * xi[c]);
          key[c] = spec.key_gain * directions[n][c];
        }
        set_row(mv[static_cast<std::size_t>(layer - 1)], d, row, value);
        set_row(mk[static_cast<std::size_t>(layer - 1)], d, row, key);
      }
      std::sort(rec.slots.begin(), rec.slots.end());
      manifest.parties.push_back(std::move(rec));
    }
  }

  TensorStore store;
  store.insert("embed", Tensor({V, d}, embed));
  store.insert("unembed", Tensor({V, d}, std::move(embed)));
  store.insert("pos_embed", Tensor({static_cast<std::size_t>(config.max_seq), d}, std::move(pos)));
  for (int l = 0; l < L; ++l) {
    store.insert(Model::weight_name(l + 1, "wq"), Tensor({d, d}, std::move(wq[l])));
    store.insert(Model::weight_name(l + 1, "wk"), Tensor({d, d}, std::move(wk[l])));
    store.insert(Model::weight_name(l + 1, "wv"), Tensor({d, d}, std::move(wv[l])));
    store.insert(Model::weight_name(l + 1, "wo"), Tensor({d, d}, std::move(wo[l])));
    store.insert(Model::weight_name(l + 1, "mlp_k"), Tensor({dm, d}, std::move(mk[l])));
    store.insert(Model::weight_name(l + 1, "mlp_v"), Tensor({dm, d}, std::move(mv[l])));
  }
  return ToyModel{std::move(store), std::move(manifest)};
}

double plant_recovery(const PlantManifest& manifest, const std::string& party, const std::vector<PlantSlot>& recovered) {
  const auto* rec = manifest.find(party);
  if (rec == nullptr || rec->slots.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : rec->slots) {
    if (std::find(recovered.begin(), recovered.end(), s) != recovered.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rec->slots.size());
}

}  // namespace partyvec
