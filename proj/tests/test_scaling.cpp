#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "partyvec/error.hpp"
#include "partyvec/scaling.hpp"
#include "partyvec/toy_model.hpp"
#include "partyvec/vocabulary.hpp"

using namespace partyvec;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

const std::vector<std::string> kParties{"AfD", "CDU", "FDP", "SPD", "GRÜNE", "LINKE"};

struct Fixture {
  Vocabulary vocab;
  ModelConfig config;
  ToyModel toy;
  Model model;
};

Fixture planted(std::uint64_t seed) {
  const std::vector<std::string> words{"I", "vote", "for", "the", "party", "we", "like", "red", "blue", "links", "."};
  auto vocab = Vocabulary::build(kParties, words);
  ModelConfig c;
  c.layers = 4;
  c.d_model = 32;
  c.d_mlp = 32;
  c.heads = 4;
  c.vocab_size = static_cast<int>(vocab.size());
  c.max_seq = 32;
  PlantSpec spec;
  spec.per_party = 3;
  for (const auto& p : kParties) {
    PartyPlant pp{p, vocab.require(p), {}};
    if (p == "LINKE") pp.triggers.push_back(vocab.require("links"));
    spec.parties.push_back(pp);
  }
  auto toy = gen_toy_model(c, spec, seed);
  Model model(c, toy.weights);
  return {vocab, c, std::move(toy), std::move(model)};
}

// Value set made of exactly the planted slots, with positive cosines.
ValueVectorSet planted_set(const Fixture& f, const std::string& party) {
  ValueVectorSet s;
  s.party = party;
  const auto* rec = f.toy.manifest.find(party);
  REQUIRE(rec != nullptr);
  double cos = 0.9;
  for (const auto& slot : rec->slots) {
    s.refs.push_back({party, slot.layer, slot.index, cos});
    cos -= 0.1;
  }
  s.k = static_cast<int>(s.refs.size());
  return s;
}

}  // namespace

TEST_CASE("cosine weights") {
  ValueVectorSet s;
  s.party = "A";
  s.refs = {{"A", 1, 1, 0.5}, {"A", 2, 1, 0.3}, {"A", 2, 4, 0.2}};
  s.k = 3;
  const auto w = cosine_weights(s);
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(std::abs(w[0] + w[1] + w[2] - 1.0) <= 1e-9);
  s.refs[1].cos = 0.0;
  CHECK(code_of([&] { cosine_weights(s); }) == ErrorCode::NonPositiveCosineInSet);
  s.refs.clear();
  s.k = 0;
  CHECK(code_of([&] { cosine_weights(s); }) == ErrorCode::EmptyValueSet);
}

TEST_CASE("single-vector set returns the raw coefficient exactly") {
  const auto f = planted(3);
  const auto tokens = f.vocab.encode("I vote for the party LINKE .");
  const auto trace = f.model.forward(tokens).trace;
  const auto last = static_cast<int>(tokens.size()) - 1;
  for (const auto& slot : f.toy.manifest.find("LINKE")->slots) {
    ValueVectorSet s{"LINKE", 1, {{"LINKE", slot.layer, slot.index, 0.42}}, {}, {}};
    const auto r = scale_one(f.model, trace, s, Readout::final_token, true);
    const double oracle = f.model.mlp_coefficient(slot.layer, slot.index, trace.pre_mlp(slot.layer, last));
    CHECK(r.m == oracle);
    REQUIRE(r.raw.size() == 1);
    CHECK(r.raw[0] == oracle);
  }
}

TEST_CASE("mean-over-positions readout averages the coefficient") {
  const auto f = planted(4);
  const auto tokens = f.vocab.encode("we like SPD red .");
  const auto trace = f.model.forward(tokens).trace;
  const auto slot = f.toy.manifest.find("SPD")->slots[0];
  ValueVectorSet s{"SPD", 1, {{"SPD", slot.layer, slot.index, 1.0}}, {}, {}};
  double oracle = 0;
  for (int pos = 0; pos < static_cast<int>(tokens.size()); ++pos) {
    oracle += f.model.mlp_coefficient(slot.layer, slot.index, trace.pre_mlp(slot.layer, pos));
  }
  oracle /= static_cast<double>(tokens.size());
  CHECK(scale_one(f.model, trace, s, Readout::mean_over_positions, false).m == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("constant coefficients give that constant for any cosine weights") {
  auto f = planted(5);
  // Copy one key row into two other rows of the same layer so all three fire equally.
  auto weights = f.toy.weights;
  const auto name = Model::weight_name(2, "mlp_k");
  const auto& k = weights.get(name);
  std::vector<float> data(k.data().begin(), k.data().end());
  const auto d = static_cast<std::size_t>(f.config.d_model);
  for (std::size_t row : {4u, 9u}) std::copy(data.begin(), data.begin() + static_cast<long>(d), data.begin() + static_cast<long>(row * d));
  weights.insert_or_assign(name, Tensor(k.shape(), data));
  const Model model(f.config, weights);
  const auto trace = model.forward(f.vocab.encode("I vote for the party CDU")).trace;
  ValueVectorSet s{"CDU", 3, {{"CDU", 2, 1, 0.7}, {"CDU", 2, 5, 0.2}, {"CDU", 2, 10, 0.05}}, {}, {}};
  const auto r = scale_one(model, trace, s, Readout::final_token, true);
  CHECK(r.raw[0] == r.raw[1]);
  CHECK(r.raw[1] == r.raw[2]);
  CHECK(std::abs(r.m - r.raw[0]) <= 1e-12 * std::max(1.0, std::abs(r.raw[0])));
}

TEST_CASE("planted markers raise m for their party") {
  const auto f = planted(6);
  std::vector<ValueVectorSet> sets;
  for (const auto& p : kParties) sets.push_back(planted_set(f, p));
  std::vector<PromptItem> prompts;
  std::uint64_t id = 0;
  for (const auto& p : kParties) {
    prompts.push_back({id++, 0, "we like " + p + " . I vote for the party"});
  }
  prompts.push_back({id++, 0, "we like links . I vote for the party"});
  prompts.push_back({id++, 0, "we like red blue . I vote for the party"});
  const auto records = scan(f.model, f.vocab, sets, prompts);
  REQUIRE(records.size() == prompts.size() * kParties.size());
  for (const auto& r : records) CHECK(r.m >= 0.0);  // relu model

  for (std::size_t n = 0; n < kParties.size(); ++n) {
    double match = 0, other = 0;
    int others = 0;
    for (const auto& r : records) {
      if (r.party != kParties[n]) continue;
      if (r.persona_id == n) {
        match = r.m;
      } else {
        other += r.m;
        ++others;
      }
    }
    CHECK(match > other / others);
  }
  // The trigger word alone lifts LINKE over the neutral prompt.
  double trig = 0, neutral = 0;
  for (const auto& r : records) {
    if (r.party != "LINKE") continue;
    if (r.persona_id == 6) trig = r.m;
    if (r.persona_id == 7) neutral = r.m;
  }
  CHECK(trig > neutral);
}

TEST_CASE("scan is deterministic across thread counts; CSV and cube round trip") {
  const auto f = planted(7);
  std::vector<ValueVectorSet> sets;
  for (const auto& p : kParties) sets.push_back(planted_set(f, p));
  std::vector<PromptItem> prompts;
  for (std::uint64_t p = 0; p < 5; ++p) {
    for (int j = 0; j < 2; ++j) prompts.push_back({p * 3, j, "we like " + kParties[p] + (j ? " red" : " blue")});
  }
  ScanOptions one, many;
  many.threads = 3;
  const auto a = scan(f.model, f.vocab, sets, prompts, one);
  const auto b = scan(f.model, f.vocab, sets, prompts, many);
  CHECK(a == b);

  const auto back = records_from_csv(parse_csv(records_to_csv(a, "# test", true)));
  CHECK(back == a);
  const auto lean = records_from_csv(parse_csv(records_to_csv(a, "# test", false)));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(lean[i].m == a[i].m);

  const std::vector<std::uint64_t> ids{0, 3, 6, 9, 12};
  const auto cube = group_matrix(a, ids, {0, 1}, kParties);
  for (const auto& r : a) {
    const auto p = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), r.persona_id) - ids.begin());
    const auto n = static_cast<std::size_t>(std::find(kParties.begin(), kParties.end(), r.party) - kParties.begin());
    CHECK(cube.at(p, static_cast<std::size_t>(r.variant_id), n) == r.m);
  }
}

TEST_CASE("group_matrix completeness") {
  std::vector<ScalingRecord> recs;
  for (std::uint64_t p : {10u, 20u}) {
    for (const auto& n : kParties) recs.push_back({p, 0, n, static_cast<double>(p), {}});
  }
  const auto cube = group_matrix(recs, {10, 20}, {0}, kParties);
  CHECK(cube.personas().size() == 2);
  CHECK(cube.parties().size() == 6);
  CHECK(cube.at(1, 0, 5) == 20.0);

  auto dup = recs;
  dup.push_back(recs[0]);
  CHECK(code_of([&] { group_matrix(dup, {10, 20}, {0}, kParties); }) == ErrorCode::DuplicateCell);
  auto missing = recs;
  missing.pop_back();
  CHECK(code_of([&] { group_matrix(missing, {10, 20}, {0}, kParties); }) == ErrorCode::IncompleteCube);
}
