#include "partyvec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "partyvec/analytics.hpp"
#include "partyvec/corpus.hpp"
#include "partyvec/csv.hpp"
#include "partyvec/error.hpp"
#include "partyvec/model.hpp"
#include "partyvec/persona.hpp"
#include "partyvec/probe.hpp"
#include "partyvec/regression.hpp"
#include "partyvec/rng.hpp"
#include "partyvec/scaling.hpp"
#include "partyvec/tensor_store.hpp"
#include "partyvec/toy_model.hpp"
#include "partyvec/vector_extract.hpp"
#include "partyvec/vocabulary.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace partyvec {

// ---------------------------------------------------------------- config

json RunConfig::defaults() {
  return json::parse(R"({
    "seed": 1,
    "model_name": "toy",
    "parties": ["AfD", "CDU", "FDP", "SPD", "GRÜNE", "LINKE"],
    "party_triggers": {},
    "paths": {"grid": null, "variants": null, "survey": null, "model": null, "corpus": null, "heldout_corpus": null},
    "model": {"layers": 8, "d_model": 32, "d_mlp": 64, "heads": 4, "max_seq": 128, "activation": "relu"},
    "plant": {"per_party": 4, "value_gain": 0.4, "value_noise": 0.1, "key_gain": 0.75, "party_norm": 3.5,
              "trigger_noise": 0.1, "trigger_gain": 1.0, "copy_gain": 0.2, "mlp_value_scale": 0.3, "min_layer": 1, "max_layer": 0,
              "reserve_subspace": true},
    "corpus": {"size": 600, "heldout_size": 300, "min_per_party": 10},
    "probe": {"lr": 0.001, "lr_min": 0.00001, "epochs": 200, "dropout": 0.1, "val_fraction": 0.2, "use_bias": true},
    "extract": {"k": 4, "mode": "global", "bottom_k": 4},
    "personas": {"subsample": 200, "weighted": true},
    "scan": {"readout": "final", "threads": 1, "keep_raw": true},
    "analytics": {"ground": "unit", "axis": ["LINKE", "GRÜNE", "SPD", "FDP", "CDU", "AfD"], "alpha": 0.05},
    "gates": {"min_auc": 0.95, "min_recovery": 0.5, "decomposition_tol": 1e-5, "decomposition_states": 20},
    "stages": {}
  })");
}

RunConfig RunConfig::load(const fs::path& file, const std::optional<fs::path>& out,
                          const std::optional<std::uint64_t>& seed) {
  json user;
  try {
    user = json::parse(read_text_file(file));
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, file.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::InvalidConfig, std::string("cannot read config: ") + e.what());
  }
  return from_json(user, fs::absolute(file).parent_path(), out, seed);
}

RunConfig RunConfig::from_json(const json& user, const fs::path& base, const std::optional<fs::path>& out,
                               const std::optional<std::uint64_t>& seed) {
  if (!user.is_object()) fail(ErrorCode::InvalidConfig, "config must be a JSON object");
  RunConfig c;
  c.base_ = base;
  c.tree_ = defaults();
  c.tree_.merge_patch(user);
  if (seed) c.tree_["seed"] = *seed;

  if (out) {
    c.out_ = fs::absolute(*out);
  } else if (c.tree_.contains("out") && c.tree_["out"].is_string()) {
    c.out_ = fs::absolute(base / c.tree_["out"].get<std::string>());
  } else {
    fail(ErrorCode::InvalidConfig, "no output directory: pass --out or set \"out\"");
  }
  c.out_ = c.out_.lexically_normal();

  json hashed = c.tree_;
  hashed.erase("out");
  hashed.erase("stages");
  c.hash_ = hex64(fnv1a64(hashed.dump()));
  return c;
}

const json& RunConfig::at(const std::string& section) const {
  if (!tree_.contains(section)) fail(ErrorCode::InvalidConfig, "missing config section '" + section + "'");
  return tree_.at(section);
}

std::uint64_t RunConfig::seed() const {
  const auto& s = at("seed");
  if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
    fail(ErrorCode::InvalidConfig, "seed must be a nonnegative integer");
  }
  return s.get<std::uint64_t>();
}

std::vector<std::string> RunConfig::parties() const {
  try {
    auto p = at("parties").get<std::vector<std::string>>();
    if (p.empty()) fail(ErrorCode::InvalidConfig, "party list is empty");
    std::set<std::string> unique(p.begin(), p.end());
    if (unique.size() != p.size()) fail(ErrorCode::InvalidConfig, "duplicate party names");
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("parties: ") + e.what());
  }
}

bool RunConfig::has_path(const std::string& key) const {
  const auto& paths = at("paths");
  return paths.contains(key) && paths[key].is_string() && !paths[key].get<std::string>().empty();
}

fs::path RunConfig::path(const std::string& key) const {
  if (!has_path(key)) fail(ErrorCode::InvalidConfig, "paths." + key + " is not set");
  return (base_ / at("paths")[key].get<std::string>()).lexically_normal();
}

bool RunConfig::stage_enabled(const std::string& stage) const {
  const auto& st = at("stages");
  return !st.contains(stage) || st[stage].get<bool>();
}

void RunConfig::validate() const {
  try {
    seed();
    parties();
    ModelConfig mc = ModelConfig::from_json([&] {
      json m = at("model");
      m["vocab_size"] = static_cast<int>(parties().size()) + 2;
      return m;
    }());
    (void)mc;
    for (const auto& key : {"grid", "variants"}) {
      if (!has_path(key)) fail(ErrorCode::InvalidConfig, std::string("paths.") + key + " is required");
      if (!fs::exists(path(key))) fail(ErrorCode::InvalidConfig, "paths." + std::string(key) + " not found: " + path(key).string());
    }
    if (at("personas").value("weighted", true)) {
      if (!has_path("survey")) fail(ErrorCode::InvalidConfig, "persona weighting is enabled but paths.survey is not set");
      if (!fs::exists(path("survey"))) fail(ErrorCode::InvalidConfig, "survey CSV not found: " + path("survey").string());
    }
    for (const auto& key : {"model", "corpus", "heldout_corpus"}) {
      if (has_path(key) && !fs::exists(path(key))) fail(ErrorCode::InvalidConfig, "paths." + std::string(key) + " not found");
    }
    if (at("extract").at("k").get<int>() < 1) fail(ErrorCode::InvalidConfig, "extract.k must be >= 1");
    if (at("personas").at("subsample").get<long long>() < 0) fail(ErrorCode::InvalidConfig, "personas.subsample < 0");
    const double alpha = at("analytics").at("alpha").get<double>();
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidConfig, "analytics.alpha must be in (0,1)");
    const auto ground = at("analytics").at("ground").get<std::string>();
    if (ground != "unit" && ground != "ordered") fail(ErrorCode::InvalidConfig, "analytics.ground must be unit or ordered");
    readout_from_string(at("scan").at("readout").get<std::string>());
    select_mode_from_string(at("extract").at("mode").get<std::string>());
    ProbeHyper::from_json(at("probe"));
    for (const auto& [stage, on] : at("stages").items()) {
      const auto& names = pipeline_stages();
      if (std::find(names.begin(), names.end(), stage) == names.end()) {
        fail(ErrorCode::InvalidConfig, "unknown stage toggle '" + stage + "'");
      }
      if (!on.is_boolean()) fail(ErrorCode::InvalidConfig, "stage toggle '" + stage + "' must be boolean");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------- logging

void Logger::log(const std::string& level, const std::string& stage, const std::string& message) const {
  if (quiet) return;
  if (json) {
    ordered_json j;
    j["level"] = level;
    j["stage"] = stage;
    j["msg"] = message;
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "[" << stage << "] " << (level == "info" ? "" : level + ": ") << message << "\n";
  }
}

// ---------------------------------------------------------------- helpers

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {"gen-corpus", "gen-toy-model", "record",      "train-probe",
                                                  "extract",    "personas",      "scan",        "analyze",
                                                  "sensitivity", "regress",      "report"};
  return stages;
}

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (err == nullptr) return 1;
  switch (err->code()) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::SizeTooSmall:
    case ErrorCode::KTooLarge:
    case ErrorCode::PlantCollision:
    case ErrorCode::EmptyVariable:
    case ErrorCode::UnboundPlaceholder:
      return 2;
    case ErrorCode::IoError:
    case ErrorCode::MissingArtifact:
    case ErrorCode::HashMismatch:
      return 3;
    case ErrorCode::NonFiniteValue:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::ZeroNormVector:
    case ErrorCode::RankDeficient:
    case ErrorCode::InsufficientData:
      return 5;
    case ErrorCode::GateFailed:
      return 6;
    default:
      return 4;
  }
}

void write_corpus(const fs::path& file, std::uint64_t seed, const std::vector<std::string>& parties,
                  std::size_t size, std::size_t min_per_party, const std::string& comment) {
  const auto corpus = gen_corpus(seed, parties, size, min_per_party);
  corpus.validate(parties, min_per_party);
  write_text_file(file, corpus_to_csv(corpus, comment));
}

namespace {

std::string file_hash(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return hex64(fnv1a64(std::span<const std::uint8_t>(bytes)));
}

void write_json(const fs::path& p, const ordered_json& j) { write_text_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text_file(p));
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, p.string() + ": " + e.what());
  }
}

bool inside(const fs::path& p, const fs::path& dir) {
  const auto rel = p.lexically_normal().lexically_relative(dir);
  return !rel.empty() && *rel.begin() != "..";
}

std::string slug(const std::string& party) {
  std::string s;
  for (char c : party) s += (c == '/' || c == '\\' || c == ' ') ? '_' : c;
  return s;
}

struct Gate {
  std::string name;
  bool passed = true;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;

  ordered_json to_json() const {
    ordered_json j;
    j["name"] = name;
    j["passed"] = passed;
    j["value"] = value;
    j["threshold"] = threshold;
    j["detail"] = detail;
    return j;
  }
};

struct StageResult {
  std::vector<fs::path> outputs;
  std::vector<Gate> gates;
};

template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(t);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t w = 0; w < t; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b >= e) break;
      pool.emplace_back([&, w, b, e] {
        try {
          for (std::size_t i = b; i < e; ++i) body(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

// ---------------------------------------------------------------- context

struct Pipeline::Context {
  const RunConfig& cfg;
  const Logger& log;
  std::string stage;

  fs::path out(const fs::path& rel) const { return cfg.out() / rel; }

  std::string comment(const std::string& schema) const {
    return "# partyvec schema=" + schema + " stage=" + stage + " config_hash=" + cfg.hash();
  }

  ordered_json json_header(const std::string& schema) const {
    ordered_json j;
    j["schema"] = schema;
    j["config_hash"] = cfg.hash();
    return j;
  }

  void prepare(const fs::path& file) const {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + file.parent_path().string() + ": " + ec.message());
  }

  fs::path model_dir() const { return cfg.has_path("model") ? cfg.path("model") : out("model"); }
  fs::path train_corpus() const { return cfg.has_path("corpus") ? cfg.path("corpus") : out("corpus/train.csv"); }
  std::optional<fs::path> heldout_corpus() const {
    if (cfg.has_path("heldout_corpus")) return cfg.path("heldout_corpus");
    if (cfg.has_path("corpus")) return std::nullopt;
    return out("corpus/heldout.csv");
  }

  std::shared_ptr<Model> model_cache;
  const Model& model() {
    if (!model_cache) {
      model_cache = std::make_shared<Model>(Model::load(model_dir() / "weights.pvt", model_dir() / "config.json"));
    }
    return *model_cache;
  }
  Vocabulary vocab() const { return Vocabulary::load(model_dir() / "vocab.txt"); }

  PersonaGrid grid() const { return PersonaGrid::load(cfg.path("grid")); }
  std::vector<PromptVariant> variants() const { return load_variants(cfg.path("variants")); }

  std::vector<Persona> personas(const PersonaGrid& g) const {
    const auto table = read_csv(out("personas/personas.csv"));
    const auto id_col = table.require_column("persona_id");
    const auto w_col = table.require_column("weight");
    std::vector<Persona> ps;
    for (const auto& row : table.rows) {
      Persona p;
      try {
        p.id = std::stoull(row[id_col]);
        p.weight = std::stod(row[w_col]);
      } catch (const std::exception&) {
        fail(ErrorCode::MalformedCsv, "personas.csv: bad row");
      }
      p.assignment = g.assignment_of(p.id);
      ps.push_back(std::move(p));
    }
    return ps;
  }

  std::vector<ScalingRecord> records() const { return records_from_csv(read_csv(out("scan/records.csv"))); }

  std::vector<ValueVectorSet> value_sets() const {
    const auto j = read_json(out("vectors/value_vectors.json"));
    std::vector<ValueVectorSet> sets;
    for (const auto& s : j.at("sets")) sets.push_back(ValueVectorSet::from_json(s));
    return sets;
  }

  GroundMetric ground(const std::string& kind) const {
    if (kind == "unit") return GroundMetric::unit();
    return GroundMetric::ordered(cfg.at("analytics").at("axis").get<std::vector<std::string>>());
  }
};

namespace {

// ---------------------------------------------------------------- stages

using Ctx = Pipeline::Context;

std::vector<std::string> prompt_words(const PersonaGrid& grid, const std::vector<PromptVariant>& variants) {
  std::vector<std::string> words;
  for (const auto& v : grid.variables()) {
    for (const auto& value : v.values) {
      for (auto& w : split_words(value)) words.push_back(std::move(w));
    }
  }
  for (const auto& variant : variants) {
    std::string text = variant.text;
    for (const auto& ph : placeholders(variant.text)) {
      const std::string token = "{" + ph + "}";
      for (std::size_t pos; (pos = text.find(token)) != std::string::npos;) text.replace(pos, token.size(), " ");
    }
    for (auto& w : split_words(text)) words.push_back(std::move(w));
  }
  return words;
}

StageResult stage_gen_corpus(Ctx& c) {
  StageResult r;
  if (c.cfg.has_path("corpus")) {
    c.log.info(c.stage, "using external corpus " + c.cfg.path("corpus").string());
    return r;
  }
  const auto& sec = c.cfg.at("corpus");
  const auto parties = c.cfg.parties();
  const auto min_pp = sec.at("min_per_party").get<std::size_t>();
  const fs::path train = c.out("corpus/train.csv"), held = c.out("corpus/heldout.csv");
  c.prepare(train);
  write_corpus(train, derive_seed(c.cfg.seed(), "corpus.train"), parties, sec.at("size").get<std::size_t>(), min_pp,
               c.comment("corpus/1"));
  r.outputs.push_back(train);
  const auto held_size = sec.at("heldout_size").get<std::size_t>();
  if (held_size > 0) {
    write_corpus(held, derive_seed(c.cfg.seed(), "corpus.heldout"), parties, held_size, 1, c.comment("corpus/1"));
    r.outputs.push_back(held);
  }
  c.log.info(c.stage, "wrote " + std::to_string(sec.at("size").get<std::size_t>()) + " training statements");
  return r;
}

StageResult stage_gen_toy_model(Ctx& c) {
  StageResult r;
  if (c.cfg.has_path("model")) {
    c.log.info(c.stage, "using external model " + c.cfg.path("model").string());
    return r;
  }
  const auto parties = c.cfg.parties();
  const auto grid = c.grid();
  const auto variants = c.variants();

  std::vector<std::string> words = corpus_lexicon();
  for (auto& w : prompt_words(grid, variants)) words.push_back(std::move(w));
  const auto& triggers = c.cfg.at("party_triggers");
  for (const auto& [party, list] : triggers.items()) {
    if (std::find(parties.begin(), parties.end(), party) == parties.end()) {
      fail(ErrorCode::InvalidConfig, "party_triggers names unknown party '" + party + "'");
    }
    for (const auto& w : list) words.push_back(w.get<std::string>());
  }
  const auto vocab = Vocabulary::build(parties, words);

  json mj = c.cfg.at("model");
  mj["vocab_size"] = static_cast<int>(vocab.size());
  const auto mc = ModelConfig::from_json(mj);

  json pj = c.cfg.at("plant");
  pj["parties"] = json::array();
  for (const auto& p : parties) {
    std::vector<TokenId> trig;
    if (triggers.contains(p)) {
      for (const auto& w : triggers[p]) trig.push_back(vocab.require(w.get<std::string>()));
    }
    pj["parties"].push_back({{"party", p}, {"party_token", vocab.require(p)}, {"triggers", trig}});
  }
  const auto spec = PlantSpec::from_json(pj);
  const auto toy = gen_toy_model(mc, spec, derive_seed(c.cfg.seed(), "toy_model"));

  const fs::path dir = c.out("model");
  c.prepare(dir / "x");
  store_write(toy.weights, dir / "weights.pvt");
  ordered_json cj = c.json_header("model_config/1");
  cj["model"] = mc.to_json();
  cj["plant"] = spec.to_json();
  write_json(dir / "config.json", cj);
  vocab.save(dir / "vocab.txt");
  ordered_json man = c.json_header("plant_manifest/1");
  man["manifest"] = toy.manifest.to_json();
  write_json(dir / "plant_manifest.json", man);
  r.outputs = {dir / "weights.pvt", dir / "config.json", dir / "vocab.txt", dir / "plant_manifest.json"};
  c.log.info(c.stage, "vocab " + std::to_string(vocab.size()) + " tokens, " +
                          std::to_string(toy.manifest.slot_count()) + " planted slots");
  return r;
}

TensorStore record_corpus(Ctx& c, const StatementCorpus& corpus, int threads) {
  const auto& model = c.model();
  const auto vocab = c.vocab();
  const int L = model.config().layers;
  const auto d = static_cast<std::size_t>(model.config().d_model);
  const std::size_t n = corpus.rows.size();
  std::vector<std::vector<float>> means(static_cast<std::size_t>(L), std::vector<float>(n * d));
  parallel_for(n, threads, [&](std::size_t i) {
    const auto result = model.forward(vocab.encode(corpus.rows[i].prompt()));
    for (int l = 1; l <= L; ++l) {
      const auto m = result.trace.mean_post_block(l);
      std::copy(m.data().begin(), m.data().end(), means[static_cast<std::size_t>(l - 1)].begin() +
                                                      static_cast<std::ptrdiff_t>(i * d));
    }
  });
  TensorStore store;
  for (int l = 1; l <= L; ++l) {
    store.insert("mean.layer." + std::to_string(l), Tensor({n, d}, std::move(means[static_cast<std::size_t>(l - 1)])));
  }
  return store;
}

StageResult stage_record(Ctx& c) {
  StageResult r;
  const int threads = c.cfg.at("scan").at("threads").get<int>();
  const auto train = corpus_from_csv(c.train_corpus());
  train.validate(c.cfg.parties(), 1);
  c.prepare(c.out("activations/train.pvt"));
  store_write(record_corpus(c, train, threads), c.out("activations/train.pvt"));
  r.outputs.push_back(c.out("activations/train.pvt"));
  if (auto held = c.heldout_corpus()) {
    store_write(record_corpus(c, corpus_from_csv(*held), threads), c.out("activations/heldout.pvt"));
    r.outputs.push_back(c.out("activations/heldout.pvt"));
  }

  // Decomposition gate: sum of sub-updates vs direct MLP evaluation on random states.
  const auto& model = c.model();
  const auto& g = c.cfg.at("gates");
  const double tol = g.at("decomposition_tol").get<double>();
  const int states = g.at("decomposition_states").get<int>();
  Rng rng(c.cfg.seed(), "gate.decomposition");
  const auto d = static_cast<std::size_t>(model.config().d_model);
  double worst = 0.0;
  for (int l = 1; l <= model.config().layers; ++l) {
    for (int s = 0; s < states; ++s) {
      std::vector<float> x(d);
      for (auto& v : x) v = static_cast<float>(rng.normal());
      const auto direct = model.mlp(l, x);
      std::vector<double> acc(d, 0.0);
      for (const auto& su : model.mlp_sub_update(l, x)) {
        for (std::size_t k = 0; k < d; ++k) acc[k] += su.coefficient * su.value[k];
      }
      for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(acc[k] - direct[k]));
    }
  }
  r.gates.push_back({"mlp_decomposition", worst <= tol, worst, tol, "max |sum m_i v_i - MLP(x)|"});
  c.log.info(c.stage, "recorded " + std::to_string(train.rows.size()) + " training prompts");
  return r;
}

std::vector<ProbeExample> examples_from(const TensorStore& acts, const StatementCorpus& corpus, int layer,
                                        const std::string& party) {
  const auto& t = acts.get("mean.layer." + std::to_string(layer));
  if (t.rows() != corpus.rows.size()) fail(ErrorCode::ShapeMismatch, "activation rows != corpus rows");
  std::vector<ProbeExample> out;
  out.reserve(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const auto row = t.row(i);
    out.push_back({Tensor({row.size()}, std::vector<float>(row.begin(), row.end())),
                   corpus.rows[i].party == party ? 1 : 0, layer});
  }
  return out;
}

StageResult stage_train_probe(Ctx& c) {
  StageResult r;
  const auto parties = c.cfg.parties();
  const auto train = corpus_from_csv(c.train_corpus());
  const auto acts = store_read(c.out("activations/train.pvt"));
  const auto held_path = c.heldout_corpus();
  std::optional<StatementCorpus> held;
  std::optional<TensorStore> held_acts;
  if (held_path) {
    held = corpus_from_csv(*held_path);
    held_acts = store_read(c.out("activations/heldout.pvt"));
  }
  const int L = c.model().config().layers;
  auto hyper = ProbeHyper::from_json(c.cfg.at("probe"));
  hyper.seed = derive_seed(c.cfg.seed(), "probe");
  const auto [lo, hi] = probe_layer_band(L);

  ordered_json summary = c.json_header("probe_summary/1");
  summary["band"] = {lo, hi};
  summary["probes"] = ordered_json::array();
  double min_auc = 1.0;
  for (const auto& party : parties) {
    std::map<int, std::vector<ProbeExample>> by_layer;
    for (int l = lo; l <= hi; ++l) by_layer[l] = examples_from(acts, train, l, party);
    const auto probe = train_probe(by_layer, party, hyper, L);
    ordered_json extra;
    extra["config_hash"] = c.cfg.hash();
    std::optional<double> auc;
    if (held) {
      const auto ex = examples_from(*held_acts, *held, probe.layer, party);
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& e : ex) {
        scores.push_back(predict(probe, e.mean_stream.data()));
        labels.push_back(e.label);
      }
      auc = roc_auc(scores, labels);
      extra["heldout_auc"] = *auc;
      min_auc = std::min(min_auc, *auc);
    }
    const fs::path tensors = c.out("probes/" + slug(party) + ".pvt");
    const fs::path sidecar = c.out("probes/" + slug(party) + ".json");
    c.prepare(tensors);
    save_probe(probe, tensors, sidecar, extra);
    r.outputs.push_back(tensors);
    r.outputs.push_back(sidecar);
    ordered_json row;
    row["party"] = party;
    row["layer"] = probe.layer;
    row["val_f1"] = probe.val_f1;
    row["heldout_auc"] = auc ? ordered_json(*auc) : ordered_json(nullptr);
    summary["probes"].push_back(row);
    c.log.info(c.stage, party + ": layer " + std::to_string(probe.layer) + ", val F1 " + format_number(probe.val_f1) +
                            (auc ? ", held-out AUC " + format_number(*auc) : ""));
  }
  write_json(c.out("probes/summary.json"), summary);
  r.outputs.push_back(c.out("probes/summary.json"));
  if (held) {
    const double thr = c.cfg.at("gates").at("min_auc").get<double>();
    r.gates.push_back({"probe_heldout_auc", min_auc >= thr, min_auc, thr, "minimum held-out AUC over parties"});
  }
  return r;
}

StageResult stage_extract(Ctx& c) {
  StageResult r;
  const auto parties = c.cfg.parties();
  const auto& model = c.model();
  const int k = c.cfg.at("extract").at("k").get<int>();
  const int bottom = c.cfg.at("extract").at("bottom_k").get<int>();
  const auto mode = select_mode_from_string(c.cfg.at("extract").at("mode").get<std::string>());

  std::optional<PlantManifest> manifest;
  if (fs::exists(c.model_dir() / "plant_manifest.json")) {
    manifest = PlantManifest::from_json(read_json(c.model_dir() / "plant_manifest.json").at("manifest"));
    if (manifest->slot_count() == 0) manifest.reset();
  }

  ordered_json out = c.json_header("value_vectors/1");
  out["mode"] = c.cfg.at("extract").at("mode");
  out["k_requested"] = k;
  out["sets"] = ordered_json::array();
  out["bottom_k"] = ordered_json::object();
  out["zero_norm_rows"] = ordered_json::object();
  if (manifest) out["recovery"] = ordered_json::object();
  double recovery_sum = 0.0;
  for (const auto& party : parties) {
    const auto probe = load_probe(c.out("probes/" + slug(party) + ".pvt"), c.out("probes/" + slug(party) + ".json"));
    const auto scores = score_all(model, probe.weights.data(), party);
    const auto set = select_topk(scores.refs, k, mode);
    if (set.refs.empty()) fail(ErrorCode::EmptyValueSet, "no positively aligned value vector for " + party);
    if (set.k < k) c.log.warn(c.stage, party + ": only " + std::to_string(set.k) + " positive cosines");
    out["sets"].push_back(ordered_json(set.to_json()));
    ordered_json b = ordered_json::array();
    for (const auto& ref : select_bottomk(scores.refs, std::min<int>(bottom, static_cast<int>(scores.refs.size())))) {
      b.push_back({{"layer", ref.layer}, {"index", ref.index}, {"cos", ref.cos}});
    }
    out["bottom_k"][party] = b;
    out["zero_norm_rows"][party] = scores.zero_norm_rows;
    if (manifest) {
      const double rec = plant_recovery(*manifest, party, set.slots());
      out["recovery"][party] = rec;
      recovery_sum += rec;
    }
  }
  const fs::path file = c.out("vectors/value_vectors.json");
  c.prepare(file);
  write_json(file, out);
  r.outputs.push_back(file);
  if (manifest) {
    const double mean = recovery_sum / static_cast<double>(parties.size());
    const double thr = c.cfg.at("gates").at("min_recovery").get<double>();
    r.gates.push_back({"plant_recovery", mean >= thr, mean, thr, "mean planted-slot recovery in top-k"});
    c.log.info(c.stage, "mean planted-slot recovery " + format_number(mean));
  }
  return r;
}

StageResult stage_personas(Ctx& c) {
  StageResult r;
  const auto grid = c.grid();
  const auto n = c.cfg.at("personas").at("subsample").get<std::size_t>();
  auto personas = (n == 0 || n >= grid.persona_count()) ? enumerate(grid)
                                                        : subsample(grid, n, derive_seed(c.cfg.seed(), "personas"));
  const bool weighted = c.cfg.at("personas").at("weighted").get<bool>();
  ordered_json meta = c.json_header("personas_meta/1");
  meta["grid_size"] = grid.persona_count();
  meta["selected"] = personas.size();
  meta["weighted"] = weighted;
  if (weighted) {
    const auto report = load_weights(grid, personas, read_csv(c.cfg.path("survey")));
    meta["survey_total_weight"] = report.total_csv_weight;
    meta["matched_weight"] = report.matched_weight;
    meta["unmatched_rows"] = report.unmatched_rows;
    std::size_t zero = 0;
    for (const auto& p : personas) zero += p.weight == 0.0 ? 1 : 0;
    meta["zero_weight_personas"] = zero;
    if (zero == personas.size()) fail(ErrorCode::AllNonPositive, "no selected persona matches the survey");
    c.log.info(c.stage, std::to_string(personas.size() - zero) + " of " + std::to_string(personas.size()) +
                            " personas matched survey rows");
  }
  std::string text = c.comment("personas/1") + "\n";
  std::vector<std::string> header{"persona_id"};
  for (const auto& v : grid.variables()) header.push_back(v.name);
  header.push_back("weight");
  text += csv_line(header);
  for (const auto& p : personas) {
    std::vector<std::string> row{std::to_string(p.id)};
    for (std::size_t v = 0; v < grid.size(); ++v) row.push_back(p.value(grid, v));
    row.push_back(format_number(p.weight));
    text += csv_line(row);
  }
  const fs::path file = c.out("personas/personas.csv");
  c.prepare(file);
  write_text_file(file, text);
  write_json(c.out("personas/meta.json"), meta);
  r.outputs = {file, c.out("personas/meta.json")};
  return r;
}

StageResult stage_scan(Ctx& c) {
  StageResult r;
  const auto grid = c.grid();
  const auto variants = c.variants();
  for (const auto& v : variants) check_variant(grid, v);
  const auto personas = c.personas(grid);
  const auto sets = c.value_sets();
  std::vector<PromptItem> prompts;
  for (const auto& p : personas) {
    for (const auto& v : variants) prompts.push_back({p.id, v.id, render(grid, p, v)});
  }
  ScanOptions opt;
  opt.readout = readout_from_string(c.cfg.at("scan").at("readout").get<std::string>());
  opt.threads = c.cfg.at("scan").at("threads").get<int>();
  opt.keep_raw = c.cfg.at("scan").at("keep_raw").get<bool>();
  const auto vocab = c.vocab();
  std::size_t unknown = 0;
  for (const auto& p : prompts) {
    for (auto t : vocab.encode(p.text)) unknown += t == Vocabulary::kUnk ? 1 : 0;
  }
  if (unknown > 0) c.log.warn(c.stage, std::to_string(unknown) + " prompt tokens map to <unk>");
  const auto records = scan(c.model(), vocab, sets, prompts, opt);

  double worst = 0.0;
  for (const auto& s : sets) {
    double sum = 0.0;
    for (double w : cosine_weights(s)) sum += w;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  r.gates.push_back({"cosine_weights_normalized", worst <= 1e-9, worst, 1e-9, "max |sum of cosine weights - 1|"});

  const fs::path file = c.out("scan/records.csv");
  c.prepare(file);
  write_text_file(file, records_to_csv(records, c.comment("scaling_records/1"), opt.keep_raw));
  r.outputs.push_back(file);
  c.log.info(c.stage, std::to_string(prompts.size()) + " prompts, " + std::to_string(records.size()) + " records");
  return r;
}

std::string group_variable(const GroupKey& g) { return g.variable.value_or(""); }
std::string group_value(const GroupKey& g) { return g.value.value_or(""); }

StageResult stage_analyze(Ctx& c) {
  StageResult r;
  const auto grid = c.grid();
  const auto parties = c.cfg.parties();
  const auto personas = c.personas(grid);
  const auto records = c.records();
  const bool weighted = c.cfg.at("personas").at("weighted").get<bool>();
  std::optional<CsvTable> survey;
  if (c.cfg.has_path("survey")) survey = read_csv(c.cfg.path("survey"));

  std::vector<GroupKey> groups{GroupKey::all()};
  for (auto& g : all_levels(grid)) groups.push_back(std::move(g));

  ordered_json psi = c.json_header("psi/1");
  psi["weighted"] = weighted;
  psi["scopes"] = ordered_json::array();
  psi["excluded"] = ordered_json::array();
  std::string csv = c.comment("entropy/1") + "\n" + csv_line({"group", "variable", "value", "source", "h_norm"});
  double worst = 0.0;
  for (const auto& g : groups) {
    ordered_json scope;
    scope["group"] = g.label();
    try {
      const auto latent = build_psi(records, grid, personas, parties, g, weighted);
      latent.validate();
      double sum = 0.0;
      for (double p : latent.probs) sum += p;
      worst = std::max(worst, std::abs(sum - 1.0));
      scope["latent"] = latent.to_json();
      scope["latent_h_norm"] = entropy(latent);
      csv += csv_line({g.label(), group_variable(g), group_value(g), "latent", format_number(entropy(latent))});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyGroup && e.code() != ErrorCode::AllNonPositive) throw;
      psi["excluded"].push_back(g.label() + ": " + e.what());
      c.log.warn(c.stage, "latent psi excluded for " + g.label() + ": " + e.what());
    }
    if (survey) {
      try {
        const auto base = survey_baseline(*survey, parties, g);
        scope["survey"] = base.to_json();
        scope["survey_h_norm"] = entropy(base);
        csv += csv_line({g.label(), group_variable(g), group_value(g), "survey", format_number(entropy(base))});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyGroup) throw;
        c.log.warn(c.stage, "no survey rows for " + g.label());
      }
    }
    psi["scopes"].push_back(scope);
  }
  r.gates.push_back({"psi_simplex", worst <= 1e-9, worst, 1e-9, "max |sum psi - 1|"});
  const fs::path dir = c.out("analytics");
  c.prepare(dir / "x");
  write_json(dir / "psi.json", psi);
  write_text_file(dir / "entropy.csv", csv);
  r.outputs = {dir / "psi.json", dir / "entropy.csv"};
  return r;
}

StageResult stage_sensitivity(Ctx& c) {
  StageResult r;
  const auto grid = c.grid();
  const auto parties = c.cfg.parties();
  const auto personas = c.personas(grid);
  const auto records = c.records();
  const auto variants = c.variants();
  const bool weighted = c.cfg.at("personas").at("weighted").get<bool>();
  const std::string primary = c.cfg.at("analytics").at("ground").get<std::string>();
  std::vector<int> ids;
  for (const auto& v : variants) ids.push_back(v.id);
  std::vector<GroupKey> groups{GroupKey::all()};
  for (auto& g : all_levels(grid)) groups.push_back(std::move(g));

  ordered_json fit = c.json_header("sensitivity_fit/1");
  fit["ground"] = primary;
  fit["ground_unit"] = c.ground("unit").label();
  fit["ground_ordered"] = c.ground("ordered").label();
  fit["warnings"] = ordered_json::array();

  std::string csv = c.comment("sensitivity/1") + " ground=" + primary + "\n" +
                    csv_line({"group", "variant", "h_norm", "w", "w_unit", "w_ordered"});
  std::vector<double> hs, ws;
  std::size_t excluded = 0;
  try {
    const auto unit = sensitivity_table(records, grid, personas, parties, groups, ids, c.ground("unit"), weighted);
    const auto ordered =
        sensitivity_table(records, grid, personas, parties, groups, ids, c.ground("ordered"), weighted);
    excluded = unit.excluded.size();
    for (std::size_t i = 0; i < unit.rows.size(); ++i) {
      const auto& u = unit.rows[i];
      const auto& o = ordered.rows[i];
      const double w = primary == "unit" ? u.w : o.w;
      hs.push_back(u.h_norm);
      ws.push_back(w);
      csv += csv_line({u.group.label(), std::to_string(u.variant), format_number(u.h_norm), format_number(w),
                       format_number(u.w), format_number(o.w)});
    }
    for (const auto& e : unit.excluded) fit["warnings"].push_back("excluded cell " + e);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoValidCells) throw;
    fit["warnings"].push_back("no valid (group, variant) cells");
    c.log.warn(c.stage, "sensitivity table is empty");
  }
  fit["rows"] = hs.size();
  fit["excluded_cells"] = excluded;
  try {
    std::vector<std::vector<double>> X;
    for (double h : hs) X.push_back({1.0, h});
    const auto res = ols(ws, X, {"(intercept)", "h_norm"});
    fit["n"] = res.n;
    fit["intercept"] = res.beta[0];
    fit["slope"] = res.beta[1];
    fit["slope_se"] = res.se[1];
    fit["slope_p"] = res.p[1];
    fit["r2"] = res.r2;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientData && e.code() != ErrorCode::RankDeficient) throw;
    fit["n"] = hs.size();
    fit["intercept"] = nullptr;
    fit["slope"] = nullptr;
    fit["slope_se"] = nullptr;
    fit["slope_p"] = nullptr;
    fit["r2"] = nullptr;
    fit["warnings"].push_back(std::string("no fit: ") + e.what());
    c.log.warn(c.stage, std::string("W on H_norm not fitted: ") + e.what());
  }
  const fs::path dir = c.out("analytics");
  c.prepare(dir / "x");
  write_text_file(dir / "sensitivity.csv", csv);
  write_json(dir / "sensitivity_fit.json", fit);
  r.outputs = {dir / "sensitivity.csv", dir / "sensitivity_fit.json"};
  return r;
}

StageResult stage_regress(Ctx& c) {
  StageResult r;
  const auto grid = c.grid();
  const auto records = c.records();
  const double alpha = c.cfg.at("analytics").at("alpha").get<double>();
  ordered_json summary = c.json_header("regression/1");
  summary["alpha"] = alpha;
  summary["parties"] = ordered_json::array();
  const fs::path dir = c.out("analytics");
  c.prepare(dir / "x");
  for (const auto& party : c.cfg.parties()) {
    const auto g = group_regression(records, grid, party, alpha);
    std::string csv = c.comment("regression/1") + " party=" + party + "\n" +
                      csv_line({"term", "beta", "se", "t", "p", "significant"});
    const auto& f = g.full;
    for (std::size_t j = 0; j < f.names.size(); ++j) {
      csv += csv_line({f.names[j], format_number(f.beta[j]), format_number(f.se[j]), format_number(f.t[j]),
                       format_number(f.p[j]), f.p[j] <= alpha ? "1" : "0"});
    }
    const fs::path file = dir / ("regression_" + slug(party) + ".csv");
    write_text_file(file, csv);
    r.outputs.push_back(file);
    ordered_json row;
    row["party"] = party;
    row["n"] = f.n;
    row["dof"] = f.dof;
    row["r2"] = f.r2;
    row["coefficients"] = f.names.size();
    row["significant"] = ordered_json::array();
    for (auto j : g.significant) row["significant"].push_back(f.names[j]);
    row["warnings"] = g.warnings;
    summary["parties"].push_back(row);
    for (const auto& w : g.warnings) c.log.warn(c.stage, party + ": " + w);
  }
  write_json(dir / "regression.json", summary);
  r.outputs.push_back(dir / "regression.json");
  return r;
}

StageResult stage_report(Ctx& c) {
  StageResult r;
  const auto parties = c.cfg.parties();
  const fs::path dir = c.out("report");
  c.prepare(dir / "x");
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file(dir / name, text);
    r.outputs.push_back(dir / name);
    files.push_back(name);
  };

  // Figure 1: entropy by group, latent vs survey.
  {
    const auto t = read_csv(c.out("analytics/entropy.csv"));
    std::string csv = c.comment("fig1/1") + "\n" + csv_line(t.header);
    for (const auto& row : t.rows) csv += csv_line(row);
    emit("fig1_entropy_by_group.csv", csv);
  }

  // Figure 2: all-persona psi vs survey baseline.
  const auto psi = read_json(c.out("analytics/psi.json"));
  ordered_json psi_all;
  {
    std::string csv = c.comment("fig2/1") + "\n" + csv_line({"model", "party", "latent", "survey"});
    for (const auto& scope : psi.at("scopes")) {
      if (scope.at("group") != "all") continue;
      psi_all = scope;
      for (std::size_t n = 0; n < parties.size(); ++n) {
        const std::string lat = scope.contains("latent") ? format_number(scope["latent"]["probs"][n].get<double>()) : "";
        const std::string sur = scope.contains("survey") ? format_number(scope["survey"]["probs"][n].get<double>()) : "";
        csv += csv_line({c.cfg.at("model_name").get<std::string>(), parties[n], lat, sur});
      }
    }
    emit("fig2_psi_vs_baseline.csv", csv);
  }

  // Figure 4: entropy vs Wasserstein scatter with the fitted line.
  const auto fit = read_json(c.out("analytics/sensitivity_fit.json"));
  {
    const auto t = read_csv(c.out("analytics/sensitivity.csv"));
    const auto gc = t.require_column("group"), vc = t.require_column("variant"), hc = t.require_column("h_norm"),
               wc = t.require_column("w");
    std::string head = c.comment("fig4/1") + " ground=" + fit.at("ground").get<std::string>();
    if (!fit.at("slope").is_null()) {
      head += " intercept=" + format_number(fit["intercept"].get<double>()) +
              " slope=" + format_number(fit["slope"].get<double>());
    }
    std::string csv = head + "\n" + csv_line({"group", "variant", "h_norm", "w"});
    for (const auto& row : t.rows) csv += csv_line({row[gc], row[vc], row[hc], row[wc]});
    if (t.rows.empty()) c.log.warn(c.stage, "sensitivity table empty; scatter has header only");
    emit("fig4_entropy_vs_w.csv", csv);
  }

  // Appendix B: significant coefficients per party.
  const auto reg = read_json(c.out("analytics/regression.json"));
  const double alpha = reg.at("alpha").get<double>();
  for (const auto& party : parties) {
    const auto t = read_csv(c.out("analytics/regression_" + slug(party) + ".csv"));
    const auto term = t.require_column("term"), p = t.require_column("p");
    std::string csv = c.comment("appendix_b/1") + " party=" + party + " alpha=" + format_number(alpha) + "\n" +
                      csv_line({"term", "beta", "se", "t", "p"});
    for (const auto& row : t.rows) {
      if (row[term] == "(intercept)" || std::stod(row[p]) > alpha) continue;
      csv += csv_line({row[0], row[1], row[2], row[3], row[4]});
    }
    emit("appendix_b_" + slug(party) + ".csv", csv);
  }

  // Gates from every stage that produced some.
  ordered_json gates = ordered_json::array();
  bool all_passed = true;
  for (const auto& stage : pipeline_stages()) {
    const fs::path gf = c.out("gates/" + stage + ".json");
    if (!fs::exists(gf)) continue;
    const auto doc = read_json(gf);
    for (const auto& g : doc.at("gates")) {
      ordered_json row = g;
      row["stage"] = stage;
      all_passed = all_passed && g.at("passed").get<bool>();
      gates.push_back(row);
    }
  }

  ordered_json rep;
  rep["schema_version"] = 1;
  rep["config_hash"] = c.cfg.hash();
  rep["seed"] = c.cfg.seed();
  rep["model_name"] = c.cfg.at("model_name");
  rep["parties"] = parties;
  rep["model"] = read_json(c.model_dir() / "config.json").value("model", json::object());
  const auto probes = read_json(c.out("probes/summary.json"));
  rep["probes"] = probes.at("probes");
  const auto vectors = read_json(c.out("vectors/value_vectors.json"));
  ordered_json vv = ordered_json::array();
  for (const auto& s : vectors.at("sets")) {
    ordered_json row;
    row["party"] = s.at("party");
    row["k"] = s.at("k");
    row["cos_at_k"] = s.at("cos_at_k");
    row["cos_at_k_plus_1"] = s.at("cos_at_k_plus_1");
    row["recovery"] = vectors.contains("recovery") ? ordered_json(vectors["recovery"][s.at("party").get<std::string>()])
                                                   : ordered_json(nullptr);
    vv.push_back(row);
  }
  rep["value_vectors"] = vv;
  ordered_json all;
  all["latent"] = psi_all.contains("latent") ? ordered_json(psi_all["latent"]) : ordered_json(nullptr);
  all["survey"] = psi_all.contains("survey") ? ordered_json(psi_all["survey"]) : ordered_json(nullptr);
  all["latent_h_norm"] = psi_all.contains("latent_h_norm") ? ordered_json(psi_all["latent_h_norm"]) : ordered_json(nullptr);
  all["survey_h_norm"] = psi_all.contains("survey_h_norm") ? ordered_json(psi_all["survey_h_norm"]) : ordered_json(nullptr);
  rep["psi_all"] = all;
  ordered_json sens;
  for (const auto& key : {"ground", "ground_unit", "ground_ordered", "rows", "excluded_cells", "n", "intercept",
                          "slope", "slope_se", "slope_p", "r2", "warnings"}) {
    sens[key] = fit.at(key);
  }
  rep["sensitivity"] = sens;
  ordered_json regs = ordered_json::array();
  for (const auto& row : reg.at("parties")) {
    ordered_json x;
    x["party"] = row.at("party");
    x["n"] = row.at("n");
    x["r2"] = row.at("r2");
    x["significant"] = row.at("significant");
    regs.push_back(x);
  }
  rep["regressions"] = ordered_json::object({{"alpha", alpha}, {"parties", regs}});
  rep["gates"] = gates;
  rep["all_gates_passed"] = all_passed;
  files.push_back("report.json");
  rep["files"] = files;
  write_json(dir / "report.json", rep);
  r.outputs.push_back(dir / "report.json");

  ordered_json gj = c.json_header("gates/1");
  gj["all_passed"] = all_passed;
  gj["gates"] = gates;
  write_json(c.out("gates.json"), gj);
  r.outputs.push_back(c.out("gates.json"));
  return r;
}

// ---------------------------------------------------------------- stage table

struct StageSpec {
  std::string name;
  std::function<std::vector<fs::path>(Ctx&)> inputs;
  std::function<StageResult(Ctx&)> run;
};

std::vector<fs::path> model_files(Ctx& c) {
  return {c.model_dir() / "weights.pvt", c.model_dir() / "config.json", c.model_dir() / "vocab.txt"};
}

std::vector<fs::path> probe_files(Ctx& c) {
  std::vector<fs::path> v;
  for (const auto& p : c.cfg.parties()) {
    v.push_back(c.out("probes/" + slug(p) + ".pvt"));
    v.push_back(c.out("probes/" + slug(p) + ".json"));
  }
  return v;
}

const std::vector<StageSpec>& stage_table() {
  static const std::vector<StageSpec> table = {
      {"gen-corpus", [](Ctx&) { return std::vector<fs::path>{}; }, stage_gen_corpus},
      {"gen-toy-model", [](Ctx& c) { return std::vector<fs::path>{c.cfg.path("grid"), c.cfg.path("variants")}; },
       stage_gen_toy_model},
      {"record",
       [](Ctx& c) {
         auto v = model_files(c);
         v.push_back(c.train_corpus());
         if (auto h = c.heldout_corpus()) v.push_back(*h);
         return v;
       },
       stage_record},
      {"train-probe",
       [](Ctx& c) {
         std::vector<fs::path> v{c.train_corpus(), c.out("activations/train.pvt"), c.model_dir() / "config.json"};
         if (auto h = c.heldout_corpus()) {
           v.push_back(*h);
           v.push_back(c.out("activations/heldout.pvt"));
         }
         return v;
       },
       stage_train_probe},
      {"extract",
       [](Ctx& c) {
         auto v = model_files(c);
         for (auto& p : probe_files(c)) v.push_back(p);
         if (fs::exists(c.model_dir() / "plant_manifest.json")) v.push_back(c.model_dir() / "plant_manifest.json");
         return v;
       },
       stage_extract},
      {"personas",
       [](Ctx& c) {
         std::vector<fs::path> v{c.cfg.path("grid")};
         if (c.cfg.at("personas").at("weighted").get<bool>()) v.push_back(c.cfg.path("survey"));
         return v;
       },
       stage_personas},
      {"scan",
       [](Ctx& c) {
         auto v = model_files(c);
         v.push_back(c.cfg.path("grid"));
         v.push_back(c.cfg.path("variants"));
         v.push_back(c.out("personas/personas.csv"));
         v.push_back(c.out("vectors/value_vectors.json"));
         return v;
       },
       stage_scan},
      {"analyze",
       [](Ctx& c) {
         std::vector<fs::path> v{c.cfg.path("grid"), c.out("personas/personas.csv"), c.out("scan/records.csv")};
         if (c.cfg.has_path("survey")) v.push_back(c.cfg.path("survey"));
         return v;
       },
       stage_analyze},
      {"sensitivity",
       [](Ctx& c) {
         return std::vector<fs::path>{c.cfg.path("grid"), c.cfg.path("variants"), c.out("personas/personas.csv"),
                                      c.out("scan/records.csv")};
       },
       stage_sensitivity},
      {"regress",
       [](Ctx& c) { return std::vector<fs::path>{c.cfg.path("grid"), c.out("scan/records.csv")}; }, stage_regress},
      {"report",
       [](Ctx& c) {
         std::vector<fs::path> v{c.out("analytics/entropy.csv"),        c.out("analytics/psi.json"),
                                 c.out("analytics/sensitivity.csv"),    c.out("analytics/sensitivity_fit.json"),
                                 c.out("analytics/regression.json"),    c.out("probes/summary.json"),
                                 c.out("vectors/value_vectors.json"),   c.model_dir() / "config.json"};
         for (const auto& p : c.cfg.parties()) v.push_back(c.out("analytics/regression_" + slug(p) + ".csv"));
         for (const auto& s : pipeline_stages()) {
           if (fs::exists(c.out("gates/" + s + ".json"))) v.push_back(c.out("gates/" + s + ".json"));
         }
         return v;
       },
       stage_report},
  };
  return table;
}

const StageSpec& find_stage(const std::string& name) {
  for (const auto& s : stage_table()) {
    if (s.name == name) return s;
  }
  fail(ErrorCode::InvalidConfig, "unknown stage '" + name + "'");
}

std::string rel_key(const fs::path& p, const fs::path& out) {
  return inside(p, out) ? p.lexically_normal().lexically_relative(out).generic_string() : p.generic_string();
}

/// Embedded config hash of a CSV or JSON artifact; nullopt for other formats.
std::optional<std::string> embedded_hash(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".csv") {
    const auto text = read_text_file(p);
    const auto line = text.substr(0, text.find('\n'));
    const auto pos = line.find("config_hash=");
    if (line.rfind("#", 0) != 0 || pos == std::string::npos) return std::string{};
    const auto start = pos + std::string("config_hash=").size();
    return line.substr(start, line.find(' ', start) - start);
  }
  if (ext == ".json") {
    const auto j = read_json(p);
    return j.is_object() && j.contains("config_hash") ? j["config_hash"].get<std::string>() : std::string{};
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(RunConfig config, Logger logger, bool force)
    : config_(std::move(config)), logger_(logger), force_(force) {}

StageOutcome Pipeline::run_stage(const std::string& stage) {
  try {
    return execute(stage);
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string code_prefix = std::string(to_string(e.code())) + ": ";
    if (msg.rfind(code_prefix, 0) == 0) msg.erase(0, code_prefix.size());
    throw Error(e.code(), stage + ": " + msg);
  }
}

StageOutcome Pipeline::execute(const std::string& stage) {
  const auto& spec = find_stage(stage);
  Context ctx{config_, logger_, stage, nullptr};
  const fs::path stamp_file = config_.out() / ".stamps" / (stage + ".json");
  const fs::path gate_file = config_.out() / "gates" / (stage + ".json");

  // Inputs must exist; artifacts produced by this run must carry the live config hash.
  std::map<std::string, std::string> stamps_index;  // out-relative path -> producing stage's config hash
  if (fs::exists(config_.out() / ".stamps")) {
    for (const auto& s : pipeline_stages()) {
      const fs::path f = config_.out() / ".stamps" / (s + ".json");
      if (!fs::exists(f)) continue;
      const auto j = read_json(f);
      for (const auto& [k, v] : j.at("outputs").items()) stamps_index[k] = j.at("config_hash").get<std::string>();
    }
  }
  const auto inputs = spec.inputs(ctx);
  ordered_json input_hashes = ordered_json::object();
  for (const auto& in : inputs) {
    if (!fs::exists(in)) fail(ErrorCode::MissingArtifact, "missing input " + in.string());
    if (inside(in, config_.out())) {
      const auto key = rel_key(in, config_.out());
      const auto embedded = embedded_hash(in);
      const std::string found = embedded ? *embedded : (stamps_index.contains(key) ? stamps_index[key] : "");
      if (found != config_.hash()) {
        fail(ErrorCode::HashMismatch, key + " was produced under config " + (found.empty() ? "<unknown>" : found) +
                                          ", live config is " + config_.hash() + " (rerun upstream stages)");
      }
    }
    input_hashes[rel_key(in, config_.out())] = file_hash(in);
  }

  if (!force_ && fs::exists(stamp_file)) {
    const auto st = read_json(stamp_file);
    bool fresh = st.value("config_hash", "") == config_.hash() && json(st.at("inputs")) == json(input_hashes);
    if (fresh) {
      for (const auto& [k, v] : st.at("outputs").items()) {
        const fs::path p = config_.out() / k;
        if (!fs::exists(p) || file_hash(p) != v.get<std::string>()) {
          fresh = false;
          break;
        }
      }
    }
    if (fresh) {
      logger_.info(stage, "up to date, skipped");
      bool passed = true;
      if (fs::exists(gate_file)) {
        const auto doc = read_json(gate_file);
        for (const auto& g : doc.at("gates")) passed = passed && g.at("passed").get<bool>();
      }
      return {stage, true, passed};
    }
  }

  std::error_code ec;
  fs::remove(stamp_file, ec);
  auto result = spec.run(ctx);

  bool passed = true;
  if (!result.gates.empty()) {
    ordered_json gj = ctx.json_header("gates/1");
    gj["stage"] = stage;
    gj["gates"] = ordered_json::array();
    for (const auto& g : result.gates) {
      gj["gates"].push_back(g.to_json());
      passed = passed && g.passed;
      if (!g.passed) logger_.warn(stage, "gate " + g.name + " failed: " + format_number(g.value));
    }
    ctx.prepare(gate_file);
    write_json(gate_file, gj);
    result.outputs.push_back(gate_file);
  } else {
    fs::remove(gate_file, ec);
  }

  ordered_json stamp;
  stamp["stage"] = stage;
  stamp["config_hash"] = config_.hash();
  stamp["inputs"] = input_hashes;
  ordered_json outs = ordered_json::object();
  std::vector<std::string> keys;
  for (const auto& o : result.outputs) keys.push_back(rel_key(o, config_.out()));
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) outs[k] = file_hash(config_.out() / k);
  stamp["outputs"] = outs;
  ctx.prepare(stamp_file);
  write_json(stamp_file, stamp);
  return {stage, false, passed};
}

bool Pipeline::run_all() {
  config_.validate();
  bool passed = true;
  for (const auto& stage : pipeline_stages()) {
    if (!config_.stage_enabled(stage)) {
      logger_.info(stage, "disabled by config");
      continue;
    }
    const auto outcome = run_stage(stage);
    passed = passed && outcome.gates_passed;
  }
  const fs::path gates = config_.out() / "gates.json";
  if (fs::exists(gates)) passed = passed && read_json(gates).value("all_passed", false);
  return passed;
}

}  // namespace partyvec
