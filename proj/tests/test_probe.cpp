#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "partyvec/corpus.hpp"
#include "partyvec/error.hpp"
#include "partyvec/probe.hpp"
#include "partyvec/rng.hpp"
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

ProbeExample example(std::vector<float> x, int label, int layer = 1) {
  return {Tensor::from_vector(std::move(x)), label, layer};
}

// Two Gaussian blobs at +-3 sigma along a random unit direction.
std::vector<ProbeExample> blobs(std::uint64_t seed, std::size_t per_class, std::size_t d, std::vector<double>* dir_out = nullptr) {
  Rng rng(seed);
  std::vector<double> dir(d);
  double n = 0;
  for (auto& x : dir) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : dir) x /= std::sqrt(n);
  if (dir_out) *dir_out = dir;
  std::vector<ProbeExample> out;
  for (int label : {0, 1}) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<float> x(d);
      for (std::size_t c = 0; c < d; ++c) x[c] = static_cast<float>((label ? 3.0 : -3.0) * dir[c] + rng.normal());
      out.push_back(example(std::move(x), label));
    }
  }
  return out;
}

double accuracy(const Probe& p, const std::vector<ProbeExample>& xs) {
  double ok = 0;
  for (const auto& e : xs) ok += ((predict(p, e.mean_stream.data()) >= 0.5) == (e.label == 1)) ? 1 : 0;
  return ok / static_cast<double>(xs.size());
}

// Independent oracle: plain batch gradient descent on the unweighted logistic loss.
std::pair<std::vector<double>, double> batch_logistic(const std::vector<ProbeExample>& xs, int iters, double lr) {
  const std::size_t d = xs.front().mean_stream.numel();
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> g(d, 0.0);
    double gb = 0.0;
    for (const auto& e : xs) {
      double z = b;
      for (std::size_t c = 0; c < d; ++c) z += w[c] * e.mean_stream[c];
      const double r = 1.0 / (1.0 + std::exp(-z)) - e.label;
      for (std::size_t c = 0; c < d; ++c) g[c] += r * e.mean_stream[c];
      gb += r;
    }
    for (std::size_t c = 0; c < d; ++c) w[c] -= lr * g[c] / static_cast<double>(xs.size());
    b -= lr * gb / static_cast<double>(xs.size());
  }
  return {w, b};
}

}  // namespace

TEST_CASE("build_dataset takes the mean over positions") {
  ResidualTrace single(1, 1, 2);
  single.post_block_mut(1, 0)[0] = 3;
  single.post_block_mut(1, 0)[1] = -1;
  auto ds = build_dataset({{single, "A"}}, 1, "A");
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].mean_stream[0] == 3.0f);
  CHECK(ds[0].mean_stream[1] == -1.0f);
  CHECK(ds[0].label == 1);

  ResidualTrace two(1, 2, 2);
  two.post_block_mut(1, 0)[0] = 1;
  two.post_block_mut(1, 1)[0] = 4;
  two.post_block_mut(1, 1)[1] = 2;
  ds = build_dataset({{two, "B"}}, 1, "A");
  CHECK(ds[0].mean_stream[0] == 2.5f);
  CHECK(ds[0].mean_stream[1] == 1.0f);
  CHECK(ds[0].label == 0);

  CHECK(code_of([] { build_dataset({}, 1, "A"); }) == ErrorCode::EmptyCorpus);
}

TEST_CASE("synthetic corpus through a toy model: 60 statements, 10 positives per party") {
  const std::vector<std::string> parties{"AfD", "CDU", "FDP", "SPD", "GRÜNE", "LINKE"};
  const auto corpus = gen_corpus(4, parties, 60, 10);
  const auto vocab = Vocabulary::build(parties, corpus_lexicon());
  ModelConfig c;
  c.layers = 2;
  c.d_model = 8;
  c.d_mlp = 8;
  c.heads = 2;
  c.vocab_size = static_cast<int>(vocab.size());
  c.max_seq = 64;
  PlantSpec spec;
  spec.per_party = 0;
  const Model model(c, gen_toy_model(c, spec, 1).weights);
  std::vector<LabeledTrace> traces;
  for (const auto& row : corpus.rows) traces.push_back({model.forward(vocab.encode(row.prompt())).trace, row.party});
  for (const auto& p : parties) {
    const auto ds = build_dataset(traces, 2, p);
    CHECK(ds.size() == 60);
    int pos = 0;
    for (const auto& e : ds) pos += e.label;
    CHECK(pos == 10);
  }
}

TEST_CASE("separable blobs: probe and an independent logistic oracle both fit") {
  std::vector<double> dir;
  const auto data = blobs(21, 150, 6, &dir);
  ProbeHyper h;
  h.seed = 5;
  h.lr = 0.05;
  h.lr_min = 1e-4;
  h.epochs = 300;
  h.val_fraction = 0.0;
  const auto probe = train_probe_layer(data, "A", 1, h);
  CHECK(accuracy(probe, data) >= 0.99);

  const auto [w, b] = batch_logistic(data, 2000, 0.5);
  double ok = 0;
  for (const auto& e : data) {
    double z = b;
    for (std::size_t c = 0; c < 6; ++c) z += w[c] * e.mean_stream[c];
    ok += ((z >= 0) == (e.label == 1)) ? 1 : 0;
  }
  CHECK(ok / static_cast<double>(data.size()) >= 0.99);
  // Both land on the planted separating direction.
  std::vector<float> wf(w.begin(), w.end()), df(dir.begin(), dir.end());
  CHECK(cosine(probe.weights.data(), df) > 0.9);
  CHECK(cosine(wf, df) > 0.9);
}

TEST_CASE("training loss decreases and training is deterministic") {
  const auto data = blobs(8, 60, 5);
  ProbeHyper h;
  h.seed = 77;
  const auto a = train_probe_layer(data, "A", 1, h);
  const auto b = train_probe_layer(data, "A", 1, h);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
  REQUIRE(a.loss_history.size() == static_cast<std::size_t>(h.epochs) + 1);
  for (std::size_t i = 1; i < a.loss_history.size(); ++i) CHECK(a.loss_history[i] <= a.loss_history[i - 1] + 1e-3);
  CHECK(a.loss_history.back() < a.loss_history.front());
  CHECK(norm(a.weights.data()) > 0.0);
}

TEST_CASE("degenerate labels") {
  std::vector<ProbeExample> same{example({1, 2}, 1), example({2, 1}, 1), example({0, 1}, 1)};
  ProbeHyper h;
  CHECK(code_of([&] { train_probe_layer(same, "A", 1, h); }) == ErrorCode::DegenerateLabels);
}

TEST_CASE("positive-class weight") {
  SUBCASE("balanced data: forced w1=1 equals computed w1") {
    const auto data = blobs(3, 40, 4);
    ProbeHyper h;
    h.seed = 9;
    const auto computed = train_probe_layer(data, "A", 1, h);
    CHECK(computed.w1 == 1.0);
    h.w1 = 1.0;
    const auto forced = train_probe_layer(data, "A", 1, h);
    CHECK(forced.weights == computed.weights);
  }
  SUBCASE("weighted loss matches its definition") {
    for (double z : {-3.0, -0.2, 0.0, 1.7}) {
      const double p = 1.0 / (1.0 + std::exp(-z));
      CHECK(weighted_bce(z, 1, 2.5) == doctest::Approx(-2.5 * std::log(p)).epsilon(1e-12));
      CHECK(weighted_bce(z, 0, 2.5) == doctest::Approx(-std::log(1.0 - p)).epsilon(1e-12));
    }
  }
  SUBCASE("class gradients balance at initialization") {
    // 12 positives, 48 negatives; w1 = 4. Gradient of the loss wrt the logit at z=0.
    const double w1 = 48.0 / 12.0, h = 1e-6;
    auto dz = [&](int label) { return (weighted_bce(h, label, w1) - weighted_bce(-h, label, w1)) / (2 * h); };
    const double pos = 12 * dz(1), neg = 48 * dz(0);
    CHECK(std::abs(std::abs(pos) - std::abs(neg)) <= 0.05 * std::abs(neg));
  }
}

TEST_CASE("predict") {
  Probe p;
  p.weights = Tensor::from_vector({0, 0, 0});
  p.bias = 0;
  CHECK(predict(p, std::vector<float>{5, -3, 2}) == 0.5);
  p.weights = Tensor::from_vector({10, 0, 0});
  CHECK(predict(p, std::vector<float>{5, 0, 0}) >= 0.999);
  CHECK(code_of([&] { predict(p, std::vector<float>{1, 2}); }) == ErrorCode::ShapeMismatch);
  double last = 0;
  for (float x = -5; x <= 5; x += 0.5f) {
    const double y = predict(p, std::vector<float>{x, 0, 0});
    CHECK(y >= last);
    last = y;
  }
}

TEST_CASE("layer band and selection") {
  CHECK(probe_layer_band(8) == std::pair<int, int>{5, 7});
  CHECK(probe_layer_band(10) == std::pair<int, int>{6, 9});
  CHECK(probe_layer_band(1) == std::pair<int, int>{1, 1});

  // Layer 6 carries signal, 5 and 7 are noise: the probe must choose 6.
  std::map<int, std::vector<ProbeExample>> by_layer;
  by_layer[6] = blobs(1, 50, 4);
  Rng rng(2);
  for (int l : {5, 7}) {
    for (const auto& e : by_layer[6]) {
      by_layer[l].push_back(example({static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                                     static_cast<float>(rng.normal()), static_cast<float>(rng.normal())},
                                    e.label, l));
    }
  }
  ProbeHyper h;
  h.seed = 4;
  h.lr = 0.05;
  const auto probe = train_probe(by_layer, "A", h, 8);
  CHECK(probe.layer == 6);
  CHECK(probe.val_f1 > 0.9);
}

TEST_CASE("roc auc and f1") {
  CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
  CHECK(roc_auc({0.5, 0.5}, {0, 1}) == 0.5);
  CHECK(roc_auc({0.9, 0.8, 0.1}, {1, 1, 0}) == 1.0);
  CHECK(f1_score({0.9, 0.2, 0.6, 0.4}, {1, 1, 0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("probe container round trip") {
  const auto data = blobs(12, 30, 3);
  ProbeHyper h;
  h.seed = 1;
  const auto probe = train_probe_layer(data, "GRÜNE", 1, h);
  const auto dir = std::filesystem::temp_directory_path();
  save_probe(probe, dir / "pv_probe.pvt", dir / "pv_probe.json");
  const auto back = load_probe(dir / "pv_probe.pvt", dir / "pv_probe.json");
  CHECK(back.party == "GRÜNE");
  CHECK(back.layer == 1);
  CHECK(back.weights == probe.weights);
  CHECK(back.bias == probe.bias);
  CHECK(back.w1 == probe.w1);
  std::filesystem::remove(dir / "pv_probe.pvt");
  std::filesystem::remove(dir / "pv_probe.json");
}
