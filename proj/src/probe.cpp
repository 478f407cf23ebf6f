#include "partyvec/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "partyvec/csv.hpp"
#include "partyvec/error.hpp"
#include "partyvec/rng.hpp"
#include "partyvec/tensor_store.hpp"

namespace partyvec {

std::vector<ProbeExample> build_dataset(const std::vector<LabeledTrace>& traces, int layer,
                                        const std::string& target_party) {
  if (traces.empty()) fail(ErrorCode::EmptyCorpus, "no traces to build a probe dataset from");
  std::vector<ProbeExample> out;
  out.reserve(traces.size());
  for (const auto& t : traces) {
    out.push_back({t.trace.mean_post_block(layer), t.party == target_party ? 1 : 0, layer});
  }
  return out;
}

nlohmann::json ProbeHyper::to_json() const {
  nlohmann::ordered_json j;
  j["lr"] = lr;
  j["lr_min"] = lr_min;
  j["epochs"] = epochs;
  j["dropout"] = dropout;
  j["val_fraction"] = val_fraction;
  j["use_bias"] = use_bias;
  j["w1"] = w1 ? nlohmann::ordered_json(*w1) : nlohmann::ordered_json(nullptr);
  j["seed"] = seed;
  return nlohmann::json(j);
}

ProbeHyper ProbeHyper::from_json(const nlohmann::json& j) {
  ProbeHyper h;
  h.lr = j.value("lr", h.lr);
  h.lr_min = j.value("lr_min", h.lr_min);
  h.epochs = j.value("epochs", h.epochs);
  h.dropout = j.value("dropout", h.dropout);
  h.val_fraction = j.value("val_fraction", h.val_fraction);
  h.use_bias = j.value("use_bias", h.use_bias);
  if (j.contains("w1") && !j["w1"].is_null()) h.w1 = j["w1"].get<double>();
  h.seed = j.value("seed", h.seed);
  if (h.epochs < 1 || h.lr <= 0 || h.lr_min < 0 || h.dropout < 0 || h.dropout >= 1 || h.val_fraction < 0 ||
      h.val_fraction >= 1) {
    fail(ErrorCode::InvalidConfig, "probe hyperparameters out of range");
  }
  return h;
}

std::pair<int, int> probe_layer_band(int layers) {
  const int lo = static_cast<int>(std::ceil(0.6 * layers - 1e-9));
  const int hi = static_cast<int>(std::floor(0.9 * layers + 1e-9));
  const int first = std::max(1, lo);
  return {first, std::max(first, hi)};
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

Split stratified_split(const std::vector<ProbeExample>& examples, double val_fraction, std::uint64_t seed) {
  Rng rng(seed, "probe.split");
  Split split;
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].label == cls) idx.push_back(i);
    }
    rng.shuffle(idx);
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
    if (val_fraction > 0 && idx.size() >= 2) n_val = std::max<std::size_t>(n_val, 1);
    if (n_val >= idx.size()) n_val = idx.size() > 0 ? idx.size() - 1 : 0;
    split.val.insert(split.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

double dataset_loss(const std::vector<ProbeExample>& ex, const std::vector<std::size_t>& idx,
                    const std::vector<double>& w, double b, double w1) {
  double total = 0.0;
  for (std::size_t i : idx) {
    const auto x = ex[i].mean_stream.data();
    double z = b;
    for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * x[c];
    total += weighted_bce(z, ex[i].label, w1);
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

double weighted_bce(double logit, int label, double w1) {
  // -log(sigmoid(z)) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
  return label == 1 ? w1 * softplus(-logit) : softplus(logit);
}

Probe train_probe_layer(const std::vector<ProbeExample>& examples, const std::string& party, int layer,
                        const ProbeHyper& hyper) {
  if (examples.empty()) fail(ErrorCode::EmptyCorpus, "no probe examples");
  const std::size_t d = examples.front().mean_stream.numel();
  for (const auto& e : examples) {
    if (e.mean_stream.numel() != d) fail(ErrorCode::ShapeMismatch, "probe examples have mixed widths");
    if (e.label != 0 && e.label != 1) fail(ErrorCode::DegenerateLabels, "labels must be 0 or 1");
  }

  const Split split = stratified_split(examples, hyper.val_fraction, hyper.seed);
  std::size_t pos = 0;
  for (std::size_t i : split.train) pos += static_cast<std::size_t>(examples[i].label);
  const std::size_t neg = split.train.size() - pos;
  if (pos == 0 || neg == 0) {
    fail(ErrorCode::DegenerateLabels, "party " + party + ": training labels contain a single class");
  }
  const double w1 = hyper.w1.value_or(static_cast<double>(neg) / static_cast<double>(pos));

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  std::vector<double> m_w(d, 0.0), v_w(d, 0.0);
  double m_b = 0.0, v_b = 0.0;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Rng dropout_rng(hyper.seed, "probe.dropout." + party + "." + std::to_string(layer));
  const double keep = 1.0 - hyper.dropout;
  const double n_train = static_cast<double>(split.train.size());

  Probe probe;
  probe.party = party;
  probe.layer = layer;
  probe.w1 = w1;
  probe.hyper = hyper;
  probe.loss_history.push_back(dataset_loss(examples, split.train, w, b, w1));

  std::vector<double> grad_w(d);
  std::vector<double> xt(d);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double lr = hyper.lr_min + 0.5 * (hyper.lr - hyper.lr_min) *
                                         (1.0 + std::cos(std::numbers::pi * epoch / hyper.epochs));
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i : split.train) {
      const auto x = examples[i].mean_stream.data();
      double z = b;
      for (std::size_t c = 0; c < d; ++c) {
        xt[c] = x[c];
        if (hyper.dropout > 0.0) xt[c] = dropout_rng.bernoulli(keep) ? x[c] / keep : 0.0;
        z += w[c] * xt[c];
      }
      const double y = examples[i].label;
      const double p = sigmoid(z);
      const double gz = (y == 1.0 ? w1 * (p - 1.0) : p) / n_train;
      for (std::size_t c = 0; c < d; ++c) grad_w[c] += gz * xt[c];
      grad_b += gz;
    }
    const double t = epoch + 1;
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t c = 0; c < d; ++c) {
      m_w[c] = beta1 * m_w[c] + (1 - beta1) * grad_w[c];
      v_w[c] = beta2 * v_w[c] + (1 - beta2) * grad_w[c] * grad_w[c];
      w[c] -= lr * (m_w[c] / c1) / (std::sqrt(v_w[c] / c2) + eps);
    }
    if (hyper.use_bias) {
      m_b = beta1 * m_b + (1 - beta1) * grad_b;
      v_b = beta2 * v_b + (1 - beta2) * grad_b * grad_b;
      b -= lr * (m_b / c1) / (std::sqrt(v_b / c2) + eps);
    }
    const double loss = dataset_loss(examples, split.train, w, b, w1);
    if (!std::isfinite(loss)) fail(ErrorCode::NonFiniteLoss, "party " + party + " epoch " + std::to_string(epoch));
    probe.loss_history.push_back(loss);
  }

  probe.weights = Tensor::from_doubles(w);
  probe.bias = static_cast<float>(b);  // matches the f32 container round-trip

  const auto& eval = split.val.empty() ? split.train : split.val;
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i : eval) {
    scores.push_back(predict(probe, examples[i].mean_stream.data()));
    labels.push_back(examples[i].label);
  }
  probe.val_f1 = f1_score(scores, labels);
  return probe;
}

Probe train_probe(const std::map<int, std::vector<ProbeExample>>& by_layer, const std::string& party,
                  const ProbeHyper& hyper, int model_layers) {
  const auto [lo, hi] = probe_layer_band(model_layers);
  std::optional<Probe> best;
  for (int l = lo; l <= hi; ++l) {
    auto it = by_layer.find(l);
    if (it == by_layer.end()) fail(ErrorCode::LayerOutOfRange, "no probe examples for layer " + std::to_string(l));
    Probe p = train_probe_layer(it->second, party, l, hyper);
    if (!best || p.val_f1 > best->val_f1) best = std::move(p);
  }
  return std::move(*best);
}

double predict(const Probe& probe, std::span<const float> mean_stream) {
  if (mean_stream.size() != probe.weights.numel()) {
    fail(ErrorCode::ShapeMismatch, "probe width " + std::to_string(probe.weights.numel()) + " vs stream " +
                                       std::to_string(mean_stream.size()));
  }
  return sigmoid(dot(probe.weights.data(), mean_stream) + probe.bias);
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores/labels length mismatch");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over ties, then Mann-Whitney U
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) fail(ErrorCode::DegenerateLabels, "AUC needs both classes");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double f1_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= 0.5;
    if (predicted && labels[i] == 1) tp += 1;
    if (predicted && labels[i] == 0) fp += 1;
    if (!predicted && labels[i] == 1) fn += 1;
  }
  const double denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2 * tp / denom;
}

nlohmann::json probe_metadata(const Probe& probe) {
  nlohmann::ordered_json j;
  j["party"] = probe.party;
  j["layer"] = probe.layer;
  j["bias"] = probe.bias;
  j["val_f1"] = probe.val_f1;
  j["w1"] = probe.w1;
  j["loss_initial"] = probe.loss_history.empty() ? 0.0 : probe.loss_history.front();
  j["loss_final"] = probe.loss_history.empty() ? 0.0 : probe.loss_history.back();
  j["hyper"] = probe.hyper.to_json();
  return nlohmann::json(j);
}

void save_probe(const Probe& probe, const std::filesystem::path& tensors, const std::filesystem::path& sidecar,
                const nlohmann::json& extra) {
  TensorStore store;
  store.insert("weights", probe.weights);
  store.insert("bias", Tensor::from_vector({static_cast<float>(probe.bias)}));
  store_write(store, tensors);
  nlohmann::ordered_json meta = probe_metadata(probe);
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) meta[k] = v;
  }
  write_text_file(sidecar, meta.dump(2) + "\n");
}

Probe load_probe(const std::filesystem::path& tensors, const std::filesystem::path& sidecar) {
  const auto store = store_read(tensors);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, "probe sidecar " + sidecar.string() + ": " + e.what());
  }
  Probe p;
  p.party = meta.at("party").get<std::string>();
  p.layer = meta.at("layer").get<int>();
  p.val_f1 = meta.at("val_f1").get<double>();
  p.w1 = meta.at("w1").get<double>();
  p.hyper = ProbeHyper::from_json(meta.at("hyper"));
  p.weights = store.get("weights").renamed("");
  p.bias = store.get("bias")[0];
  return p;
}

}  // namespace partyvec
