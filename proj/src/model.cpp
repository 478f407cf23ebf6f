#include "partyvec/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "partyvec/error.hpp"

namespace partyvec {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  fail(ErrorCode::InvalidConfig, "unknown activation '" + s + "'");
}

double apply_activation(Activation a, double x) noexcept {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

void ModelConfig::validate(std::size_t party_count) const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidConfig, msg); };
  if (layers < 1) bad("layers must be >= 1");
  if (d_model < 1) bad("d_model must be >= 1");
  if (d_mlp < 1) bad("d_mlp must be >= 1");
  if (heads < 1 || d_model % heads != 0) bad("d_model must be divisible by heads");
  if (max_seq < 1) bad("max_seq must be >= 1");
  if (vocab_size < static_cast<int>(party_count) + 2) {
    bad("vocab_size " + std::to_string(vocab_size) + " < parties + 2");
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["layers"] = layers;
  j["d_model"] = d_model;
  j["d_mlp"] = d_mlp;
  j["heads"] = heads;
  j["vocab_size"] = vocab_size;
  j["max_seq"] = max_seq;
  j["activation"] = to_string(activation);
  return nlohmann::json(j);
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.at("layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.activation = activation_from_string(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

ResidualTrace::ResidualTrace(int layers, int positions, int d_model)
    : layers_(layers),
      positions_(positions),
      d_(d_model),
      embedding_(static_cast<std::size_t>(positions) * d_model, 0.0f),
      post_(static_cast<std::size_t>(layers) * positions * d_model, 0.0f),
      pre_mlp_(post_.size(), 0.0f) {}

std::size_t ResidualTrace::offset(int layer, int s) const {
  if (layer < 1 || layer > layers_) fail(ErrorCode::LayerOutOfRange, "layer " + std::to_string(layer));
  if (s < 0 || s >= positions_) fail(ErrorCode::ShapeMismatch, "position " + std::to_string(s));
  return (static_cast<std::size_t>(layer - 1) * positions_ + s) * d_;
}

std::span<const float> ResidualTrace::embedding(int s) const {
  if (s < 0 || s >= positions_) fail(ErrorCode::ShapeMismatch, "position " + std::to_string(s));
  return std::span<const float>(embedding_).subspan(static_cast<std::size_t>(s) * d_, d_);
}
std::span<const float> ResidualTrace::post_block(int layer, int s) const {
  return std::span<const float>(post_).subspan(offset(layer, s), d_);
}
std::span<const float> ResidualTrace::pre_mlp(int layer, int s) const {
  return std::span<const float>(pre_mlp_).subspan(offset(layer, s), d_);
}
std::span<float> ResidualTrace::embedding_mut(int s) {
  return std::span<float>(embedding_).subspan(static_cast<std::size_t>(s) * d_, d_);
}
std::span<float> ResidualTrace::post_block_mut(int layer, int s) {
  return std::span<float>(post_).subspan(offset(layer, s), d_);
}
std::span<float> ResidualTrace::pre_mlp_mut(int layer, int s) {
  return std::span<float>(pre_mlp_).subspan(offset(layer, s), d_);
}

Tensor ResidualTrace::mean_post_block(int layer) const {
  if (positions_ == 0) fail(ErrorCode::EmptyCorpus, "trace has no positions");
  std::vector<double> acc(static_cast<std::size_t>(d_), 0.0);
  for (int s = 0; s < positions_; ++s) {
    auto x = post_block(layer, s);
    for (int j = 0; j < d_; ++j) acc[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(j)];
  }
  for (double& a : acc) a /= positions_;
  return Tensor::from_doubles(acc);
}

// ---------------------------------------------------------------------------

std::string Model::weight_name(int layer, const std::string& part) {
  return "layer." + std::to_string(layer) + "." + part;
}

namespace {

const Tensor* require_shape(const TensorStore& store, const std::string& name, std::size_t rows, std::size_t cols) {
  const Tensor& t = store.get(name);
  if (t.rank() != 2 || t.shape()[0] != rows || t.shape()[1] != cols) {
    fail(ErrorCode::ShapeMismatch, "weight '" + name + "' expected [" + std::to_string(rows) + "," +
                                       std::to_string(cols) + "]");
  }
  return &t;
}

}  // namespace

Model::Model(ModelConfig config, TensorStore weights)
    : config_(config), weights_(std::make_shared<const TensorStore>(std::move(weights))) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto dm = static_cast<std::size_t>(config_.d_mlp);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  embed_ = require_shape(*weights_, "embed", V, d);
  unembed_ = require_shape(*weights_, "unembed", V, d);
  pos_embed_ = require_shape(*weights_, "pos_embed", static_cast<std::size_t>(config_.max_seq), d);
  for (int l = 1; l <= config_.layers; ++l) {
    wq_.push_back(require_shape(*weights_, weight_name(l, "wq"), d, d));
    wk_.push_back(require_shape(*weights_, weight_name(l, "wk"), d, d));
    wv_.push_back(require_shape(*weights_, weight_name(l, "wv"), d, d));
    wo_.push_back(require_shape(*weights_, weight_name(l, "wo"), d, d));
    mlp_k_.push_back(require_shape(*weights_, weight_name(l, "mlp_k"), dm, d));
    mlp_v_.push_back(require_shape(*weights_, weight_name(l, "mlp_v"), dm, d));
  }
}

Model Model::load(const std::filesystem::path& weights, const std::filesystem::path& config_json) {
  std::ifstream in(config_json);
  if (!in) fail(ErrorCode::IoError, "cannot open model config " + config_json.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, "model config " + config_json.string() + ": " + e.what());
  }
  const nlohmann::json& cfg = j.contains("model") ? j["model"] : j;
  return Model(ModelConfig::from_json(cfg), store_read(weights));
}

void Model::check_layer(int layer) const {
  if (layer < 1 || layer > config_.layers) {
    fail(ErrorCode::LayerOutOfRange,
         "layer " + std::to_string(layer) + " outside [1," + std::to_string(config_.layers) + "]");
  }
}

void Model::check_index(int index) const {
  if (index < 1 || index > config_.d_mlp) {
    fail(ErrorCode::ShapeMismatch,
         "mlp index " + std::to_string(index) + " outside [1," + std::to_string(config_.d_mlp) + "]");
  }
}

std::vector<std::vector<float>> Model::attention(int layer, const std::vector<std::vector<float>>& xs) const {
  const std::size_t S = xs.size();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto H = static_cast<std::size_t>(config_.heads);
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& wq = *wq_[static_cast<std::size_t>(layer - 1)];
  const Tensor& wk = *wk_[static_cast<std::size_t>(layer - 1)];
  const Tensor& wv = *wv_[static_cast<std::size_t>(layer - 1)];
  const Tensor& wo = *wo_[static_cast<std::size_t>(layer - 1)];

  std::vector<std::vector<float>> q(S), k(S), v(S);
  for (std::size_t s = 0; s < S; ++s) {
    q[s] = matvec(wq, xs[s]);
    k[s] = matvec(wk, xs[s]);
    v[s] = matvec(wv, xs[s]);
  }

  std::vector<std::vector<float>> out(S);
  std::vector<double> scores(S);
  std::vector<float> heads(d);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t lo = h * dh;
      double max_score = -INFINITY;
      for (std::size_t t = 0; t <= s; ++t) {
        double acc = 0.0;
        for (std::size_t c = lo; c < lo + dh; ++c) acc += static_cast<double>(q[s][c]) * k[t][c];
        scores[t] = acc * scale;
        max_score = std::max(max_score, scores[t]);
      }
      double z = 0.0;
      for (std::size_t t = 0; t <= s; ++t) {
        scores[t] = std::exp(scores[t] - max_score);
        z += scores[t];
      }
      for (std::size_t c = lo; c < lo + dh; ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t <= s; ++t) acc += scores[t] * v[t][c];
        heads[c] = static_cast<float>(acc / z);
      }
    }
    out[s] = matvec(wo, heads);
  }
  return out;
}

ForwardResult Model::forward(std::span<const TokenId> tokens) const {
  const int S = static_cast<int>(tokens.size());
  if (S > config_.max_seq) {
    fail(ErrorCode::SequenceTooLong,
         "sequence of " + std::to_string(S) + " tokens exceeds max_seq " + std::to_string(config_.max_seq));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config_.vocab_size) fail(ErrorCode::TokenOutOfVocab, "token id " + std::to_string(t));
  }
  const auto d = static_cast<std::size_t>(config_.d_model);
  ResidualTrace trace(config_.layers, S, config_.d_model);

  std::vector<std::vector<float>> xs(static_cast<std::size_t>(S), std::vector<float>(d));
  for (int s = 0; s < S; ++s) {
    auto e = embed_->row(static_cast<std::size_t>(tokens[static_cast<std::size_t>(s)]));
    auto p = pos_embed_->row(static_cast<std::size_t>(s));
    auto& x = xs[static_cast<std::size_t>(s)];
    for (std::size_t j = 0; j < d; ++j) x[j] = e[j] + p[j];
    std::copy(x.begin(), x.end(), trace.embedding_mut(s).begin());
  }

  for (int l = 1; l <= config_.layers; ++l) {
    const auto attn = attention(l, xs);
    for (int s = 0; s < S; ++s) {
      auto& x = xs[static_cast<std::size_t>(s)];
      for (std::size_t j = 0; j < d; ++j) x[j] += attn[static_cast<std::size_t>(s)][j];
      std::copy(x.begin(), x.end(), trace.pre_mlp_mut(l, s).begin());
      const auto update = mlp(l, x);
      for (std::size_t j = 0; j < d; ++j) x[j] += update[j];
      std::copy(x.begin(), x.end(), trace.post_block_mut(l, s).begin());
    }
  }

  std::vector<float> logit_data;
  logit_data.reserve(static_cast<std::size_t>(S) * static_cast<std::size_t>(config_.vocab_size));
  for (int s = 0; s < S; ++s) {
    const auto row = logits(xs[static_cast<std::size_t>(s)]);
    logit_data.insert(logit_data.end(), row.begin(), row.end());
  }
  Tensor logit_tensor({static_cast<std::size_t>(S), static_cast<std::size_t>(config_.vocab_size)},
                      std::move(logit_data), "logits");
  return ForwardResult{std::move(logit_tensor), std::move(trace)};
}

std::vector<double> Model::logits(std::span<const float> x) const {
  if (x.size() != static_cast<std::size_t>(config_.d_model)) fail(ErrorCode::ShapeMismatch, "stream width");
  std::vector<double> out(static_cast<std::size_t>(config_.vocab_size));
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = dot(unembed_->row(t), x);
  return out;
}

std::vector<double> Model::logits(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(config_.d_model)) fail(ErrorCode::ShapeMismatch, "stream width");
  std::vector<double> out(static_cast<std::size_t>(config_.vocab_size));
  for (std::size_t t = 0; t < out.size(); ++t) {
    const auto e = unembed_->row(t);
    for (std::size_t k = 0; k < x.size(); ++k) out[t] += static_cast<double>(e[k]) * x[k];
  }
  return out;
}

double Model::mlp_coefficient(int layer, int index, std::span<const float> x) const {
  check_layer(layer);
  check_index(index);
  return apply_activation(config_.activation, dot(key_vector(layer, index), x));
}

std::vector<SubUpdate> Model::mlp_sub_update(int layer, std::span<const float> x) const {
  check_layer(layer);
  if (x.size() != static_cast<std::size_t>(config_.d_model)) {
    fail(ErrorCode::ShapeMismatch, "stream width " + std::to_string(x.size()));
  }
  const Tensor& wk = *mlp_k_[static_cast<std::size_t>(layer - 1)];
  const Tensor& wv = *mlp_v_[static_cast<std::size_t>(layer - 1)];
  std::vector<SubUpdate> out(static_cast<std::size_t>(config_.d_mlp));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].coefficient = apply_activation(config_.activation, dot(wk.row(i), x));
    out[i].value = wv.row(i);
  }
  return out;
}

std::vector<float> Model::mlp(int layer, std::span<const float> x) const {
  const auto subs = mlp_sub_update(layer, x);
  std::vector<double> acc(static_cast<std::size_t>(config_.d_model), 0.0);
  for (const auto& sub : subs) {
    if (sub.coefficient == 0.0) continue;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += sub.coefficient * sub.value[j];
  }
  return std::vector<float>(acc.begin(), acc.end());
}

double Model::logit_effect(TokenId token, double m, std::span<const float> v) const {
  if (token < 0 || token >= config_.vocab_size) fail(ErrorCode::TokenOutOfVocab, "token id " + std::to_string(token));
  return m * dot(unembedding(token), v);
}

std::span<const float> Model::value_vector(int layer, int index) const {
  check_layer(layer);
  check_index(index);
  return mlp_v_[static_cast<std::size_t>(layer - 1)]->row(static_cast<std::size_t>(index - 1));
}

std::span<const float> Model::key_vector(int layer, int index) const {
  check_layer(layer);
  check_index(index);
  return mlp_k_[static_cast<std::size_t>(layer - 1)]->row(static_cast<std::size_t>(index - 1));
}

std::span<const float> Model::unembedding(TokenId token) const {
  if (token < 0 || token >= config_.vocab_size) fail(ErrorCode::TokenOutOfVocab, "token id " + std::to_string(token));
  return unembed_->row(static_cast<std::size_t>(token));
}

}  // namespace partyvec
