#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "partyvec/tensor.hpp"
#include "partyvec/tensor_store.hpp"
#include "partyvec/vocabulary.hpp"

namespace partyvec {

enum class Activation { relu, gelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
double apply_activation(Activation a, double x) noexcept;

struct ModelConfig {
  int layers = 8;
  int d_model = 32;
  int d_mlp = 64;
  int heads = 4;
  int vocab_size = 0;
  int max_seq = 128;
  Activation activation = Activation::relu;

  /// Throws InvalidConfig. `party_count` enforces V >= parties + 2.
  void validate(std::size_t party_count = 0) const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Residual streams recorded during one forward pass. Layers are 1-based:
/// post_block(l, s) is x^l at position s after block l; pre_mlp(l, s) is the
/// stream entering block l's MLP (after attention). embedding(s) is x^0.
class ResidualTrace {
 public:
  ResidualTrace() = default;
  ResidualTrace(int layers, int positions, int d_model);

  int layers() const noexcept { return layers_; }
  int positions() const noexcept { return positions_; }
  int d_model() const noexcept { return d_; }

  std::span<const float> embedding(int s) const;
  std::span<const float> post_block(int layer, int s) const;
  std::span<const float> pre_mlp(int layer, int s) const;

  std::span<float> embedding_mut(int s);
  std::span<float> post_block_mut(int layer, int s);
  std::span<float> pre_mlp_mut(int layer, int s);

  /// Mean of post_block(layer, s) over all positions s.
  Tensor mean_post_block(int layer) const;

  friend bool operator==(const ResidualTrace&, const ResidualTrace&) = default;

 private:
  std::size_t offset(int layer, int s) const;

  int layers_ = 0;
  int positions_ = 0;
  int d_ = 0;
  std::vector<float> embedding_;
  std::vector<float> post_;
  std::vector<float> pre_mlp_;
};

struct ForwardResult {
  Tensor logits;  // [positions, vocab]
  ResidualTrace trace;
};

/// One term m_i * v_i of an MLP output.
struct SubUpdate {
  double coefficient = 0.0;        // m_i = f(k_i . x)
  std::span<const float> value;    // v_i, row i of mlp_v
};

/// Decoder-only transformer without layer norm:
///   x_mid = x + MHA(x);  x_next = x_mid + MLP(x_mid);  logits = unembed . x^L
/// MLP(x) = sum_i f(k_i . x) v_i with k_i, v_i the rows of mlp_k, mlp_v.
///
/// Weight names: embed [V,d], pos_embed [max_seq,d], unembed [V,d],
/// layer.{l}.{wq,wk,wv,wo} [d,d], layer.{l}.mlp_k / mlp_v [d_mlp,d], l in 1..L.
class Model {
 public:
  Model(ModelConfig config, TensorStore weights);

  static Model load(const std::filesystem::path& weights, const std::filesystem::path& config_json);

  const ModelConfig& config() const noexcept { return config_; }
  const TensorStore& weights() const noexcept { return *weights_; }

  ForwardResult forward(std::span<const TokenId> tokens) const;

  /// Decomposes MLP^l(x) into its d_mlp sub-updates, in row order.
  std::vector<SubUpdate> mlp_sub_update(int layer, std::span<const float> x) const;
  /// Direct evaluation f(W_K x) W_V.
  std::vector<float> mlp(int layer, std::span<const float> x) const;
  /// Activation coefficient m_i = f(k_i . x) for a single 1-based row index.
  double mlp_coefficient(int layer, int index, std::span<const float> x) const;

  /// e_t . (m v): change in token t's logit when m v is added to the final stream.
  double logit_effect(TokenId token, double m, std::span<const float> v) const;
  /// unembed . x for a single stream.
  std::vector<double> logits(std::span<const float> x) const;
  std::vector<double> logits(std::span<const double> x) const;

  std::span<const float> value_vector(int layer, int index) const;  // 1-based
  std::span<const float> key_vector(int layer, int index) const;    // 1-based
  std::span<const float> unembedding(TokenId token) const;

  static std::string weight_name(int layer, const std::string& part);

 private:
  void check_layer(int layer) const;
  void check_index(int index) const;
  /// Causal multi-head attention output for every position.
  std::vector<std::vector<float>> attention(int layer, const std::vector<std::vector<float>>& xs) const;

  ModelConfig config_;
  std::shared_ptr<const TensorStore> weights_;  // shared so copies keep the row pointers valid
  std::vector<const Tensor*> wq_, wk_, wv_, wo_, mlp_k_, mlp_v_;
  const Tensor* embed_ = nullptr;
  const Tensor* pos_embed_ = nullptr;
  const Tensor* unembed_ = nullptr;
};

}  // namespace partyvec
