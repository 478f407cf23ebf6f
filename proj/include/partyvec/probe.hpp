#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "partyvec/model.hpp"
#include "partyvec/tensor.hpp"

namespace partyvec {

struct LabeledTrace {
  ResidualTrace trace;
  std::string party;
};

struct ProbeExample {
  Tensor mean_stream;  // [d], mean of x^l over all positions
  int label = 0;       // 1 iff the prompt's party is the target party
  int layer = 0;
};

/// One example per trace, in input order. Throws EmptyCorpus.
std::vector<ProbeExample> build_dataset(const std::vector<LabeledTrace>& traces, int layer,
                                        const std::string& target_party);

struct ProbeHyper {
  double lr = 1e-3;
  double lr_min = 1e-5;  // cosine annealing floor
  int epochs = 200;
  double dropout = 0.1;
  double val_fraction = 0.2;
  bool use_bias = true;
  std::optional<double> w1;  // positive-class weight; default #neg/#pos
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ProbeHyper from_json(const nlohmann::json& j);
};

struct Probe {
  std::string party;
  int layer = 0;
  Tensor weights;  // [d]
  double bias = 0.0;
  double val_f1 = 0.0;
  double w1 = 1.0;
  ProbeHyper hyper;
  std::vector<double> loss_history;  // training loss before epoch 1, then after every epoch
};

/// Layers searched for the probe: [ceil(0.6 L), floor(0.9 L)], or the single
/// layer ceil(0.6 L) when that interval is empty.
std::pair<int, int> probe_layer_band(int layers);

/// Trains one probe on a single layer's examples with a stratified 80/20
/// split. Throws DegenerateLabels, NonFiniteLoss.
Probe train_probe_layer(const std::vector<ProbeExample>& examples, const std::string& party, int layer,
                        const ProbeHyper& hyper);

/// Trains one probe per layer in the band and keeps the best validation F1
/// (ties go to the lower layer). `by_layer` must cover the band.
Probe train_probe(const std::map<int, std::vector<ProbeExample>>& by_layer, const std::string& party,
                  const ProbeHyper& hyper, int model_layers);

double predict(const Probe& probe, std::span<const float> mean_stream);

/// Weighted binary cross-entropy of a logit (positive weight w1).
double weighted_bce(double logit, int label, double w1);

/// Area under the ROC curve (Mann-Whitney, ties counted half).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// F1 of thresholded scores (>= 0.5 predicts positive).
double f1_score(const std::vector<double>& scores, const std::vector<int>& labels);

nlohmann::json probe_metadata(const Probe& probe);
void save_probe(const Probe& probe, const std::filesystem::path& tensors, const std::filesystem::path& sidecar,
                const nlohmann::json& extra = {});
Probe load_probe(const std::filesystem::path& tensors, const std::filesystem::path& sidecar);

}  // namespace partyvec
