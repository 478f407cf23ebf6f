#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partyvec/csv.hpp"
#include "partyvec/model.hpp"
#include "partyvec/vector_extract.hpp"
#include "partyvec/vocabulary.hpp"

namespace partyvec {

struct ScalingRecord {
  std::uint64_t persona_id = 0;
  int variant_id = 0;
  std::string party;
  double m = 0.0;           // cosine-weighted aggregate over the party's value vectors
  std::vector<double> raw;  // per selected vector, in ValueVectorSet order

  friend bool operator==(const ScalingRecord&, const ScalingRecord&) = default;
};

struct PromptItem {
  std::uint64_t persona_id = 0;
  int variant_id = 0;
  std::string text;
};

enum class Readout { final_token, mean_over_positions };
Readout readout_from_string(const std::string& s);

struct ScanOptions {
  Readout readout = Readout::final_token;
  bool keep_raw = true;
  int threads = 1;
};

/// Cosine weights cos_i / sum(cos) over a value set. Throws EmptyValueSet,
/// NonPositiveCosineInSet.
std::vector<double> cosine_weights(const ValueVectorSet& set);

/// m_i = f(k_i . x) for each vector of the set, read from the pre-MLP stream
/// of the vector's layer at the readout position, and their weighted average.
ScalingRecord scale_one(const Model& model, const ResidualTrace& trace, const ValueVectorSet& set,
                        Readout readout, bool keep_raw);

/// One forward pass per prompt; records sorted by (persona, variant, party order of `sets`).
std::vector<ScalingRecord> scan(const Model& model, const Vocabulary& vocab, const std::vector<ValueVectorSet>& sets,
                                const std::vector<PromptItem>& prompts, const ScanOptions& options = {});

/// Dense persona x variant x party table of m.
class ScalingCube {
 public:
  ScalingCube(std::vector<std::uint64_t> personas, std::vector<int> variants, std::vector<std::string> parties);

  const std::vector<std::uint64_t>& personas() const noexcept { return personas_; }
  const std::vector<int>& variants() const noexcept { return variants_; }
  const std::vector<std::string>& parties() const noexcept { return parties_; }

  double at(std::size_t persona, std::size_t variant, std::size_t party) const;
  double& at(std::size_t persona, std::size_t variant, std::size_t party);

 private:
  std::vector<std::uint64_t> personas_;
  std::vector<int> variants_;
  std::vector<std::string> parties_;
  std::vector<double> values_;
};

/// Assembles the cube; every (persona, variant, party) cell must appear exactly
/// once. Throws IncompleteCube, DuplicateCell.
ScalingCube group_matrix(const std::vector<ScalingRecord>& records, const std::vector<std::uint64_t>& personas,
                         const std::vector<int>& variants, const std::vector<std::string>& parties);

std::string records_to_csv(const std::vector<ScalingRecord>& records, const std::string& metadata_comment,
                           bool explode_raw);
std::vector<ScalingRecord> records_from_csv(const CsvTable& table);

}  // namespace partyvec
