#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace partyvec {

/// Declarative run configuration: the user's JSON merged over built-in defaults.
/// Relative paths resolve against the config file's directory.
class RunConfig {
 public:
  static nlohmann::json defaults();
  static RunConfig load(const std::filesystem::path& file, const std::optional<std::filesystem::path>& out = {},
                        const std::optional<std::uint64_t>& seed = {});
  static RunConfig from_json(const nlohmann::json& user, const std::filesystem::path& base,
                             const std::optional<std::filesystem::path>& out = {},
                             const std::optional<std::uint64_t>& seed = {});

  const nlohmann::json& tree() const noexcept { return tree_; }
  const nlohmann::json& at(const std::string& section) const;
  const std::filesystem::path& out() const noexcept { return out_; }
  /// FNV-1a of the canonical config dump, excluding output location and stage toggles.
  const std::string& hash() const noexcept { return hash_; }
  std::uint64_t seed() const;
  std::vector<std::string> parties() const;

  bool has_path(const std::string& key) const;
  /// Resolved `paths.<key>`; throws InvalidConfig when unset.
  std::filesystem::path path(const std::string& key) const;
  bool stage_enabled(const std::string& stage) const;

  /// Fail-fast checks that need no compute: referenced input files exist,
  /// weighting has a survey, numeric ranges are sane. Throws InvalidConfig.
  void validate() const;

 private:
  nlohmann::json tree_;
  std::filesystem::path base_;
  std::filesystem::path out_;
  std::string hash_;
};

struct Logger {
  bool json = false;
  bool quiet = false;
  void log(const std::string& level, const std::string& stage, const std::string& message) const;
  void info(const std::string& stage, const std::string& message) const { log("info", stage, message); }
  void warn(const std::string& stage, const std::string& message) const { log("warn", stage, message); }
};

struct StageOutcome {
  std::string stage;
  bool skipped = false;
  bool gates_passed = true;
};

/// The ordered stage names of run-all.
const std::vector<std::string>& pipeline_stages();

class Pipeline {
 public:
  Pipeline(RunConfig config, Logger logger = {}, bool force = false);

  /// Runs one stage, honoring its stamp unless forced. Errors are rethrown
  /// with the stage name prefixed.
  StageOutcome run_stage(const std::string& stage);

  /// All enabled stages in order; returns true when every gate passed.
  bool run_all();

  const RunConfig& config() const noexcept { return config_; }

  struct Context;

 private:
  StageOutcome execute(const std::string& stage);

  RunConfig config_;
  Logger logger_;
  bool force_;
};

/// Maps an error to the process exit code (2 config, 3 io/artifact, 4 data,
/// 5 numeric, 6 gate).
int exit_code_for(const std::exception& e);

/// Standalone corpus generation (the gen-corpus subcommand without a pipeline).
void write_corpus(const std::filesystem::path& file, std::uint64_t seed, const std::vector<std::string>& parties,
                  std::size_t size, std::size_t min_per_party, const std::string& comment);

}  // namespace partyvec
