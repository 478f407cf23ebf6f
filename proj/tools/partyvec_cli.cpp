// partyvec command-line driver.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "partyvec/csv.hpp"
#include "partyvec/error.hpp"
#include "partyvec/persona.hpp"
#include "partyvec/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool json = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "run config JSON");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", c.out, "output directory (overrides config \"out\")");
  cmd->add_option("--seed", c.seed, "override the master seed");
  cmd->add_flag("--force", c.force, "rerun even when the stage stamp is current");
  cmd->add_flag("--json", c.json, "JSON-lines log output");
  cmd->add_flag("-q,--quiet", c.quiet, "suppress log output");
}

partyvec::Pipeline make_pipeline(const Common& c) {
  std::optional<std::filesystem::path> out;
  if (!c.out.empty()) out = c.out;
  auto cfg = partyvec::RunConfig::load(c.config, out, c.seed);
  return partyvec::Pipeline(std::move(cfg), partyvec::Logger{c.json, c.quiet}, c.force);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"partyvec: latent party-preference extraction and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "partyvec 0.1.0");

  Common common;
  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"gen-corpus", "generate the labelled statement corpus"},
      {"gen-toy-model", "generate the planted toy transformer"},
      {"record", "record mean residual-stream activations for the corpus"},
      {"train-probe", "train one linear probe per party"},
      {"extract", "rank MLP value vectors against each probe"},
      {"personas", "enumerate or subsample personas and attach survey weights"},
      {"scan", "render prompts and compute per-party scaling records"},
      {"analyze", "latent vote distributions and normalized entropy"},
      {"sensitivity", "prompt-variant Wasserstein sensitivity and its fit on entropy"},
      {"regress", "per-party regression of scaling values on persona variables"},
      {"report", "figure CSVs and report.json"},
  };

  // gen-corpus doubles as a standalone generator when --output is given.
  std::string corpus_output, parties_csv;
  std::size_t corpus_size = 600, min_per_party = 10;
  for (const auto& [name, help] : stages) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common, name != "gen-corpus");
    if (name == "gen-corpus") {
      cmd->add_option("--output", corpus_output, "write a standalone corpus CSV here instead of running the stage");
      cmd->add_option("--size", corpus_size, "statement count (standalone mode)")->check(CLI::PositiveNumber);
      cmd->add_option("--parties", parties_csv, "comma-separated parties (standalone mode)");
      cmd->add_option("--min-per-party", min_per_party, "minimum statements per party (standalone mode)");
    }
    stage_cmds.emplace_back(name, cmd);
  }
  auto* run_all = app.add_subcommand("run-all", "run every enabled stage in order");
  add_common(run_all, common, true);

  std::string grid_path, survey_out, survey_parties;
  std::size_t survey_rows = 15000;
  std::uint64_t survey_seed = 1;
  auto* gen_survey = app.add_subcommand("gen-survey", "write a seeded synthetic survey CSV for a persona grid");
  gen_survey->add_option("--grid", grid_path, "persona grid JSON")->required()->check(CLI::ExistingFile);
  gen_survey->add_option("--output", survey_out, "output CSV")->required();
  gen_survey->add_option("--rows", survey_rows, "respondent rows")->check(CLI::PositiveNumber);
  gen_survey->add_option("--parties", survey_parties, "comma-separated parties");
  gen_survey->add_option("--seed", survey_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage errors share the config exit code
  }

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  };
  const std::vector<std::string> default_parties{"AfD", "CDU", "FDP", "SPD", "GRÜNE", "LINKE"};

  try {
    if (gen_survey->parsed()) {
      auto parties = survey_parties.empty() ? default_parties : split(survey_parties);
      const auto grid = partyvec::PersonaGrid::load(grid_path);
      const auto table = partyvec::gen_survey(grid, parties, survey_rows, survey_seed);
      std::string text = partyvec::csv_line(table.header);
      for (const auto& row : table.rows) text += partyvec::csv_line(row);
      partyvec::write_text_file(survey_out, text);
      return 0;
    }
    if (run_all->parsed()) {
      auto pipeline = make_pipeline(common);
      const bool passed = pipeline.run_all();
      if (!passed) {
        std::cerr << "error: one or more gates failed; see " << (pipeline.config().out() / "gates.json").string()
                  << "\n";
        return 6;
      }
      return 0;
    }
    for (const auto& [name, cmd] : stage_cmds) {
      if (!cmd->parsed()) continue;
      if (name == "gen-corpus" && !corpus_output.empty()) {
        auto parties = parties_csv.empty() ? default_parties : split(parties_csv);
        partyvec::write_corpus(corpus_output, common.seed.value_or(1), parties, corpus_size, min_per_party,
                               "# partyvec schema=corpus/1 stage=gen-corpus");
        return 0;
      }
      if (common.config.empty()) {
        std::cerr << "error: --config is required unless --output is given\n";
        return 2;
      }
      auto pipeline = make_pipeline(common);
      pipeline.config().validate();
      const auto outcome = pipeline.run_stage(name);
      return outcome.gates_passed ? 0 : 6;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return partyvec::exit_code_for(e);
  }
  return 0;
}
