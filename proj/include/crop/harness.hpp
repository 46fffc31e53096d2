// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "crop/experiment.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace crop {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitNumeric = 3 };

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;           ///< restrict to one of the config's seeds
  std::optional<std::string> method;           ///< personalize: conventional or crop (default both)
  std::optional<std::filesystem::path> out;    ///< overrides output_dir
  // Ablation overrides for the CRoP run; `label` names its output files (default "crop").
  std::optional<std::string> strategy;
  std::optional<std::size_t> passes;
  std::optional<std::string> regularizer;
  bool partial = false;
  std::optional<std::string> label;
};

/// Applies --out and the ablation overrides to a loaded config.
ExperimentConfig apply_overrides(ExperimentConfig cfg, const CommandOptions& opts);

// Each command throws on failure; run_command maps exceptions to exit codes.
void cmd_generate(const Experiment& ex, std::ostream& log);
void cmd_train_generic(const Experiment& ex, const CommandOptions& opts, std::ostream& log);
void cmd_personalize(const Experiment& ex, const CommandOptions& opts, std::ostream& log);
void cmd_evaluate(const Experiment& ex, const CommandOptions& opts, std::ostream& log);
void cmd_diagnose(const Experiment& ex, const CommandOptions& opts, std::ostream& log);

/// Loads the config, resolves the experiment and dispatches `command`
/// (generate, train-generic, personalize, evaluate, diagnose). Errors go to `err`.
int run_command(const std::string& command, const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Output file names, relative to the output directory.
namespace files {
std::string generic_model(std::uint64_t seed);
std::string personal_model(const std::string& label, const std::string& user, std::uint64_t seed);
std::string stage_model(const std::string& label, const std::string& user, std::uint64_t seed,
                        const std::string& stage);
}  // namespace files

}  // namespace crop
