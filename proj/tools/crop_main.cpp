// SPDX-License-Identifier: Apache-2.0
#include "crop/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Static personalization toolkit: generic training, CRoP, evaluation and diagnostics"};
  app.require_subcommand(1, 1);

  crop::CommandOptions opts;
  std::string config;
  std::uint64_t seed = 0;
  std::string method, out, strategy, regularizer, label;
  std::size_t passes = 1;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run a single seed instead of the config's list");
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--label", label, "name of the CRoP variant (file prefix, default crop)");
  };

  auto* gen = app.add_subcommand("generate", "write the configured dataset as CSV");
  add_common(gen);
  auto* tg = app.add_subcommand("train-generic", "train the generic model for each seed");
  add_common(tg);
  auto* pz = app.add_subcommand("personalize", "finetune per user (conventional and/or CRoP)");
  add_common(pz);
  pz->add_option("--method", method, "conventional or crop (default both)")
      ->check(CLI::IsMember({"conventional", "crop"}));
  pz->add_option("--strategy", strategy, "prune strategy")
      ->check(CLI::IsMember({"magnitude_low", "magnitude_top", "gradient_low"}));
  pz->add_option("--passes", passes, "prune/mix/finetune passes")->check(CLI::Range(1, 10));
  pz->add_option("--regularizer", regularizer, "CRoP finetune penalty")->check(CLI::IsMember({"l1", "l2", "none"}));
  pz->add_flag("--partial", opts.partial, "freeze pruned entries during the final finetune");
  auto* ev = app.add_subcommand("evaluate", "score saved models and write the report CSVs");
  add_common(ev);
  auto* dg = app.add_subcommand("diagnose", "GIP per stage, Fisher traces and weight heatmaps");
  add_common(dg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : crop::kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  opts.config = config;
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--out")) opts.out = out;
  if (sub->count("--label")) opts.label = label;
  if (sub == pz) {
    if (pz->count("--method")) opts.method = method;
    if (pz->count("--strategy")) opts.strategy = strategy;
    if (pz->count("--passes")) opts.passes = passes;
    if (pz->count("--regularizer")) opts.regularizer = regularizer;
  }
  return crop::run_command(sub->get_name(), opts, std::cout, std::cerr);
}
