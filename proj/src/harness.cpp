// SPDX-License-Identifier: Apache-2.0
#include "crop/harness.hpp"

#include "crop/diagnostics.hpp"
#include "crop/error.hpp"
#include "crop/model_io.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>

namespace crop {

namespace fs = std::filesystem;

namespace files {

std::string generic_model(std::uint64_t seed) { return "generic_s" + std::to_string(seed) + ".cropmdl"; }

std::string personal_model(const std::string& label, const std::string& user, std::uint64_t seed) {
  return label + "_" + user + "_s" + std::to_string(seed) + ".cropmdl";
}

std::string stage_model(const std::string& label, const std::string& user, std::uint64_t seed,
                        const std::string& stage) {
  return label + "_" + user + "_s" + std::to_string(seed) + "_" + stage + ".cropmdl";
}

}  // namespace files

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, p);
}

// Wall-clock lines go to crop.log only, so every other output stays byte-stable.
class RunLog {
 public:
  explicit RunLog(const fs::path& dir) : out_(dir / "crop.log", std::ios::app) {}

  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::lock_guard lock(mu_);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
    out_.flush();
  }

  void timed(const std::string& what, double seconds) { line(what + " seconds=" + fmt(seconds)); }

 private:
  std::ofstream out_;
  std::mutex mu_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<std::uint64_t> selected_seeds(const Experiment& ex, const CommandOptions& opts) {
  if (opts.seed) return {*opts.seed};
  return ex.cfg.seeds;
}

std::string crop_label(const CommandOptions& opts) {
  const std::string label = opts.label.value_or("crop");
  if (label.empty() || label == "generic" || label == "conventional") {
    throw UsageError("--label must be nonempty and differ from 'generic' and 'conventional'");
  }
  for (char c : label) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) throw UsageError("--label may only contain letters, digits, '_' and '-'");
  }
  return label;
}

std::string suffixed(const std::string& stem, const std::string& label, const std::string& ext) {
  return label == "crop" ? stem + ext : stem + "_" + label + ext;
}

ModelParams load_checked(const Experiment& ex, const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("missing model file " + path.string());
  ModelFile f = load_model(path);
  if (f.model.layer_dims() != ex.layer_dims()) {
    throw StructuralError("model " + path.string() + " does not match the configured layer dims");
  }
  return std::move(f.model);
}

void save(const Experiment& ex, const fs::path& path, const ModelParams& model, std::optional<Mask> mask,
          const nlohmann::json& meta) {
  ModelFile f;
  f.model = model;
  f.metric = ex.cfg.metric;
  f.mask = std::move(mask);
  f.metadata = meta.dump();
  save_model(f, path);
}

void write_history(const fs::path& path, const std::vector<StageHistory>& stages) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "stage,epoch,train_loss,val_loss\n";
  for (const auto& s : stages) {
    for (const auto& e : s.history) {
      out << s.stage << ',' << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_loss) << '\n';
    }
  }
}

struct Job {
  std::uint64_t seed;
  std::string user;
};

std::vector<Job> user_jobs(const Experiment& ex, const std::vector<std::uint64_t>& seeds) {
  std::vector<Job> jobs;
  for (auto s : seeds) {
    for (const auto& u : ex.personal_users) jobs.push_back({s, u});
  }
  return jobs;
}

}  // namespace

ExperimentConfig apply_overrides(ExperimentConfig cfg, const CommandOptions& opts) {
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.strategy) cfg.crop.prune.strategy = strategy_from_string(*opts.strategy);
  if (opts.passes) cfg.crop.iterative_passes = *opts.passes;
  if (opts.regularizer) {
    const Regularizer reg = regularizer_from_string(*opts.regularizer);
    cfg.crop.train_initial.regularizer = reg;
    cfg.crop.train_final.regularizer = reg;
  }
  if (opts.partial) cfg.crop.train_final.partial_finetune = true;
  cfg.validate();
  return cfg;
}

void cmd_generate(const Experiment& ex, std::ostream& log) {
  const fs::path path = ex.cfg.output_dir / "data.csv";
  save_csv(ex.data, path);
  log << "wrote " << path.string() << " (" << ex.data.size() << " rows)\n";
}

void cmd_train_generic(const Experiment& ex, const CommandOptions& opts, std::ostream& log) {
  RunLog runlog(ex.cfg.output_dir);
  const auto seeds = selected_seeds(ex, opts);
  parallel_for(seeds.size(), [&](std::size_t i) {
    const Stopwatch sw;
    const auto seed = seeds[i];
    const TrainResult r = train_generic(ex, seed);
    save(ex, ex.cfg.output_dir / files::generic_model(seed), r.best, std::nullopt,
         {{"state", "generic"}, {"seed", seed}, {"best_epoch", r.best_epoch}});
    write_history(ex.cfg.output_dir / ("generic_s" + std::to_string(seed) + "_history.csv"),
                  {{"generic", r.history, r.best_epoch}});
    runlog.timed("train-generic seed=" + std::to_string(seed), sw.seconds());
  });
  for (auto s : seeds) log << "wrote " << (ex.cfg.output_dir / files::generic_model(s)).string() << '\n';
}

void cmd_personalize(const Experiment& ex, const CommandOptions& opts, std::ostream& log) {
  std::vector<std::string> methods = {"conventional", "crop"};
  if (opts.method) {
    if (*opts.method != "conventional" && *opts.method != "crop") {
      throw UsageError("--method must be conventional or crop");
    }
    methods = {*opts.method};
  }
  const std::string label = crop_label(opts);
  const auto seeds = selected_seeds(ex, opts);
  std::map<std::uint64_t, ModelParams> generics;
  for (auto s : seeds) generics.emplace(s, load_checked(ex, ex.cfg.output_dir / files::generic_model(s)));

  RunLog runlog(ex.cfg.output_dir);
  const auto jobs = user_jobs(ex, seeds);
  for (const auto& method : methods) {
    const bool is_crop = method == "crop";
    const std::string state = is_crop ? label : "conventional";
    std::vector<std::vector<EvalRecord>> records(jobs.size());

    parallel_for(jobs.size(), [&](std::size_t j) {
      const auto& [seed, user] = jobs[j];
      const Stopwatch sw;
      const ModelParams& generic = generics.at(seed);
      const RunSeeds rs = derive_run_seeds(seed, user);
      const UserSplit sp = split_user(ex, user, seed);
      const nlohmann::json meta = {{"state", state}, {"user", user}, {"seed", seed}};
      const fs::path dir = ex.cfg.output_dir;

      ModelParams result;
      if (is_crop) {
        const CropResult cr = crop_personalize(generic, sp.available, crop_config(ex.cfg, rs));
        auto m = meta;
        m["prune_fraction"] = cr.prune_fraction;
        save(ex, dir / files::personal_model(label, user, seed), cr.final, cr.mask, m);
        if (cr.stages) {
          const std::pair<const char*, const ModelParams*> snaps[] = {
              {"finetuned", &cr.stages->finetuned}, {"pruned", &cr.stages->pruned}, {"mixed", &cr.stages->mixed}};
          for (const auto& [stage, model] : snaps) {
            auto sm = meta;
            sm["stage"] = stage;
            save(ex, dir / files::stage_model(label, user, seed, stage), *model, cr.mask, sm);
          }
        }
        write_history(dir / (label + "_" + user + "_s" + std::to_string(seed) + "_history.csv"), cr.histories);
        result = cr.final;
      } else {
        const TrainResult tr = conventional_finetune_detailed(generic, sp.available, conventional_config(ex.cfg, rs));
        save(ex, dir / files::personal_model("conventional", user, seed), tr.best, std::nullopt, meta);
        write_history(dir / ("conventional_" + user + "_s" + std::to_string(seed) + "_history.csv"),
                      {{"finetune", tr.history, tr.best_epoch}});
        result = tr.best;
      }
      for (const auto& [ctx, value] : score_contexts(result, sp, ex.cfg.metric)) {
        records[j].push_back({user, seed, state, ctx, value});
      }
      runlog.timed("personalize method=" + state + " user=" + user + " seed=" + std::to_string(seed), sw.seconds());
    });

    EvalReport report;
    for (auto& rs : records) {
      for (auto& r : rs) report.add(std::move(r));
    }
    const fs::path path = ex.cfg.output_dir / ("personalize_" + state + "_report.csv");
    report.write_csv(path);
    log << "wrote " << path.string() << '\n';
  }
}

void cmd_evaluate(const Experiment& ex, const CommandOptions& opts, std::ostream& log) {
  const std::string label = crop_label(opts);
  const auto seeds = selected_seeds(ex, opts);
  const auto jobs = user_jobs(ex, seeds);
  const fs::path dir = ex.cfg.output_dir;
  std::vector<std::vector<EvalRecord>> records(jobs.size());

  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto& [seed, user] = jobs[j];
    const UserSplit sp = split_user(ex, user, seed);
    const std::pair<std::string, fs::path> states[] = {
        {"generic", dir / files::generic_model(seed)},
        {"conventional", dir / files::personal_model("conventional", user, seed)},
        {label, dir / files::personal_model(label, user, seed)}};
    for (const auto& [state, path] : states) {
      const ModelParams model = load_checked(ex, path);
      for (const auto& [ctx, value] : score_contexts(model, sp, ex.cfg.metric)) {
        records[j].push_back({user, seed, state, ctx, value});
      }
    }
  });

  EvalReport report;
  for (auto& rs : records) {
    for (auto& r : rs) report.add(std::move(r));
  }
  const auto summary = report.summary(label, "generic", "conventional");
  const fs::path report_path = dir / suffixed("eval_report", label, ".csv");
  const fs::path summary_path = dir / suffixed("eval_summary", label, ".csv");
  report.write_csv(report_path);
  EvalReport::write_summary_csv(summary, summary_path);
  const auto& mean = summary.back();
  log << "delta_p " << fmt(mean.delta_p.mean) << " +- " << fmt(mean.delta_p.std) << '\n'
      << "delta_g " << fmt(mean.delta_g.mean) << " +- " << fmt(mean.delta_g.std) << '\n'
      << "wrote " << report_path.string() << " and " << summary_path.string() << '\n';
}

void cmd_diagnose(const Experiment& ex, const CommandOptions& opts, std::ostream& log) {
  const std::string label = crop_label(opts);
  const auto seeds = selected_seeds(ex, opts);
  const auto jobs = user_jobs(ex, seeds);
  const fs::path dir = ex.cfg.output_dir;

  struct Out {
    std::vector<GipRecord> gip;
    std::vector<EvalRecord> fim;
  };
  std::vector<Out> outs(jobs.size());

  parallel_for(jobs.size(), [&](std::size_t j) {
    const auto& [seed, user] = jobs[j];
    CropStages stages;
    stages.generic = load_checked(ex, dir / files::generic_model(seed));
    for (const char* stage : {"finetuned", "pruned", "mixed"}) {
      const fs::path path = dir / files::stage_model(label, user, seed, stage);
      if (!fs::exists(path)) {
        throw UsageError("missing stage snapshot " + path.string() + " (personalize with crop.keep_snapshots)");
      }
    }
    stages.finetuned = load_checked(ex, dir / files::stage_model(label, user, seed, "finetuned"));
    stages.pruned = load_checked(ex, dir / files::stage_model(label, user, seed, "pruned"));
    stages.mixed = load_checked(ex, dir / files::stage_model(label, user, seed, "mixed"));
    stages.final = load_checked(ex, dir / files::personal_model(label, user, seed));
    const ModelParams conv = load_checked(ex, dir / files::personal_model("conventional", user, seed));
    outs[j].gip = stage_gip(ex, user, seed, stages);

    const UserSplit sp = split_user(ex, user, seed);
    const std::pair<std::string, const ModelParams*> states[] = {
        {"generic", &stages.generic}, {"conventional", &conv}, {label, &stages.final}};
    const std::size_t layer = stages.final.num_layers() >= 2 ? stages.final.num_layers() - 2 : 0;
    for (const auto& [state, model] : states) {
      for (const auto& [ctx, d] : sp.eval) outs[j].fim.push_back({user, seed, state, ctx, fim_trace(*model, d)});
      if (state != "generic") {
        write_matrix_csv(magnitude_heatmap(*model, layer),
                         dir / ("heatmap_" + state + "_" + user + "_s" + std::to_string(seed) + ".csv"));
      }
    }
  });
  for (auto seed : seeds) {
    const ModelParams g = load_checked(ex, dir / files::generic_model(seed));
    const std::size_t layer = g.num_layers() >= 2 ? g.num_layers() - 2 : 0;
    write_matrix_csv(magnitude_heatmap(g, layer), dir / ("heatmap_generic_s" + std::to_string(seed) + ".csv"));
  }

  const fs::path gip_path = dir / suffixed("gip", label, ".csv");
  const fs::path fim_path = dir / suffixed("fim", label, ".csv");
  std::ofstream gout(gip_path, std::ios::binary);
  std::ofstream fout(fim_path, std::ios::binary);
  if (!gout || !fout) throw UsageError("cannot write diagnostics to " + dir.string());
  gout << "user,seed,step,stage,gip\n";
  fout << "user,seed,state,context,fim_trace\n";
  for (const auto& o : outs) {
    for (const auto& g : o.gip) gout << g.user << ',' << g.seed << ',' << g.step << ',' << g.stage << ',' << fmt(g.value) << '\n';
    for (const auto& f : o.fim) fout << f.user << ',' << f.seed << ',' << f.state << ',' << f.context << ',' << fmt(f.value) << '\n';
  }
  log << "wrote " << gip_path.string() << ", " << fim_path.string() << " and heatmaps\n";
}

int run_command(const std::string& command, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = apply_overrides(load_experiment_config(opts.config), opts);
    const Experiment ex = resolve_experiment(cfg);
    fs::create_directories(ex.cfg.output_dir);
    const Stopwatch sw;
    if (command == "generate") {
      cmd_generate(ex, out);
    } else if (command == "train-generic") {
      cmd_train_generic(ex, opts, out);
    } else if (command == "personalize") {
      cmd_personalize(ex, opts, out);
    } else if (command == "evaluate") {
      cmd_evaluate(ex, opts, out);
    } else if (command == "diagnose") {
      cmd_diagnose(ex, opts, out);
    } else {
      throw UsageError("unknown command '" + command + "'");
    }
    RunLog(ex.cfg.output_dir).timed("command=" + command, sw.seconds());
    return kExitOk;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const StructuralError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace crop
