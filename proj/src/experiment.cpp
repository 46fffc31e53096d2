// SPDX-License-Identifier: Apache-2.0
#include "crop/experiment.hpp"

#include "crop/diagnostics.hpp"
#include "crop/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace crop {

using nlohmann::json;

namespace {

// Wraps a JSON object, remembers which keys were read and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: " + path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw UsageError("config: " + path_ + "." + key + ": " + e.what());
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, path_ + "." + key);
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw UsageError("config: unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section s, TrainConfig& t) {
  std::string reg = to_string(t.regularizer);
  s.get("learning_rate", t.learning_rate);
  s.get("alpha", t.alpha);
  s.get("regularizer", reg);
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("validation_fraction", t.validation_fraction);
  s.get("partial_finetune", t.partial_finetune);
  s.finish();
  t.regularizer = regularizer_from_string(reg);
}

json write_train(const TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate},
              {"alpha", t.alpha},
              {"regularizer", to_string(t.regularizer)},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"validation_fraction", t.validation_fraction},
              {"partial_finetune", t.partial_finetune}};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool contains(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

void require_unique(const std::vector<std::string>& v, const std::string& what) {
  std::set<std::string> s(v.begin(), v.end());
  if (s.size() != v.size()) throw UsageError("config: duplicate entry in " + what);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (source == Source::synthetic) {
    synthetic.validate();
  } else if (csv_path.empty()) {
    throw UsageError("config: data.csv_path is required for a csv source");
  }
  if (available_contexts.empty()) throw UsageError("config: no available context");
  if (unseen_contexts.empty()) throw UsageError("config: no unseen context");
  require_unique(available_contexts, "contexts.available");
  require_unique(unseen_contexts, "contexts.unseen");
  require_unique(generic_users, "users.generic");
  require_unique(personal_users, "users.personal");
  for (const auto& c : available_contexts) {
    if (contains(unseen_contexts, c)) throw UsageError("config: context '" + c + "' is both available and unseen");
  }
  for (const auto& u : personal_users) {
    if (contains(generic_users, u)) throw UsageError("config: personal user '" + u + "' is also a generic user");
  }
  for (auto h : hidden) {
    if (h == 0) throw UsageError("config: hidden layer width must be positive");
  }
  if (seeds.empty()) throw UsageError("config: seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw UsageError("config: duplicate seed");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("config: test_fraction must lie in (0,1)");
  generic_train.validate();
  conventional.validate();
  crop.validate();
  if (crop.iterative_passes > 10) throw UsageError("config: crop.iterative_passes is capped at 10");
}

ExperimentConfig desk_scale_profile() {
  ExperimentConfig cfg;

  cfg.generic_train.learning_rate = 0.05;
  cfg.generic_train.epochs = 60;
  cfg.generic_train.batch_size = 32;

  cfg.conventional.learning_rate = 0.02;
  cfg.conventional.epochs = 100;
  cfg.conventional.batch_size = 16;

  cfg.crop.train_initial = cfg.conventional;
  cfg.crop.train_initial.alpha = 1e-3;
  cfg.crop.train_initial.regularizer = Regularizer::l1;

  cfg.crop.train_final = cfg.crop.train_initial;
  cfg.crop.train_final.learning_rate = 0.005;
  cfg.crop.train_final.epochs = 30;

  cfg.crop.prune = PruneConfig{0.05, 0.05, 0.05, PruneStrategy::magnitude_low};
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg = desk_scale_profile();
  Section top(root, "config");

  if (auto data = top.child("data")) {
    std::string source = "synthetic", csv;
    data->get("source", source);
    data->get("csv_path", csv);
    if (source == "synthetic") {
      cfg.source = ExperimentConfig::Source::synthetic;
    } else if (source == "csv") {
      cfg.source = ExperimentConfig::Source::csv;
    } else {
      throw UsageError("config: data.source must be synthetic or csv");
    }
    cfg.csv_path = csv;
    if (auto syn = data->child("synthetic")) {
      auto& s = cfg.synthetic;
      syn->get("num_generic_users", s.num_generic_users);
      syn->get("num_personal_users", s.num_personal_users);
      syn->get("num_classes", s.num_classes);
      syn->get("feature_dim", s.feature_dim);
      syn->get("class_separation", s.class_separation);
      syn->get("user_jitter", s.user_jitter);
      syn->get("noise_sigma", s.noise_sigma);
      syn->get("samples_per_cell", s.samples_per_cell);
      syn->get("seed", s.seed);
      if (const json* ctx = syn->raw("contexts")) {
        if (!ctx->is_array()) throw UsageError("config: data.synthetic.contexts must be an array");
        s.contexts.clear();
        for (std::size_t i = 0; i < ctx->size(); ++i) {
          Section c((*ctx)[i], "data.synthetic.contexts[" + std::to_string(i) + "]");
          ContextTransform t;
          c.get("rotation", t.rotation);
          c.get("bias_scale", t.bias_scale);
          c.finish();
          s.contexts.push_back(t);
        }
      }
      syn->finish();
    }
    data->finish();
  }
  if (auto users = top.child("users")) {
    users->get("generic", cfg.generic_users);
    users->get("personal", cfg.personal_users);
    users->finish();
  }
  if (auto ctx = top.child("contexts")) {
    ctx->get("available", cfg.available_contexts);
    ctx->get("unseen", cfg.unseen_contexts);
    ctx->finish();
  }
  if (auto model = top.child("model")) {
    model->get("hidden", cfg.hidden);
    model->finish();
  }
  if (auto s = top.child("generic_train")) read_train(*s, cfg.generic_train);
  if (auto s = top.child("conventional")) read_train(*s, cfg.conventional);
  if (auto c = top.child("crop")) {
    if (auto s = c->child("initial")) read_train(*s, cfg.crop.train_initial);
    if (auto s = c->child("final")) read_train(*s, cfg.crop.train_final);
    if (auto p = c->child("prune")) {
      std::string strategy = to_string(cfg.crop.prune.strategy);
      p->get("tau", cfg.crop.prune.tau);
      p->get("k", cfg.crop.prune.k);
      p->get("k_step", cfg.crop.prune.k_step);
      p->get("strategy", strategy);
      p->finish();
      cfg.crop.prune.strategy = strategy_from_string(strategy);
    }
    c->get("iterative_passes", cfg.crop.iterative_passes);
    c->get("keep_snapshots", cfg.crop.keep_stage_snapshots);
    c->finish();
  }
  top.get("seeds", cfg.seeds);
  std::string metric = to_string(cfg.metric);
  top.get("metric", metric);
  cfg.metric = metric_from_string(metric);
  cfg.crop.metric = cfg.metric;
  top.get("test_fraction", cfg.test_fraction);
  std::string out = cfg.output_dir.string();
  top.get("output_dir", out);
  cfg.output_dir = out;
  top.finish();

  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json contexts = json::array();
  for (const auto& c : cfg.synthetic.contexts) contexts.push_back({{"rotation", c.rotation}, {"bias_scale", c.bias_scale}});
  const auto& s = cfg.synthetic;
  json root = {
      {"data",
       {{"source", cfg.source == ExperimentConfig::Source::synthetic ? "synthetic" : "csv"},
        {"csv_path", cfg.csv_path.string()},
        {"synthetic",
         {{"num_generic_users", s.num_generic_users},
          {"num_personal_users", s.num_personal_users},
          {"num_classes", s.num_classes},
          {"feature_dim", s.feature_dim},
          {"class_separation", s.class_separation},
          {"user_jitter", s.user_jitter},
          {"noise_sigma", s.noise_sigma},
          {"contexts", contexts},
          {"samples_per_cell", s.samples_per_cell},
          {"seed", s.seed}}}}},
      {"users", {{"generic", cfg.generic_users}, {"personal", cfg.personal_users}}},
      {"contexts", {{"available", cfg.available_contexts}, {"unseen", cfg.unseen_contexts}}},
      {"model", {{"hidden", cfg.hidden}}},
      {"generic_train", write_train(cfg.generic_train)},
      {"conventional", write_train(cfg.conventional)},
      {"crop",
       {{"initial", write_train(cfg.crop.train_initial)},
        {"final", write_train(cfg.crop.train_final)},
        {"prune",
         {{"tau", cfg.crop.prune.tau},
          {"k", cfg.crop.prune.k},
          {"k_step", cfg.crop.prune.k_step},
          {"strategy", to_string(cfg.crop.prune.strategy)}}},
        {"iterative_passes", cfg.crop.iterative_passes},
        {"keep_snapshots", cfg.crop.keep_stage_snapshots}}},
      {"seeds", cfg.seeds},
      {"metric", to_string(cfg.metric)},
      {"test_fraction", cfg.test_fraction},
      {"output_dir", cfg.output_dir.string()}};
  return root.dump(2) + "\n";
}

std::vector<std::string> Experiment::all_contexts() const {
  auto out = cfg.available_contexts;
  out.insert(out.end(), cfg.unseen_contexts.begin(), cfg.unseen_contexts.end());
  return out;
}

std::vector<std::size_t> Experiment::layer_dims() const {
  std::vector<std::size_t> dims{data.feature_dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(data.num_classes());
  return dims;
}

Experiment resolve_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Experiment ex;
  ex.cfg = cfg;
  ex.cfg.crop.metric = cfg.metric;
  if (cfg.source == ExperimentConfig::Source::synthetic) {
    ex.data = generate(cfg.synthetic);
  } else {
    ex.data = load_csv(cfg.csv_path);
  }
  if (ex.data.num_classes() < 2) throw UsageError("data needs at least 2 classes");

  const auto users = ex.data.users();
  const auto contexts = ex.data.contexts();
  for (const auto& c : ex.all_contexts()) {
    if (!contains(contexts, c)) throw UsageError("context '" + c + "' does not occur in the data");
  }

  ex.personal_users = cfg.personal_users;
  ex.generic_users = cfg.generic_users;
  if (ex.personal_users.empty()) {
    if (cfg.source != ExperimentConfig::Source::synthetic) {
      throw UsageError("config: users.personal must be listed for csv data");
    }
    ex.personal_users = cfg.synthetic.personal_users();
  }
  if (ex.generic_users.empty()) {
    if (cfg.source == ExperimentConfig::Source::synthetic) {
      ex.generic_users = cfg.synthetic.generic_users();
    } else {
      for (const auto& u : users) {
        if (!contains(ex.personal_users, u)) ex.generic_users.push_back(u);
      }
    }
  }
  for (const auto& u : ex.personal_users) {
    if (!contains(users, u)) throw UsageError("personal user '" + u + "' does not occur in the data");
    if (contains(ex.generic_users, u)) throw UsageError("personal user '" + u + "' is also a generic user");
  }
  for (const auto& u : ex.generic_users) {
    if (!contains(users, u)) throw UsageError("generic user '" + u + "' does not occur in the data");
  }
  if (ex.generic_users.size() < 2) throw UsageError("need at least 2 generic users for a person-disjoint split");
  return ex;
}

RunSeeds derive_run_seeds(std::uint64_t seed, const std::string& user) {
  const std::uint64_t base = splitmix64(seed ^ splitmix64(fnv1a(user)));
  return RunSeeds{splitmix64(base + 1), splitmix64(base + 2), splitmix64(base + 3)};
}

TrainResult train_generic(const Experiment& ex, std::uint64_t seed) {
  const LabeledDataset data = ex.data.filter(ex.generic_users, ex.all_contexts());
  if (data.empty()) throw UsageError("generic users have no data");
  TrainConfig cfg = ex.cfg.generic_train;
  cfg.seed = seed;
  const double fractions[] = {1.0 - cfg.validation_fraction, cfg.validation_fraction};
  auto parts = split(data, fractions, Stratify::user_groups, splitmix64(seed));
  const ModelParams init = ModelParams::random(ex.layer_dims(), seed);
  return train_on_split(init, data, std::move(parts[0]), std::move(parts[1]), cfg);
}

UserSplit split_user(const Experiment& ex, const std::string& user, std::uint64_t seed) {
  const RunSeeds seeds = derive_run_seeds(seed, user);
  const LabeledDataset mine = ex.data.filter_users({user});
  UserSplit out;
  out.user = user;

  std::vector<std::size_t> train_rows;
  const double fractions[] = {1.0 - ex.cfg.test_fraction, ex.cfg.test_fraction};
  for (std::size_t ci = 0; ci < ex.cfg.available_contexts.size(); ++ci) {
    const auto& ctx = ex.cfg.available_contexts[ci];
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < mine.size(); ++r) {
      if (mine.context(r) == ctx) rows.push_back(r);
    }
    if (rows.empty()) throw UsageError("user '" + user + "' has no data in context '" + ctx + "'");
    const LabeledDataset part = mine.subset(rows);
    const auto parts = split(part, fractions, Stratify::label, splitmix64(seeds.test_split + ci));
    std::vector<std::size_t> test_rows;
    for (auto i : parts[0]) train_rows.push_back(rows[i]);
    for (auto i : parts[1]) test_rows.push_back(rows[i]);
    out.eval.emplace_back(ctx, mine.subset(test_rows));
  }
  std::sort(train_rows.begin(), train_rows.end());
  out.available = mine.subset(train_rows);
  for (const auto& ctx : ex.cfg.unseen_contexts) {
    LabeledDataset d = mine.filter_contexts({ctx});
    if (d.empty()) throw UsageError("user '" + user + "' has no data in context '" + ctx + "'");
    out.eval.emplace_back(ctx, std::move(d));
  }
  return out;
}

ContextScores score_contexts(const ModelParams& model, const UserSplit& split, MetricKind metric) {
  ContextScores scores;
  for (const auto& [ctx, d] : split.eval) scores[ctx] = evaluate(model, d, metric);
  return scores;
}

TrainConfig conventional_config(const ExperimentConfig& cfg, const RunSeeds& seeds) {
  TrainConfig t = cfg.conventional;
  t.seed = seeds.finetune;
  return t;
}

CropConfig crop_config(const ExperimentConfig& cfg, const RunSeeds& seeds) {
  CropConfig c = cfg.crop;
  c.metric = cfg.metric;
  c.train_initial.seed = seeds.finetune;
  c.train_final.seed = seeds.final;
  return c;
}

std::vector<GipRecord> stage_gip(const Experiment& ex, const std::string& user, std::uint64_t seed,
                                 const CropStages& stages) {
  std::vector<LabeledDataset> domains;
  for (const auto& ctx : ex.all_contexts()) domains.push_back(ex.data.filter({user}, {ctx}));
  const std::pair<int, const ModelParams*> order[] = {
      {2, &stages.finetuned}, {3, &stages.pruned}, {4, &stages.mixed}, {5, &stages.final}};
  const char* names[] = {"finetuned", "pruned", "mixed", "final"};
  std::vector<GipRecord> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out.push_back({user, seed, order[i].first, names[i], gip(*order[i].second, domains)});
  }
  return out;
}

BenchmarkResult run_benchmark(const Experiment& ex, const std::map<std::uint64_t, ModelParams>* generics) {
  BenchmarkResult result;
  const auto& seeds = ex.cfg.seeds;
  if (generics != nullptr) {
    for (auto s : seeds) {
      const auto it = generics->find(s);
      if (it == generics->end()) throw UsageError("no generic model supplied for seed " + std::to_string(s));
      result.generics.emplace(s, it->second);
    }
  } else {
    std::vector<ModelParams> trained(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) { trained[i] = train_generic(ex, seeds[i]).best; });
    for (std::size_t i = 0; i < seeds.size(); ++i) result.generics.emplace(seeds[i], std::move(trained[i]));
  }

  struct Job {
    std::vector<EvalRecord> records;
    std::vector<GipRecord> gip;
  };
  const std::size_t users = ex.personal_users.size();
  std::vector<Job> jobs(seeds.size() * users);

  parallel_for(jobs.size(), [&](std::size_t j) {
    const std::uint64_t seed = seeds[j / users];
    const std::string& user = ex.personal_users[j % users];
    const ModelParams& generic = result.generics.at(seed);
    const RunSeeds rs = derive_run_seeds(seed, user);
    const UserSplit sp = split_user(ex, user, seed);

    const ModelParams conv = conventional_finetune(generic, sp.available, conventional_config(ex.cfg, rs));
    CropConfig cc = crop_config(ex.cfg, rs);
    cc.keep_stage_snapshots = true;
    const CropResult cr = crop_personalize(generic, sp.available, cc);

    const std::pair<const char*, const ModelParams*> states[] = {
        {"generic", &generic},          {"conventional", &conv},           {"crop", &cr.final},
        {"crop_finetuned", &cr.stages->finetuned}, {"crop_pruned", &cr.stages->pruned},
        {"crop_mixed", &cr.stages->mixed}};
    for (const auto& [name, model] : states) {
      for (const auto& [ctx, value] : score_contexts(*model, sp, ex.cfg.metric)) {
        jobs[j].records.push_back({user, seed, name, ctx, value});
      }
    }
    jobs[j].gip = stage_gip(ex, user, seed, *cr.stages);
  });

  for (auto& job : jobs) {
    for (auto& r : job.records) result.report.add(std::move(r));
    for (auto& g : job.gip) result.gip.push_back(std::move(g));
  }
  return result;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("CROP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t threads = std::min(worker_count(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace crop
