#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ulb/accountant.hpp"
#include "ulb/data.hpp"
#include "ulb/difficulty.hpp"
#include "ulb/eval.hpp"
#include "ulb/io.hpp"
#include "ulb/landscape.hpp"
#include "ulb/model.hpp"
#include "ulb/svg.hpp"
#include "ulb/trainer.hpp"
#include "ulb/unlearner.hpp"

namespace ulb {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

struct DatasetConfig {
  std::string type = "synth";           // synth | idx | csv
  SynthSpec synth;
  std::string images_path;
  std::string labels_path;
  std::string csv_path;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 99;
};

struct TopkConfig {
  std::vector<int> sizes;
  std::vector<std::string> metrics;     // privacy_loss and/or proxy names
};

struct BarrierStageConfig {
  int grid_n = 24;
  bool aligned = true;
  std::string metric = "cross_entropy";  // cross_entropy | error_rate
  std::string data = "retain";           // retain | train | test
};

struct GroupStageConfig {
  bool enabled = false;
  double alpha = 8.0;
  int n_outer = 20;
  int n_inner = 1;
  std::uint64_t seed = 5;
};

struct MiaStageConfig {
  int members = 2000;
  int nonmembers = 2000;
  std::uint64_t seed = 17;
};

struct GusStageConfig {
  double sigma_sq = 0.062;
  std::uint64_t seed = 23;
};

struct MethodConfig {
  std::string name = "finetune";        // finetune | l1sparse
  double lr = 0.0;                      // 0 = inherit base lr
  double l1_coeff = 0.0;
};

struct ExperimentConfig {
  std::string output_dir;
  DatasetConfig dataset;
  ModelSpec model;
  TrainConfig train;
  AccountantConfig accountant;          // q = 0 and total_steps = 0 are derived per run
  int forget_set_size = 200;
  TopkConfig topk;
  UnlearnConfig unlearn;
  std::vector<MethodConfig> methods = {{"finetune", 0.0, 0.0}};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::uint64_t> oracle_seeds = {101, 102};
  std::vector<std::string> metrics = {"ua", "ra", "utility"};
  double margin = 0.05;
  BarrierStageConfig barrier;
  GroupStageConfig group;
  MiaStageConfig mia;
  GusStageConfig gus;
};

namespace cfg_detail {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace cfg_detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  using cfg_detail::get_or;
  ExperimentConfig cfg;
  cfg.output_dir = j.at("output_dir").get<std::string>();

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    cfg.dataset.type = get_or<std::string>(d, "type", "synth");
    if (d.contains("synth")) {
      const json& s = d.at("synth");
      cfg.dataset.synth.cluster_count = get_or(s, "cluster_count", 8);
      cfg.dataset.synth.per_cluster = get_or(s, "per_cluster", 500);
      cfg.dataset.synth.dim = get_or(s, "dim", 16);
      cfg.dataset.synth.spread = get_or(s, "spread", 0.35);
      cfg.dataset.synth.seed = get_or<std::uint64_t>(s, "seed", 0);
    }
    cfg.dataset.images_path = get_or<std::string>(d, "images", "");
    cfg.dataset.labels_path = get_or<std::string>(d, "labels", "");
    cfg.dataset.csv_path = get_or<std::string>(d, "csv", "");
    cfg.dataset.test_fraction = get_or(d, "test_fraction", 0.2);
    cfg.dataset.split_seed = get_or<std::uint64_t>(d, "split_seed", 99);
  }

  const json& m = j.at("model");
  cfg.model.layer_widths = m.at("layer_widths").get<std::vector<int>>();
  const std::string act = get_or<std::string>(m, "activation", "relu");
  if (act != "relu" && act != "tanh") throw std::invalid_argument("config: unknown activation");
  cfg.model.activation = act == "relu" ? Activation::kRelu : Activation::kTanh;

  const json& t = j.at("train");
  cfg.train.epochs = t.at("epochs").get<int>();
  cfg.train.batch_size = get_or(t, "batch_size", 64);
  cfg.train.lr0 = t.at("lr0").get<double>();
  cfg.train.milestones = get_or(t, "milestones", std::vector<int>{});
  cfg.train.decay_factor = get_or(t, "decay_factor", 0.1);
  cfg.train.weight_decay = get_or(t, "weight_decay", 0.0);
  cfg.train.noise_sigma = get_or(t, "noise_sigma", 0.0);
  cfg.train.checkpoint_count = get_or(t, "checkpoint_count", 35);
  cfg.train.seed = get_or<std::uint64_t>(t, "seed", 0);

  if (j.contains("accountant")) {
    const json& a = j.at("accountant");
    cfg.accountant.alpha = get_or(a, "alpha", 2.0);
    cfg.accountant.sigma = get_or(a, "sigma", 0.1);
    cfg.accountant.q = get_or(a, "q", 0.0);
    cfg.accountant.p = get_or<long>(a, "p", 0);
  }

  cfg.forget_set_size = get_or(j, "forget_set_size", 200);
  if (j.contains("topk")) {
    cfg.topk.sizes = get_or(j.at("topk"), "sizes", std::vector<int>{});
    cfg.topk.metrics = get_or(j.at("topk"), "metrics", std::vector<std::string>{});
  }

  const json& u = j.at("unlearn");
  cfg.unlearn.lr = u.at("lr").get<double>();
  cfg.unlearn.l1_coeff = get_or(u, "l1_coeff", 0.0);
  cfg.unlearn.epochs = get_or(u, "epochs", 25);
  cfg.unlearn.batch_size = get_or(u, "batch_size", 64);
  cfg.unlearn.eval_every = get_or<long>(u, "eval_every", 1);
  cfg.unlearn.seed = get_or<std::uint64_t>(u, "seed", 7);
  cfg.unlearn.weight_decay = get_or(u, "weight_decay", 0.0);
  cfg.unlearn.noise_sigma = get_or(u, "noise_sigma", 0.0);

  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const json& mj : j.at("methods")) {
      MethodConfig mc;
      mc.name = get_or<std::string>(mj, "method", "finetune");
      if (mc.name != "finetune" && mc.name != "l1sparse") {
        throw std::invalid_argument("config: unknown unlearning method " + mc.name);
      }
      mc.lr = get_or(mj, "lr", 0.0);
      mc.l1_coeff = get_or(mj, "l1_coeff", 0.0);
      cfg.methods.push_back(mc);
    }
    if (cfg.methods.empty()) throw std::invalid_argument("config: methods list empty");
  }

  cfg.seeds = get_or(j, "seeds", cfg.seeds);
  cfg.oracle_seeds = get_or(j, "oracle_seeds", cfg.oracle_seeds);
  cfg.metrics = get_or(j, "metrics", cfg.metrics);
  cfg.margin = get_or(j, "margin", 0.05);

  if (j.contains("barrier")) {
    const json& b = j.at("barrier");
    cfg.barrier.grid_n = get_or(b, "grid_n", 24);
    cfg.barrier.aligned = get_or(b, "aligned", true);
    cfg.barrier.metric = get_or<std::string>(b, "metric", "cross_entropy");
    cfg.barrier.data = get_or<std::string>(b, "data", "retain");
  }
  if (j.contains("group")) {
    const json& g = j.at("group");
    cfg.group.enabled = get_or(g, "enabled", false);
    cfg.group.alpha = get_or(g, "alpha", 8.0);
    cfg.group.n_outer = get_or(g, "n_outer", 20);
    cfg.group.n_inner = get_or(g, "n_inner", 1);
    cfg.group.seed = get_or<std::uint64_t>(g, "seed", 5);
  }
  if (j.contains("mia")) {
    const json& mi = j.at("mia");
    cfg.mia.members = get_or(mi, "members", 2000);
    cfg.mia.nonmembers = get_or(mi, "nonmembers", 2000);
    cfg.mia.seed = get_or<std::uint64_t>(mi, "seed", 17);
  }
  if (j.contains("gus")) {
    const json& g = j.at("gus");
    cfg.gus.sigma_sq = get_or(g, "sigma_sq", 0.062);
    cfg.gus.seed = get_or<std::uint64_t>(g, "seed", 23);
  }

  if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds list empty");
  if (cfg.oracle_seeds.empty()) throw std::invalid_argument("config: oracle_seeds empty");
  validate(cfg.model);
  return cfg;
}

inline json experiment_config_json(const ExperimentConfig& cfg) {
  json j;
  j["output_dir"] = cfg.output_dir;
  j["dataset"] = {{"type", cfg.dataset.type},
                  {"synth",
                   {{"cluster_count", cfg.dataset.synth.cluster_count},
                    {"per_cluster", cfg.dataset.synth.per_cluster},
                    {"dim", cfg.dataset.synth.dim},
                    {"spread", cfg.dataset.synth.spread},
                    {"seed", cfg.dataset.synth.seed}}},
                  {"images", cfg.dataset.images_path},
                  {"labels", cfg.dataset.labels_path},
                  {"csv", cfg.dataset.csv_path},
                  {"test_fraction", cfg.dataset.test_fraction},
                  {"split_seed", cfg.dataset.split_seed}};
  j["model"] = {{"layer_widths", cfg.model.layer_widths},
                {"activation", cfg.model.activation == Activation::kRelu ? "relu" : "tanh"}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr0", cfg.train.lr0},
                {"milestones", cfg.train.milestones},
                {"decay_factor", cfg.train.decay_factor},
                {"weight_decay", cfg.train.weight_decay},
                {"noise_sigma", cfg.train.noise_sigma},
                {"checkpoint_count", cfg.train.checkpoint_count},
                {"seed", cfg.train.seed}};
  j["accountant"] = {{"alpha", cfg.accountant.alpha},
                     {"sigma", cfg.accountant.sigma},
                     {"q", cfg.accountant.q},
                     {"p", cfg.accountant.p}};
  j["forget_set_size"] = cfg.forget_set_size;
  j["topk"] = {{"sizes", cfg.topk.sizes}, {"metrics", cfg.topk.metrics}};
  j["unlearn"] = {{"lr", cfg.unlearn.lr},
                  {"l1_coeff", cfg.unlearn.l1_coeff},
                  {"epochs", cfg.unlearn.epochs},
                  {"batch_size", cfg.unlearn.batch_size},
                  {"eval_every", cfg.unlearn.eval_every},
                  {"seed", cfg.unlearn.seed},
                  {"weight_decay", cfg.unlearn.weight_decay},
                  {"noise_sigma", cfg.unlearn.noise_sigma}};
  json methods = json::array();
  for (const MethodConfig& mc : cfg.methods) {
    methods.push_back({{"method", mc.name}, {"lr", mc.lr}, {"l1_coeff", mc.l1_coeff}});
  }
  j["methods"] = methods;
  j["seeds"] = cfg.seeds;
  j["oracle_seeds"] = cfg.oracle_seeds;
  j["metrics"] = cfg.metrics;
  j["margin"] = cfg.margin;
  j["barrier"] = {{"grid_n", cfg.barrier.grid_n},
                  {"aligned", cfg.barrier.aligned},
                  {"metric", cfg.barrier.metric},
                  {"data", cfg.barrier.data}};
  j["group"] = {{"enabled", cfg.group.enabled},
                {"alpha", cfg.group.alpha},
                {"n_outer", cfg.group.n_outer},
                {"n_inner", cfg.group.n_inner},
                {"seed", cfg.group.seed}};
  j["mia"] = {{"members", cfg.mia.members},
              {"nonmembers", cfg.mia.nonmembers},
              {"seed", cfg.mia.seed}};
  j["gus"] = {{"sigma_sq", cfg.gus.sigma_sq}, {"seed", cfg.gus.seed}};
  return j;
}

inline std::string config_digest(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << std::hex << fnv1a64(experiment_config_json(cfg).dump());
  return os.str();
}

// ---------------------------------------------------------------------------
// manifest

struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& message)
      : std::runtime_error("stage " + stage_name + ": " + message), stage(std::move(stage_name)) {}
};

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

inline void write_json_atomic(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

// Single source of stage truth for a run directory. Every completed stage is
// recorded with the digest of the config that produced it.
class Manifest {
 public:
  static Manifest load(const fs::path& dir) {
    Manifest m;
    m.path_ = dir / "manifest.json";
    if (fs::exists(m.path_)) {
      m.data_ = read_json_file(m.path_);
    } else {
      m.data_ = json{{"stages", json::object()}};
    }
    return m;
  }

  bool is_done(const std::string& stage, const std::string& digest) const {
    const json& stages = data_.at("stages");
    if (!stages.contains(stage)) return false;
    const json& s = stages.at(stage);
    if (!s.value("done", false) || s.value("digest", "") != digest) return false;
    for (const auto& out : s.value("outputs", std::vector<std::string>{})) {
      if (!fs::exists(path_.parent_path() / out)) return false;
    }
    return true;
  }

  void mark_done(const std::string& stage, const std::string& digest,
                 const std::vector<std::string>& outputs) {
    data_["stages"][stage] = {{"done", true}, {"digest", digest}, {"outputs", outputs}};
    write_json_atomic(path_, data_);
  }

  bool has_stage(const std::string& stage) const {
    return data_.at("stages").contains(stage) &&
           data_.at("stages").at(stage).value("done", false);
  }

  const json& data() const { return data_; }

 private:
  json data_;
  fs::path path_;
};

// ---------------------------------------------------------------------------
// artifacts

inline void save_trajectory(const fs::path& dir, const ModelSpec& spec, const Trajectory& traj) {
  fs::create_directories(dir);
  json meta;
  meta["checkpoint_steps"] = traj.checkpoint_steps;
  meta["total_steps"] = traj.total_steps;
  meta["n_examples"] = traj.n_examples;
  meta["batch_size"] = traj.batch_size;
  meta["example_ids"] = traj.example_ids;
  write_json_atomic(dir / "meta.json", meta);
  for (int i = 0; i < traj.checkpoint_count(); ++i) {
    write_checkpoint((dir / ("ckpt_" + std::to_string(traj.checkpoint_steps[i]) + ".ulb")).string(),
                     spec, traj.checkpoints[i], traj.checkpoint_steps[i]);
  }
  write_f64_matrix((dir / "grad_norms.bin").string(), traj.grad_norm_log);
  write_f64_matrix((dir / "confidences.bin").string(), traj.confidence_log);
  write_checkpoint((dir / "final.ulb").string(), spec, traj.final_params, traj.total_steps);
}

inline Trajectory load_trajectory(const fs::path& dir, const ModelSpec& spec) {
  const json meta = read_json_file(dir / "meta.json");
  Trajectory traj;
  traj.checkpoint_steps = meta.at("checkpoint_steps").get<std::vector<long>>();
  traj.total_steps = meta.at("total_steps").get<long>();
  traj.n_examples = meta.at("n_examples").get<int>();
  traj.batch_size = meta.at("batch_size").get<int>();
  traj.example_ids = meta.at("example_ids").get<std::vector<std::int64_t>>();
  const std::size_t cells =
      traj.checkpoint_steps.size() * static_cast<std::size_t>(traj.n_examples);
  traj.grad_norm_log = read_f64_matrix((dir / "grad_norms.bin").string(), cells);
  traj.confidence_log = read_f64_matrix((dir / "confidences.bin").string(), cells);
  for (long s : traj.checkpoint_steps) {
    traj.checkpoints.push_back(
        read_checkpoint((dir / ("ckpt_" + std::to_string(s) + ".ulb")).string(), spec).params);
  }
  traj.final_params = read_checkpoint((dir / "final.ulb").string(), spec).params;
  return traj;
}

inline void save_split(const fs::path& path, const ForgetSplit& split) {
  json j;
  j["label"] = split.label;
  j["mean_score"] = split.mean_score;
  j["forget_ids"] = split.forget_ids;
  j["retain_ids"] = split.retain_ids;
  write_json_atomic(path, j);
}

inline ForgetSplit load_split(const fs::path& path) {
  const json j = read_json_file(path);
  ForgetSplit split;
  split.label = j.at("label").get<std::string>();
  split.mean_score = j.at("mean_score").get<double>();
  split.forget_ids = j.at("forget_ids").get<std::vector<std::int64_t>>();
  split.retain_ids = j.at("retain_ids").get<std::vector<std::int64_t>>();
  return split;
}

// ---------------------------------------------------------------------------
// pipeline context and stages

struct PipelineContext {
  ExperimentConfig cfg;
  fs::path out;
  std::string digest;
  Dataset train_set;
  Dataset test_set;

  fs::path seed_dir(std::uint64_t seed) const { return out / ("seed_" + std::to_string(seed)); }
};

struct RunReport {
  std::vector<std::string> executed;
  std::vector<std::string> skipped;
  bool ok = true;
  std::string failed_stage;
  std::string error;
};

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = {"train",   "score",    "proxies", "split",
                                                 "oracle",  "unlearn",  "evaluate", "barrier",
                                                 "correlate", "report"};
  return order;
}

inline PipelineContext make_context(const ExperimentConfig& cfg) {
  PipelineContext ctx;
  ctx.cfg = cfg;
  ctx.out = cfg.output_dir;
  if (const char* env = std::getenv("OUTPUT_DIR"); env != nullptr && *env != '\0') {
    ctx.out = env;
  }
  ctx.digest = config_digest(cfg);

  Dataset full;
  if (cfg.dataset.type == "synth") {
    full = synth_gaussians(cfg.dataset.synth);
  } else if (cfg.dataset.type == "idx") {
    full = load_idx(cfg.dataset.images_path, cfg.dataset.labels_path);
  } else if (cfg.dataset.type == "csv") {
    full = load_csv(cfg.dataset.csv_path);
  } else {
    throw std::invalid_argument("config: unknown dataset type " + cfg.dataset.type);
  }
  std::tie(ctx.train_set, ctx.test_set) =
      split_train_test(full, cfg.dataset.test_fraction, cfg.dataset.split_seed);
  return ctx;
}

namespace stage {

inline std::vector<std::string> split_names(const PipelineContext& ctx) {
  std::vector<std::string> names = {"stratified_bottom", "stratified_q1", "stratified_q2",
                                    "stratified_q3", "stratified_top"};
  for (const std::string& metric : ctx.cfg.topk.metrics) {
    for (int k : ctx.cfg.topk.sizes) {
      names.push_back("topk_" + metric + "_" + std::to_string(k));
    }
  }
  return names;
}

inline TrainConfig train_config_for_seed(const PipelineContext& ctx, std::uint64_t seed) {
  TrainConfig tc = ctx.cfg.train;
  tc.seed = seed;
  return tc;
}

inline AccountantConfig accountant_for_run(const PipelineContext& ctx, const Trajectory& traj) {
  AccountantConfig ac = ctx.cfg.accountant;
  if (ac.q <= 0.0) ac.q = static_cast<double>(traj.batch_size) / traj.n_examples;
  ac.total_steps = traj.total_steps;
  return ac;
}

inline std::vector<std::string> train_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path dir = ctx.seed_dir(seed) / "trajectory";
    const Trajectory traj =
        train(ctx.cfg.model, ctx.train_set, train_config_for_seed(ctx, seed));
    save_trajectory(dir, ctx.cfg.model, traj);
    outputs.push_back(fs::relative(dir / "meta.json", ctx.out).string());
    outputs.push_back(fs::relative(dir / "final.ulb", ctx.out).string());
  }
  return outputs;
}

inline std::vector<std::string> score_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const Trajectory traj = load_trajectory(ctx.seed_dir(seed) / "trajectory", ctx.cfg.model);
    const PrivacyLossTable table = score_trajectory(traj, accountant_for_run(ctx, traj));
    const fs::path path = ctx.seed_dir(seed) / "privacy_loss.csv";
    save_privacy_table(path.string(), table);
    outputs.push_back(fs::relative(path, ctx.out).string());
  }
  return outputs;
}

inline std::vector<std::string> proxies_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path dir = ctx.seed_dir(seed) / "proxies";
    fs::create_directories(dir);
    const Trajectory traj = load_trajectory(ctx.seed_dir(seed) / "trajectory", ctx.cfg.model);
    std::vector<ScoreVector> tables = {proxy_grad_norm(traj, GradNormProxy::kMid),
                                       proxy_grad_norm(traj, GradNormProxy::kEnd),
                                       proxy_grad_norm(traj, GradNormProxy::kAverage),
                                       proxy_c(traj)};
    const int mid = traj.checkpoint_count() / 2;
    tables.push_back(proxy_el2n(ctx.cfg.model, traj.checkpoints[mid], ctx.train_set));
    for (const ScoreVector& sv : tables) {
      const fs::path path = dir / (sv.metric + ".csv");
      save_scores(path.string(), sv);
      outputs.push_back(fs::relative(path, ctx.out).string());
    }
  }
  return outputs;
}

inline ScoreVector load_privacy_scores(const PipelineContext& ctx, std::uint64_t seed) {
  const fs::path path = ctx.seed_dir(seed) / "privacy_loss.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  ScoreVector sv;
  sv.metric = "privacy_loss";
  sv.higher_is_harder = true;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id_s, loss_s;
    std::getline(ss, id_s, ',');
    std::getline(ss, loss_s, ',');
    sv.ids.push_back(std::stoll(id_s));
    sv.scores.push_back(std::stod(loss_s));
  }
  return sv;
}

inline ScoreVector load_metric_scores(const PipelineContext& ctx, std::uint64_t seed,
                                      const std::string& metric) {
  if (metric == "privacy_loss") return load_privacy_scores(ctx, seed);
  return load_scores((ctx.seed_dir(seed) / "proxies" / (metric + ".csv")).string());
}

inline std::vector<std::string> split_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path dir = ctx.seed_dir(seed) / "splits";
    fs::create_directories(dir);
    const ScoreVector privacy = load_privacy_scores(ctx, seed);
    const std::vector<ForgetSplit> splits =
        stratified_forget_sets(privacy, ctx.cfg.forget_set_size);
    for (const ForgetSplit& split : splits) {
      const fs::path path = dir / ("stratified_" + split.label + ".json");
      save_split(path, split);
      outputs.push_back(fs::relative(path, ctx.out).string());
    }
    for (const std::string& metric : ctx.cfg.topk.metrics) {
      const ScoreVector sv = load_metric_scores(ctx, seed, metric);
      for (int k : ctx.cfg.topk.sizes) {
        ForgetSplit split = top_k_forget_set(sv, k);
        split.label = "topk_" + metric + "_" + std::to_string(k);
        const fs::path path = dir / (split.label + ".json");
        save_split(path, split);
        outputs.push_back(fs::relative(path, ctx.out).string());
      }
    }
  }
  return outputs;
}

inline std::vector<std::string> oracle_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    for (const std::string& name : split_names(ctx)) {
      const ForgetSplit split = load_split(ctx.seed_dir(seed) / "splits" / (name + ".json"));
      const Dataset retain = subset_by_ids(ctx.train_set, split.retain_ids);
      const fs::path dir = ctx.seed_dir(seed) / "oracles" / name;
      fs::create_directories(dir);
      for (std::uint64_t oseed : ctx.cfg.oracle_seeds) {
        TrainConfig tc = train_config_for_seed(ctx, oseed);
        const ParamVector params = train_oracle(ctx.cfg.model, retain, tc);
        const fs::path path = dir / ("oracle_" + std::to_string(oseed) + ".ulb");
        write_checkpoint(path.string(), ctx.cfg.model, params, tc.epochs);
        outputs.push_back(fs::relative(path, ctx.out).string());
      }
    }
  }
  return outputs;
}

// Builds the tracked evaluators for one split. The gus evaluator only exists
// in the poisoned arm, where a record is available.
inline std::vector<MetricEvaluator> build_evaluators(const PipelineContext& ctx,
                                                     std::uint64_t seed, const Dataset& forget,
                                                     const Dataset& retain,
                                                     const PoisonRecord* record) {
  std::vector<MetricEvaluator> evals;
  const ModelSpec& spec = ctx.cfg.model;
  const Dataset& test = ctx.test_set;
  for (const std::string& metric : ctx.cfg.metrics) {
    if (metric == "ua") {
      evals.push_back({"ua", [&spec, &forget](const ParamVector& p) {
                         return 1.0 - accuracy(spec, p, forget);
                       }});
    } else if (metric == "ra") {
      evals.push_back({"ra", [&spec, &retain](const ParamVector& p) {
                         return accuracy(spec, p, retain);
                       }});
    } else if (metric == "utility") {
      evals.push_back({"utility", [&spec, &test](const ParamVector& p) {
                         return accuracy(spec, p, test);
                       }});
    } else if (metric == "mia") {
      const int m = std::min(ctx.cfg.mia.members, retain.n);
      const int nm = std::min(ctx.cfg.mia.nonmembers, test.n);
      Rng rng(mix_seed(ctx.cfg.mia.seed, seed));
      const Dataset members = subset_by_indices(retain, rng.sample_without_replacement(retain.n, m));
      const Dataset nonmembers =
          subset_by_indices(test, rng.sample_without_replacement(test.n, nm));
      const std::uint64_t mia_seed = mix_seed(ctx.cfg.mia.seed, seed + 1);
      evals.push_back({"mia", [&spec, members, nonmembers, &forget, mia_seed](
                                  const ParamVector& p) {
                         return mia_score(spec, p, members, nonmembers, forget, mia_seed).score;
                       }});
    } else if (metric == "gus") {
      if (record == nullptr) continue;  // only tracked in the poisoned arm
      const PoisonRecord rec = *record;
      evals.push_back({"gus", [&spec, &forget, rec](const ParamVector& p) {
                         return gus_score(spec, p, forget, rec);
                       }});
    } else {
      throw std::invalid_argument("config: unknown metric " + metric);
    }
  }
  return evals;
}

inline UnlearnConfig unlearn_config_for(const PipelineContext& ctx, const MethodConfig& mc,
                                        std::uint64_t seed) {
  UnlearnConfig uc = ctx.cfg.unlearn;
  uc.method = mc.name == "l1sparse" ? UnlearnMethod::kL1Sparse : UnlearnMethod::kFinetune;
  if (mc.lr > 0.0) uc.lr = mc.lr;
  uc.l1_coeff = mc.l1_coeff;
  uc.seed = mix_seed(uc.seed, seed);
  validate(uc);
  return uc;
}

inline void save_run(const fs::path& dir, const UnlearnRun& run, const std::string& split_label,
                     const std::string& method) {
  fs::create_directories(dir);
  save_run_csv((dir / "run.csv").string(), run);
  json sidecar;
  sidecar["split"] = split_label;
  sidecar["method"] = method;
  sidecar["lr"] = run.config.lr;
  sidecar["l1_coeff"] = run.config.l1_coeff;
  sidecar["epochs"] = run.config.epochs;
  sidecar["batch_size"] = run.config.batch_size;
  sidecar["eval_every"] = run.config.eval_every;
  sidecar["noise_sigma"] = run.config.noise_sigma;
  sidecar["weight_decay"] = run.config.weight_decay;
  sidecar["seed"] = run.config.seed;
  sidecar["total_steps"] = run.total_steps;
  sidecar["sampled_id_count"] = run.sampled_ids.size();
  write_json_atomic(dir / "run.json", sidecar);
}

inline UnlearnRun load_run(const fs::path& dir) {
  UnlearnRun run;
  const json sidecar = read_json_file(dir / "run.json");
  run.total_steps = sidecar.at("total_steps").get<long>();
  run.config.eval_every = sidecar.at("eval_every").get<long>();
  std::ifstream in(dir / "run.csv");
  if (!in) throw std::runtime_error("cannot open " + (dir / "run.csv").string());
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::map<long, double>> by_metric;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step_s, metric, value_s;
    std::getline(ss, step_s, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value_s, ',');
    by_metric[metric][std::stol(step_s)] = std::stod(value_s);
  }
  bool first = true;
  for (const auto& [metric, series] : by_metric) {
    run.metric_names.push_back(metric);
    std::vector<double> values;
    for (const auto& [step, value] : series) {
      if (first) run.eval_steps.push_back(step);
      values.push_back(value);
    }
    first = false;
    run.series.push_back(std::move(values));
  }
  return run;
}

inline bool gus_tracked(const PipelineContext& ctx) {
  return std::find(ctx.cfg.metrics.begin(), ctx.cfg.metrics.end(), "gus") !=
         ctx.cfg.metrics.end();
}

inline std::vector<std::string> unlearn_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path sdir = ctx.seed_dir(seed);
    const ParamVector start =
        read_checkpoint((sdir / "trajectory" / "final.ulb").string(), ctx.cfg.model).params;
    for (const std::string& name : split_names(ctx)) {
      const ForgetSplit split = load_split(sdir / "splits" / (name + ".json"));
      const Dataset forget = subset_by_ids(ctx.train_set, split.forget_ids);
      const Dataset retain = subset_by_ids(ctx.train_set, split.retain_ids);
      const std::vector<MetricEvaluator> evals =
          build_evaluators(ctx, seed, forget, retain, nullptr);
      for (const MethodConfig& mc : ctx.cfg.methods) {
        const UnlearnConfig uc = unlearn_config_for(ctx, mc, seed);
        const UnlearnRun run = run_unlearning(ctx.cfg.model, start, retain, uc, evals);
        const fs::path dir = sdir / "unlearn" / (name + "__" + mc.name);
        save_run(dir, run, name, mc.name);
        write_checkpoint((dir / "final.ulb").string(), ctx.cfg.model, run.final_params,
                         run.total_steps);
        outputs.push_back(fs::relative(dir / "run.csv", ctx.out).string());
      }

      if (gus_tracked(ctx)) {
        // poisoned arm: train on the poisoned dataset, then unlearn it
        const auto [poisoned, record] =
            gus_poison(ctx.train_set, split.forget_ids, ctx.cfg.gus.sigma_sq,
                       mix_seed(ctx.cfg.gus.seed, seed));
        const Trajectory ptraj =
            train(ctx.cfg.model, poisoned, train_config_for_seed(ctx, seed));
        const fs::path gdir = sdir / "gus" / name;
        fs::create_directories(gdir);
        save_poison_record((gdir / "poison_record.bin").string(), record);
        write_checkpoint((gdir / "poisoned_final.ulb").string(), ctx.cfg.model,
                         ptraj.final_params, ptraj.total_steps);
        const std::vector<MetricEvaluator> gevals =
            build_evaluators(ctx, seed, forget, retain, &record);
        for (const MethodConfig& mc : ctx.cfg.methods) {
          const UnlearnConfig uc = unlearn_config_for(ctx, mc, seed);
          const UnlearnRun run =
              run_unlearning(ctx.cfg.model, ptraj.final_params, retain, uc, gevals);
          const fs::path dir = sdir / "gus" / (name + "__" + mc.name);
          save_run(dir, run, name, mc.name);
          write_checkpoint((dir / "final.ulb").string(), ctx.cfg.model, run.final_params,
                           run.total_steps);
          outputs.push_back(fs::relative(dir / "run.csv", ctx.out).string());
        }
      }
    }
  }
  return outputs;
}

inline std::vector<ParamVector> load_oracles(const PipelineContext& ctx, std::uint64_t seed,
                                             const std::string& split_name) {
  std::vector<ParamVector> oracles;
  for (std::uint64_t oseed : ctx.cfg.oracle_seeds) {
    const fs::path path = ctx.seed_dir(seed) / "oracles" / split_name /
                          ("oracle_" + std::to_string(oseed) + ".ulb");
    oracles.push_back(read_checkpoint(path.string(), ctx.cfg.model).params);
  }
  return oracles;
}

inline std::vector<std::string> evaluate_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path sdir = ctx.seed_dir(seed);
    const fs::path dir = sdir / "evaluate";
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "split,method,metric,oracle_value,final_value,time_steps,reached\n";
    for (const std::string& name : split_names(ctx)) {
      const ForgetSplit split = load_split(sdir / "splits" / (name + ".json"));
      const Dataset forget = subset_by_ids(ctx.train_set, split.forget_ids);
      const Dataset retain = subset_by_ids(ctx.train_set, split.retain_ids);
      const std::vector<MetricEvaluator> evals =
          build_evaluators(ctx, seed, forget, retain, nullptr);
      const std::vector<ParamVector> oracles = load_oracles(ctx, seed, name);
      std::map<std::string, double> oracle_values;
      for (const MetricEvaluator& ev : evals) {
        double sum = 0.0;
        for (const ParamVector& o : oracles) sum += ev.fn(o);
        oracle_values[ev.name] = sum / oracles.size();
      }
      for (const MethodConfig& mc : ctx.cfg.methods) {
        const UnlearnRun run = load_run(sdir / "unlearn" / (name + "__" + mc.name));
        for (const std::string& metric : run.metric_names) {
          const double oracle_value = oracle_values.at(metric);
          const auto t = time_to_unlearn(run, metric, oracle_value, ctx.cfg.margin);
          csv << name << ',' << mc.name << ',' << metric << ',' << fmt_double(oracle_value)
              << ',' << fmt_double(run.metric(metric).back()) << ','
              << (t ? std::to_string(*t) : "-1") << ',' << (t ? 1 : 0) << '\n';
        }
      }
    }
    const fs::path csv_path = dir / "time_to_unlearn.csv";
    write_text(csv_path.string(), csv.str());
    outputs.push_back(fs::relative(csv_path, ctx.out).string());

    if (ctx.cfg.group.enabled) {
      const Trajectory traj = load_trajectory(sdir / "trajectory", ctx.cfg.model);
      AccountantConfig ac = accountant_for_run(ctx, traj);
      ac.alpha = ctx.cfg.group.alpha;
      std::ostringstream gcsv;
      gcsv << "split,mean,stddev,repeats\n";
      for (const std::string& name : split_names(ctx)) {
        const ForgetSplit split = load_split(sdir / "splits" / (name + ".json"));
        const Dataset retain = subset_by_ids(ctx.train_set, split.retain_ids);
        const GroupEstimate est =
            group_loss_estimate(traj, ctx.cfg.model, ctx.train_set, retain, ac,
                                ctx.cfg.group.n_outer, ctx.cfg.group.n_inner,
                                mix_seed(ctx.cfg.group.seed, seed));
        gcsv << name << ',' << fmt_double(est.mean) << ',' << fmt_double(est.stddev) << ','
             << est.samples.size() << '\n';
      }
      const fs::path gpath = dir / "group_estimates.csv";
      write_text(gpath.string(), gcsv.str());
      outputs.push_back(fs::relative(gpath, ctx.out).string());
    }
  }
  return outputs;
}

inline BarrierMetric barrier_metric_of(const PipelineContext& ctx) {
  if (ctx.cfg.barrier.metric == "cross_entropy") return BarrierMetric::kCrossEntropy;
  if (ctx.cfg.barrier.metric == "error_rate") return BarrierMetric::kErrorRate;
  throw std::invalid_argument("config: unknown barrier metric " + ctx.cfg.barrier.metric);
}

inline std::vector<std::string> barrier_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  const BarrierMetric metric = barrier_metric_of(ctx);
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path sdir = ctx.seed_dir(seed);
    const fs::path dir = sdir / "barriers";
    fs::create_directories(dir);
    const ParamVector trained =
        read_checkpoint((sdir / "trajectory" / "final.ulb").string(), ctx.cfg.model).params;
    for (const std::string& name : split_names(ctx)) {
      const ForgetSplit split = load_split(sdir / "splits" / (name + ".json"));
      const Dataset retain = subset_by_ids(ctx.train_set, split.retain_ids);
      const Dataset* data = &retain;
      if (ctx.cfg.barrier.data == "train") data = &ctx.train_set;
      if (ctx.cfg.barrier.data == "test") data = &ctx.test_set;
      const std::vector<ParamVector> oracles = load_oracles(ctx, seed, name);

      auto emit = [&](const std::string& kind, const ParamVector& a, const ParamVector& b) {
        ParamVector b_use = b;
        bool aligned = false;
        if (ctx.cfg.barrier.aligned) {
          b_use = align_permutations(ctx.cfg.model, a, b).params;
          aligned = true;
        }
        const BarrierProfile prof =
            barrier(ctx.cfg.model, a, b_use, *data, ctx.cfg.barrier.grid_n, metric);
        const fs::path base = dir / (name + "__" + kind);
        save_barrier_csv(base.string() + ".csv", prof);
        json sidecar;
        sidecar["barrier"] = prof.barrier;
        sidecar["aligned"] = aligned;
        sidecar["grid_n"] = ctx.cfg.barrier.grid_n;
        sidecar["metric"] = ctx.cfg.barrier.metric;
        sidecar["split"] = name;
        sidecar["kind"] = kind;
        sidecar["loss_w"] = prof.loss_w;
        sidecar["loss_w_prime"] = prof.loss_w_prime;
        write_json_atomic(base.string() + ".json", sidecar);
        outputs.push_back(fs::relative(base.string() + ".json", ctx.out).string());
      };

      emit("pre", trained, oracles[0]);
      const fs::path unlearned_path =
          sdir / "unlearn" / (name + "__" + ctx.cfg.methods.front().name) / "final.ulb";
      emit("post", read_checkpoint(unlearned_path.string(), ctx.cfg.model).params, oracles[0]);
      if (oracles.size() >= 2) emit("baseline", oracles[0], oracles[1]);
    }
  }
  return outputs;
}

inline std::vector<std::string> correlate_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  const std::vector<std::string> proxy_names = {"mid_grad_norm", "end_grad_norm", "avg_grad_norm",
                                                "c_proxy", "el2n"};
  const std::vector<std::string> strata = {"stratified_bottom", "stratified_q1", "stratified_q2",
                                           "stratified_q3", "stratified_top"};
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path sdir = ctx.seed_dir(seed);
    const fs::path dir = sdir / "correlate";
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "kind,x,y,method,metric,spearman,n\n";

    const ScoreVector privacy = load_privacy_scores(ctx, seed);
    for (const std::string& proxy : proxy_names) {
      const ScoreVector sv = load_metric_scores(ctx, seed, proxy);
      csv << "proxy,privacy_loss," << proxy << ",,," << fmt_double(spearman(privacy, sv)) << ','
          << privacy.ids.size() << '\n';
    }

    // difficulty rank (1..5 by mean privacy loss) vs time-to-unlearn
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> times;
    {
      std::ifstream in(sdir / "evaluate" / "time_to_unlearn.csv");
      if (!in) throw std::runtime_error("evaluate outputs missing");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string split, method, metric, oracle_s, final_s, time_s, reached_s;
        std::getline(ss, split, ',');
        std::getline(ss, method, ',');
        std::getline(ss, metric, ',');
        std::getline(ss, oracle_s, ',');
        std::getline(ss, final_s, ',');
        std::getline(ss, time_s, ',');
        std::getline(ss, reached_s, ',');
        times[{method, metric}][split] = std::stod(time_s);
      }
    }
    for (const MethodConfig& mc : ctx.cfg.methods) {
      for (const std::string& metric : ctx.cfg.metrics) {
        const auto it = times.find({mc.name, metric});
        if (it == times.end()) continue;
        std::vector<double> rank, time;
        bool complete = true;
        for (std::size_t s = 0; s < strata.size(); ++s) {
          const auto st = it->second.find(strata[s]);
          if (st == it->second.end()) {
            complete = false;
            break;
          }
          rank.push_back(static_cast<double>(s + 1));
          // unreached runs count as the full budget plus one interval
          const UnlearnRun run = load_run(sdir / "unlearn" / (strata[s] + "__" + mc.name));
          time.push_back(st->second >= 0 ? st->second
                                         : static_cast<double>(run.total_steps +
                                                               run.config.eval_every));
        }
        if (!complete) continue;
        double rho = 0.0;
        bool defined = true;
        try {
          rho = spearman(rank, time);
        } catch (const std::invalid_argument&) {
          defined = false;  // all times tied
        }
        csv << "difficulty_vs_time,rank,time," << mc.name << ',' << metric << ','
            << (defined ? fmt_double(rho) : "nan") << ',' << rank.size() << '\n';
      }
    }
    const fs::path path = dir / "correlations.csv";
    write_text(path.string(), csv.str());
    outputs.push_back(fs::relative(path, ctx.out).string());
  }
  return outputs;
}

inline std::vector<std::string> report_stage(const PipelineContext& ctx) {
  std::vector<std::string> outputs;
  const fs::path dir = ctx.out / "report";
  fs::create_directories(dir);
  const std::vector<std::string> strata = {"stratified_bottom", "stratified_q1", "stratified_q2",
                                           "stratified_q3", "stratified_top"};

  // summary rows and the aggregates the figures need
  std::ostringstream csv;
  csv << "seed,split,method,mean_privacy_loss,time_ua,final_ua,final_ra,final_utility,"
         "barrier_pre,barrier_post,barrier_baseline\n";
  std::map<std::string, std::vector<std::pair<double, double>>> time_vs_privacy;  // method ->
  std::map<std::string, std::vector<double>> barrier_pre, barrier_post, barrier_base;
  std::map<std::string, std::vector<double>> split_privacy;

  auto read_barrier = [&](std::uint64_t seed, const std::string& split,
                          const std::string& kind) -> std::optional<double> {
    const fs::path p = ctx.seed_dir(seed) / "barriers" / (split + "__" + kind + ".json");
    if (!fs::exists(p)) return std::nullopt;
    return read_json_file(p).at("barrier").get<double>();
  };

  for (std::uint64_t seed : ctx.cfg.seeds) {
    const fs::path sdir = ctx.seed_dir(seed);
    std::map<std::string, std::map<std::string, std::map<std::string, std::string>>> eval_rows;
    {
      std::ifstream in(sdir / "evaluate" / "time_to_unlearn.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string split, method, metric, oracle_s, final_s, time_s, reached_s;
        std::getline(ss, split, ',');
        std::getline(ss, method, ',');
        std::getline(ss, metric, ',');
        std::getline(ss, oracle_s, ',');
        std::getline(ss, final_s, ',');
        std::getline(ss, time_s, ',');
        eval_rows[split][method][metric + ":time"] = time_s;
        eval_rows[split][method][metric + ":final"] = final_s;
      }
    }
    for (const std::string& name : strata) {
      const ForgetSplit split = load_split(sdir / "splits" / (name + ".json"));
      split_privacy[name].push_back(split.mean_score);
      const auto pre = read_barrier(seed, name, "pre");
      const auto post = read_barrier(seed, name, "post");
      const auto base = read_barrier(seed, name, "baseline");
      if (pre) barrier_pre[name].push_back(*pre);
      if (post) barrier_post[name].push_back(*post);
      if (base) barrier_base[name].push_back(*base);
      for (const MethodConfig& mc : ctx.cfg.methods) {
        const auto& row = eval_rows[name][mc.name];
        auto field = [&](const std::string& key) {
          const auto it = row.find(key);
          return it == row.end() ? std::string("") : it->second;
        };
        csv << seed << ',' << name << ',' << mc.name << ',' << fmt_double(split.mean_score) << ','
            << field("ua:time") << ',' << field("ua:final") << ',' << field("ra:final") << ','
            << field("utility:final") << ',' << (pre ? fmt_double(*pre) : "") << ','
            << (post ? fmt_double(*post) : "") << ',' << (base ? fmt_double(*base) : "") << '\n';
        if (!field("ua:time").empty()) {
          const double t = std::stod(field("ua:time"));
          const UnlearnRun run = load_run(sdir / "unlearn" / (name + "__" + mc.name));
          time_vs_privacy[mc.name].push_back(
              {split.mean_score,
               t >= 0 ? t : static_cast<double>(run.total_steps + run.config.eval_every)});
        }
      }
    }
  }
  write_text((dir / "summary.csv").string(), csv.str());
  outputs.push_back(fs::relative(dir / "summary.csv", ctx.out).string());

  // figure 1-style: time to unlearn vs forget-set privacy loss
  {
    svg::Chart chart;
    chart.title = "Time to unlearn vs forget-set privacy loss";
    chart.x_label = "mean privacy loss of forget set";
    chart.y_label = "steps to reach the oracle margin (ua)";
    std::size_t ci = 0;
    for (auto& [method, pts] : time_vs_privacy) {
      svg::Series s;
      s.label = method;
      s.color = svg::default_color(ci++);
      std::sort(pts.begin(), pts.end());
      s.points = pts;
      s.draw_line = false;
      chart.series.push_back(s);
    }
    chart.save((dir / "time_vs_privacy.svg").string());
    outputs.push_back(fs::relative(dir / "time_vs_privacy.svg", ctx.out).string());
  }

  // metric time series for the first seed, oracle value dashed
  {
    const std::uint64_t seed = ctx.cfg.seeds.front();
    svg::Chart chart;
    chart.title = "Unlearning curves (ua), seed " + std::to_string(seed);
    chart.x_label = "unlearning step";
    chart.y_label = "ua";
    std::size_t ci = 0;
    double oracle_sum = 0.0;
    int oracle_count = 0;
    long max_step = 1;
    for (const std::string& name : strata) {
      const UnlearnRun run =
          load_run(ctx.seed_dir(seed) / "unlearn" / (name + "__" + ctx.cfg.methods.front().name));
      svg::Series s;
      s.label = name.substr(std::string("stratified_").size());
      s.color = svg::default_color(ci++);
      const std::vector<double>& ua = run.metric("ua");
      for (std::size_t i = 0; i < run.eval_steps.size(); ++i) {
        s.points.push_back({static_cast<double>(run.eval_steps[i]), ua[i]});
        max_step = std::max(max_step, run.eval_steps[i]);
      }
      s.draw_markers = false;
      chart.series.push_back(s);

      std::ifstream in(ctx.seed_dir(seed) / "evaluate" / "time_to_unlearn.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string split, method, metric, oracle_s;
        std::getline(ss, split, ',');
        std::getline(ss, method, ',');
        std::getline(ss, metric, ',');
        std::getline(ss, oracle_s, ',');
        if (split == name && method == ctx.cfg.methods.front().name && metric == "ua") {
          oracle_sum += std::stod(oracle_s);
          ++oracle_count;
        }
      }
    }
    if (oracle_count > 0) {
      svg::Series dash;
      dash.label = "oracle (mean)";
      dash.color = "#333333";
      dash.dashed = true;
      dash.draw_markers = false;
      dash.points = {{0.0, oracle_sum / oracle_count},
                     {static_cast<double>(max_step), oracle_sum / oracle_count}};
      chart.series.push_back(dash);
    }
    chart.save((dir / "unlearning_curves.svg").string());
    outputs.push_back(fs::relative(dir / "unlearning_curves.svg", ctx.out).string());
  }

  // barrier vs difficulty
  {
    svg::Chart chart;
    chart.title = "Loss barrier to the oracle vs forget-set difficulty";
    chart.x_label = "difficulty stratum (1 = easiest)";
    chart.y_label = "barrier";
    auto mean_series = [&](const std::map<std::string, std::vector<double>>& by_split,
                           const std::string& label, std::size_t color, bool dashed) {
      svg::Series s;
      s.label = label;
      s.color = svg::default_color(color);
      s.dashed = dashed;
      for (std::size_t i = 0; i < strata.size(); ++i) {
        const auto it = by_split.find(strata[i]);
        if (it == by_split.end() || it->second.empty()) continue;
        double sum = 0.0;
        for (double v : it->second) sum += v;
        s.points.push_back({static_cast<double>(i + 1), sum / it->second.size()});
      }
      if (!s.points.empty()) chart.series.push_back(s);
    };
    mean_series(barrier_pre, "before unlearning", 1, false);
    mean_series(barrier_post, "after unlearning", 2, false);
    mean_series(barrier_base, "oracle-oracle baseline", 7, true);
    chart.save((dir / "barrier_vs_difficulty.svg").string());
    outputs.push_back(fs::relative(dir / "barrier_vs_difficulty.svg", ctx.out).string());
  }

  // binned proxy curves against privacy loss, first seed
  {
    const std::uint64_t seed = ctx.cfg.seeds.front();
    const ScoreVector privacy = load_privacy_scores(ctx, seed);
    svg::Chart chart;
    chart.title = "Proxy metrics vs privacy loss (normalized, binned)";
    chart.x_label = "privacy loss (bin mean)";
    chart.y_label = "proxy value / max";
    const std::vector<std::string> proxy_names = {"mid_grad_norm", "end_grad_norm",
                                                  "avg_grad_norm", "c_proxy", "el2n"};
    const int n_bins = std::min(30, static_cast<int>(privacy.ids.size()));
    std::size_t ci = 0;
    for (const std::string& proxy : proxy_names) {
      const ScoreVector sv = load_metric_scores(ctx, seed, proxy);
      double max_abs = 0.0;
      for (double v : sv.scores) max_abs = std::max(max_abs, std::abs(v));
      if (max_abs == 0.0) max_abs = 1.0;
      std::vector<double> normalized = sv.scores;
      for (double& v : normalized) v /= max_abs;
      svg::Series s;
      s.label = proxy;
      s.color = svg::default_color(ci++);
      s.draw_markers = false;
      for (const auto& [x, y] : bin_means(privacy.scores, normalized, n_bins)) {
        s.points.push_back({x, y});
      }
      chart.series.push_back(s);
    }
    chart.save((dir / "proxy_vs_privacy.svg").string());
    outputs.push_back(fs::relative(dir / "proxy_vs_privacy.svg", ctx.out).string());
  }

  return outputs;
}

}  // namespace stage

inline std::vector<std::string> stage_dependencies(const std::string& name) {
  static const std::map<std::string, std::vector<std::string>> deps = {
      {"train", {}},
      {"score", {"train"}},
      {"proxies", {"train"}},
      {"split", {"score", "proxies"}},
      {"oracle", {"split"}},
      {"unlearn", {"train", "split"}},
      {"evaluate", {"train", "split", "oracle", "unlearn"}},
      {"barrier", {"train", "split", "oracle", "unlearn"}},
      {"correlate", {"score", "proxies", "evaluate"}},
      {"report", {"split", "evaluate", "barrier", "correlate"}}};
  return deps.at(name);
}

inline std::vector<std::string> run_single_stage(PipelineContext& ctx, Manifest& manifest,
                                                 const std::string& name) {
  for (const std::string& dep : stage_dependencies(name)) {
    if (!manifest.has_stage(dep)) {
      throw StageError(name, "requires completed stage '" + dep + "'");
    }
  }
  try {
    if (name == "train") return stage::train_stage(ctx);
    if (name == "score") return stage::score_stage(ctx);
    if (name == "proxies") return stage::proxies_stage(ctx);
    if (name == "split") return stage::split_stage(ctx);
    if (name == "oracle") return stage::oracle_stage(ctx);
    if (name == "unlearn") return stage::unlearn_stage(ctx);
    if (name == "evaluate") return stage::evaluate_stage(ctx);
    if (name == "barrier") return stage::barrier_stage(ctx);
    if (name == "correlate") return stage::correlate_stage(ctx);
    if (name == "report") return stage::report_stage(ctx);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
  throw StageError(name, "unknown stage");
}

// Runs exactly one stage; upstream stages must already be recorded in the
// manifest. Used by the per-stage CLI subcommands.
inline RunReport run_one_stage(const ExperimentConfig& cfg, const std::string& name) {
  PipelineContext ctx = make_context(cfg);
  fs::create_directories(ctx.out);
  write_json_atomic(ctx.out / "config.json", experiment_config_json(cfg));
  Manifest manifest = Manifest::load(ctx.out);
  RunReport report;
  if (manifest.is_done(name, ctx.digest)) {
    report.skipped.push_back(name);
    return report;
  }
  try {
    const std::vector<std::string> outputs = run_single_stage(ctx, manifest, name);
    manifest.mark_done(name, ctx.digest, outputs);
    report.executed.push_back(name);
  } catch (const StageError& e) {
    report.ok = false;
    report.failed_stage = e.stage;
    report.error = e.what();
  }
  return report;
}

// Runs stages in order up to and including `through` (default: everything).
// Completed stages with a matching config digest are skipped.
inline RunReport run_pipeline(const ExperimentConfig& cfg, const std::string& through = "report") {
  PipelineContext ctx = make_context(cfg);
  fs::create_directories(ctx.out);
  write_json_atomic(ctx.out / "config.json", experiment_config_json(cfg));
  Manifest manifest = Manifest::load(ctx.out);

  RunReport report;
  for (const std::string& name : stage_order()) {
    if (manifest.is_done(name, ctx.digest)) {
      report.skipped.push_back(name);
    } else {
      try {
        const std::vector<std::string> outputs = run_single_stage(ctx, manifest, name);
        manifest.mark_done(name, ctx.digest, outputs);
        report.executed.push_back(name);
      } catch (const StageError& e) {
        report.ok = false;
        report.failed_stage = e.stage;
        report.error = e.what();
        return report;
      }
    }
    if (name == through) break;
  }
  return report;
}

}  // namespace ulb
