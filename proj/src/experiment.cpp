#include "l3dmc/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "l3dmc/model.hpp"
#include "l3dmc/rng.hpp"

namespace l3dmc {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems_in)
    : std::runtime_error("invalid config:\n  " + join(problems_in, "\n  ")),
      problems(std::move(problems_in)) {}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

class JsonOverlay {
 public:
  JsonOverlay(const nlohmann::json& obj, std::string path,
              std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  ~JsonOverlay() {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (consumed_.count(it.key()) == 0) {
        errors_.push_back(at(it.key()) + ": unknown field");
      }
    }
  }

  const nlohmann::json* object(const char* key) {
    if (!obj_.contains(key)) return nullptr;
    consumed_.insert(key);
    if (!obj_[key].is_object()) {
      errors_.push_back(at(key) + ": expected an object");
      return nullptr;
    }
    return &obj_[key];
  }

  void number(const char* key, double& target) {
    if (!take(key)) return;
    if (!obj_[key].is_number()) {
      errors_.push_back(at(key) + ": expected a number");
      return;
    }
    target = obj_[key].get<double>();
  }

  void count(const char* key, std::size_t& target) {
    if (!take(key)) return;
    if (!obj_[key].is_number_integer() || obj_[key].get<std::int64_t>() < 0) {
      errors_.push_back(at(key) + ": expected a non-negative integer");
      return;
    }
    target = static_cast<std::size_t>(obj_[key].get<std::int64_t>());
  }

  void text(const char* key, std::string& target) {
    if (!take(key)) return;
    if (!obj_[key].is_string()) {
      errors_.push_back(at(key) + ": expected a string");
      return;
    }
    target = obj_[key].get<std::string>();
  }

  void boolean(const char* key, bool& target) {
    if (!take(key)) return;
    if (!obj_[key].is_boolean()) {
      errors_.push_back(at(key) + ": expected a boolean");
      return;
    }
    target = obj_[key].get<bool>();
  }

  void count_list(const char* key, std::vector<std::size_t>& target) {
    if (!take(key)) return;
    if (!obj_[key].is_array()) {
      errors_.push_back(at(key) + ": expected an array");
      return;
    }
    std::vector<std::size_t> out;
    for (const auto& v : obj_[key]) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        errors_.push_back(at(key) + ": expected non-negative integers");
        return;
      }
      out.push_back(static_cast<std::size_t>(v.get<std::int64_t>()));
    }
    target = std::move(out);
  }

  void seed_list(const char* key, std::vector<std::uint64_t>& target) {
    if (!take(key)) return;
    if (!obj_[key].is_array()) {
      errors_.push_back(at(key) + ": expected an array");
      return;
    }
    std::vector<std::uint64_t> out;
    for (const auto& v : obj_[key]) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        errors_.push_back(at(key) + ": expected non-negative integers");
        return;
      }
      out.push_back(v.get<std::uint64_t>());
    }
    target = std::move(out);
  }

 private:
  bool take(const char* key) {
    if (!obj_.contains(key)) return false;
    consumed_.insert(key);
    return true;
  }

  std::string at(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const nlohmann::json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> consumed_;
};

}  // namespace

void ExperimentConfig::apply_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  if (!j.is_object()) {
    throw ConfigError({"config root: expected an object"});
  }
  {
    JsonOverlay root(j, "", errors);
    {
      std::size_t schema = 1;
      root.count("schema_version", schema);
      if (schema != 1) errors.push_back("schema_version: unsupported value");
    }
    if (const nlohmann::json* ds = root.object("dataset")) {
      JsonOverlay d(*ds, "dataset", errors);
      d.text("kind", dataset.kind);
      d.count("num_classes", dataset.num_classes);
      d.count("per_class", dataset.per_class);
      d.count("dim", dataset.dim);
      d.number("spread", dataset.spread);
      d.count("branching", dataset.branching);
      d.count("depth", dataset.depth);
      d.count("per_leaf", dataset.per_leaf);
      d.number("noise", dataset.noise);
      d.text("path", dataset.path);
      d.text("label_column", dataset.label_column);
      d.text("normalize", dataset.normalize);
    }
    root.number("test_fraction", test_fraction);
    root.count("num_tasks", num_tasks);
    root.count("memory_capacity", memory_capacity);
    root.text("method", method);
    if (const nlohmann::json* m = root.object("model")) {
      JsonOverlay d(*m, "model", errors);
      d.count_list("hidden", hidden);
      d.count("feature_dim", feature_dim);
      d.count("embed_dim", embed_dim);
      d.text("activation", activation);
    }
    if (const nlohmann::json* k = root.object("kernel")) {
      JsonOverlay d(*k, "kernel", errors);
      d.number("lambda_e", lambda_e);
      d.number("lambda_h", lambda_h);
      d.number("curvature", curvature);
      d.number("beta", beta);
      d.number("kd_scale", kd_scale);
    }
    if (const nlohmann::json* o = root.object("optimizer")) {
      JsonOverlay d(*o, "optimizer", errors);
      d.number("lr", lr);
      d.count("epochs", epochs);
      d.count("batch", batch);
      d.number("clip", clip);
      d.count("patience", patience);
      d.number("val_fraction", val_fraction);
    }
    root.seed_list("seeds", seeds);
    root.text("out_dir", out_dir);
    root.boolean("save_checkpoints", save_checkpoints);
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  nlohmann::ordered_json ds;
  ds["kind"] = dataset.kind;
  if (dataset.kind == "blobs") {
    ds["num_classes"] = dataset.num_classes;
    ds["per_class"] = dataset.per_class;
    ds["dim"] = dataset.dim;
    ds["spread"] = dataset.spread;
  } else if (dataset.kind == "tree") {
    ds["branching"] = dataset.branching;
    ds["depth"] = dataset.depth;
    ds["per_leaf"] = dataset.per_leaf;
    ds["dim"] = dataset.dim;
    ds["noise"] = dataset.noise;
  } else {
    ds["path"] = dataset.path;
    ds["label_column"] = dataset.label_column;
    ds["normalize"] = dataset.normalize;
  }
  j["dataset"] = ds;
  j["test_fraction"] = test_fraction;
  j["num_tasks"] = num_tasks;
  j["memory_capacity"] = memory_capacity;
  j["method"] = method;
  j["model"] = {{"hidden", hidden},
                {"feature_dim", feature_dim},
                {"embed_dim", embed_dim},
                {"activation", activation}};
  j["kernel"] = {{"lambda_e", lambda_e},
                 {"lambda_h", lambda_h},
                 {"curvature", curvature},
                 {"beta", beta},
                 {"kd_scale", kd_scale}};
  j["optimizer"] = {{"lr", lr},         {"epochs", epochs},
                    {"batch", batch},   {"clip", clip},
                    {"patience", patience}, {"val_fraction", val_fraction}};
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["save_checkpoints"] = save_checkpoints;
  return j;
}

bool ExperimentConfig::method_uses_memory() const {
  return method == "l3dmc" || method == "replay" || method == "euclidean_only";
}

bool ExperimentConfig::method_uses_kd() const {
  return method == "l3dmc" || method == "euclidean_only";
}

bool ExperimentConfig::method_uses_ncm() const {
  return method == "l3dmc" || method == "euclidean_only";
}

std::size_t ExperimentConfig::effective_num_tasks() const {
  return method == "joint" ? 1 : num_tasks;
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> errors;
  static const std::set<std::string> kMethods = {"l3dmc", "replay", "lower_bound",
                                                 "euclidean_only", "joint"};
  if (kMethods.count(method) == 0) {
    errors.push_back("method: must be one of l3dmc|replay|lower_bound|euclidean_only|joint");
  }
  static const std::set<std::string> kKinds = {"blobs", "tree", "csv", "binary"};
  if (kKinds.count(dataset.kind) == 0) {
    errors.push_back("dataset.kind: must be one of blobs|tree|csv|binary");
  } else if (dataset.kind == "blobs") {
    if (dataset.num_classes == 0) errors.push_back("dataset.num_classes: must be positive");
    if (dataset.per_class == 0) errors.push_back("dataset.per_class: must be positive");
    if (dataset.dim == 0) errors.push_back("dataset.dim: must be positive");
    if (dataset.spread < 0.0) errors.push_back("dataset.spread: must be >= 0");
  } else if (dataset.kind == "tree") {
    if (dataset.branching == 0) errors.push_back("dataset.branching: must be positive");
    if (dataset.depth == 0) errors.push_back("dataset.depth: must be positive");
    if (dataset.per_leaf == 0) errors.push_back("dataset.per_leaf: must be positive");
    if (dataset.dim == 0) errors.push_back("dataset.dim: must be positive");
    if (dataset.noise < 0.0) errors.push_back("dataset.noise: must be >= 0");
  } else if (dataset.path.empty()) {
    errors.push_back("dataset.path: required for kind " + dataset.kind);
  }
  if (dataset.kind == "csv" && dataset.normalize != "none" &&
      dataset.normalize != "per-feature-standardize") {
    errors.push_back("dataset.normalize: must be none|per-feature-standardize");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    errors.push_back("test_fraction: must be in [0,1)");
  }
  if (num_tasks == 0) errors.push_back("num_tasks: must be positive");
  if (method_uses_memory() && memory_capacity == 0) {
    errors.push_back("memory_capacity: must be positive for memory-based methods");
  }
  if (hidden.empty()) errors.push_back("model.hidden: need at least one hidden width");
  for (std::size_t h : hidden) {
    if (h == 0) {
      errors.push_back("model.hidden: widths must be positive");
      break;
    }
  }
  if (feature_dim == 0) errors.push_back("model.feature_dim: must be positive");
  if (embed_dim == 0) errors.push_back("model.embed_dim: must be positive");
  if (activation != "relu" && activation != "tanh") {
    errors.push_back("model.activation: must be relu|tanh");
  }
  if (!(lambda_e > 0.0)) errors.push_back("kernel.lambda_e: must be > 0");
  if (!(lambda_h > 0.0)) errors.push_back("kernel.lambda_h: must be > 0");
  if (!(curvature > 0.0)) errors.push_back("kernel.curvature: must be > 0");
  if (beta < 0.0) errors.push_back("kernel.beta: must be >= 0");
  if (kd_scale < 0.0) errors.push_back("kernel.kd_scale: must be >= 0");
  if (lr < 0.0) errors.push_back("optimizer.lr: must be >= 0");
  if (epochs == 0) errors.push_back("optimizer.epochs: must be positive");
  if (batch == 0) errors.push_back("optimizer.batch: must be positive");
  if (!(clip > 0.0)) errors.push_back("optimizer.clip: must be > 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    errors.push_back("optimizer.val_fraction: must be in [0,1)");
  }
  if (seeds.empty()) errors.push_back("seeds: need at least one seed");
  if (out_dir.empty()) errors.push_back("out_dir: must not be empty");
  return errors;
}

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

LabeledDataset build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  const std::uint64_t data_seed = Rng::mix(seed, 0xDA7AULL);
  if (spec.kind == "blobs") {
    return make_blobs(spec.num_classes, spec.per_class, spec.dim, spec.spread,
                      data_seed);
  }
  if (spec.kind == "tree") {
    return make_tree_data(spec.branching, spec.depth, spec.per_leaf, spec.dim,
                          spec.noise, data_seed);
  }
  if (spec.kind == "csv") {
    const Normalize n = spec.normalize == "per-feature-standardize"
                            ? Normalize::kPerFeatureStandardize
                            : Normalize::kNone;
    return load_csv(spec.path, spec.label_column, n);
  }
  if (spec.kind == "binary") {
    return load_dataset(spec.path);
  }
  throw ConfigError({"dataset.kind: unknown kind " + spec.kind});
}

// ---------------------------------------------------------------------------
// Seed run
// ---------------------------------------------------------------------------

namespace {

// Remaps the stream's labels to introduction order (task 0 classes become
// 0..k0-1, and so on), so the growing classifier's column j is class j.
struct RelabeledStream {
  std::vector<TaskData> tasks;
  std::vector<std::vector<int>> original_classes;  // per task, original ids
  std::vector<int> order;                          // new id -> original id
};

RelabeledStream relabel(const TaskStream& stream) {
  RelabeledStream out;
  out.original_classes = stream.task_classes;
  std::map<int, int> to_new;
  for (const auto& group : stream.task_classes) {
    for (int c : group) {
      const int id = static_cast<int>(out.order.size());
      to_new[c] = id;
      out.order.push_back(c);
    }
  }
  for (const auto& task : stream.tasks) {
    TaskData copy;
    copy.x = task.x;
    copy.labels.reserve(task.labels.size());
    for (int y : task.labels) copy.labels.push_back(to_new.at(y));
    out.tasks.push_back(std::move(copy));
  }
  return out;
}

ModelArch arch_from_config(const ExperimentConfig& cfg, std::size_t input_dim) {
  ModelArch arch;
  arch.input_dim = input_dim;
  arch.backbone_hidden = cfg.hidden;
  arch.feature_dim = cfg.feature_dim;
  arch.embed_dim = cfg.embed_dim;
  arch.activation = activation_from_string(cfg.activation);
  return arch;
}

TrainConfig train_config_from(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.lr = cfg.lr;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch;
  tc.grad_clip = cfg.clip;
  tc.patience = cfg.patience;
  tc.val_fraction = cfg.val_fraction;
  tc.kd_scale = cfg.kd_scale;
  tc.use_kd = cfg.method_uses_kd();
  tc.distill.beta = cfg.method == "euclidean_only" ? 0.0 : cfg.beta;
  tc.distill.lambda_e = cfg.lambda_e;
  tc.distill.lambda_h = cfg.lambda_h;
  tc.distill.curvature_c = cfg.curvature;
  tc.seed = seed;
  return tc;
}

}  // namespace

nlohmann::ordered_json run_single_seed(const ExperimentConfig& cfg,
                                       std::uint64_t seed, bool with_timing,
                                       const std::string& checkpoint_path) {
  const auto start = std::chrono::steady_clock::now();

  LabeledDataset dataset = build_dataset(cfg.dataset, seed);
  const std::size_t total_classes = dataset.num_classes();
  if (cfg.method_uses_memory() && cfg.memory_capacity < total_classes) {
    throw ConfigError({"memory_capacity: " + std::to_string(cfg.memory_capacity) +
                       " cannot hold one exemplar per class for " +
                       std::to_string(total_classes) + " classes (quota 0)"});
  }

  auto [train_ds, test_ds] = split_train_test(dataset, cfg.test_fraction, seed);
  const std::size_t num_tasks = cfg.effective_num_tasks();
  TaskStream train_stream = build_task_stream(train_ds, num_tasks, seed);
  TaskStream test_stream = build_task_stream(test_ds, num_tasks, seed);
  if (train_stream.task_classes != test_stream.task_classes) {
    throw ExperimentError("train/test streams landed on different class partitions");
  }
  RelabeledStream train = relabel(train_stream);
  RelabeledStream test = relabel(test_stream);

  L3Model model(arch_from_config(cfg, dataset.input_dim()),
                train_stream.task_classes[0].size(), Rng::mix(seed, 0x30DE1ULL));
  Memory memory(cfg.method_uses_memory() ? cfg.memory_capacity : 1);
  TrainConfig tc = train_config_from(cfg, seed);

  MetricsLedger ledger;
  nlohmann::ordered_json tasks_json = nlohmann::ordered_json::array();
  std::size_t seen = train_stream.task_classes[0].size();

  std::optional<ModelSnapshot> old_model;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    if (t > 0) {
      old_model.emplace(model.snapshot());
      seen += train_stream.task_classes[t].size();
      model.expand_classifier(seen);
    }

    TrainReport report = train_task(model, t > 0 ? &*old_model : nullptr,
                                    train.tasks[t], memory, tc, t);

    if (cfg.method_uses_memory()) {
      memory.update(model, train.tasks[t]);
    }

    std::vector<double> row;
    for (std::size_t i = 0; i <= t; ++i) {
      std::vector<int> preds = cfg.method_uses_ncm()
                                   ? ncm_predict(model, memory, test.tasks[i].x)
                                   : classifier_predict(model, test.tasks[i].x);
      row.push_back(accuracy(preds, test.tasks[i].labels));
    }
    ledger.record(t, row);
    auto [acc_t, forgetting_t] = compute_metrics(ledger, t + 1);

    nlohmann::ordered_json tj;
    tj["task"] = t + 1;
    tj["new_classes"] = train_stream.task_classes[t];
    tj["train"] = {{"epochs_run", report.epochs_run},
                   {"best_epoch", report.best_epoch + 1},
                   {"early_stopped", report.early_stopped},
                   {"steps", report.steps},
                   {"final_train_loss", report.epoch_loss.empty()
                                            ? 0.0
                                            : report.epoch_loss.back()},
                   {"max_gram_ridge", report.max_gram_ridge},
                   {"max_gram_condition", report.max_gram_condition}};
    tj["accuracy_row"] = row;
    tj["average_accuracy"] = acc_t;
    if (forgetting_t.has_value()) {
      tj["forgetting"] = *forgetting_t;
    } else {
      tj["forgetting"] = nullptr;
    }
    tasks_json.push_back(std::move(tj));
  }

  nlohmann::ordered_json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "l3dmc-seed-result";
  doc["config"] = cfg.to_json();
  doc["seed"] = seed;
  doc["num_classes"] = total_classes;
  doc["tasks"] = std::move(tasks_json);

  nlohmann::ordered_json final_json;
  final_json["accuracy_matrix"] = ledger.rows();
  auto [acc, forgetting] = compute_metrics(ledger, num_tasks);
  final_json["average_accuracy"] = acc;
  if (forgetting.has_value()) {
    final_json["forgetting"] = *forgetting;
  } else {
    final_json["forgetting"] = nullptr;
  }
  doc["final"] = std::move(final_json);

  if (cfg.method_uses_memory()) {
    doc["memory"] = {{"capacity", cfg.memory_capacity}, {"stored", memory.total()}};
  }

  if (!checkpoint_path.empty()) {
    save_checkpoint(model, checkpoint_path);
    doc["checkpoint"] = checkpoint_path;
  }

  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  doc["timing"] = {{"wall_clock_seconds", with_timing ? elapsed : 0.0}};
  return doc;
}

// ---------------------------------------------------------------------------
// Multi-seed runner
// ---------------------------------------------------------------------------

void write_json_atomic(const nlohmann::ordered_json& doc, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ExperimentError("cannot open " + tmp + " for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw ExperimentError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string resolve_out_dir(const ExperimentConfig& cfg, const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("L3DMC_OUT_ROOT"); env != nullptr && *env) {
    return std::string(env);
  }
  return cfg.out_dir;
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    throw ConfigError(std::move(errors));
  }
  std::filesystem::create_directories(cfg.out_dir);

  ExperimentSummary summary;
  summary.config = cfg;

  for (std::uint64_t seed : cfg.seeds) {
    const std::string base = cfg.out_dir + "/" + cfg.method + "_seed" +
                             std::to_string(seed);
    const std::string ckpt = cfg.save_checkpoints ? base + "_model.l3mc" : "";
    nlohmann::ordered_json doc = run_single_seed(cfg, seed, /*with_timing=*/true, ckpt);

    const std::string path = base + ".json";
    write_json_atomic(doc, path);

    SeedOutcome outcome;
    outcome.seed = seed;
    outcome.final_average_accuracy = doc["final"]["average_accuracy"].get<double>();
    if (!doc["final"]["forgetting"].is_null()) {
      outcome.final_forgetting = doc["final"]["forgetting"].get<double>();
    }
    for (const auto& tj : doc["tasks"]) {
      outcome.average_accuracy_per_task.push_back(tj["average_accuracy"].get<double>());
    }
    outcome.result_path = path;
    summary.per_seed.push_back(std::move(outcome));
  }

  const std::size_t num_tasks = cfg.effective_num_tasks();
  summary.mean_accuracy_per_task.assign(num_tasks, 0.0);
  double mean_final = 0.0;
  double mean_forget = 0.0;
  bool have_forget = true;
  for (const auto& outcome : summary.per_seed) {
    mean_final += outcome.final_average_accuracy;
    if (outcome.final_forgetting.has_value()) {
      mean_forget += *outcome.final_forgetting;
    } else {
      have_forget = false;
    }
    for (std::size_t t = 0; t < num_tasks; ++t) {
      summary.mean_accuracy_per_task[t] += outcome.average_accuracy_per_task[t];
    }
  }
  const double n = static_cast<double>(summary.per_seed.size());
  mean_final /= n;
  for (auto& v : summary.mean_accuracy_per_task) v /= n;
  summary.mean_final_accuracy = mean_final;
  if (have_forget) summary.mean_final_forgetting = mean_forget / n;

  nlohmann::ordered_json sj;
  sj["schema_version"] = 1;
  sj["kind"] = "l3dmc-summary";
  sj["config"] = cfg.to_json();
  sj["seeds"] = cfg.seeds;
  nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
  for (const auto& outcome : summary.per_seed) {
    nlohmann::ordered_json o;
    o["seed"] = outcome.seed;
    o["average_accuracy"] = outcome.final_average_accuracy;
    if (outcome.final_forgetting.has_value()) {
      o["forgetting"] = *outcome.final_forgetting;
    } else {
      o["forgetting"] = nullptr;
    }
    o["result_file"] = outcome.result_path;
    per_seed.push_back(std::move(o));
  }
  sj["per_seed"] = std::move(per_seed);
  nlohmann::ordered_json mean;
  mean["average_accuracy_per_task"] = summary.mean_accuracy_per_task;
  mean["final_average_accuracy"] = summary.mean_final_accuracy;
  if (summary.mean_final_forgetting.has_value()) {
    mean["final_forgetting"] = *summary.mean_final_forgetting;
  } else {
    mean["final_forgetting"] = nullptr;
  }
  sj["mean"] = std::move(mean);

  const std::string summary_path = cfg.out_dir + "/" + cfg.method + "_summary.json";
  write_json_atomic(sj, summary_path);
  summary.summary_path = summary_path;
  return summary;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

ComparisonTable compare_runs(const std::vector<std::string>& result_files) {
  if (result_files.empty()) {
    throw ExperimentError("compare: no result files given");
  }
  struct Bucket {
    std::size_t num_tasks = 0;
    std::vector<std::vector<double>> acc_curves;
    std::vector<double> finals;
    std::vector<std::optional<double>> forgettings;
  };
  std::map<std::string, Bucket> buckets;
  std::size_t global_tasks = 0;

  for (const auto& path : result_files) {
    std::ifstream in(path);
    if (!in) throw ExperimentError("compare: cannot open " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ExperimentError("compare: " + path + " is not valid JSON: " + e.what());
    }
    if (!doc.contains("kind") || doc["kind"] != "l3dmc-seed-result") {
      throw ExperimentError("compare: " + path + " is not a seed-result file");
    }
    const std::string method = doc["config"]["method"].get<std::string>();
    const std::size_t tasks = doc["tasks"].size();
    if (global_tasks == 0) global_tasks = tasks;
    if (tasks != global_tasks) {
      throw ExperimentError("compare: incompatible task counts (" + path + " has " +
                            std::to_string(tasks) + ", expected " +
                            std::to_string(global_tasks) + ")");
    }
    Bucket& bucket = buckets[method];
    bucket.num_tasks = tasks;
    std::vector<double> curve;
    for (const auto& tj : doc["tasks"]) {
      curve.push_back(tj["average_accuracy"].get<double>());
    }
    bucket.acc_curves.push_back(std::move(curve));
    bucket.finals.push_back(doc["final"]["average_accuracy"].get<double>());
    if (doc["final"]["forgetting"].is_null()) {
      bucket.forgettings.push_back(std::nullopt);
    } else {
      bucket.forgettings.push_back(doc["final"]["forgetting"].get<double>());
    }
  }

  ComparisonTable table;
  for (auto& [method, bucket] : buckets) {
    ComparisonRow row;
    row.method = method;
    row.num_seeds = bucket.finals.size();
    row.num_tasks = bucket.num_tasks;
    row.mean_accuracy_per_task.assign(bucket.num_tasks, 0.0);
    for (const auto& curve : bucket.acc_curves) {
      for (std::size_t t = 0; t < bucket.num_tasks; ++t) {
        row.mean_accuracy_per_task[t] += curve[t];
      }
    }
    for (auto& v : row.mean_accuracy_per_task) {
      v /= static_cast<double>(row.num_seeds);
    }
    double final_sum = 0.0;
    for (double f : bucket.finals) final_sum += f;
    row.mean_final_accuracy = final_sum / static_cast<double>(row.num_seeds);
    double forget_sum = 0.0;
    bool all_forget = true;
    for (const auto& f : bucket.forgettings) {
      if (f.has_value()) {
        forget_sum += *f;
      } else {
        all_forget = false;
      }
    }
    if (all_forget && !bucket.forgettings.empty()) {
      row.mean_final_forgetting = forget_sum / static_cast<double>(row.num_seeds);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::ordered_json ComparisonTable::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["kind"] = "l3dmc-comparison";
  nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json r;
    r["method"] = row.method;
    r["seeds"] = row.num_seeds;
    r["mean_accuracy_per_task"] = row.mean_accuracy_per_task;
    r["mean_final_accuracy"] = row.mean_final_accuracy;
    if (row.mean_final_forgetting.has_value()) {
      r["mean_final_forgetting"] = *row.mean_final_forgetting;
    } else {
      r["mean_final_forgetting"] = nullptr;
    }
    rows_json.push_back(std::move(r));
  }
  j["rows"] = std::move(rows_json);
  return j;
}

std::string ComparisonTable::render_text() const {
  char buf[256];
  std::string out = "method           seeds  final-acc  final-forget  per-task-acc\n";
  for (const auto& row : rows) {
    std::string curve;
    for (std::size_t t = 0; t < row.mean_accuracy_per_task.size(); ++t) {
      if (t) curve += " ";
      std::snprintf(buf, sizeof(buf), "%.4f", row.mean_accuracy_per_task[t]);
      curve += buf;
    }
    std::string forget = "-";
    if (row.mean_final_forgetting.has_value()) {
      std::snprintf(buf, sizeof(buf), "%.4f", *row.mean_final_forgetting);
      forget = buf;
    }
    std::snprintf(buf, sizeof(buf), "%-16s %-6zu %-10.4f %-13s %s\n",
                  row.method.c_str(), row.num_seeds, row.mean_final_accuracy,
                  forget.c_str(), curve.c_str());
    out += buf;
  }
  return out;
}

}  // namespace l3dmc
