#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "l3dmc/continual.hpp"
#include "l3dmc/datasets.hpp"

namespace l3dmc {

struct ConfigError : std::runtime_error {
  explicit ConfigError(std::vector<std::string> problems);
  std::vector<std::string> problems;
};

struct ExperimentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// blobs | tree | csv | binary
struct DatasetSpec {
  std::string kind = "tree";
  // blobs
  std::size_t num_classes = 8;
  std::size_t per_class = 100;
  std::size_t dim = 16;
  double spread = 0.35;
  // tree
  std::size_t branching = 2;
  std::size_t depth = 3;
  std::size_t per_leaf = 100;
  double noise = 0.45;
  // csv / binary
  std::string path;
  std::string label_column = "label";
  std::string normalize = "none";
};

struct ExperimentConfig {
  DatasetSpec dataset;
  double test_fraction = 0.2;
  std::size_t num_tasks = 4;
  std::size_t memory_capacity = 40;
  std::string method = "l3dmc";  // l3dmc | replay | lower_bound | euclidean_only | joint

  // model
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t feature_dim = 32;
  std::size_t embed_dim = 16;
  std::string activation = "tanh";

  // kernels / distillation
  double lambda_e = 1.0;
  double lambda_h = 1.0;
  double curvature = 1.0;
  double beta = 1.0;
  double kd_scale = 1.0;

  // optimizer
  double lr = 0.01;
  std::size_t epochs = 50;
  std::size_t batch = 32;
  double clip = 10.0;
  std::size_t patience = 10;
  double val_fraction = 0.1;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "results";
  bool save_checkpoints = true;

  // Every problem is reported with its config path; empty means valid.
  std::vector<std::string> validate() const;

  // Overlays the fields present in `j` onto *this; unknown keys are errors.
  void apply_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;

  bool method_uses_memory() const;
  bool method_uses_kd() const;
  // NCM prediction is part of the proposed method; the baselines predict
  // with their classifier head (the ER-style protocol).
  bool method_uses_ncm() const;
  std::size_t effective_num_tasks() const;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  double final_average_accuracy = 0.0;
  std::optional<double> final_forgetting;
  std::vector<double> average_accuracy_per_task;
  std::string result_path;
};

struct ExperimentSummary {
  ExperimentConfig config;
  std::vector<SeedOutcome> per_seed;
  double mean_final_accuracy = 0.0;
  std::optional<double> mean_final_forgetting;
  std::vector<double> mean_accuracy_per_task;
  std::string summary_path;
};

// Runs every seed sequentially, writing one result file per seed plus a
// seed-averaged summary (atomically, temp-then-rename). Throws ConfigError
// for invalid configs and ExperimentError on numeric failure; files already
// written stay on disk.
ExperimentSummary run_experiment(const ExperimentConfig& cfg);

// Single-seed run; exposed for tests and bindings. The returned json is the
// seed-result document (timing zeroed unless `with_timing`). When
// `checkpoint_path` is non-empty the final model is saved there.
nlohmann::ordered_json run_single_seed(const ExperimentConfig& cfg,
                                       std::uint64_t seed, bool with_timing = true,
                                       const std::string& checkpoint_path = "");

struct ComparisonRow {
  std::string method;
  std::size_t num_seeds = 0;
  std::size_t num_tasks = 0;
  std::vector<double> mean_accuracy_per_task;
  double mean_final_accuracy = 0.0;
  std::optional<double> mean_final_forgetting;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  nlohmann::ordered_json to_json() const;
  std::string render_text() const;
};

// Tabulates seed-result files grouped by method; all files must share the
// task structure.
ComparisonTable compare_runs(const std::vector<std::string>& result_files);

// Resolved output directory: explicit flag beats the L3DMC_OUT_ROOT
// environment variable beats the config value.
std::string resolve_out_dir(const ExperimentConfig& cfg,
                            const std::string& flag_value);

LabeledDataset build_dataset(const DatasetSpec& spec, std::uint64_t seed);

void write_json_atomic(const nlohmann::ordered_json& doc, const std::string& path);

}  // namespace l3dmc
