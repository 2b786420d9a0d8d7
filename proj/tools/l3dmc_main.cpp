// l3dmc command-line harness: experiment runs, result comparison, checkpoint
// inspection, and synthetic data generation. Outputs are machine-readable
// JSON documents; exit code 0 means every requested seed and task completed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "l3dmc/experiment.hpp"
#include "l3dmc/model.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

void write_error_record(const std::string& out_dir, const std::string& type,
                        const std::string& message) {
  try {
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    nlohmann::ordered_json doc;
    doc["schema_version"] = 1;
    doc["kind"] = "l3dmc-error";
    doc["error"] = {{"type", type}, {"message", message}};
    l3dmc::write_json_atomic(doc, (out_dir.empty() ? std::string(".") : out_dir) +
                                      "/error.json");
  } catch (...) {
    // The record is best effort; the exit code still reports the failure.
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string current;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!current.empty()) {
        seeds.push_back(std::stoull(current));
        current.clear();
      }
    } else if (ch >= '0' && ch <= '9') {
      current += ch;
    } else {
      throw l3dmc::ConfigError({"seed-list: expected comma-separated integers"});
    }
  }
  return seeds;
}

int cmd_run(const std::string& config_path, const std::string& seed_list,
            const std::string& method, long long memory, long long tasks,
            const std::string& out, double beta, double lambda_e, double lambda_h,
            double curvature, bool beta_set, bool lambda_e_set, bool lambda_h_set,
            bool curvature_set) {
  l3dmc::ExperimentConfig cfg;
  std::string out_dir_for_errors = out;
  try {
    // Precedence: built-in defaults < config file < flags.
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        throw l3dmc::ConfigError({"config: cannot open " + config_path});
      }
      nlohmann::json file_json;
      try {
        in >> file_json;
      } catch (const nlohmann::json::exception& e) {
        throw l3dmc::ConfigError({"config: " + config_path +
                                  " is not valid JSON: " + e.what()});
      }
      cfg.apply_json(file_json);
    }
    if (!seed_list.empty()) cfg.seeds = parse_seed_list(seed_list);
    if (!method.empty()) cfg.method = method;
    if (memory >= 0) cfg.memory_capacity = static_cast<std::size_t>(memory);
    if (tasks >= 0) cfg.num_tasks = static_cast<std::size_t>(tasks);
    if (beta_set) cfg.beta = beta;
    if (lambda_e_set) cfg.lambda_e = lambda_e;
    if (lambda_h_set) cfg.lambda_h = lambda_h;
    if (curvature_set) cfg.curvature = curvature;
    cfg.out_dir = l3dmc::resolve_out_dir(cfg, out);
    out_dir_for_errors = cfg.out_dir;

    if (auto errors = cfg.validate(); !errors.empty()) {
      throw l3dmc::ConfigError(std::move(errors));
    }

    l3dmc::ExperimentSummary summary = l3dmc::run_experiment(cfg);
    std::cout << "method " << cfg.method << ": final average accuracy "
              << summary.mean_final_accuracy;
    if (summary.mean_final_forgetting.has_value()) {
      std::cout << ", forgetting " << *summary.mean_final_forgetting;
    }
    std::cout << "\nsummary written to " << summary.summary_path << "\n";
    return kExitOk;
  } catch (const l3dmc::ConfigError& e) {
    std::cerr << e.what() << "\n";
    write_error_record(out_dir_for_errors, "config", e.what());
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    write_error_record(out_dir_for_errors, "runtime", e.what());
    return kExitRuntimeError;
  }
}

int cmd_compare(const std::vector<std::string>& files, const std::string& json_out) {
  try {
    l3dmc::ComparisonTable table = l3dmc::compare_runs(files);
    std::cout << table.render_text();
    if (!json_out.empty()) {
      l3dmc::write_json_atomic(table.to_json(), json_out);
      std::cout << "comparison written to " << json_out << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "compare failed: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

int cmd_inspect(const std::string& path) {
  try {
    l3dmc::L3Model model = l3dmc::load_checkpoint(path);
    std::size_t param_count = 0;
    for (const auto& t : model.parameters()) param_count += t.size();
    nlohmann::ordered_json doc;
    doc["schema_version"] = 1;
    doc["kind"] = "l3dmc-checkpoint";
    doc["path"] = path;
    doc["rng_seed"] = model.rng_seed();
    doc["arch"] = {{"input_dim", model.arch().input_dim},
                   {"hidden", model.arch().backbone_hidden},
                   {"feature_dim", model.arch().feature_dim},
                   {"embed_dim", model.arch().embed_dim},
                   {"activation", l3dmc::to_string(model.arch().activation)}};
    doc["num_classes"] = model.num_classes();
    doc["parameter_count"] = param_count;
    std::cout << doc.dump(2) << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "inspect-checkpoint failed: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

int cmd_gen_data(const std::string& kind, const std::string& out,
                 const std::string& format, std::size_t num_classes,
                 std::size_t per_class, std::size_t dim, double spread,
                 std::size_t branching, std::size_t depth, std::size_t per_leaf,
                 double noise, std::uint64_t seed) {
  try {
    l3dmc::LabeledDataset ds;
    if (kind == "blobs") {
      ds = l3dmc::make_blobs(num_classes, per_class, dim, spread, seed);
    } else if (kind == "tree") {
      ds = l3dmc::make_tree_data(branching, depth, per_leaf, dim, noise, seed);
    } else {
      std::cerr << "gen-data: kind must be blobs|tree\n";
      return kExitConfigError;
    }
    if (format == "csv") {
      l3dmc::write_csv(ds, out);
    } else if (format == "bin") {
      l3dmc::save_dataset(ds, out);
    } else {
      std::cerr << "gen-data: format must be csv|bin\n";
      return kExitConfigError;
    }
    std::cout << "wrote " << ds.size() << " samples, " << ds.num_classes()
              << " classes, dim " << ds.input_dim() << " to " << out << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "gen-data failed: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"L3DMC: mixed-curvature kernel-subspace distillation harness"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run a multi-seed experiment");
  std::string config_path, seed_list, method, out;
  long long memory = -1, tasks = -1;
  double beta = 1.0, lambda_e = 1.0, lambda_h = 1.0, curvature = 1.0;
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--seed-list", seed_list, "Comma-separated seeds (e.g. 1,2,3)");
  run->add_option("--method", method,
                  "l3dmc | replay | lower_bound | euclidean_only | joint");
  run->add_option("--memory", memory, "Exemplar memory capacity");
  run->add_option("--tasks", tasks, "Number of tasks");
  run->add_option("--out", out, "Output directory (else $L3DMC_OUT_ROOT, else config)");
  auto* beta_opt = run->add_option("--beta", beta, "Hyperbolic term weight");
  auto* le_opt = run->add_option("--lambda-e", lambda_e, "Euclidean RBF bandwidth");
  auto* lh_opt = run->add_option("--lambda-h", lambda_h, "Hyperbolic RBF bandwidth");
  auto* c_opt = run->add_option("--curvature", curvature, "Poincare ball curvature c");

  // compare
  auto* compare = app.add_subcommand("compare", "Tabulate seed-result files");
  std::vector<std::string> files;
  std::string json_out;
  compare->add_option("files", files, "Seed-result JSON files")->required();
  compare->add_option("--json", json_out, "Also write the table as JSON");

  // inspect-checkpoint
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Describe a model file");
  std::string ckpt_path;
  inspect->add_option("path", ckpt_path, "Checkpoint file")->required();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string kind = "blobs", gen_out, format = "bin";
  std::size_t num_classes = 8, per_class = 100, dim = 16;
  double spread = 0.35;
  std::size_t branching = 2, depth = 3, per_leaf = 100;
  double noise = 0.45;
  std::uint64_t seed = 1;
  gen->add_option("--kind", kind, "blobs | tree");
  gen->add_option("--out", gen_out, "Output file")->required();
  gen->add_option("--format", format, "csv | bin");
  gen->add_option("--num-classes", num_classes, "Blob classes");
  gen->add_option("--per-class", per_class, "Samples per blob class");
  gen->add_option("--dim", dim, "Feature dimension");
  gen->add_option("--spread", spread, "Blob standard deviation");
  gen->add_option("--branching", branching, "Tree branching factor");
  gen->add_option("--depth", depth, "Tree depth");
  gen->add_option("--per-leaf", per_leaf, "Samples per leaf class");
  gen->add_option("--noise", noise, "Leaf noise standard deviation");
  gen->add_option("--seed", seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    return cmd_run(config_path, seed_list, method, memory, tasks, out, beta,
                   lambda_e, lambda_h, curvature, beta_opt->count() > 0,
                   le_opt->count() > 0, lh_opt->count() > 0, c_opt->count() > 0);
  }
  if (compare->parsed()) return cmd_compare(files, json_out);
  if (inspect->parsed()) return cmd_inspect(ckpt_path);
  if (gen->parsed()) {
    return cmd_gen_data(kind, gen_out, format, num_classes, per_class, dim, spread,
                        branching, depth, per_leaf, noise, seed);
  }
  return kExitConfigError;
}
