#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "l3dmc/datasets.hpp"
#include "l3dmc/distill.hpp"
#include "l3dmc/model.hpp"
#include "l3dmc/tensor.hpp"

namespace l3dmc {

struct TaskData {
  Tensor x;  // [N, in]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// Ordered tasks over globally disjoint label groups. The class order is a
// seeded shuffle, so train and test streams built with the same seed and
// task count land on the same partition.
struct TaskStream {
  std::vector<TaskData> tasks;
  std::vector<std::vector<int>> task_classes;
  std::uint64_t class_order_seed = 0;

  std::size_t num_tasks() const { return tasks.size(); }
  std::vector<int> classes_up_to(std::size_t t) const;
};

// Classes are shuffled by seed and partitioned contiguously; when the class
// count does not divide evenly, earlier tasks take the extra class.
TaskStream build_task_stream(const LabeledDataset& ds, std::size_t num_tasks,
                             std::uint64_t seed);

// Greedy herding: repeatedly pick the candidate whose inclusion keeps the
// running mean of selected features closest to the class mean. Ties break to
// the lowest index; returns indices in selection order.
std::vector<std::size_t> herding_select(const Tensor& features, std::size_t quota);

// Fixed-capacity exemplar store of raw inputs, per class in herding order.
class Memory {
 public:
  explicit Memory(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t total() const;
  bool empty() const { return total() == 0; }
  std::vector<int> classes() const;
  std::size_t class_count(int c) const;

  // Exemplars of class c as a [k, in] tensor in herding order.
  Tensor class_exemplars(int c) const;
  // Union of all exemplars for replay.
  TaskData as_task_data() const;

  // Recomputes quotas as floor(capacity / classes seen), truncates existing
  // classes to the herding-rank prefix, and herds new classes through the
  // current model's features.
  void update(const L3Model& model, const TaskData& task);

 private:
  std::size_t capacity_ = 0;
  std::size_t input_dim_ = 0;
  std::map<int, std::vector<std::vector<double>>> store_;
};

void update_memory(Memory& memory, const L3Model& model, const TaskData& task);

// Nearest-class-mean over current-model features of the memory exemplars;
// ties break to the lowest class id.
std::vector<int> ncm_predict(const L3Model& model, const Memory& memory,
                             const Tensor& x);

// Arg-max over classifier logits, for configurations without a memory.
std::vector<int> classifier_predict(const L3Model& model, const Tensor& x);

struct TrainConfig {
  double lr = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double grad_clip = 10.0;  // elementwise clamp of gradients to [-clip, clip]
  std::size_t patience = 10;
  double val_fraction = 0.1;
  double kd_scale = 1.0;
  bool use_kd = true;
  DistillConfig distill;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_val_accuracy;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  std::size_t steps = 0;
  double max_gram_ridge = 0.0;
  double max_gram_condition = 1.0;
};

// One pass of the incremental training loop: minibatches drawn uniformly
// from the union of the task data and the memory, cross-entropy on the live
// logits plus (when an old model exists) the mixed-curvature distillation
// loss, SGD with elementwise gradient clipping, early stopping on held-out
// accuracy with best-epoch restore.
TrainReport train_task(L3Model& model, const ModelSnapshot* old_model,
                       const TaskData& task, const Memory& memory,
                       const TrainConfig& cfg, std::size_t task_index);

// Accuracy matrix acc[t][i] (0-based rows; row t has t+1 entries).
class MetricsLedger {
 public:
  void record(std::size_t task_index, std::vector<double> accuracies);
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  std::size_t tasks_recorded() const { return rows_.size(); }

 private:
  std::vector<std::vector<double>> rows_;
};

// Average accuracy after task t (1-based) and, for t >= 2, average
// forgetting: mean over earlier tasks of (best earlier accuracy - current).
std::pair<double, std::optional<double>> compute_metrics(const MetricsLedger& ledger,
                                                         std::size_t t);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace l3dmc
