#include "l3dmc/continual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "l3dmc/rng.hpp"

namespace l3dmc {

// ---------------------------------------------------------------------------
// Task stream
// ---------------------------------------------------------------------------

std::vector<int> TaskStream::classes_up_to(std::size_t t) const {
  std::vector<int> out;
  for (std::size_t i = 0; i <= t && i < task_classes.size(); ++i) {
    out.insert(out.end(), task_classes[i].begin(), task_classes[i].end());
  }
  return out;
}

TaskStream build_task_stream(const LabeledDataset& ds, std::size_t num_tasks,
                             std::uint64_t seed) {
  ds.validate();
  if (num_tasks == 0) throw ShapeError("build_task_stream: num_tasks must be positive");
  const std::size_t classes = ds.num_classes();
  if (num_tasks > classes) {
    throw ShapeError("build_task_stream: more tasks (" + std::to_string(num_tasks) +
                     ") than classes (" + std::to_string(classes) + ")");
  }

  std::vector<int> order(classes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed, 0xC1A55E5ULL));
  rng.shuffle(order);

  // Contiguous groups; the remainder goes to the earliest tasks.
  const std::size_t base = classes / num_tasks;
  const std::size_t remainder = classes % num_tasks;
  TaskStream stream;
  stream.class_order_seed = seed;
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    const std::size_t group = base + (t < remainder ? 1 : 0);
    stream.task_classes.emplace_back(order.begin() + cursor,
                                     order.begin() + cursor + group);
    cursor += group;
  }

  std::vector<std::size_t> task_of_class(classes);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    for (int c : stream.task_classes[t]) task_of_class[static_cast<std::size_t>(c)] = t;
  }

  const std::size_t width = ds.input_dim();
  std::vector<std::vector<double>> features(num_tasks);
  std::vector<std::vector<int>> labels(num_tasks);
  const auto& xd = ds.x.data();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t t = task_of_class[static_cast<std::size_t>(ds.labels[i])];
    features[t].insert(features[t].end(), xd.begin() + i * width,
                       xd.begin() + (i + 1) * width);
    labels[t].push_back(ds.labels[i]);
  }
  for (std::size_t t = 0; t < num_tasks; ++t) {
    if (labels[t].empty()) {
      throw ShapeError("build_task_stream: task " + std::to_string(t) +
                       " received no samples");
    }
    TaskData task;
    task.x = Tensor::from_data({labels[t].size(), width}, std::move(features[t]));
    task.labels = std::move(labels[t]);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

// ---------------------------------------------------------------------------
// Herding and memory
// ---------------------------------------------------------------------------

std::vector<std::size_t> herding_select(const Tensor& features, std::size_t quota) {
  if (features.ndim() != 2) throw ShapeError("herding_select: features must be [n,D]");
  const std::size_t n = features.rows(), d = features.cols();
  if (quota > n) {
    throw ShapeError("herding_select: quota " + std::to_string(quota) +
                     " exceeds candidate count " + std::to_string(n));
  }
  const auto& fd = features.data();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += fd[i * d + j];
  for (auto& v : mean) v /= static_cast<double>(n);

  std::vector<std::size_t> selected;
  std::vector<bool> used(n, false);
  std::vector<double> running_sum(d, 0.0);
  while (selected.size() < quota) {
    std::size_t best = n;
    double best_gap = std::numeric_limits<double>::infinity();
    const double inv = 1.0 / static_cast<double>(selected.size() + 1);
    for (std::size_t cand = 0; cand < n; ++cand) {
      if (used[cand]) continue;
      double gap = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double m = (running_sum[j] + fd[cand * d + j]) * inv;
        const double diff = mean[j] - m;
        gap += diff * diff;
      }
      if (gap < best_gap) {  // strict: ties keep the lowest index
        best_gap = gap;
        best = cand;
      }
    }
    used[best] = true;
    selected.push_back(best);
    for (std::size_t j = 0; j < d; ++j) running_sum[j] += fd[best * d + j];
  }
  return selected;
}

Memory::Memory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ShapeError("Memory: capacity must be positive");
}

std::size_t Memory::total() const {
  std::size_t n = 0;
  for (const auto& [c, rows] : store_) n += rows.size();
  return n;
}

std::vector<int> Memory::classes() const {
  std::vector<int> out;
  out.reserve(store_.size());
  for (const auto& [c, rows] : store_) out.push_back(c);
  return out;
}

std::size_t Memory::class_count(int c) const {
  auto it = store_.find(c);
  return it == store_.end() ? 0 : it->second.size();
}

Tensor Memory::class_exemplars(int c) const {
  auto it = store_.find(c);
  if (it == store_.end() || it->second.empty()) {
    throw NumericError("Memory: no exemplars stored for class " + std::to_string(c));
  }
  const auto& rows = it->second;
  std::vector<double> flat;
  flat.reserve(rows.size() * input_dim_);
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from_data({rows.size(), input_dim_}, std::move(flat));
}

TaskData Memory::as_task_data() const {
  TaskData out;
  std::vector<double> flat;
  for (const auto& [c, rows] : store_) {
    for (const auto& row : rows) {
      flat.insert(flat.end(), row.begin(), row.end());
      out.labels.push_back(c);
    }
  }
  if (out.labels.empty()) throw NumericError("Memory: empty");
  out.x = Tensor::from_data({out.labels.size(), input_dim_}, std::move(flat));
  return out;
}

void Memory::update(const L3Model& model, const TaskData& task) {
  if (task.size() == 0) throw ShapeError("Memory::update: empty task");
  const std::size_t width = task.x.cols();
  if (input_dim_ == 0) input_dim_ = width;
  if (input_dim_ != width) throw ShapeError("Memory::update: input width changed");

  std::vector<int> new_classes;
  for (int y : task.labels) {
    if (store_.count(y) == 0 &&
        std::find(new_classes.begin(), new_classes.end(), y) == new_classes.end()) {
      new_classes.push_back(y);
    }
  }
  std::sort(new_classes.begin(), new_classes.end());

  const std::size_t classes_after = store_.size() + new_classes.size();
  if (classes_after == 0) return;
  const std::size_t quota = capacity_ / classes_after;
  if (quota == 0) {
    throw NumericError("Memory: capacity " + std::to_string(capacity_) +
                       " cannot hold one exemplar per class for " +
                       std::to_string(classes_after) + " classes");
  }

  // Truncation keeps the herding-rank prefix.
  for (auto& [c, rows] : store_) {
    if (rows.size() > quota) rows.resize(quota);
  }

  NoGradScope frozen;
  for (int c : new_classes) {
    std::vector<std::size_t> rows_of_class;
    for (std::size_t i = 0; i < task.size(); ++i) {
      if (task.labels[i] == c) rows_of_class.push_back(i);
    }
    std::vector<double> flat;
    flat.reserve(rows_of_class.size() * width);
    const auto& xd = task.x.data();
    for (std::size_t r : rows_of_class) {
      flat.insert(flat.end(), xd.begin() + r * width, xd.begin() + (r + 1) * width);
    }
    Tensor inputs = Tensor::from_data({rows_of_class.size(), width}, std::move(flat));
    Tensor feats = model.forward_features(inputs);
    const std::size_t take = std::min(quota, rows_of_class.size());
    std::vector<std::size_t> picks = herding_select(feats, take);
    auto& slot = store_[c];
    slot.clear();
    for (std::size_t p : picks) {
      const std::size_t src = rows_of_class[p];
      slot.emplace_back(task.x.data().begin() + src * width,
                        task.x.data().begin() + (src + 1) * width);
    }
  }
}

void update_memory(Memory& memory, const L3Model& model, const TaskData& task) {
  memory.update(model, task);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

std::vector<int> ncm_predict(const L3Model& model, const Memory& memory,
                             const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("ncm_predict: expected [B,in] input");
  std::vector<int> class_ids = memory.classes();
  if (class_ids.empty()) throw NumericError("ncm_predict: memory is empty");

  NoGradScope frozen;
  const std::size_t d = model.arch().feature_dim;
  std::vector<std::vector<double>> templates;
  templates.reserve(class_ids.size());
  for (int c : class_ids) {
    Tensor feats = model.forward_features(memory.class_exemplars(c));
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < feats.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += feats.at(i, j);
    for (auto& v : mu) v /= static_cast<double>(feats.rows());
    templates.push_back(std::move(mu));
  }

  Tensor feats = model.forward_features(x);
  std::vector<int> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_class = class_ids.front();
    for (std::size_t t = 0; t < templates.size(); ++t) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = feats.at(i, j) - templates[t][j];
        dist += diff * diff;
      }
      // class_ids is sorted ascending, so strict < keeps the lowest id on ties.
      if (dist < best) {
        best = dist;
        best_class = class_ids[t];
      }
    }
    out[i] = best_class;
  }
  return out;
}

std::vector<int> classifier_predict(const L3Model& model, const Tensor& x) {
  NoGradScope frozen;
  Tensor logits = model.forward_logits(x);
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw ShapeError("accuracy: prediction/label size mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ShapeError("TrainConfig: lr must be >= 0");
  if (epochs == 0) throw ShapeError("TrainConfig: epochs must be positive");
  if (batch_size == 0) throw ShapeError("TrainConfig: batch_size must be positive");
  if (!(grad_clip > 0.0)) throw ShapeError("TrainConfig: grad_clip must be > 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ShapeError("TrainConfig: val_fraction must be in [0,1)");
  }
  if (!(kd_scale >= 0.0)) throw ShapeError("TrainConfig: kd_scale must be >= 0");
  distill.validate();
}

namespace {

TaskData gather_rows_of(const TaskData& task, const std::vector<std::size_t>& rows) {
  const std::size_t width = task.x.cols();
  std::vector<double> flat;
  flat.reserve(rows.size() * width);
  TaskData out;
  out.labels.reserve(rows.size());
  const auto& xd = task.x.data();
  for (std::size_t r : rows) {
    flat.insert(flat.end(), xd.begin() + r * width, xd.begin() + (r + 1) * width);
    out.labels.push_back(task.labels[r]);
  }
  out.x = Tensor::from_data({rows.size(), width}, std::move(flat));
  return out;
}

void sgd_step(std::vector<Tensor>& params, double lr, double clip) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& d = p.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] -= lr * std::clamp(g[i], -clip, clip);
    }
  }
}

}  // namespace

TrainReport train_task(L3Model& model, const ModelSnapshot* old_model,
                       const TaskData& task, const Memory& memory,
                       const TrainConfig& cfg, std::size_t task_index) {
  cfg.validate();
  if (task.size() == 0) throw ShapeError("train_task: empty task");

  // Seeded stratified validation split of this task's data.
  std::vector<std::size_t> train_rows, val_rows;
  {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < task.size(); ++i) by_class[task.labels[i]].push_back(i);
    for (auto& [c, rows] : by_class) {
      Rng rng(Rng::mix(cfg.seed, 0x5A17ULL + 31 * task_index + static_cast<std::size_t>(c)));
      rng.shuffle(rows);
      std::size_t n_val =
          static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(rows.size()));
      if (cfg.val_fraction > 0.0 && rows.size() >= 2 && n_val == 0) n_val = 1;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        (i < n_val ? val_rows : train_rows).push_back(rows[i]);
      }
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(val_rows.begin(), val_rows.end());
  }
  TaskData train_split = gather_rows_of(task, train_rows);
  TaskData val_split;
  const bool has_val = !val_rows.empty();
  if (has_val) val_split = gather_rows_of(task, val_rows);

  // Replay union D_t u M.
  TaskData pool = train_split;
  if (!memory.empty()) {
    TaskData replay = memory.as_task_data();
    std::vector<double> flat = pool.x.data();
    const auto& rd = replay.x.data();
    flat.insert(flat.end(), rd.begin(), rd.end());
    pool.labels.insert(pool.labels.end(), replay.labels.begin(), replay.labels.end());
    pool.x = Tensor::from_data({pool.labels.size(), task.x.cols()}, std::move(flat));
  }

  const std::size_t width = pool.x.cols();
  const auto& pool_x = pool.x.data();
  // One seeded shuffle per task: every epoch walks the same batch partition,
  // so with frozen parameters the per-epoch loss is bit-stable.
  Rng batch_rng(Rng::mix(cfg.seed, 0xBA7C4ULL + task_index));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  batch_rng.shuffle(order);

  std::vector<Tensor> params = model.parameters();
  TrainReport report;
  double best_val = -1.0;
  std::size_t since_best = 0;
  ModelSnapshot best_params = model.snapshot();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      const std::size_t b = stop - start;
      std::vector<double> flat(b * width);
      std::vector<int> labels(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        std::copy(pool_x.begin() + src * width, pool_x.begin() + (src + 1) * width,
                  flat.begin() + i * width);
        labels[i] = pool.labels[src];
      }
      Tensor batch_x = Tensor::from_data({b, width}, std::move(flat));

      Tensor loss;
      try {
        Tensor features = model.forward_features(batch_x);
        Tensor logits = l3dmc::add_rowvec(
            l3dmc::matmul(features, model.classifier().weight),
            model.classifier().bias);
        loss = cross_entropy(logits, labels);
        if (old_model != nullptr && cfg.use_kd) {
          Tensor old_features = old_model->forward_features(batch_x);
          KdDiagnostics diag;
          Tensor kd = kd_loss(features, old_features, model.heads(),
                              old_model->heads(), cfg.distill, &diag);
          report.max_gram_ridge =
              std::max({report.max_gram_ridge, diag.ridge_e, diag.ridge_h});
          report.max_gram_condition = std::max(
              {report.max_gram_condition, diag.condition_e, diag.condition_h});
          loss = add(loss, scale(kd, cfg.kd_scale));
        }
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " (training step " +
                           std::to_string(report.steps) + ")");
      }

      for (auto& p : params) p.zero_grad();
      backward(loss);
      sgd_step(params, cfg.lr, cfg.grad_clip);
      epoch_loss += loss.item();
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(batches ? epoch_loss / static_cast<double>(batches)
                                        : 0.0);
    ++report.epochs_run;

    if (has_val) {
      const double val_acc =
          accuracy(classifier_predict(model, val_split.x), val_split.labels);
      report.epoch_val_accuracy.push_back(val_acc);
      if (val_acc > best_val) {
        best_val = val_acc;
        report.best_epoch = epoch;
        since_best = 0;
        best_params = model.snapshot();
      } else {
        ++since_best;
        if (cfg.patience > 0 && since_best >= cfg.patience) {
          report.early_stopped = true;
          break;
        }
      }
    }
  }

  if (has_val) model.restore(best_params);
  return report;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

void MetricsLedger::record(std::size_t task_index, std::vector<double> accuracies) {
  if (task_index != rows_.size()) {
    throw ShapeError("MetricsLedger: tasks must be recorded in order");
  }
  if (accuracies.size() != task_index + 1) {
    throw ShapeError("MetricsLedger: row " + std::to_string(task_index) +
                     " needs " + std::to_string(task_index + 1) + " entries");
  }
  for (double a : accuracies) {
    if (!(a >= 0.0 && a <= 1.0)) throw ShapeError("MetricsLedger: accuracy out of [0,1]");
  }
  rows_.push_back(std::move(accuracies));
}

std::pair<double, std::optional<double>> compute_metrics(const MetricsLedger& ledger,
                                                         std::size_t t) {
  const auto& rows = ledger.rows();
  if (t == 0 || t > rows.size()) {
    throw ShapeError("compute_metrics: task index out of range");
  }
  const auto& row = rows[t - 1];

  double acc = 0.0;
  for (double a : row) acc += a;
  acc /= static_cast<double>(t);

  if (t < 2) return {acc, std::nullopt};

  double forgetting = 0.0;
  for (std::size_t i = 0; i < t - 1; ++i) {
    double best_earlier = -1.0;
    for (std::size_t j = i; j < t - 1; ++j) {  // rows j (0-based) = tasks 1..t-1
      best_earlier = std::max(best_earlier, rows[j][i]);
    }
    forgetting += best_earlier - row[i];
  }
  forgetting /= static_cast<double>(t - 1);
  return {acc, forgetting};
}

}  // namespace l3dmc
