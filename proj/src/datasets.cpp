#include "l3dmc/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <cstdlib>

#include "l3dmc/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset format assumes a little-endian host");

namespace l3dmc {

std::size_t LabeledDataset::num_classes() const {
  int max_label = -1;
  for (int y : labels) max_label = std::max(max_label, y);
  return static_cast<std::size_t>(max_label + 1);
}

void LabeledDataset::validate() const {
  if (x.ndim() != 2) throw ShapeError("LabeledDataset: features must be [N,in]");
  if (labels.size() != x.rows()) {
    throw ShapeError("LabeledDataset: one label per row required");
  }
  if (labels.empty()) throw ShapeError("LabeledDataset: empty dataset");
  std::vector<bool> seen(num_classes(), false);
  for (int y : labels) {
    if (y < 0) throw ShapeError("LabeledDataset: negative label");
    seen[static_cast<std::size_t>(y)] = true;
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) {
      throw ShapeError("LabeledDataset: label range has a hole at " +
                       std::to_string(c));
    }
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(current);
      current.clear();
    } else if (ch != '\r') {
      current += ch;
    }
  }
  fields.push_back(current);
  return fields;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

LabeledDataset load_csv(const std::string& path, const std::string& label_column,
                        Normalize normalize) {
  std::ifstream in(path);
  if (!in) throw CsvError("csv: cannot open " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw CsvError("csv: empty file " + path);
  std::vector<std::string> header = split_csv_line(header_line);
  for (auto& h : header) h = trim(h);

  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) {
      label_idx = i;
      break;
    }
  }
  if (label_idx == header.size()) {
    throw CsvError("csv: label column '" + label_column + "' not found in " + path);
  }
  const std::size_t width = header.size() - 1;
  if (width == 0) throw CsvError("csv: no feature columns in " + path);

  std::vector<double> features;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::map<std::string, int> label_ids;

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw CsvError("csv: line " + std::to_string(line_no) + ": expected " +
                     std::to_string(header.size()) + " fields, got " +
                     std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i == label_idx) continue;
      const std::string value = trim(fields[i]);
      char* end = nullptr;
      const double v = std::strtod(value.c_str(), &end);
      if (end == value.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw CsvError("csv: line " + std::to_string(line_no) +
                       ": non-numeric feature '" + value + "'");
      }
      features.push_back(v);
    }
    const std::string label = trim(fields[label_idx]);
    auto [it, inserted] = label_ids.emplace(label, static_cast<int>(class_names.size()));
    if (inserted) class_names.push_back(label);
    labels.push_back(it->second);
  }
  if (labels.empty()) throw CsvError("csv: no data rows in " + path);

  LabeledDataset ds;
  const std::size_t n = labels.size();
  ds.x = Tensor::from_data({n, width}, std::move(features));
  ds.labels = std::move(labels);
  ds.class_names = std::move(class_names);

  if (normalize == Normalize::kPerFeatureStandardize) {
    std::vector<double> mean(width, 0.0), stdev(width, 0.0);
    const auto& xd = ds.x.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) mean[j] += xd[i * width + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double d = xd[i * width + j] - mean[j];
        stdev[j] += d * d;
      }
    for (auto& s : stdev) s = std::sqrt(s / static_cast<double>(n));
    std::vector<double> scaled(xd.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double denom = stdev[j] > 1e-12 ? stdev[j] : 1.0;
        scaled[i * width + j] = (xd[i * width + j] - mean[j]) / denom;
      }
    ds.x = Tensor::from_data({n, width}, std::move(scaled));
    ds.normalization.kind = Normalize::kPerFeatureStandardize;
    ds.normalization.shift = std::move(mean);
    ds.normalization.scale = std::move(stdev);
  }
  ds.validate();
  return ds;
}

void write_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CsvError("csv: cannot open " + path + " for writing");
  const std::size_t width = ds.input_dim();
  for (std::size_t j = 0; j < width; ++j) out << "f" << j << ",";
  out << "label\n";
  out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) out << ds.x.at(i, j) << ",";
    if (!ds.class_names.empty()) {
      out << ds.class_names[static_cast<std::size_t>(ds.labels[i])];
    } else {
      out << ds.labels[i];
    }
    out << "\n";
  }
  if (!out) throw CsvError("csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[4] = {'L', '3', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NumericError("dataset: cannot open " + path + " for writing");
  out.write(kDatasetMagic, 4);
  const std::uint32_t version = kDatasetVersion;
  const std::uint64_t n = ds.size();
  const std::uint64_t width = ds.input_dim();
  const std::uint64_t classes = ds.num_classes();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&width), sizeof(width));
  out.write(reinterpret_cast<const char*>(&classes), sizeof(classes));
  const auto& xd = ds.x.data();
  out.write(reinterpret_cast<const char*>(xd.data()),
            static_cast<std::streamsize>(xd.size() * sizeof(double)));
  for (int y : ds.labels) {
    const std::int32_t v = y;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  if (!out) throw NumericError("dataset: write failed for " + path);
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericError("dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw NumericError("dataset: bad magic in " + path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kDatasetVersion) {
    throw NumericError("dataset: unsupported version in " + path);
  }
  std::uint64_t n = 0, width = 0, classes = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  in.read(reinterpret_cast<char*>(&width), sizeof(width));
  in.read(reinterpret_cast<char*>(&classes), sizeof(classes));
  if (!in || n == 0 || width == 0) throw NumericError("dataset: bad header in " + path);

  std::vector<double> features(n * width);
  in.read(reinterpret_cast<char*>(features.data()),
          static_cast<std::streamsize>(features.size() * sizeof(double)));
  std::vector<int> labels(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    labels[i] = v;
  }
  if (!in) throw NumericError("dataset: truncated file " + path);

  LabeledDataset ds;
  ds.x = Tensor::from_data({n, width}, std::move(features));
  ds.labels = std::move(labels);
  ds.validate();
  if (ds.num_classes() != classes) {
    throw NumericError("dataset: header class count disagrees with labels in " + path);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

LabeledDataset make_blobs(std::size_t num_classes, std::size_t per_class,
                          std::size_t dim, double spread, std::uint64_t seed) {
  if (num_classes == 0 || per_class == 0 || dim == 0) {
    throw ShapeError("make_blobs: num_classes, per_class and dim must be positive");
  }
  if (spread < 0.0) throw ShapeError("make_blobs: spread must be >= 0");
  Rng rng(seed);

  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(dim));
  for (auto& center : centers) {
    double norm = 0.0;
    for (auto& v : center) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : center) v = norm > 0 ? v / norm : 0.0;
  }

  std::vector<double> features;
  features.reserve(num_classes * per_class * dim);
  std::vector<int> labels;
  labels.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t j = 0; j < dim; ++j) {
        features.push_back(centers[c][j] + spread * rng.normal());
      }
      labels.push_back(static_cast<int>(c));
    }
  }
  LabeledDataset ds;
  ds.x = Tensor::from_data({num_classes * per_class, dim}, std::move(features));
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

LabeledDataset make_tree_data(std::size_t branching, std::size_t depth,
                              std::size_t per_leaf, std::size_t dim, double noise,
                              std::uint64_t seed) {
  if (branching == 0 || depth == 0 || per_leaf == 0 || dim == 0) {
    throw ShapeError("make_tree_data: all structural arguments must be positive");
  }
  if (noise < 0.0) throw ShapeError("make_tree_data: noise must be >= 0");
  Rng rng(seed);

  // Pre-order walk: each level's offset scale halves, so the top split
  // dominates inter-subtree distances.
  std::vector<std::vector<double>> leaf_centers;
  std::vector<double> root(dim, 0.0);
  struct Frame {
    std::vector<double> center;
    std::size_t level;
  };
  std::vector<Frame> stack{{root, 0}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    if (f.level == depth) {
      leaf_centers.push_back(std::move(f.center));
      continue;
    }
    const double scale = std::pow(0.5, static_cast<double>(f.level));
    std::vector<Frame> children;
    children.reserve(branching);
    for (std::size_t b = 0; b < branching; ++b) {
      Frame child{f.center, f.level + 1};
      for (std::size_t j = 0; j < dim; ++j) child.center[j] += scale * rng.normal();
      children.push_back(std::move(child));
    }
    // Reverse so the stack pops children in draw order.
    for (auto it = children.rbegin(); it != children.rend(); ++it) {
      stack.push_back(std::move(*it));
    }
  }

  const std::size_t leaves = leaf_centers.size();
  std::vector<double> features;
  features.reserve(leaves * per_leaf * dim);
  std::vector<int> labels;
  labels.reserve(leaves * per_leaf);
  for (std::size_t c = 0; c < leaves; ++c) {
    for (std::size_t s = 0; s < per_leaf; ++s) {
      for (std::size_t j = 0; j < dim; ++j) {
        features.push_back(leaf_centers[c][j] + noise * rng.normal());
      }
      labels.push_back(static_cast<int>(c));
    }
  }
  LabeledDataset ds;
  ds.x = Tensor::from_data({leaves * per_leaf, dim}, std::move(features));
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds,
                                                           double test_fraction,
                                                           std::uint64_t seed) {
  ds.validate();
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ShapeError("split_train_test: test_fraction must be in [0,1)");
  }
  const std::size_t classes = ds.num_classes();
  const std::size_t width = ds.input_dim();

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < classes; ++c) {
    auto idx = by_class[c];
    Rng rng(Rng::mix(seed, c));
    rng.shuffle(idx);
    const std::size_t n_test =
        static_cast<std::size_t>(test_fraction * static_cast<double>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_test ? test_idx : train_idx).push_back(idx[i]);
    }
  }

  auto take = [&](const std::vector<std::size_t>& rows) {
    LabeledDataset out;
    std::vector<double> features(rows.size() * width);
    out.labels.reserve(rows.size());
    const auto& xd = ds.x.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(xd.begin() + rows[r] * width, xd.begin() + (rows[r] + 1) * width,
                features.begin() + r * width);
      out.labels.push_back(ds.labels[rows[r]]);
    }
    out.x = Tensor::from_data({rows.size(), width}, std::move(features));
    out.class_names = ds.class_names;
    out.normalization = ds.normalization;
    return out;
  };
  return {take(train_idx), take(test_idx)};
}

}  // namespace l3dmc
