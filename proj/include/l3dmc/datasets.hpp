#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l3dmc/tensor.hpp"

namespace l3dmc {

enum class Normalize { kNone, kPerFeatureStandardize };

// Per-feature affine x' = (x - shift) / scale recorded at ingestion time.
struct NormalizationRecord {
  Normalize kind = Normalize::kNone;
  std::vector<double> shift;
  std::vector<double> scale;
};

struct LabeledDataset {
  Tensor x;  // [N, in], untracked
  std::vector<int> labels;
  std::vector<std::string> class_names;  // empty for synthetic data
  NormalizationRecord normalization;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return x.cols(); }
  std::size_t num_classes() const;
  void validate() const;
};

struct CsvError : NumericError {
  using NumericError::NumericError;
};

// Header row required; labels may be arbitrary strings and are remapped to
// dense ids in order of first appearance (mapping recorded in class_names).
LabeledDataset load_csv(const std::string& path, const std::string& label_column,
                        Normalize normalize);
void write_csv(const LabeledDataset& ds, const std::string& path);

// Binary container: magic, version, N, in, C, row-major little-endian f64
// features, then int32 labels. Bit-exact round trips.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

// Isotropic Gaussian blobs around seeded unit-norm class centers.
LabeledDataset make_blobs(std::size_t num_classes, std::size_t per_class,
                          std::size_t dim, double spread, std::uint64_t seed);

// Leaf classes of a random offset tree: each level adds a Gaussian offset of
// geometrically shrinking scale, so sibling leaves stay closer than leaves
// from different subtrees. Labels are leaf ids; depth 1 reduces to blobs.
LabeledDataset make_tree_data(std::size_t branching, std::size_t depth,
                              std::size_t per_leaf, std::size_t dim, double noise,
                              std::uint64_t seed);

// Stratified split: per class, a seeded shuffle routes floor(fraction * n)
// samples to the test side.
std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds,
                                                           double test_fraction,
                                                           std::uint64_t seed);

}  // namespace l3dmc
