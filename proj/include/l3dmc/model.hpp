#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l3dmc/rng.hpp"
#include "l3dmc/tensor.hpp"

namespace l3dmc {

enum class Activation { kRelu, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct LinearLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, weight), bias); }
  std::size_t fan_in() const { return weight.rows(); }
  std::size_t fan_out() const { return weight.cols(); }
};

// Fully connected stack. `activate_output` controls whether the last affine
// layer is followed by the nonlinearity.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> dims, Activation act, bool activate_output, Rng& rng,
      bool trainable = true);

  Tensor forward(const Tensor& x) const;
  const std::vector<LinearLayer>& layers() const { return layers_; }
  std::vector<Tensor> parameters() const;
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }

  // Deep copy; `trainable` selects between gradient leaves and frozen values.
  Mlp clone(bool trainable) const;

 private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::kRelu;
  bool activate_output_ = false;
  std::vector<LinearLayer> layers_;

  friend class L3Model;
};

struct ProjectionHeads {
  Mlp head_e;
  Mlp head_h;
};

struct ModelArch {
  std::size_t input_dim = 16;
  std::vector<std::size_t> backbone_hidden = {64, 64};
  std::size_t feature_dim = 32;   // D
  std::size_t embed_dim = 16;     // d, projection head output
  Activation activation = Activation::kTanh;

  void validate() const;
};

class ModelSnapshot;

// Feature extractor + two independent projection heads + growing linear
// classifier. All parameters live in flat double tensors; the construction
// and expansion order is fixed so a (seed, arch) pair is fully reproducible.
class L3Model {
 public:
  L3Model(const ModelArch& arch, std::size_t num_classes, std::uint64_t seed);

  Tensor forward_features(const Tensor& x) const;
  Tensor forward_logits(const Tensor& x) const;

  const ModelArch& arch() const { return arch_; }
  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t rng_seed() const { return seed_; }
  const ProjectionHeads& heads() const { return heads_; }
  const LinearLayer& classifier() const { return classifier_; }

  // Grows the classifier to `new_class_count` outputs. Existing class rows
  // are preserved bit-exactly; new rows use the init scheme seeded from the
  // run seed and the new width.
  void expand_classifier(std::size_t new_class_count);

  ModelSnapshot snapshot() const;
  void restore(const ModelSnapshot& snap);

  std::vector<Tensor> parameters() const;

 private:
  L3Model() = default;

  ModelArch arch_;
  std::size_t num_classes_ = 0;
  std::uint64_t seed_ = 0;
  Mlp backbone_;
  ProjectionHeads heads_;
  LinearLayer classifier_;

  friend class ModelSnapshot;
  friend void save_checkpoint(const L3Model& model, const std::string& path);
  friend L3Model load_checkpoint(const std::string& path);
};

// Immutable frozen copy of a model. Forwarding through a snapshot never
// builds a differentiation graph because its parameters are plain values.
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const L3Model& model);

  Tensor forward_features(const Tensor& x) const { return frozen_.forward_features(x); }
  Tensor forward_logits(const Tensor& x) const { return frozen_.forward_logits(x); }
  const ProjectionHeads& heads() const { return frozen_.heads(); }
  const ModelArch& arch() const { return frozen_.arch(); }
  std::size_t num_classes() const { return frozen_.num_classes(); }
  const L3Model& model() const { return frozen_; }

 private:
  L3Model frozen_;
};

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Versioned binary container: architecture descriptor, parameter arrays in
// declared order, and the run seed. Byte-for-byte reproducible.
void save_checkpoint(const L3Model& model, const std::string& path);
L3Model load_checkpoint(const std::string& path);

}  // namespace l3dmc
