#include "l3dmc/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace l3dmc {

std::string to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ShapeError("unknown activation: " + name);
}

void ModelArch::validate() const {
  if (input_dim == 0) throw ShapeError("ModelArch: input_dim must be positive");
  if (feature_dim == 0) throw ShapeError("ModelArch: feature_dim must be positive");
  if (embed_dim == 0) throw ShapeError("ModelArch: embed_dim must be positive");
  for (std::size_t h : backbone_hidden) {
    if (h == 0) throw ShapeError("ModelArch: hidden widths must be positive");
  }
}

namespace {

Tensor make_tensor(Shape shape, std::vector<double> data, bool trainable) {
  return trainable ? Tensor::param(std::move(shape), std::move(data))
                   : Tensor::from_data(std::move(shape), std::move(data));
}

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and bias, drawn in a
// fixed order: row-major weights first, then bias.
LinearLayer init_linear(std::size_t in, std::size_t out, Rng& rng, bool trainable) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  std::vector<double> b(out);
  for (double& v : b) v = rng.uniform(-bound, bound);
  LinearLayer layer;
  layer.weight = make_tensor({in, out}, std::move(w), trainable);
  layer.bias = make_tensor({out}, std::move(b), trainable);
  return layer;
}

Tensor apply_activation(const Tensor& x, Activation act) {
  return act == Activation::kRelu ? relu(x) : tanh(x);
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> dims, Activation act, bool activate_output,
         Rng& rng, bool trainable)
    : dims_(std::move(dims)), activation_(act), activate_output_(activate_output) {
  if (dims_.size() < 2) throw ShapeError("Mlp: need at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    layers_.push_back(init_linear(dims_[i], dims_[i + 1], rng, trainable));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  if (x.ndim() != 2 || x.cols() != dims_.front()) {
    throw ShapeError("Mlp::forward: expected [B," + std::to_string(dims_.front()) +
                     "] input");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size() || activate_output_) {
      h = apply_activation(h, activation_);
    }
  }
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

Mlp Mlp::clone(bool trainable) const {
  Mlp copy;
  copy.dims_ = dims_;
  copy.activation_ = activation_;
  copy.activate_output_ = activate_output_;
  for (const auto& layer : layers_) {
    LinearLayer l;
    l.weight = make_tensor(layer.weight.shape(), layer.weight.data(), trainable);
    l.bias = make_tensor(layer.bias.shape(), layer.bias.data(), trainable);
    copy.layers_.push_back(std::move(l));
  }
  return copy;
}

L3Model::L3Model(const ModelArch& arch, std::size_t num_classes, std::uint64_t seed)
    : arch_(arch), num_classes_(num_classes), seed_(seed) {
  arch_.validate();
  if (num_classes == 0) throw ShapeError("L3Model: need at least one class");
  Rng rng(seed);
  std::vector<std::size_t> backbone_dims{arch_.input_dim};
  backbone_dims.insert(backbone_dims.end(), arch_.backbone_hidden.begin(),
                       arch_.backbone_hidden.end());
  backbone_dims.push_back(arch_.feature_dim);
  backbone_ = Mlp(backbone_dims, arch_.activation, /*activate_output=*/true, rng);
  // Heads are independent 2-layer MLPs with one hidden layer of width d and a
  // ReLU between the affine maps.
  heads_.head_e = Mlp({arch_.feature_dim, arch_.embed_dim, arch_.embed_dim},
                      Activation::kRelu, /*activate_output=*/false, rng);
  heads_.head_h = Mlp({arch_.feature_dim, arch_.embed_dim, arch_.embed_dim},
                      Activation::kRelu, /*activate_output=*/false, rng);
  classifier_ = init_linear(arch_.feature_dim, num_classes, rng, /*trainable=*/true);
}

Tensor L3Model::forward_features(const Tensor& x) const {
  return backbone_.forward(x);
}

Tensor L3Model::forward_logits(const Tensor& x) const {
  return classifier_.forward(forward_features(x));
}

void L3Model::expand_classifier(std::size_t new_class_count) {
  if (new_class_count <= num_classes_) {
    throw ShapeError("expand_classifier: new width must exceed current width");
  }
  const std::size_t d = arch_.feature_dim;
  const std::size_t old_c = num_classes_;
  const std::size_t new_c = new_class_count;
  const auto& old_w = classifier_.weight.data();
  const auto& old_b = classifier_.bias.data();

  std::vector<double> w(d * new_c, 0.0);
  std::vector<double> b(new_c, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < old_c; ++j) w[i * new_c + j] = old_w[i * old_c + j];
  for (std::size_t j = 0; j < old_c; ++j) b[j] = old_b[j];

  // New class rows follow the init scheme on a stream derived from the run
  // seed and the expanded width, so repeated expansions are reproducible.
  Rng rng(Rng::mix(seed_, new_class_count));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t j = old_c; j < new_c; ++j) {
    for (std::size_t i = 0; i < d; ++i) w[i * new_c + j] = rng.uniform(-bound, bound);
    b[j] = rng.uniform(-bound, bound);
  }

  classifier_.weight = Tensor::param({d, new_c}, std::move(w));
  classifier_.bias = Tensor::param({new_c}, std::move(b));
  num_classes_ = new_c;
}

ModelSnapshot L3Model::snapshot() const { return ModelSnapshot(*this); }

void L3Model::restore(const ModelSnapshot& snap) {
  const L3Model& other = snap.model();
  std::vector<Tensor> mine = parameters();
  std::vector<Tensor> theirs = other.parameters();
  if (mine.size() != theirs.size()) {
    throw ShapeError("restore: parameter structure mismatch");
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].shape() != theirs[i].shape()) {
      throw ShapeError("restore: parameter shape mismatch");
    }
    mine[i].mutable_data() = theirs[i].data();
  }
}

std::vector<Tensor> L3Model::parameters() const {
  std::vector<Tensor> out = backbone_.parameters();
  for (const auto& t : heads_.head_e.parameters()) out.push_back(t);
  for (const auto& t : heads_.head_h.parameters()) out.push_back(t);
  out.push_back(classifier_.weight);
  out.push_back(classifier_.bias);
  return out;
}

ModelSnapshot::ModelSnapshot(const L3Model& model) {
  frozen_.arch_ = model.arch();
  frozen_.num_classes_ = model.num_classes();
  frozen_.seed_ = model.rng_seed();
  frozen_.backbone_ = model.backbone_.clone(/*trainable=*/false);
  frozen_.heads_.head_e = model.heads_.head_e.clone(false);
  frozen_.heads_.head_h = model.heads_.head_h.clone(false);
  frozen_.classifier_.weight = Tensor::from_data(model.classifier_.weight.shape(),
                                                 model.classifier_.weight.data());
  frozen_.classifier_.bias = Tensor::from_data(model.classifier_.bias.shape(),
                                               model.classifier_.bias.data());
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be [B,C]");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) throw ShapeError("cross_entropy: one label per row required");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(y) +
                       " out of range for " + std::to_string(c) + " classes");
    }
  }
  Tensor lse = logsumexp_rows(logits);
  Tensor picked = gather_rows(logits, labels);
  return mean(sub(lse, picked));
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'L', '3', 'M', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw NumericError("checkpoint: unexpected end of file");
}

}  // namespace

void save_checkpoint(const L3Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NumericError("checkpoint: cannot open " + path + " for writing");
  out.write(kCheckpointMagic, 4);
  write_raw(out, kCheckpointVersion);
  write_raw(out, model.seed_);
  write_raw(out, static_cast<std::uint32_t>(model.arch_.input_dim));
  write_raw(out, static_cast<std::uint32_t>(model.arch_.backbone_hidden.size()));
  for (std::size_t h : model.arch_.backbone_hidden) {
    write_raw(out, static_cast<std::uint32_t>(h));
  }
  write_raw(out, static_cast<std::uint32_t>(model.arch_.feature_dim));
  write_raw(out, static_cast<std::uint32_t>(model.arch_.embed_dim));
  write_raw(out, static_cast<std::uint8_t>(model.arch_.activation));
  write_raw(out, static_cast<std::uint32_t>(model.num_classes_));
  for (const Tensor& t : model.parameters()) {
    const auto& d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw NumericError("checkpoint: write failed for " + path);
}

L3Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw NumericError("checkpoint: bad magic in " + path);
  }
  std::uint32_t version = 0;
  read_raw(in, version);
  if (version != kCheckpointVersion) {
    throw NumericError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::uint64_t seed = 0;
  read_raw(in, seed);
  ModelArch arch;
  std::uint32_t v32 = 0;
  read_raw(in, v32);
  arch.input_dim = v32;
  std::uint32_t hidden_count = 0;
  read_raw(in, hidden_count);
  arch.backbone_hidden.clear();
  for (std::uint32_t i = 0; i < hidden_count; ++i) {
    read_raw(in, v32);
    arch.backbone_hidden.push_back(v32);
  }
  read_raw(in, v32);
  arch.feature_dim = v32;
  read_raw(in, v32);
  arch.embed_dim = v32;
  std::uint8_t act = 0;
  read_raw(in, act);
  arch.activation = static_cast<Activation>(act);
  std::uint32_t num_classes = 0;
  read_raw(in, num_classes);

  L3Model model(arch, num_classes, seed);
  for (Tensor& t : model.parameters()) {
    auto& d = t.mutable_data();
    in.read(reinterpret_cast<char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!in) throw NumericError("checkpoint: truncated parameter data in " + path);
  }
  return model;
}

}  // namespace l3dmc
