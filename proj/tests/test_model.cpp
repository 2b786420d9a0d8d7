#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "l3dmc/distill.hpp"
#include "l3dmc/model.hpp"
#include "test_util.hpp"

using l3dmc::L3Model;
using l3dmc::ModelArch;
using l3dmc::Tensor;

namespace {

ModelArch tiny_arch() {
  ModelArch arch;
  arch.input_dim = 4;
  arch.backbone_hidden = {8};
  arch.feature_dim = 8;
  arch.embed_dim = 4;
  arch.activation = l3dmc::Activation::kTanh;
  return arch;
}

std::uint64_t fnv1a(const std::vector<double>& values, std::uint64_t h = 1469598103934665603ULL) {
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::uint64_t param_hash(const L3Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor& t : model.parameters()) h = fnv1a(t.data(), h);
  return h;
}

void train_steps(L3Model& model, l3dmc::Rng& rng, int steps) {
  for (int s = 0; s < steps; ++s) {
    Tensor x = testutil::random_tensor(rng, {4, model.arch().input_dim});
    std::vector<int> y(4);
    for (auto& v : y) v = static_cast<int>(rng.index(model.num_classes()));
    Tensor loss = l3dmc::cross_entropy(model.forward_logits(x), y);
    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();
    l3dmc::backward(loss);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto& d = p.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 0.05 * g[i];
    }
  }
}

}  // namespace

TEST_CASE("zero backbone produces zero features") {
  L3Model model(tiny_arch(), 2, 5);
  // Zero every backbone parameter; tanh(0) = 0 passes zeros through.
  auto params = model.parameters();
  for (std::size_t i = 0; i < 4; ++i) {  // one hidden + output layer => 4 tensors
    auto& d = params[i].mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  Tensor x = Tensor::from_data({2, 4}, {1.0, -2.0, 3.0, 0.5, 0.0, 1.0, 2.0, -1.0});
  Tensor f = model.forward_features(x);
  for (double v : f.data()) CHECK(v == 0.0);
}

TEST_CASE("features are per-sample independent of batch composition") {
  l3dmc::Rng rng(9);
  L3Model model(tiny_arch(), 3, 11);
  Tensor batch = testutil::random_tensor(rng, {3, 4});
  Tensor single = Tensor::from_data({1, 4}, {batch.at(1, 0), batch.at(1, 1),
                                             batch.at(1, 2), batch.at(1, 3)});
  Tensor f_all = model.forward_features(batch);
  Tensor f_one = model.forward_features(single);
  for (std::size_t j = 0; j < 8; ++j) CHECK(f_all.at(1, j) == f_one.at(0, j));
}

TEST_CASE("same seed gives bit-identical features across runs") {
  l3dmc::Rng rng(13);
  Tensor x = testutil::random_tensor(rng, {5, 4});
  L3Model a(tiny_arch(), 3, 123);
  L3Model b(tiny_arch(), 3, 123);
  Tensor fa = a.forward_features(x);
  Tensor fb = b.forward_features(x);
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa.data()[i] == fb.data()[i]);
}

TEST_CASE("logits compose classifier over features") {
  l3dmc::Rng rng(17);
  L3Model model(tiny_arch(), 1, 3);
  Tensor x = testutil::random_tensor(rng, {4, 4});
  CHECK(model.forward_logits(x).cols() == 1);

  L3Model model3(tiny_arch(), 3, 3);
  Tensor logits = model3.forward_logits(x);
  Tensor manual = l3dmc::add_rowvec(
      l3dmc::matmul(model3.forward_features(x), model3.classifier().weight),
      model3.classifier().bias);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(logits.data()[i] == doctest::Approx(manual.data()[i]).epsilon(1e-14));
  }

  // Zero classifier weights: every logit equals the bias.
  L3Model zc(tiny_arch(), 3, 4);
  {
    auto params = zc.parameters();
    auto& w = params[params.size() - 2].mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
  }
  Tensor lz = zc.forward_logits(x);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(lz.at(i, j) == zc.classifier().bias.at(j));
}

TEST_CASE("cross entropy values") {
  // Uniform logits over 4 classes -> ln 4.
  Tensor uniform = Tensor::full({3, 4}, 0.25);
  CHECK(l3dmc::cross_entropy(uniform, {0, 1, 3}).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // +1000 on the true class saturates to ~0 without overflow.
  Tensor sat = Tensor::from_data({1, 3}, {1000.0, 0.0, 0.0});
  CHECK(l3dmc::cross_entropy(sat, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));

  // Equals the naive oracle.
  l3dmc::Rng rng(19);
  Tensor logits = testutil::random_tensor(rng, {6, 5}, -3.0, 3.0);
  std::vector<int> labels(6);
  for (auto& v : labels) v = static_cast<int>(rng.index(5));
  const double expect = testutil::cross_entropy_oracle(logits.data(), labels, 6, 5);
  CHECK(std::abs(l3dmc::cross_entropy(logits, labels).item() - expect) <= 1e-10);

  CHECK_THROWS_AS(l3dmc::cross_entropy(logits, {0, 1, 2, 3, 4, 5}),
                  l3dmc::ShapeError);
}

TEST_CASE("snapshots are frozen deep copies") {
  l3dmc::Rng rng(23);
  L3Model model(tiny_arch(), 3, 31);
  Tensor x = testutil::random_tensor(rng, {4, 4});

  l3dmc::ModelSnapshot snap = model.snapshot();
  Tensor before = snap.forward_features(x);
  // Snapshot forward equals live forward at capture.
  Tensor live = model.forward_features(x);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(before.data()[i] == live.data()[i]);
  CHECK_FALSE(before.tracked());

  const std::uint64_t snap_hash = param_hash(snap.model());
  train_steps(model, rng, 10);
  Tensor after = snap.forward_features(x);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(after.data()[i] == before.data()[i]);
  CHECK(param_hash(snap.model()) == snap_hash);

  // Restore then re-snapshot: identical outputs.
  model.restore(snap);
  l3dmc::ModelSnapshot snap2 = model.snapshot();
  Tensor again = snap2.forward_features(x);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(again.data()[i] == before.data()[i]);
}

TEST_CASE("expand_classifier preserves old rows bit-exactly") {
  l3dmc::Rng rng(29);
  L3Model model(tiny_arch(), 4, 37);
  Tensor x = testutil::random_tensor(rng, {3, 4});
  Tensor logits4 = model.forward_logits(x);

  model.expand_classifier(6);
  Tensor logits6 = model.forward_logits(x);
  CHECK(logits6.cols() == 6);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(logits6.at(i, j) == logits4.at(i, j));

  CHECK_THROWS_AS(model.expand_classifier(6), l3dmc::ShapeError);
  CHECK_THROWS_AS(model.expand_classifier(2), l3dmc::ShapeError);
}

TEST_CASE("repeated expansion keeps the original rows") {
  l3dmc::Rng rng(31);
  L3Model model(tiny_arch(), 2, 41);
  Tensor x = testutil::random_tensor(rng, {2, 4});
  Tensor base = model.forward_logits(x);
  model.expand_classifier(4);
  model.expand_classifier(8);
  Tensor grown = model.forward_logits(x);
  CHECK(grown.cols() == 8);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(grown.at(i, j) == base.at(i, j));

  // Same seed and same expansion sequence reproduce identical parameters.
  L3Model other(tiny_arch(), 2, 41);
  other.expand_classifier(4);
  other.expand_classifier(8);
  CHECK(param_hash(other) == param_hash(model));
}

TEST_CASE("combined loss gradient check on the tiny model") {
  l3dmc::Rng rng(43);
  ModelArch arch;
  arch.input_dim = 4;
  arch.backbone_hidden = {8};
  arch.feature_dim = 8;
  arch.embed_dim = 4;
  L3Model model(arch, 3, 7);
  L3Model old_model(arch, 3, 8);
  l3dmc::ModelSnapshot old_snap = old_model.snapshot();

  Tensor x = testutil::random_tensor(rng, {4, 4});
  std::vector<int> labels{0, 2, 1, 2};
  l3dmc::DistillConfig cfg;

  auto loss = [&] {
    Tensor feat = model.forward_features(x);
    Tensor logits = model.forward_logits(x);
    Tensor ce = l3dmc::cross_entropy(logits, labels);
    Tensor old_feat = old_snap.forward_features(x);
    Tensor kd = l3dmc::kd_loss(feat, old_feat, model.heads(), old_snap.heads(), cfg);
    return l3dmc::add(ce, kd);
  };
  auto check = testutil::check_gradients(loss, model.parameters());
  CHECK(check.ok);
}

TEST_CASE("checkpoint round trip is byte-identical and loads the same model") {
  l3dmc::Rng rng(47);
  L3Model model(tiny_arch(), 3, 53);
  train_steps(model, rng, 3);

  const std::string path1 = "ckpt_test_a.bin";
  const std::string path2 = "ckpt_test_b.bin";
  l3dmc::save_checkpoint(model, path1);
  L3Model loaded = l3dmc::load_checkpoint(path1);
  l3dmc::save_checkpoint(loaded, path2);

  std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(param_hash(loaded) == param_hash(model));
  CHECK(loaded.rng_seed() == model.rng_seed());
  CHECK(loaded.num_classes() == model.num_classes());

  Tensor x = testutil::random_tensor(rng, {2, 4});
  Tensor fa = model.forward_features(x);
  Tensor fb = loaded.forward_features(x);
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fa.data()[i] == fb.data()[i]);

  std::remove(path1.c_str());
  std::remove(path2.c_str());
}
