#include <gtest/gtest.h>

#include <cmath>

#include "edap/nn/checkpoint_io.hpp"
#include "edap/nn/model.hpp"
#include "edap/nn/optimizer.hpp"
#include "edap/nn/train.hpp"
#include "test_support.hpp"

namespace edap::nn {
namespace {

using edap::testing::small_arch;
using edap::testing::TempDir;

Checkpoint single_dense(Shape in, std::size_t units, std::vector<float> w, std::vector<float> b) {
  ModelSpec spec;
  spec.input_shape = std::move(in);
  spec.layers = {output_linear("out", units)};
  Checkpoint c;
  c.spec = spec;
  const std::size_t fan_in = shape_size(spec.input_shape);
  c.weights["out"] = {{{fan_in, units}, std::move(w)}, {{units}, std::move(b)}};
  return c;
}

TEST(Forward, DenseIdentity) {
  auto c = single_dense({2}, 2, {1, 0, 0, 1}, {0, 0});
  const auto y = forward(c, Tensor<float>({1, 2}, {1.0f, 2.0f}));
  EXPECT_EQ(y.shape, (Shape{1, 2}));
  EXPECT_EQ(y.data, (std::vector<float>{1.0f, 2.0f}));
}

TEST(Forward, ConvMatchesHandConvolution) {
  ModelSpec spec;
  spec.input_shape = {4, 1};
  spec.layers = {conv1d("c", 1, 2, 1), flatten("f"), output_linear("out", 3)};
  Checkpoint c;
  c.spec = spec;
  c.weights["c"] = {{{2, 1, 1}, {1, 1}}, {{1}, {0}}};
  c.weights["out"] = {{{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}}, {{3}, {0, 0, 0}}};
  Executor<float> ex(c);
  const std::vector<float> x{1, 2, 3, 0};
  ex.forward(x);
  const auto conv_out = ex.activation(1);
  EXPECT_EQ(std::vector<float>(conv_out.begin(), conv_out.end()), (std::vector<float>{3, 5, 3}));
}

TEST(Forward, ConvStrideAndPaddingMatchOracle) {
  // Two channels, two filters, stride 2, padding 1 against a direct loop.
  ModelSpec spec;
  spec.input_shape = {7, 2};
  spec.layers = {conv1d("c", 2, 3, 2, 1), flatten("f"), output_linear("out", 1)};
  auto c = init_checkpoint(spec, 9);
  Executor<float> ex(c);
  std::vector<float> x(14);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1f * float(i) - 0.5f;
  ex.forward(x);
  const auto got = ex.activation(1);
  const auto& w = c.weights["c"].kernel.data;  // (k, c, f)
  const auto& b = c.weights["c"].bias.data;
  const std::size_t lo = (7 + 2 - 3) / 2 + 1;
  ASSERT_EQ(got.size(), lo * 2);
  for (std::size_t o = 0; o < lo; ++o)
    for (std::size_t f = 0; f < 2; ++f) {
      double s = b[f];
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t ch = 0; ch < 2; ++ch) {
          const long pos = long(o * 2 + k) - 1;
          if (pos < 0 || pos >= 7) continue;
          s += double(x[std::size_t(pos) * 2 + ch]) * double(w[(k * 2 + ch) * 2 + f]);
        }
      EXPECT_NEAR(got[o * 2 + f], s, 1e-6);
    }
}

TEST(Forward, LeakyRelu) {
  ModelSpec spec;
  spec.input_shape = {3};
  spec.layers = {leaky_relu("a", 0.01), output_linear("out", 3)};
  Checkpoint c;
  c.spec = spec;
  c.weights["out"] = {{{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}}, {{3}, {0, 0, 0}}};
  const auto y = forward(c, Tensor<float>({1, 3}, {-1, 0, 2}));
  EXPECT_FLOAT_EQ(y.data[0], -0.01f);
  EXPECT_EQ(y.data[1], 0.0f);
  EXPECT_EQ(y.data[2], 2.0f);
}

TEST(Forward, ShapeContracts) {
  const auto pre = init_checkpoint(pretext_spec(), 1);
  const auto down = init_checkpoint(downstream_spec(), 1);
  Tensor<float> batch({2, 7000, 1});
  for (std::size_t i = 0; i < batch.size(); ++i) batch.data[i] = float(std::sin(0.001 * double(i)));
  const auto a = forward(pre, batch);
  const auto b = forward(down, batch);
  EXPECT_EQ(a.shape, (Shape{2, 40}));
  EXPECT_EQ(b.shape, (Shape{2, 1}));
  EXPECT_TRUE(a.all_finite());
  EXPECT_EQ(forward(pre, batch).data, a.data);
  EXPECT_THROW(forward(pre, Tensor<float>({2, 6999, 1})), ShapeError);
}

TEST(Shapes, DefaultArchitecture) {
  const auto shapes = infer_shapes(pretext_spec());
  const auto spec = pretext_spec();
  const auto at = [&](const char* n) { return shapes[*spec.index_of(n) + 1]; };
  // (L - 7) / 3 + 1 per conv layer
  EXPECT_EQ(at("conv1"), (Shape{2332, 40}));
  EXPECT_EQ(at("conv2"), (Shape{776, 30}));
  EXPECT_EQ(at("conv3"), (Shape{257, 18}));
  EXPECT_EQ(at("conv4"), (Shape{84, 30}));
  EXPECT_EQ(at("flatten"), (Shape{2520}));
  EXPECT_EQ(at("pretext_dense1"), (Shape{70}));
  EXPECT_EQ(at("pretext_dense2"), (Shape{30}));
  EXPECT_EQ(shapes.back(), (Shape{40}));
}

TEST(Shapes, ErrorsNameTheLayer) {
  ModelSpec spec;
  spec.input_shape = {5, 1};
  spec.layers = {conv1d("too_wide", 2, 9, 1), flatten("f"), output_linear("o", 1)};
  try {
    infer_shapes(spec);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("too_wide"), std::string::npos);
  }
  spec.layers = {flatten("x"), output_linear("x", 1)};
  EXPECT_THROW(infer_shapes(spec), ShapeError);
  spec.layers = {flatten("f")};
  EXPECT_THROW(infer_shapes(spec), ShapeError);
  spec.layers = {conv1d("c", 0, 2, 1), flatten("f"), output_linear("o", 1)};
  EXPECT_THROW(infer_shapes(spec), ShapeError);
}

TEST(Backward, SingleDenseHandGradient) {
  auto c = single_dense({1}, 1, {1.0f}, {0.0f});
  double loss = 0;
  const auto g = backward(c, Tensor<float>({1, 1}, {2.0f}), Tensor<float>({1, 1}, {0.0f}), &loss);
  EXPECT_DOUBLE_EQ(loss, 4.0);
  EXPECT_FLOAT_EQ(g.at("out").kernel.data[0], 8.0f);
  EXPECT_FLOAT_EQ(g.at("out").bias.data[0], 4.0f);
}

TEST(Backward, AllFrozenGivesEmptyMap) {
  auto c = init_checkpoint(pretext_spec(small_arch()), 3);
  for (const auto& [name, _] : c.weights) c.frozen.insert(name);
  Tensor<float> x({1, 256, 1}, 0.5f);
  EXPECT_TRUE(backward(c, x, Tensor<float>({1, 8}, 0.0f)).empty());
}

TEST(Backward, FrozenLayersGetNoEntries) {
  auto c = init_checkpoint(downstream_spec(small_arch()), 3);
  for (const auto& n : conv_layer_names(small_arch())) c.frozen.insert(n);
  Tensor<float> x({2, 256, 1}, 0.25f);
  const auto g = backward(c, x, Tensor<float>({2, 1}, 1.0f));
  EXPECT_EQ(g.size(), 4u);
  for (const auto& n : conv_layer_names(small_arch())) EXPECT_FALSE(g.contains(n));
  EXPECT_TRUE(g.contains("head_dense1"));
  EXPECT_TRUE(g.contains("stress_out"));
}

TEST(Rmse, Examples) {
  EXPECT_EQ(rmse(Tensor<float>({2}, {0.3f, 0.4f}), Tensor<float>({2}, {0.3f, 0.4f})), 0.0);
  EXPECT_EQ(rmse(Tensor<float>({2}, {0, 0}), Tensor<float>({2}, {1, 1})), 1.0);
  EXPECT_NEAR(rmse(Tensor<float>({2}, {0.2f, 0.4f}), Tensor<float>({2}, {0.25f, 0.5f})), 0.0790569, 1e-6);
  EXPECT_THROW(rmse(Tensor<float>({2}), Tensor<float>({3})), ShapeError);
}

ArrayDataset ten_examples(const ModelSpec& spec, std::size_t out_dim, std::uint64_t seed) {
  ArrayDataset d;
  CounterRng rng(seed);
  const std::size_t n_in = shape_size(spec.input_shape);
  for (int i = 0; i < 10; ++i) {
    std::vector<float> x(n_in);
    const double f = rng.uniform(0.5, 3.0), ph = rng.uniform(0, 6.28);
    for (std::size_t k = 0; k < n_in; ++k) x[k] = float(0.5 + 0.4 * std::sin(f * 6.28 * double(k) / double(n_in) + ph));
    std::vector<float> t(out_dim);
    for (auto& v : t) v = float(rng.uniform(0.2, 0.9));
    d.inputs.push_back(std::move(x));
    d.targets.push_back(std::move(t));
  }
  return d;
}

TEST(Train, OverfitsTenExamples) {
  const auto spec = downstream_spec(small_arch());
  const auto data = ten_examples(spec, 1, 4);
  std::vector<double> losses;
  auto opt = OptimizerState::adam(1e-3);
  const std::size_t epochs = 1500;
  auto trained = train(init_checkpoint(spec, 8), data, opt,
                       {epochs, 10, 1, [&](std::size_t, double l) { losses.push_back(l); }});
  EXPECT_LT(evaluate_rmse(trained, data), 0.01);
  ASSERT_EQ(losses.size(), epochs);
  const std::size_t tenth = epochs / 10;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < tenth; ++i) {
    first += losses[i];
    last += losses[epochs - 1 - i];
  }
  EXPECT_LT(last, first);
  EXPECT_EQ(trained.training_meta.final_loss, losses.back());
  EXPECT_EQ(trained.training_meta.epochs, epochs);
}

TEST(Train, ZeroEpochsKeepsWeights) {
  const auto spec = pretext_spec(small_arch());
  const auto init = init_checkpoint(spec, 2);
  auto opt = OptimizerState::adam();
  const auto out = train(init, ten_examples(spec, 8, 1), opt, {0, 4, 0, {}});
  EXPECT_EQ(out.weights, init.weights);
}

TEST(Train, FrozenConvUnchangedDenseChanged) {
  const auto spec = downstream_spec(small_arch());
  auto init = init_checkpoint(spec, 2);
  for (const auto& n : conv_layer_names(small_arch())) init.frozen.insert(n);
  auto opt = OptimizerState::adam();
  const auto out = train(init, ten_examples(spec, 1, 3), opt, {50, 4, 0, {}});
  for (const auto& n : conv_layer_names(small_arch())) EXPECT_EQ(out.weights.at(n), init.weights.at(n)) << n;
  EXPECT_NE(out.weights.at("head_dense1"), init.weights.at("head_dense1"));
  EXPECT_NE(out.weights.at("stress_out"), init.weights.at("stress_out"));
}

TEST(Train, FrozenTrainingMatchesUncachedReference) {
  // The cached-prefix fast path must agree with plain backward + optimizer steps.
  const auto spec = downstream_spec(small_arch());
  auto init = init_checkpoint(spec, 5);
  for (const auto& n : conv_layer_names(small_arch())) init.frozen.insert(n);
  const auto data = ten_examples(spec, 1, 6);
  auto opt = OptimizerState::adam();
  const auto fast = train(init, data, opt, {1, 10, 0, {}});
  Tensor<float> x({10, 256, 1}), t({10, 1});
  for (std::size_t i = 0; i < 10; ++i) {
    std::copy(data.inputs[i].begin(), data.inputs[i].end(), x.row(i).begin());
    t.data[i] = data.targets[i][0];
  }
  auto ref = init;
  auto opt2 = OptimizerState::adam();
  opt2.apply(ref.weights, backward(ref, x, t));
  for (const auto& [name, p] : fast.weights)
    for (std::size_t k = 0; k < p.kernel.data.size(); ++k)
      ASSERT_NEAR(p.kernel.data[k], ref.weights.at(name).kernel.data[k], 1e-6) << name;
}

TEST(Train, DeterministicAcrossRuns) {
  const auto spec = pretext_spec(small_arch());
  const auto data = ten_examples(spec, 8, 7);
  auto o1 = OptimizerState::adam(), o2 = OptimizerState::adam();
  const auto a = train(init_checkpoint(spec, 3), data, o1, {5, 3, 11, {}});
  const auto b = train(init_checkpoint(spec, 3), data, o2, {5, 3, 11, {}});
  EXPECT_EQ(a, b);
  auto o3 = OptimizerState::adam();
  EXPECT_NE(train(init_checkpoint(spec, 3), data, o3, {5, 3, 12, {}}).weights, a.weights);
}

TEST(Train, DivergenceCarriesEpoch) {
  auto c = single_dense({1}, 1, {1.0f}, {0.0f});
  ArrayDataset d{{{1e30f}}, {{0.0f}}};
  auto opt = OptimizerState::sgd(1.0);
  try {
    train(c, d, opt, {3, 1, 0, {}});
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 0u);
  }
}

TEST(Train, RejectsBadInputs) {
  const auto spec = pretext_spec(small_arch());
  auto opt = OptimizerState::adam();
  EXPECT_THROW(train(init_checkpoint(spec, 1), ArrayDataset{}, opt, {}), EmptyDatasetError);
  EXPECT_THROW(train(init_checkpoint(spec, 1), ten_examples(spec, 3, 1), opt, {}), ShapeError);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  // With bias correction the first Adam step is lr * sign(g) (up to epsilon).
  ParamMap<float> w;
  w["l"] = {{{2}, {1.0f, -1.0f}}, {{1}, {0.0f}}};
  Gradients<float> g;
  g["l"] = {{{2}, {0.5f, -3.0f}}, {{1}, {0.0f}}};
  auto opt = OptimizerState::adam(0.01);
  opt.apply(w, g);
  EXPECT_NEAR(w["l"].kernel.data[0], 0.99f, 1e-6);
  EXPECT_NEAR(w["l"].kernel.data[1], -0.99f, 1e-6);
  EXPECT_EQ(w["l"].bias.data[0], 0.0f);
  EXPECT_EQ(opt.step, 1u);
  EXPECT_EQ(opt.first_moment["l"].kernel.shape, (Shape{2}));
}

TEST(Optimizer, SgdStep) {
  ParamMap<float> w;
  w["l"] = {{{1}, {1.0f}}, {{1}, {2.0f}}};
  Gradients<float> g;
  g["l"] = {{{1}, {0.5f}}, {{1}, {-1.0f}}};
  auto opt = OptimizerState::sgd(0.1);
  opt.apply(w, g);
  EXPECT_FLOAT_EQ(w["l"].kernel.data[0], 0.95f);
  EXPECT_FLOAT_EQ(w["l"].bias.data[0], 2.1f);
  EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
}

TEST(Init, DeterministicAndLayerKeyed) {
  const auto a = init_checkpoint(pretext_spec(small_arch()), 42);
  const auto b = init_checkpoint(pretext_spec(small_arch()), 42);
  const auto c = init_checkpoint(downstream_spec(small_arch()), 42);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.weights.at("conv2"), c.weights.at("conv2"));
  EXPECT_NE(init_checkpoint(pretext_spec(small_arch()), 43).weights.at("conv1"), a.weights.at("conv1"));
  const double limit = std::sqrt(6.0 / 5.0);  // fan_in = kernel 5 * 1 channel
  for (float v : a.weights.at("conv1").kernel.data) EXPECT_LE(std::abs(v), limit);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  auto c = init_checkpoint(pretext_spec(small_arch()), 77);
  for (auto& [_, p] : c.weights)
    for (auto& v : p.bias.data) v = 1.0f / 3.0f;
  c.frozen = {"conv1", "conv2", "conv3", "conv4"};
  c.training_meta = {5, 10, 0.0123456789, "adam", 1e-3, 32};
  c.normalization = NormalizationParams{NormalizationMethod::minmax, 0.1, 7.5};
  c.provenance["subject"] = "S5";
  save_checkpoint(c, dir / "c.json");
  const auto back = load_checkpoint(dir / "c.json");
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.frozen, (std::set<std::string>{"conv1", "conv2", "conv3", "conv4"}));
  Tensor<float> x({1, 256, 1});
  for (std::size_t i = 0; i < 256; ++i) x.data[i] = float(i) / 256.0f;
  const auto y0 = forward(c, x), y1 = forward(back, x);
  for (std::size_t i = 0; i < y0.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(y0.data[i]), std::bit_cast<std::uint32_t>(y1.data[i]));
}

TEST(Checkpoint, TruncatedArrayIsShapeError) {
  auto j = checkpoint_to_json(init_checkpoint(pretext_spec(small_arch()), 1));
  j["weights"]["conv1"]["kernel"]["data"].erase(0);
  EXPECT_THROW(decode_checkpoint(j.dump()), ShapeError);
}

TEST(Checkpoint, WrongShapeVsSpecIsShapeError) {
  auto j = checkpoint_to_json(init_checkpoint(pretext_spec(small_arch()), 1));
  j["weights"]["conv1"]["kernel"]["shape"] = {5, 1, 3, 2};
  EXPECT_THROW(decode_checkpoint(j.dump()), ShapeError);
}

TEST(Checkpoint, VersionAndSyntaxErrors) {
  auto j = checkpoint_to_json(init_checkpoint(pretext_spec(small_arch()), 1));
  j["version"] = 99;
  EXPECT_THROW(decode_checkpoint(j.dump()), FormatError);
  EXPECT_THROW(decode_checkpoint("{not json"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent_dir_xyz/c.json"), IoError);
}

}  // namespace
}  // namespace edap::nn
