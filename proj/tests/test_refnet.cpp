#include <doctest.h>

#include <random>

#include "nestquant/refnet.hpp"

using namespace nestquant;

namespace {

TrainConfig quick_config() {
  TrainConfig c;
  c.input_dim = 16;
  c.classes = 4;
  c.hidden = {32};
  c.train_samples = 800;
  c.test_samples = 400;
  c.blob_radius = 4.0;
  c.noise = 1.0;
  c.epochs = 12;
  c.learning_rate = 0.05;
  c.batch = 32;
  c.min_accuracy = 0.9;
  return c;
}

}  // namespace

TEST_CASE("dataset regeneration is bit-identical") {
  const TrainConfig c = quick_config();
  const SyntheticDataset a = SyntheticDataset::make(c, 42);
  const SyntheticDataset b = SyntheticDataset::make(c, 42);
  CHECK(a.train_x == b.train_x);
  CHECK(a.test_x == b.test_x);
  CHECK(a.train_y == b.train_y);
  const SyntheticDataset other = SyntheticDataset::make(c, 43);
  CHECK(a.train_x != other.train_x);
}

TEST_CASE("training is deterministic and learns the blobs") {
  const TrainConfig c = quick_config();
  const RefNet net1 = train_reference(c, 7);
  const RefNet net2 = train_reference(c, 7);
  for (std::size_t p = 0; p < net1.params.size(); ++p)
    for (Index i = 0; i < net1.params[p].weights.numel(); ++i)
      REQUIRE(net1.params[p].weights.data[i] == net2.params[p].weights.data[i]);

  const SyntheticDataset data = SyntheticDataset::make(c, 7);
  CHECK(evaluate(net1, data.test_x, data.test_y, EvalMode::Fp32) > 0.9);
}

TEST_CASE("zero epochs stays near chance") {
  TrainConfig c = quick_config();
  c.epochs = 0;
  const RefNet net = train_reference(c, 3);
  const SyntheticDataset data = SyntheticDataset::make(c, 3);
  const double accuracy = evaluate(net, data.test_x, data.test_y, EvalMode::Fp32);
  CHECK(accuracy < 0.6);  // ~1/classes for a random net
}

TEST_CASE("identity dense with relu passes positive input through") {
  std::vector<LayerSpec> specs{DenseSpec{4, 4}, ReluSpec{}};
  RefNet net = build_refnet(4, specs);
  for (Index i = 0; i < 4; ++i) net.params[0].weights.data[i * 4 + i] = 1.0f;

  Eigen::MatrixXf input(2, 4);
  input << 1, 2, 3, 4, 5, 6, 7, 8;
  const Eigen::MatrixXf out = forward(net, input, EvalMode::Fp32);
  CHECK(out == input);
}

TEST_CASE("forward without overlays rejects quantized modes") {
  const RefNet net = build_refnet(quick_config());
  Eigen::MatrixXf input = Eigen::MatrixXf::Zero(1, 16);
  CHECK_THROWS_AS(forward(net, input, EvalMode::FullBit), StateError);
  CHECK_THROWS_AS(forward(net, input, EvalMode::PartBit), StateError);
  CHECK_NOTHROW(forward(net, input, EvalMode::Fp32));
}

TEST_CASE("full-bit forward is bit-identical to the flat quantized model") {
  const TrainConfig c = quick_config();
  RefNet nested_net = train_reference(c, 11);
  RefNet flat_net = nested_net;

  const FloatModel fm = to_float_model(nested_net);
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 5;
  attach_overlays(nested_net, nest_model(fm, options));
  attach_overlays(flat_net, quantize_model(fm, 8));

  const SyntheticDataset data = SyntheticDataset::make(c, 11);
  const Eigen::MatrixXf a = forward(nested_net, data.test_x, EvalMode::FullBit, 8);
  const Eigen::MatrixXf b = forward(flat_net, data.test_x, EvalMode::FullBit, 8);
  REQUIRE(a.rows() == b.rows());
  for (Eigen::Index i = 0; i < a.size(); ++i) REQUIRE(a.data()[i] == b.data()[i]);

  // flat overlays have no part-bit instance
  CHECK_THROWS_AS(forward(flat_net, data.test_x, EvalMode::PartBit, 8), StateError);
}

TEST_CASE("part-bit at h = n-1 nearly matches full-bit argmax") {
  const TrainConfig c = quick_config();
  RefNet net = train_reference(c, 19);
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 7;
  attach_overlays(net, nest_model(to_float_model(net), options));

  const SyntheticDataset data = SyntheticDataset::make(c, 19);
  const Eigen::MatrixXf full = forward(net, data.test_x, EvalMode::FullBit, 8);
  const Eigen::MatrixXf part = forward(net, data.test_x, EvalMode::PartBit, 8);
  Index agree = 0;
  for (Eigen::Index s = 0; s < full.rows(); ++s) {
    Eigen::Index fa, pa;
    full.row(s).maxCoeff(&fa);
    part.row(s).maxCoeff(&pa);
    if (fa == pa) ++agree;
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(full.rows()) >= 0.99);
}

TEST_CASE("conv forward and training") {
  // 2-channel 6x6 input, one conv, then dense on the flattened maps
  const Index in_dim = 2 * 6 * 6;
  std::vector<LayerSpec> specs{Conv2DSpec{2, 3, 3, 6, 6}, ReluSpec{}, FlattenSpec{},
                               DenseSpec{3 * 4 * 4, 4}};
  RefNet net = build_refnet(in_dim, specs);
  REQUIRE(net.params.size() == 2);
  CHECK(net.params[0].name == "conv0");
  CHECK(net.params[0].weights.shape == Shape{3, 2, 3, 3});
  CHECK(net.output_dim == 4);

  std::mt19937_64 rng(4);
  std::normal_distribution<float> dist(0.0f, 0.5f);
  for (auto& p : net.params)
    for (Index i = 0; i < p.weights.numel(); ++i) p.weights.data[i] = dist(rng);

  Eigen::MatrixXf input(3, in_dim);
  for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = dist(rng);
  const Eigen::MatrixXf out = forward(net, input, EvalMode::Fp32);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 4);

  // quantized overlays work on conv weights too
  attach_overlays(net, nest_model(to_float_model(net), NestOptions{8, 4}));
  CHECK_NOTHROW(forward(net, input, EvalMode::PartBit, 8));
}

TEST_CASE("spec shape mismatches are rejected") {
  CHECK_THROWS_AS(build_refnet(8, {DenseSpec{4, 4}}), ShapeError);
  CHECK_THROWS_AS(build_refnet(8, {Conv2DSpec{2, 3, 3, 2, 2}}), ShapeError);
}

TEST_CASE("training failure surfaces") {
  TrainConfig c = quick_config();
  c.learning_rate = 1e4;  // diverges
  CHECK_THROWS_AS(train_reference(c, 1), TrainingError);

  TrainConfig hopeless = quick_config();
  hopeless.epochs = 1;
  hopeless.noise = 50.0;  // blobs fully overlap, accuracy floor unreachable
  CHECK_THROWS_AS(train_reference(hopeless, 1), TrainingError);
}

TEST_CASE("overlay attachment validates names and shapes") {
  RefNet net = build_refnet(quick_config());
  FloatModel fm = to_float_model(net);
  fm.layers[0].name = "other";
  NestOptions options;
  options.full_bits = 8;
  options.high_bits = 4;
  CHECK_THROWS_AS(attach_overlays(net, nest_model(fm, options)), StateError);
}
