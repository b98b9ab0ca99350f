#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nestquant/nesting.hpp"

namespace nestquant {

// Desk-scale reference network: dense layers, optional 2-D convolution,
// trained on synthetic blobs so quantized-inference comparisons have a
// deterministic, reproducible substrate.

struct DenseSpec {
  Index in = 0;
  Index out = 0;
};
struct Conv2DSpec {
  Index in_ch = 0;
  Index out_ch = 0;
  Index kernel = 3;
  Index in_h = 0;
  Index in_w = 0;
};
struct ReluSpec {};
struct FlattenSpec {};
using LayerSpec = std::variant<DenseSpec, Conv2DSpec, ReluSpec, FlattenSpec>;

struct TrainConfig {
  Index input_dim = 32;
  Index classes = 4;
  std::vector<Index> hidden = {64, 32};
  Index train_samples = 2000;
  Index test_samples = 1000;
  double blob_radius = 4.0;
  double noise = 1.0;
  int epochs = 30;
  double learning_rate = 0.05;
  Index batch = 64;
  double min_accuracy = 0.9;

  static TrainConfig from_json_file(const std::filesystem::path& path);
};

// Gaussian blobs on a sphere of blob_radius, one cluster per class, labels
// balanced round-robin. Regeneration from the same seed is bit-identical.
struct SyntheticDataset {
  std::uint64_t seed = 0;
  Index feature_dim = 0;
  Index classes = 0;
  Eigen::MatrixXf train_x, test_x;  // samples as rows
  std::vector<int> train_y, test_y;

  static SyntheticDataset make(const TrainConfig& config, std::uint64_t seed);
};

enum class EvalMode { Fp32, FullBit, PartBit };

struct RefNet {
  struct Param {
    std::string name;
    FloatTensor weights;  // dense (out,in); conv (out_ch,in_ch,k,k)
  };
  // Quantized stand-ins for one parameter tensor; the part-bit view only
  // exists when high_bits < full_bits.
  struct Overlay {
    int full_bits = 8;
    int high_bits = 8;
    float scale = 1.0f;
    IntTensor full_ints;
    IntTensor high_ints;
  };

  std::vector<LayerSpec> specs;
  std::vector<int> param_index;  // per spec, -1 for parameterless layers
  std::vector<Param> params;
  std::vector<std::optional<Overlay>> overlays;

  Index input_dim = 0;
  Index output_dim = 0;
};

RefNet build_refnet(const TrainConfig& config);
RefNet build_refnet(Index input_dim, const std::vector<LayerSpec>& specs);

// Deterministic SGD on softmax cross-entropy. Throws TrainingError on
// divergence or when the test accuracy ends below config.min_accuracy.
RefNet train_reference(const TrainConfig& config, std::uint64_t seed);

// Forward pass. Quantized modes use the overlays (full: scale * ints,
// part: inflated scale * high ints) and fake-quantize the input of every
// parametric layer at act_bits with a live per-tensor scale; fp32 ignores
// overlays and runs unquantized.
Eigen::MatrixXf forward(const RefNet& net, const Eigen::MatrixXf& input, EvalMode mode,
                        int act_bits = 8);

double evaluate(const RefNet& net, const Eigen::MatrixXf& inputs, const std::vector<int>& labels,
                EvalMode mode, int act_bits = 8);

FloatModel to_float_model(const RefNet& net);

// Attach quantized weights by layer name; nested models enable both quantized
// modes, flat ones only the full-bit mode.
void attach_overlays(RefNet& net, const NestedModel& model);

}  // namespace nestquant
