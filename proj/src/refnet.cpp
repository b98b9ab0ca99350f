#include "nestquant/refnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace nestquant {

namespace {

using Matrix = Eigen::MatrixXf;

Index conv_out_dim(Index in, Index k) { return in - k + 1; }  // valid padding, stride 1

struct SpecShape {
  Index features;  // flattened feature count entering the next layer
  Index ch = 0, h = 0, w = 0;
};

// Walks the spec chain checking shape compatibility; returns feature count out.
Index check_specs(Index input_dim, const std::vector<LayerSpec>& specs) {
  SpecShape cur{input_dim};
  for (const auto& spec : specs) {
    if (std::holds_alternative<DenseSpec>(spec)) {
      const auto& d = std::get<DenseSpec>(spec);
      if (d.in != cur.features)
        throw ShapeError("dense layer expects " + std::to_string(d.in) + " features, got " +
                         std::to_string(cur.features));
      cur = {d.out};
    } else if (std::holds_alternative<Conv2DSpec>(spec)) {
      const auto& c = std::get<Conv2DSpec>(spec);
      if (c.in_ch * c.in_h * c.in_w != cur.features)
        throw ShapeError("conv layer input mismatch");
      const Index oh = conv_out_dim(c.in_h, c.kernel);
      const Index ow = conv_out_dim(c.in_w, c.kernel);
      if (oh <= 0 || ow <= 0) throw ShapeError("conv kernel larger than its input");
      cur = {c.out_ch * oh * ow, c.out_ch, oh, ow};
    }
    // ReLU and Flatten keep the feature count.
  }
  return cur.features;
}

float fake_quant_scale(const Matrix& x, int bits) {
  const float absmax = x.size() == 0 ? 0.0f : x.array().abs().maxCoeff();
  if (absmax == 0.0f) return 1.0f;
  return absmax / static_cast<float>((1 << (bits - 1)) - 1);
}

Matrix fake_quantize(const Matrix& x, int bits) {
  if (bits < 2 || bits > 8) throw InvalidBitwidthError("activation bits must be in [2,8]");
  const float s = fake_quant_scale(x, bits);
  const auto lo = static_cast<float>(-(1 << (bits - 1)));
  const auto hi = static_cast<float>((1 << (bits - 1)) - 1);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    float q = static_cast<float>(round_half_away(x.data()[i] / s));
    q = std::min(std::max(q, lo), hi);
    out.data()[i] = s * q;
  }
  return out;
}

Matrix weight_matrix(const RefNet& net, int param, EvalMode mode, Index rows, Index cols) {
  const auto& p = net.params[static_cast<std::size_t>(param)];
  Eigen::ArrayXf flat;
  if (mode == EvalMode::Fp32) {
    flat = p.weights.data;
  } else {
    const auto& overlay = net.overlays[static_cast<std::size_t>(param)];
    if (!overlay)
      throw StateError("no quantized overlay attached for '" + p.name + "'");
    if (mode == EvalMode::FullBit) {
      flat = overlay->full_ints.data.cast<float>() * overlay->scale;
    } else {
      if (overlay->high_bits == overlay->full_bits)
        throw StateError("flat overlay has no part-bit instance");
      const float high_scale =
          overlay->scale *
          static_cast<float>(std::int64_t{1} << (overlay->full_bits - overlay->high_bits));
      flat = overlay->high_ints.data.cast<float>() * high_scale;
    }
  }
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             flat.data(), rows, cols)
      .eval();
}

// (ic*k*k) x (oh*ow) patch matrix for one sample laid out channel-major.
Matrix im2col(const float* sample, const Conv2DSpec& c) {
  const Index oh = conv_out_dim(c.in_h, c.kernel);
  const Index ow = conv_out_dim(c.in_w, c.kernel);
  Matrix col(c.in_ch * c.kernel * c.kernel, oh * ow);
  for (Index ch = 0; ch < c.in_ch; ++ch)
    for (Index ky = 0; ky < c.kernel; ++ky)
      for (Index kx = 0; kx < c.kernel; ++kx) {
        const Index row = (ch * c.kernel + ky) * c.kernel + kx;
        for (Index y = 0; y < oh; ++y)
          for (Index x = 0; x < ow; ++x)
            col(row, y * ow + x) = sample[(ch * c.in_h + y + ky) * c.in_w + x + kx];
      }
  return col;
}

void col2im_accumulate(const Matrix& col, const Conv2DSpec& c, float* sample) {
  const Index oh = conv_out_dim(c.in_h, c.kernel);
  const Index ow = conv_out_dim(c.in_w, c.kernel);
  for (Index ch = 0; ch < c.in_ch; ++ch)
    for (Index ky = 0; ky < c.kernel; ++ky)
      for (Index kx = 0; kx < c.kernel; ++kx) {
        const Index row = (ch * c.kernel + ky) * c.kernel + kx;
        for (Index y = 0; y < oh; ++y)
          for (Index x = 0; x < ow; ++x)
            sample[(ch * c.in_h + y + ky) * c.in_w + x + kx] += col(row, y * ow + x);
      }
}

Matrix conv_forward(const Matrix& input, const Matrix& w_mat, const Conv2DSpec& c) {
  const Index oh = conv_out_dim(c.in_h, c.kernel);
  const Index ow = conv_out_dim(c.in_w, c.kernel);
  Matrix out(input.rows(), c.out_ch * oh * ow);
  Eigen::VectorXf sample(input.cols());
  for (Eigen::Index s = 0; s < input.rows(); ++s) {
    sample = input.row(s);
    const Matrix col = im2col(sample.data(), c);
    const Matrix y = w_mat * col;  // (oc) x (oh*ow)
    for (Index oc = 0; oc < c.out_ch; ++oc)
      for (Index pos = 0; pos < oh * ow; ++pos) out(s, oc * oh * ow + pos) = y(oc, pos);
  }
  return out;
}

}  // namespace

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse failure: " + std::string(e.what()));
  }
  TrainConfig c;
  try {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.classes = j.value("classes", c.classes);
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<Index>>();
    c.train_samples = j.value("train_samples", c.train_samples);
    c.test_samples = j.value("test_samples", c.test_samples);
    c.blob_radius = j.value("blob_radius", c.blob_radius);
    c.noise = j.value("noise", c.noise);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch = j.value("batch", c.batch);
    c.min_accuracy = j.value("min_accuracy", c.min_accuracy);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field failure: " + std::string(e.what()));
  }
  if (c.input_dim < 1 || c.classes < 2 || c.batch < 1 || c.epochs < 0)
    throw ConfigError("config values out of range");
  return c;
}

SyntheticDataset SyntheticDataset::make(const TrainConfig& config, std::uint64_t seed) {
  SyntheticDataset d;
  d.seed = seed;
  d.feature_dim = config.input_dim;
  d.classes = config.classes;

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);

  Matrix centers(config.classes, config.input_dim);
  for (Index c = 0; c < config.classes; ++c) {
    Eigen::VectorXf dir(config.input_dim);
    for (Index i = 0; i < config.input_dim; ++i) dir[i] = normal(rng);
    dir.normalize();
    centers.row(c) = dir.transpose() * static_cast<float>(config.blob_radius);
  }

  auto fill = [&](Matrix& x, std::vector<int>& y, Index count) {
    x.resize(count, config.input_dim);
    y.resize(static_cast<std::size_t>(count));
    for (Index s = 0; s < count; ++s) {
      const int label = static_cast<int>(s % config.classes);
      y[static_cast<std::size_t>(s)] = label;
      for (Index i = 0; i < config.input_dim; ++i)
        x(s, i) = centers(label, i) + static_cast<float>(config.noise) * normal(rng);
    }
  };
  fill(d.train_x, d.train_y, config.train_samples);
  fill(d.test_x, d.test_y, config.test_samples);
  return d;
}

RefNet build_refnet(Index input_dim, const std::vector<LayerSpec>& specs) {
  RefNet net;
  net.input_dim = input_dim;
  net.specs = specs;
  net.output_dim = check_specs(input_dim, specs);

  int dense_count = 0, conv_count = 0;
  for (const auto& spec : specs) {
    if (std::holds_alternative<DenseSpec>(spec)) {
      const auto& d = std::get<DenseSpec>(spec);
      net.param_index.push_back(static_cast<int>(net.params.size()));
      net.params.push_back({"dense" + std::to_string(dense_count++),
                            FloatTensor(Shape{d.out, d.in})});
    } else if (std::holds_alternative<Conv2DSpec>(spec)) {
      const auto& c = std::get<Conv2DSpec>(spec);
      net.param_index.push_back(static_cast<int>(net.params.size()));
      net.params.push_back({"conv" + std::to_string(conv_count++),
                            FloatTensor(Shape{c.out_ch, c.in_ch, c.kernel, c.kernel})});
    } else {
      net.param_index.push_back(-1);
    }
  }
  net.overlays.assign(net.params.size(), std::nullopt);
  return net;
}

RefNet build_refnet(const TrainConfig& config) {
  std::vector<LayerSpec> specs;
  Index prev = config.input_dim;
  for (Index width : config.hidden) {
    specs.push_back(DenseSpec{prev, width});
    specs.push_back(ReluSpec{});
    prev = width;
  }
  specs.push_back(DenseSpec{prev, config.classes});
  return build_refnet(config.input_dim, specs);
}

Eigen::MatrixXf forward(const RefNet& net, const Eigen::MatrixXf& input, EvalMode mode,
                        int act_bits) {
  if (input.cols() != net.input_dim)
    throw ShapeError("input has " + std::to_string(input.cols()) + " features, net expects " +
                     std::to_string(net.input_dim));
  Matrix x = input;
  for (std::size_t s = 0; s < net.specs.size(); ++s) {
    const auto& spec = net.specs[s];
    if (std::holds_alternative<DenseSpec>(spec)) {
      const auto& d = std::get<DenseSpec>(spec);
      if (mode != EvalMode::Fp32) x = fake_quantize(x, act_bits);
      const Matrix w = weight_matrix(net, net.param_index[s], mode, d.out, d.in);
      x = (x * w.transpose()).eval();
    } else if (std::holds_alternative<Conv2DSpec>(spec)) {
      const auto& c = std::get<Conv2DSpec>(spec);
      if (mode != EvalMode::Fp32) x = fake_quantize(x, act_bits);
      const Matrix w = weight_matrix(net, net.param_index[s], mode, c.out_ch,
                                     c.in_ch * c.kernel * c.kernel);
      x = conv_forward(x, w, c);
    } else if (std::holds_alternative<ReluSpec>(spec)) {
      x = x.cwiseMax(0.0f);
    }
    // Flatten is a no-op in the flat row layout.
  }
  return x;
}

double evaluate(const RefNet& net, const Eigen::MatrixXf& inputs, const std::vector<int>& labels,
                EvalMode mode, int act_bits) {
  if (static_cast<Index>(labels.size()) != inputs.rows())
    throw ShapeError("label count does not match sample count");
  if (labels.empty()) throw DataError("cannot evaluate an empty dataset");
  const Matrix logits = forward(net, inputs, mode, act_bits);
  Index correct = 0;
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    Eigen::Index arg;
    logits.row(s).maxCoeff(&arg);
    if (static_cast<int>(arg) == labels[static_cast<std::size_t>(s)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

RefNet train_reference(const TrainConfig& config, std::uint64_t seed) {
  RefNet net = build_refnet(config);
  const SyntheticDataset data = SyntheticDataset::make(config, seed);

  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& p : net.params) {
    Index fan_in = 1;
    for (std::size_t d = 1; d < p.weights.shape.size(); ++d) fan_in *= p.weights.shape[d];
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (Index i = 0; i < p.weights.numel(); ++i) p.weights.data[i] = stddev * normal(rng);
  }

  const Index n = data.train_x.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  // Forward caches per parametric layer for the backward sweep.
  struct Tape {
    Matrix input;   // layer input (post activation-of-previous)
    Matrix output;  // layer output before any following ReLU
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n; start += config.batch) {
      const Index count = std::min<Index>(config.batch, n - start);
      Matrix xb(count, data.feature_dim);
      std::vector<int> yb(static_cast<std::size_t>(count));
      for (Index i = 0; i < count; ++i) {
        xb.row(i) = data.train_x.row(order[static_cast<std::size_t>(start + i)]);
        yb[static_cast<std::size_t>(i)] =
            data.train_y[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }

      // Forward with tape.
      std::vector<Tape> tapes(net.specs.size());
      Matrix x = xb;
      for (std::size_t s = 0; s < net.specs.size(); ++s) {
        const auto& spec = net.specs[s];
        if (std::holds_alternative<DenseSpec>(spec)) {
          const auto& d = std::get<DenseSpec>(spec);
          tapes[s].input = x;
          const Matrix w = weight_matrix(net, net.param_index[s], EvalMode::Fp32, d.out, d.in);
          x = (x * w.transpose()).eval();
          tapes[s].output = x;
        } else if (std::holds_alternative<Conv2DSpec>(spec)) {
          const auto& c = std::get<Conv2DSpec>(spec);
          tapes[s].input = x;
          const Matrix w = weight_matrix(net, net.param_index[s], EvalMode::Fp32, c.out_ch,
                                         c.in_ch * c.kernel * c.kernel);
          x = conv_forward(x, w, c);
          tapes[s].output = x;
        } else if (std::holds_alternative<ReluSpec>(spec)) {
          tapes[s].input = x;
          x = x.cwiseMax(0.0f);
        }
      }

      // Softmax cross-entropy gradient.
      Matrix grad(x.rows(), x.cols());
      double loss = 0;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const float m = x.row(r).maxCoeff();
        Eigen::ArrayXf e = (x.row(r).array() - m).exp();
        const float z = e.sum();
        Eigen::ArrayXf p = e / z;
        loss -= std::log(std::max(p[yb[static_cast<std::size_t>(r)]], 1e-12f));
        grad.row(r) = p.matrix().transpose();
        grad(r, yb[static_cast<std::size_t>(r)]) -= 1.0f;
      }
      if (!std::isfinite(loss)) throw TrainingError("training diverged (non-finite loss)");
      grad /= static_cast<float>(count);

      // Backward.
      const auto lr = static_cast<float>(config.learning_rate);
      for (std::size_t si = net.specs.size(); si-- > 0;) {
        const auto& spec = net.specs[si];
        if (std::holds_alternative<ReluSpec>(spec)) {
          grad = (tapes[si].input.array() > 0.0f).cast<float>() * grad.array();
        } else if (std::holds_alternative<DenseSpec>(spec)) {
          const auto& d = std::get<DenseSpec>(spec);
          auto& p = net.params[static_cast<std::size_t>(net.param_index[si])];
          const Matrix w =
              weight_matrix(net, net.param_index[si], EvalMode::Fp32, d.out, d.in);
          const Matrix dw = grad.transpose() * tapes[si].input;  // (out, in)
          grad = (grad * w).eval();
          Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
              p.weights.data.data(), d.out, d.in) -= lr * dw;
        } else if (std::holds_alternative<Conv2DSpec>(spec)) {
          const auto& c = std::get<Conv2DSpec>(spec);
          auto& p = net.params[static_cast<std::size_t>(net.param_index[si])];
          const Index oh = conv_out_dim(c.in_h, c.kernel);
          const Index ow = conv_out_dim(c.in_w, c.kernel);
          const Matrix w = weight_matrix(net, net.param_index[si], EvalMode::Fp32, c.out_ch,
                                         c.in_ch * c.kernel * c.kernel);
          Matrix dw = Matrix::Zero(c.out_ch, c.in_ch * c.kernel * c.kernel);
          Matrix dx = Matrix::Zero(grad.rows(), c.in_ch * c.in_h * c.in_w);
          Eigen::VectorXf sample(tapes[si].input.cols());
          for (Eigen::Index s = 0; s < grad.rows(); ++s) {
            Matrix dy(c.out_ch, oh * ow);
            for (Index oc = 0; oc < c.out_ch; ++oc)
              for (Index pos = 0; pos < oh * ow; ++pos) dy(oc, pos) = grad(s, oc * oh * ow + pos);
            sample = tapes[si].input.row(s);
            const Matrix col = im2col(sample.data(), c);
            dw += dy * col.transpose();
            const Matrix dcol = w.transpose() * dy;
            Eigen::VectorXf dsample = Eigen::VectorXf::Zero(dx.cols());
            col2im_accumulate(dcol, c, dsample.data());
            dx.row(s) = dsample.transpose();
          }
          grad = dx;
          Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
              p.weights.data.data(), c.out_ch, c.in_ch * c.kernel * c.kernel) -= lr * dw;
        }
      }
    }
  }

  const double accuracy = evaluate(net, data.test_x, data.test_y, EvalMode::Fp32);
  if (config.epochs > 0 && accuracy < config.min_accuracy)
    throw TrainingError("reference training ended at " + std::to_string(accuracy) +
                        " accuracy, below the configured floor " +
                        std::to_string(config.min_accuracy));
  return net;
}

FloatModel to_float_model(const RefNet& net) {
  FloatModel m;
  for (const auto& p : net.params) m.layers.push_back({p.name, p.weights});
  return m;
}

void attach_overlays(RefNet& net, const NestedModel& model) {
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const auto& name = net.params[i].name;
    const NestedLayer* found = nullptr;
    for (const auto& layer : model.layers)
      if (layer.name == name) {
        found = &layer;
        break;
      }
    if (!found) throw StateError("model has no layer named '" + name + "'");
    if (found->shape != net.params[i].weights.shape)
      throw ShapeError("layer '" + name + "' shape mismatch: net " +
                       shape_string(net.params[i].weights.shape) + " vs model " +
                       shape_string(found->shape));

    RefNet::Overlay overlay;
    overlay.full_bits = found->full_bits;
    overlay.high_bits = found->high_bits;
    overlay.scale = found->scale;
    overlay.high_ints = unpack(found->high);
    if (found->flat()) {
      overlay.full_ints = overlay.high_ints;
    } else {
      overlay.full_ints =
          recompose(overlay.high_ints, unpack(found->low), found->low_shift());
    }
    net.overlays[i] = std::move(overlay);
  }
}

}  // namespace nestquant
