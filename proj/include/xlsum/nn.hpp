#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xlsum/binary_io.hpp"
#include "xlsum/numerics.hpp"

namespace xlsum::nn {

struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  int size() const { return height * width * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// A batch of HWC samples stored contiguously.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int batch, Shape shape);

  int batch() const { return batch_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> sample(int n);
  std::span<const double> sample(int n) const;
  double& at(int n, int y, int x, int c) {
    return data_[index(n, y, x, c)];
  }
  const double& at(int n, int y, int x, int c) const {
    return data_[index(n, y, x, c)];
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t index(int n, int y, int x, int c) const {
    return static_cast<std::size_t>(
        ((n * shape_.height + y) * shape_.width + x) * shape_.channels + c);
  }
  int batch_ = 0;
  Shape shape_;
  std::vector<double> data_;
};

enum class Mode { train, infer };

enum class LayerKind : std::uint32_t {
  conv2d = 1,
  batchnorm = 2,
  maxpool = 3,
  relu = 4,
  dense = 5,
  dropout = 6,
  flatten = 7,  // fully connected layer onto the class scores
  softmax = 8,
};

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int filters = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int in_channels = 0;  // 0: taken from the incoming shape
  int channels = 0;     // batchnorm; 0: taken from the incoming shape
  int pool_h = 0;
  int pool_w = 0;
  int in = 0;           // dense/flatten; 0: taken from the incoming shape
  int out = 0;
  double p = 0.0;

  static LayerSpec conv2d(int filters, int kernel_h, int kernel_w,
                          int in_channels = 0);
  static LayerSpec batchnorm(int channels = 0);
  static LayerSpec maxpool(int pool_h, int pool_w);
  static LayerSpec relu();
  static LayerSpec dense(int out, int in = 0);
  static LayerSpec dropout(double p);
  static LayerSpec flatten(int classes, int in = 0);
  static LayerSpec softmax();

  /// Trainable scalars: weights + biases, or offset + scale.
  std::size_t learnable_count() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// View of one parameter block and its gradient accumulator.
struct ParamView {
  std::span<double> value;
  std::span<double> grad;
  bool penalized = false;  // weights take the L1 term, biases and BN do not
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual const LayerSpec& spec() const = 0;
  virtual Shape input_shape() const = 0;
  virtual Shape output_shape() const = 0;

  /// Caches what backward needs. Train-mode dropout draws its mask from rng.
  virtual Tensor forward(const Tensor& x, Mode mode, Rng* rng) = 0;
  /// Inference-mode evaluation without touching any cache.
  virtual Tensor infer(const Tensor& x) const = 0;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<ParamView> params() { return {}; }
  /// Non-trainable persistent state (batchnorm running mean and variance).
  virtual std::vector<std::span<double>> state() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

/// Builds a layer for the given incoming shape; spec fields left at 0 are
/// resolved from that shape. Weights use fan-in scaled normal init.
std::unique_ptr<Layer> make_layer(LayerSpec spec, Shape input, Rng& init);

/// Softmax over each sample of a flat batch.
Tensor softmax(const Tensor& logits);

/// -log(max(p[label], 1e-12)).
double cross_entropy(std::span<const double> probabilities, int label);

class Network {
 public:
  Network(Shape input, const std::vector<LayerSpec>& specs,
          std::uint64_t init_seed);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Shape input_shape() const { return input_; }
  int classes() const;
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  std::vector<LayerSpec> specs() const;

  /// Class probabilities for a batch; caches activations for backward.
  Tensor forward(const Tensor& x, Mode mode, Rng* rng = nullptr);
  /// Inference-mode probabilities; safe to call concurrently.
  Tensor predict(const Tensor& x) const;

  void zero_grad();
  /// Gradients of the batch-mean cross-entropy for the last forward pass,
  /// seeded with (p - onehot) / batch at the softmax input.
  void backward(std::span<const int> labels);

  std::vector<ParamView> parameters();
  std::vector<std::span<double>> state();
  /// Sum of |w| over penalized weights.
  double l1_norm() const;

  void save(io::Writer& w) const;
  static Network load(io::Reader& r);

  friend bool operator==(const Network& a, const Network& b);

 private:
  Network() = default;
  void check_input(const Tensor& x) const;

  Shape input_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Tensor last_probabilities_;
};

/// Cross-entropy of one sample plus eps * sum |w|.
double loss(std::span<const double> probabilities, int label,
            const Network& net, double l1_factor);

/// Lowest index among maximal entries; entries outside allowed are skipped
/// when allowed is non-empty.
int argmax(std::span<const double> values, std::span<const int> allowed = {});

enum class Optimizer : std::uint32_t { sgd = 1, adam = 2 };

struct TrainConfig {
  int batch_size = 250;
  double learning_rate = 4e-4;
  double dropout = 0.6;
  double l1_factor = 0.0015;
  int epochs = 40;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Inputs with labels; allowed[i], when present, lists the classes a masked
/// prediction may choose for input i.
struct LabeledSet {
  Shape shape;
  std::vector<std::vector<double>> inputs;
  std::vector<int> labels;
  std::vector<std::vector<int>> allowed;

  std::size_t size() const { return labels.size(); }
  Tensor batch(std::span<const std::size_t> indices) const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double validation_masked_accuracy = 0.0;
};

/// Percentage of samples whose argmax matches the label.
double accuracy(const Network& net, const LabeledSet& set, bool masked = false);

/**
 * Minibatch training on shuffled batches (seeded per epoch), single-threaded
 * and deterministic for a given seed. Throws Diverged on a non-finite loss.
 */
std::vector<EpochStats> train(Network& net, const LabeledSet& train_set,
                              const LabeledSet& validation_set,
                              const TrainConfig& config);

/// Two convolution blocks, three fully connected layers and softmax.
std::vector<LayerSpec> default_architecture(int classes, double dropout);

}  // namespace xlsum::nn
