#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/rng.hpp"

namespace edm {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix stack_rows(const std::vector<std::vector<double>>& rows);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NetRole : std::uint8_t { kNetD = 0, kNetS = 1 };

// Layer widths from input to output, e.g. {d, 64, 64, num_classes}.
// Hidden layers use the rectifier; the last layer emits raw logits.
struct Architecture {
  std::vector<int> widths;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }
  bool operator==(const Architecture&) const = default;
};

Architecture default_architecture(int input_dim, int num_classes);

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  bool operator==(const DenseLayer&) const = default;
};

// Parameter-shaped storage; used for weights, gradients and momentum buffers.
struct ParamSet {
  std::vector<DenseLayer> layers;

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t size() const;
  ParamSet zeros_like() const;
  bool same_shape(const ParamSet& other) const;
  bool operator==(const ParamSet&) const = default;
};

struct ModelParams {
  Architecture arch;
  NetRole role = NetRole::kNetD;
  ParamSet params;

  bool operator==(const ModelParams&) const = default;
};

ModelParams init_model(const Architecture& arch, NetRole role,
                       std::uint64_t seed);

// Activations kept for the reverse pass.
struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation output of each layer
  const Matrix& logits() const { return pre.back(); }
  // Rectified output of the last hidden layer (the batch itself for a
  // single-layer model).
  const Matrix& penultimate() const { return inputs.back(); }
};

ForwardCache forward(const ModelParams& model, const Matrix& batch);
Matrix forward_logits(const ModelParams& model, const Matrix& batch);

Matrix softmax_probs(const Matrix& logits);
std::vector<double> softmax(std::span<const double> logits);

// A scalar loss together with its gradient with respect to the logits that
// produced it. backward() continues the chain rule into the parameters.
struct LossNode {
  double value = 0.0;
  Matrix d_logits;
};

ParamSet backward(const ModelParams& model, const ForwardCache& cache,
                  const LossNode& loss);

struct OptimState {
  ParamSet velocity;
  double learning_rate = 0.02;
  double momentum = 0.8;
  double weight_decay = 5e-4;
};

OptimState make_optim_state(const ModelParams& model, double learning_rate,
                            double momentum, double weight_decay);

// v <- momentum*v + g + weight_decay*theta ; theta <- theta - lr*v.
// Throws NumericError (leaving params and state untouched) on a non-finite
// gradient.
void sgd_step(ModelParams& model, const ParamSet& grads, OptimState& opt);

enum class AugmentMode : std::uint8_t { kNone, kGaussianJitter };

struct AugmentSpec {
  AugmentMode mode = AugmentMode::kNone;
  double jitter_sigma = 0.0;
};

Matrix augment(const Matrix& batch, const AugmentSpec& spec, Rng& rng);

bool all_finite(const ParamSet& p);

}  // namespace edm
