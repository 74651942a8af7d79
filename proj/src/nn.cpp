#include "edm/nn.hpp"

#include <algorithm>
#include <cmath>

namespace edm {

Matrix stack_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw ShapeError("ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Architecture default_architecture(int input_dim, int num_classes) {
  return Architecture{{input_dim, 64, 64, num_classes}};
}

std::vector<std::span<double>> ParamSet::tensors() {
  std::vector<std::span<double>> out;
  out.reserve(layers.size() * 2);
  for (auto& l : layers) {
    out.emplace_back(l.weight.values());
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> ParamSet::tensors() const {
  std::vector<std::span<const double>> out;
  out.reserve(layers.size() * 2);
  for (const auto& l : layers) {
    out.emplace_back(l.weight.values());
    out.emplace_back(l.bias);
  }
  return out;
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  z.layers.reserve(layers.size());
  for (const auto& l : layers)
    z.layers.push_back(DenseLayer{Matrix(l.weight.rows(), l.weight.cols()),
                                  std::vector<double>(l.bias.size(), 0.0)});
  return z;
}

bool ParamSet::same_shape(const ParamSet& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size())
      return false;
  }
  return true;
}

bool all_finite(const ParamSet& p) {
  for (const auto& t : p.tensors())
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

ModelParams init_model(const Architecture& arch, NetRole role,
                       std::uint64_t seed) {
  if (arch.widths.size() < 2)
    throw ShapeError("architecture needs at least input and output widths");
  for (int w : arch.widths)
    if (w <= 0) throw ShapeError("architecture has a zero-width layer");

  ModelParams m;
  m.arch = arch;
  m.role = role;
  Rng rng(derive_seed(seed, 0x696e6974ULL, static_cast<std::uint64_t>(role)));
  for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l) {
    const auto fan_in = static_cast<std::size_t>(arch.widths[l]);
    const auto fan_out = static_cast<std::size_t>(arch.widths[l + 1]);
    DenseLayer layer{Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.0)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : layer.weight.values()) w = rng.normal() * scale;
    m.params.layers.push_back(std::move(layer));
  }
  return m;
}

namespace {

// out = in * W^T + b
Matrix affine(const Matrix& in, const DenseLayer& layer) {
  const std::size_t n_out = layer.weight.rows();
  const std::size_t n_in = layer.weight.cols();
  Matrix out(in.rows(), n_out);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < n_out; ++o) {
      const auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < n_in; ++k) acc += x[k] * w[k];
      y[o] = acc;
    }
  }
  return out;
}

Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

}  // namespace

ForwardCache forward(const ModelParams& model, const Matrix& batch) {
  if (batch.cols() != static_cast<std::size_t>(model.arch.input_dim()))
    throw ShapeError("batch width " + std::to_string(batch.cols()) +
                     " does not match model input width " +
                     std::to_string(model.arch.input_dim()));
  ForwardCache cache;
  const auto& layers = model.params.layers;
  cache.inputs.reserve(layers.size());
  cache.pre.reserve(layers.size());
  Matrix x = batch;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = affine(x, layers[l]);
    cache.inputs.push_back(std::move(x));
    if (l + 1 < layers.size()) x = relu(z);
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

Matrix forward_logits(const ModelParams& model, const Matrix& batch) {
  return std::move(forward(model, batch).pre.back());
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - mx);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

Matrix softmax_probs(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

ParamSet backward(const ModelParams& model, const ForwardCache& cache,
                  const LossNode& loss) {
  const auto& layers = model.params.layers;
  if (cache.pre.size() != layers.size() || cache.pre.empty())
    throw ShapeError("forward cache does not belong to this model");
  const Matrix& logits = cache.logits();
  if (loss.d_logits.rows() != logits.rows() ||
      loss.d_logits.cols() != logits.cols())
    throw ShapeError("loss is not connected to this model's logits");

  ParamSet grads = model.params.zeros_like();
  Matrix delta = loss.d_logits;  // dL/dz for the current layer
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Matrix& in = cache.inputs[li];
    auto& g = grads.layers[li];
    const std::size_t n_out = layers[li].weight.rows();
    const std::size_t n_in = layers[li].weight.cols();
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const auto d = delta.row(r);
      const auto x = in.row(r);
      for (std::size_t o = 0; o < n_out; ++o) {
        if (d[o] == 0.0) continue;
        g.bias[o] += d[o];
        auto gw = g.weight.row(o);
        for (std::size_t k = 0; k < n_in; ++k) gw[k] += d[o] * x[k];
      }
    }
    if (li == 0) break;
    // Propagate into the previous layer's pre-activation through the rectifier.
    Matrix prev(delta.rows(), n_in);
    const Matrix& prev_pre = cache.pre[li - 1];
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const auto d = delta.row(r);
      auto p = prev.row(r);
      for (std::size_t o = 0; o < n_out; ++o) {
        if (d[o] == 0.0) continue;
        const auto w = layers[li].weight.row(o);
        for (std::size_t k = 0; k < n_in; ++k) p[k] += d[o] * w[k];
      }
      const auto z = prev_pre.row(r);
      for (std::size_t k = 0; k < n_in; ++k)
        if (z[k] <= 0.0) p[k] = 0.0;
    }
    delta = std::move(prev);
  }
  return grads;
}

OptimState make_optim_state(const ModelParams& model, double learning_rate,
                            double momentum, double weight_decay) {
  if (learning_rate < 0.0 || momentum < 0.0 || weight_decay < 0.0)
    throw std::invalid_argument("optimizer hyperparameters must be >= 0");
  return OptimState{model.params.zeros_like(), learning_rate, momentum,
                    weight_decay};
}

void sgd_step(ModelParams& model, const ParamSet& grads, OptimState& opt) {
  if (!grads.same_shape(model.params) || !opt.velocity.same_shape(model.params))
    throw ShapeError("gradient or velocity shape does not match parameters");
  if (!all_finite(grads))
    throw NumericError("non-finite gradient; SGD step aborted");
  auto theta = model.params.tensors();
  auto vel = opt.velocity.tensors();
  const auto g = grads.tensors();
  for (std::size_t t = 0; t < theta.size(); ++t) {
    for (std::size_t i = 0; i < theta[t].size(); ++i) {
      double& v = vel[t][i];
      v = opt.momentum * v + g[t][i] + opt.weight_decay * theta[t][i];
      theta[t][i] -= opt.learning_rate * v;
    }
  }
}

Matrix augment(const Matrix& batch, const AugmentSpec& spec, Rng& rng) {
  if (spec.jitter_sigma < 0.0)
    throw std::invalid_argument("jitter_sigma must be >= 0");
  if (spec.mode == AugmentMode::kNone || spec.jitter_sigma == 0.0) return batch;
  Matrix out = batch;
  for (double& v : out.values()) v += rng.normal() * spec.jitter_sigma;
  return out;
}

}  // namespace edm
