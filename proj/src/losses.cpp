#include "edm/losses.hpp"

#include <algorithm>
#include <cmath>

namespace edm {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b,
                         const char* what) {
  if (a.size() != b.size())
    throw LossError(std::string(what) + ": length mismatch");
}

void require_one_hot(std::span<const double> y) {
  int ones = 0;
  for (double v : y) {
    if (v == 1.0)
      ++ones;
    else if (v != 0.0)
      throw LossError("sl_loss: label is not one-hot");
  }
  if (ones != 1) throw LossError("sl_loss: label is not one-hot");
}

// Chain rule through softmax: dL/dz = p * (g - <g, p>).
void softmax_backward(std::span<const double> p, std::span<const double> g,
                      std::span<double> out) {
  double dot = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) dot += g[c] * p[c];
  for (std::size_t c = 0; c < p.size(); ++c) out[c] += p[c] * (g[c] - dot);
}

}  // namespace

DirichletEvidence evidence(std::span<const double> logits) {
  DirichletEvidence e;
  e.alpha.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    e.alpha[c] = std::max(logits[c], 0.0) + 1.0;
    e.strength += e.alpha[c];
  }
  return e;
}

double sl_loss(std::span<const double> logits, std::span<const double> y) {
  require_same_length(logits, y, "sl_loss");
  require_one_hot(y);
  const auto e = evidence(logits);
  const double s = e.strength;
  double loss = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    const double a = e.alpha[c];
    const double err = y[c] - a / s;
    loss += err * err + a * (s - a) / (s * s * (s + 1.0));
  }
  return loss;
}

std::vector<double> sl_loss_grad(std::span<const double> logits,
                                 std::span<const double> y) {
  require_same_length(logits, y, "sl_loss_grad");
  const auto e = evidence(logits);
  const double s = e.strength;
  const std::size_t k = logits.size();
  std::vector<double> p(k);
  double sum_p2 = 0.0;
  double sum_err_p = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    p[c] = e.alpha[c] / s;
    sum_p2 += p[c] * p[c];
    sum_err_p += (y[c] - p[c]) * p[c];
  }
  // Loss = sum (y - p)^2 + (1 - sum p^2) / (S + 1), with p = alpha / S.
  std::vector<double> g(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    if (!(logits[j] > 0.0)) continue;  // rectifier is flat here
    const double d_sq = -2.0 / s * ((y[j] - p[j]) - sum_err_p);
    const double d_var = -2.0 * (p[j] - sum_p2) / (s * (s + 1.0)) -
                         (1.0 - sum_p2) / ((s + 1.0) * (s + 1.0));
    g[j] = d_sq + d_var;
  }
  return g;
}

DatasetLoss sl_dataset_loss(const ModelParams& model, const Matrix& features,
                            std::span<const int> labels) {
  if (features.rows() == 0) throw LossError("sl_dataset_loss: empty dataset");
  if (labels.size() != features.rows())
    throw LossError("sl_dataset_loss: label count mismatch");
  const Matrix logits = forward_logits(model, features);
  const auto k = logits.cols();
  DatasetLoss out;
  out.per_sample.resize(features.rows());
  std::vector<double> y(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    std::fill(y.begin(), y.end(), 0.0);
    y.at(static_cast<std::size_t>(labels[i])) = 1.0;
    out.per_sample[i] = sl_loss(logits.row(i), y);
    sum += out.per_sample[i];
  }
  out.mean = sum / static_cast<double>(features.rows());
  return out;
}

DatasetLoss sl_dataset_loss(const ModelParams& model,
                            const DatasetManifest& dataset) {
  if (dataset.samples.empty())
    throw LossError("sl_dataset_loss: empty dataset");
  Matrix x(dataset.size(), static_cast<std::size_t>(dataset.feature_dim));
  std::vector<int> labels(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    std::copy(s.features.begin(), s.features.end(), x.row(i).begin());
    labels[i] = s.observed_class;
  }
  return sl_dataset_loss(model, x, labels);
}

double ce_loss(std::span<const double> probs, std::span<const double> label) {
  require_same_length(probs, label, "ce_loss");
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (label[c] != 0.0) loss -= label[c] * std::log(std::max(probs[c], kProbFloor));
  return loss;
}

double unlabeled_mse(std::span<const double> guess,
                     std::span<const double> probs) {
  require_same_length(guess, probs, "unlabeled_mse");
  double s = 0.0;
  for (std::size_t c = 0; c < guess.size(); ++c) {
    const double d = guess[c] - probs[c];
    s += d * d;
  }
  return s;
}

double reg_loss(std::span<const double> mean_probs) {
  if (mean_probs.empty()) return 0.0;
  const double prior = 1.0 / static_cast<double>(mean_probs.size());
  double s = 0.0;
  for (double p : mean_probs) s += prior * std::log(prior / std::max(p, kProbFloor));
  return s;
}

double dm_loss(double labeled_loss, double unlabeled_loss,
               std::span<const double> mean_probs, const LossWeights& weights) {
  return labeled_loss + weights.lambda_u * unlabeled_loss +
         weights.lambda_reg * reg_loss(mean_probs);
}

std::vector<double> temp_sharpen(std::span<const double> p, double temperature) {
  if (!(temperature > 0.0)) throw LossError("temp_sharpen: T must be > 0");
  std::vector<double> out(p.size());
  double sum = 0.0;
  const double inv_t = 1.0 / temperature;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] < 0.0) throw LossError("temp_sharpen: negative probability");
    out[c] = std::pow(p[c], inv_t);
    sum += out[c];
  }
  if (!(sum > 0.0)) throw LossError("temp_sharpen: all-zero input");
  for (double& v : out) v /= sum;
  return out;
}

LossNode sl_batch(const Matrix& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw LossError("sl_batch: target shape mismatch");
  if (logits.rows() == 0) throw LossError("sl_batch: empty batch");
  LossNode node{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    node.value += sl_loss(logits.row(i), targets.row(i)) * inv_n;
    const auto g = sl_loss_grad(logits.row(i), targets.row(i));
    auto out = node.d_logits.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) out[c] = g[c] * inv_n;
  }
  return node;
}

LossNode ce_batch(const Matrix& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw LossError("ce_batch: target shape mismatch");
  if (logits.rows() == 0) throw LossError("ce_batch: empty batch");
  LossNode node{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto p = softmax(logits.row(i));
    const auto y = targets.row(i);
    node.value += ce_loss(p, y) * inv_n;
    double mass = 0.0;
    for (double v : y) mass += v;
    auto out = node.d_logits.row(i);
    for (std::size_t c = 0; c < p.size(); ++c)
      out[c] = (p[c] * mass - y[c]) * inv_n;
  }
  return node;
}

DmLossNode dm_batch(const Matrix& logits, const Matrix& targets,
                    std::size_t num_labeled, const LossWeights& weights) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw LossError("dm_batch: target shape mismatch");
  if (num_labeled > logits.rows())
    throw LossError("dm_batch: more labeled rows than batch rows");
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  const std::size_t n_u = n - num_labeled;
  DmLossNode out;
  out.node.d_logits = Matrix(n, k);
  if (n == 0) return out;

  const Matrix probs = softmax_probs(logits);
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) mean[c] += probs(i, c);
  for (double& v : mean) v /= static_cast<double>(n);

  std::vector<double> g(k);
  const double prior = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = probs.row(i);
    const auto y = targets.row(i);
    auto d = out.node.d_logits.row(i);
    if (i < num_labeled) {
      const double inv = 1.0 / static_cast<double>(num_labeled);
      out.labeled += ce_loss(p, y) * inv;
      double mass = 0.0;
      for (double v : y) mass += v;
      for (std::size_t c = 0; c < k; ++c) d[c] += (p[c] * mass - y[c]) * inv;
      std::fill(g.begin(), g.end(), 0.0);
    } else {
      const double inv = 1.0 / static_cast<double>(n_u);
      out.unlabeled += unlabeled_mse(y, p) * inv;
      for (std::size_t c = 0; c < k; ++c)
        g[c] = weights.lambda_u * (-2.0 * (y[c] - p[c]) * inv);
    }
    // Regularizer: dL/dp_ic = -prior / (n * mean_c), zero where floored.
    for (std::size_t c = 0; c < k; ++c)
      if (mean[c] > kProbFloor)
        g[c] += weights.lambda_reg * (-prior / (static_cast<double>(n) * mean[c]));
    softmax_backward(p, g, d);
  }
  out.reg = reg_loss(mean);
  out.node.value = dm_loss(out.labeled, out.unlabeled, mean, weights);
  return out;
}

}  // namespace edm
