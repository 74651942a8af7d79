#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "edm/benchgen.hpp"
#include "edm/nn.hpp"

namespace edm {

inline constexpr double kProbFloor = 1e-12;

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dirichlet parameters alpha = relu(logits) + 1 and strength S = sum(alpha).
struct DirichletEvidence {
  std::vector<double> alpha;
  double strength = 0.0;
};

DirichletEvidence evidence(std::span<const double> logits);

// Subjective-logic loss of one sample:
//   sum_c (y_c - alpha_c/S)^2 + alpha_c (S - alpha_c) / (S^2 (S + 1)).
double sl_loss(std::span<const double> logits, std::span<const double> y);
// d sl_loss / d logits.
std::vector<double> sl_loss_grad(std::span<const double> logits,
                                 std::span<const double> y);

struct DatasetLoss {
  double mean = 0.0;
  std::vector<double> per_sample;  // ordered like the input rows
};

// Mean SL loss of `model` over (features, labels) with class-index labels.
DatasetLoss sl_dataset_loss(const ModelParams& model, const Matrix& features,
                            std::span<const int> labels);
DatasetLoss sl_dataset_loss(const ModelParams& model,
                            const DatasetManifest& dataset);

// -sum_c label_c * log(max(p_c, 1e-12)).
double ce_loss(std::span<const double> probs, std::span<const double> label);

// Squared Euclidean distance between two distributions.
double unlabeled_mse(std::span<const double> guess,
                     std::span<const double> probs);

// sum_c pi_c log(pi_c / max(mean_c, 1e-12)) with a uniform prior pi.
double reg_loss(std::span<const double> mean_probs);

struct LossWeights {
  double lambda_u = 25.0;
  double lambda_reg = 1.0;
};

double dm_loss(double labeled_loss, double unlabeled_loss,
               std::span<const double> mean_probs, const LossWeights& weights);

// p^(1/T), renormalized.
std::vector<double> temp_sharpen(std::span<const double> p, double temperature);

// ---- batch objectives with gradients with respect to the logits ----

// Mean SL loss over the rows; targets are one-hot rows.
LossNode sl_batch(const Matrix& logits, const Matrix& targets);

// Mean cross-entropy over rows against (possibly soft) target rows.
LossNode ce_batch(const Matrix& logits, const Matrix& targets);

struct DmLossNode {
  LossNode node;
  double labeled = 0.0;    // L^(X)
  double unlabeled = 0.0;  // L^(U)
  double reg = 0.0;        // L^(reg)
};

// DivideMix-style objective on a mixed batch: the first `num_labeled` rows
// are labeled (cross-entropy), the rest unlabeled (squared error); the
// regularizer uses the mean prediction over all rows.
DmLossNode dm_batch(const Matrix& logits, const Matrix& targets,
                    std::size_t num_labeled, const LossWeights& weights);

}  // namespace edm
