#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/benchgen.hpp"
#include "edm/eval_harness.hpp"
#include "edm/losses.hpp"
#include "edm/nn.hpp"
#include "edm/noise_gmm.hpp"
#include "edm/rng.hpp"

namespace edm {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int augmentations = 2;     // M
  double temperature = 0.5;  // T
  LossWeights loss_weights;  // lambda_u = 25, lambda_reg = 1
  double mix_alpha = 4.0;
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 0.02;
  double lr_drop_factor = 0.1;
  int lr_drop_epoch = -1;  // < 0: half of `epochs`
  double momentum = 0.8;
  double weight_decay = 5e-4;
  int warmup_epochs_netd = 10;
  int warmup_epochs_nets = 30;
  GmmConfig gmm;
  AugmentSpec augment{AugmentMode::kGaussianJitter, 0.05};
  std::vector<int> hidden_widths{64, 64};
  std::uint64_t seed = 0;

  void validate() const;
  int effective_drop_epoch() const;
  double learning_rate_at(int epoch) const;  // epoch is 0-based
};

// NetD (classifier, relabeler) and NetS (subjective-logic splitter) with
// their optimizer states.
struct Networks {
  ModelParams netd;
  ModelParams nets;
  OptimState opt_d;
  OptimState opt_s;
};

Networks make_networks(int feature_dim, int num_classes, const TrainConfig& cfg);

// Dense copy of a manifest's features and observed labels.
struct TrainingData {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  static TrainingData from(const DatasetManifest& m);
  std::size_t size() const { return labels.size(); }
};

// NetD: cross-entropy on the noisy labels; NetS: SL loss on the same.
void warmup(Networks& nets, const TrainingData& data, const TrainConfig& cfg);

// sharpen(w*y + (1-w)*p, T)
std::vector<double> co_refine(std::span<const double> y, double clean_weight,
                              std::span<const double> p, double temperature);

// Mean softmax over M augmentations, sharpened.
std::vector<double> guess_unlabeled(const ModelParams& model,
                                    std::span<const double> sample, int m,
                                    double temperature,
                                    const AugmentSpec& augment, Rng& rng);

struct MixInput {
  std::vector<double> input;
  std::vector<double> target;
};

struct MixOutput {
  std::vector<double> input;
  std::vector<double> target;
  double lambda = 1.0;  // the applied weight max(l, 1-l) of the first operand
};

// Convex combination weighted max(l, 1-l) toward `a`.
MixOutput mix_pair(const MixInput& a, const MixInput& b, double l);
// Draws l ~ Beta(alpha, alpha) and mixes.
MixOutput mixmatch_pair(const MixInput& a, const MixInput& b, double mix_alpha,
                        Rng& rng);

struct NetdEpochStats {
  std::size_t iterations = 0;
  double mean_labeled = 0.0;
  double mean_unlabeled = 0.0;
  double mean_reg = 0.0;
  double mean_total = 0.0;
  double min_mix_lambda = 1.0;
  // Sample indices that entered any NetD gradient step this epoch.
  std::vector<std::size_t> touched;
};

// One epoch of semi-supervised NetD training on the predicted clean set X
// (with clean posteriors) and closed set U. ceil(|X|/B) iterations.
NetdEpochStats train_netd_epoch(ModelParams& netd, OptimState& opt,
                                const TrainingData& data,
                                std::span<const std::size_t> clean_set,
                                std::span<const double> clean_weights,
                                std::span<const std::size_t> closed_set,
                                const TrainConfig& cfg, Rng& rng);

// argmax_c [ w_cl * p_netd(c|x) + (1 - w_cl) * y(c) ], lowest index on ties.
std::vector<int> relabel_for_nets(const ModelParams& netd,
                                  const TrainingData& data,
                                  const PosteriorSplit& split);

// One pass of mini-batch SGD on the SL loss; returns the mean batch loss.
double train_nets_epoch(ModelParams& nets, OptimState& opt,
                        const Matrix& features, std::span<const int> labels,
                        const TrainConfig& cfg, Rng& rng);

struct EpochReport {
  int epoch = 0;  // 1-based
  double learning_rate = 0.0;
  std::size_t clean_set = 0;   // |X|
  std::size_t closed_set = 0;  // |U|
  std::size_t open_set = 0;    // |O|
  double mean_sl = 0.0;
  double mean_labeled = 0.0;
  double mean_unlabeled = 0.0;
  double mean_reg = 0.0;
  double test_accuracy = 0.0;
  SplitConfusion confusion;
  double split_balanced_accuracy = 0.0;
  std::size_t netd_iterations = 0;
  bool netd_skipped = false;
  // Audits: predicted-open samples used by NetD (must be 0) and the largest
  // |w + w_op + w_cl - 1| over the epoch's posteriors.
  std::size_t open_in_netd = 0;
  double max_posterior_deviation = 0.0;
};

struct RunResult {
  Networks final_networks;
  ModelParams best_netd;
  std::vector<EpochReport> reports;
  AccuracyReport accuracy;
  // Loss state used for the last epoch's split, for exports.
  std::vector<double> last_normalized_losses;
  PosteriorSplit last_split;
};

using EpochCallback = std::function<void(const EpochReport&)>;

RunResult run(const DatasetManifest& train, const DatasetManifest& test,
              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Control condition: the same schedule with plain cross-entropy on the noisy
// labels and no split.
RunResult run_baseline_ce(const DatasetManifest& train,
                          const DatasetManifest& test, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

// Normalized per-sample SL losses of NetS and the resulting group posteriors.
struct SplitState {
  std::vector<double> raw_losses;
  std::vector<double> normalized;
  GmmModel gmm;
  PosteriorSplit split;
};

SplitState compute_split(const ModelParams& nets, const TrainingData& data,
                         const GmmConfig& gmm);

}  // namespace edm
