#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/benchgen.hpp"

namespace edm {

class GmmError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GmmConfig {
  int num_components = 20;
  double mu_min = 0.3;
  double mu_max = 0.7;
  int max_iters = 200;
  double tol = 1e-7;
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;  // unused by the deterministic initializer

  // Checks the band thresholds and floors. Fitting alone accepts any
  // num_components >= 1; the three-way split requires >= 3.
  void validate() const;
};

struct GmmModel {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<double> log_likelihood_trace;  // mean per-sample log-likelihood
  int iterations = 0;

  std::size_t size() const { return means.size(); }
};

// Per-sample group posteriors (clean, open, closed).
struct GroupPosterior {
  double clean = 0.0;
  double open = 0.0;
  double closed = 0.0;
};

using PosteriorSplit = std::vector<GroupPosterior>;

// Min-max rescale to [0, 1]; a constant vector maps to all zeros.
std::vector<double> normalize_losses(std::span<const double> raw);

// One-dimensional EM. Means start at evenly spaced quantiles, variances at
// var(data)/k (floored), weights uniform. Stops after max_iters or when the
// mean log-likelihood improves by less than tol.
GmmModel fit_em(std::span<const double> losses, const GmmConfig& cfg);

// Component responsibilities of each sample, row-major n x k.
std::vector<double> responsibilities(const GmmModel& model,
                                     std::span<const double> losses);

// Sums responsibilities into clean (mean <= mu_min), closed (mean >= mu_max)
// and open (the rest) groups.
PosteriorSplit group_posteriors(const GmmModel& model,
                                std::span<const double> losses,
                                const GmmConfig& cfg);

struct Partition {
  std::vector<std::size_t> clean;   // X: clean posterior strictly largest
  std::vector<std::size_t> closed;  // U: closed posterior strictly largest
  std::vector<std::size_t> open;    // O: everything else, ties included
};

Partition partition(const PosteriorSplit& split);

enum class NoiseGroup : std::uint8_t { kClean = 0, kOpen = 1, kClosed = 2 };

// Max-posterior group with tie priority clean > open > closed.
NoiseGroup predicted_group(const GroupPosterior& g);

// Comma-separated dump: id,normalized_loss,w,w_op,w_cl,provenance.
std::string split_dump_csv(std::span<const double> normalized_losses,
                           const PosteriorSplit& split,
                           const DatasetManifest& manifest);

}  // namespace edm
