#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/benchgen.hpp"
#include "edm/nn.hpp"
#include "edm/noise_gmm.hpp"

namespace edm {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

Matrix features_of(const DatasetManifest& m);

// Fraction of samples whose argmax prediction equals the true class.
double test_accuracy(const ModelParams& model, const DatasetManifest& test);

// Rows: true provenance (clean, closed, open).
// Columns: predicted group (clean, closed, open).
struct SplitConfusion {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  std::size_t total() const;
  std::size_t row_total(Provenance p) const;
  std::size_t column_total(NoiseGroup g) const;
  // Recall of each provenance group; NaN for an absent group.
  double recall(Provenance p) const;
  // Precision of each predicted group; NaN when the group was never predicted.
  double precision(NoiseGroup g) const;
  // Mean recall over the provenance groups present in the data.
  double balanced_accuracy() const;

  std::size_t at(Provenance truth, NoiseGroup predicted) const;
};

SplitConfusion split_confusion(const PosteriorSplit& split,
                               const DatasetManifest& manifest);

struct AccuracyReport {
  std::vector<double> per_epoch;
  double best = 0.0;
  double last = 0.0;

  static AccuracyReport from(std::vector<double> per_epoch);
};

// Per-provenance histogram of normalized losses on uniform bins over [0, 1].
// Rows: provenance,bin_0,...,bin_{k-1}.
struct LossHistogram {
  int bins = 0;
  std::array<std::vector<std::size_t>, 3> counts;  // indexed by Provenance
};

LossHistogram loss_histogram(std::span<const double> normalized_losses,
                             std::span<const Provenance> provenance, int bins);
std::string loss_histogram_csv(const LossHistogram& h);
void export_loss_histogram(std::span<const double> normalized_losses,
                           std::span<const Provenance> provenance, int bins,
                           const std::string& path);

// One row per sample: id,provenance,f_0,...,f_{h-1} with the penultimate
// (last hidden) activations.
std::string features_csv(const ModelParams& model, const DatasetManifest& m);
void export_features(const ModelParams& model, const DatasetManifest& m,
                     const std::string& path);

// Splits a comma-separated line; used by the export round-trip tests and the
// CLI config reader.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace edm
