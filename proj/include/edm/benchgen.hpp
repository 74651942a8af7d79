#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edm {

enum class Provenance : std::uint8_t { kClean = 0, kClosed = 1, kOpen = 2 };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

inline constexpr int kNoClass = -1;

// One training or test example. The observed label is stored as a class
// index; one_hot() materializes the vector form used by the losses.
// true_class and provenance are ground truth for evaluation only.
struct LabeledSample {
  std::int64_t id = 0;
  std::vector<float> features;
  int observed_class = 0;
  int true_class = kNoClass;
  Provenance provenance = Provenance::kClean;

  std::vector<double> one_hot(int num_classes) const;

  bool operator==(const LabeledSample&) const = default;
};

enum class FlipDistribution : std::uint8_t { kUniformExcludingTrue = 0 };

struct NoiseSpec {
  double rho = 0.0;
  double omega = 0.0;
  std::string open_source = "none";
  FlipDistribution flip = FlipDistribution::kUniformExcludingTrue;
  std::uint64_t seed = 0;

  bool operator==(const NoiseSpec&) const = default;
};

struct ProvenanceCounts {
  std::size_t clean = 0;
  std::size_t closed = 0;
  std::size_t open = 0;

  std::size_t total() const { return clean + closed + open; }
  bool operator==(const ProvenanceCounts&) const = default;
};

struct DatasetManifest {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  int feature_dim = 0;
  NoiseSpec noise_spec;
  ProvenanceCounts counts;

  std::size_t size() const { return samples.size(); }
  bool operator==(const DatasetManifest&) const = default;
};

class BenchgenError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tallies provenance tags with a full scan.
ProvenanceCounts count_provenance(const std::vector<LabeledSample>& samples);

// Checks the LabeledSample and DatasetManifest invariants; throws
// BenchgenError naming the first violation.
void validate_manifest(const DatasetManifest& m);

// Radius of the clean class centers for a given spread. Centers sit at
// +/- radius along basis directions, so the closest pair (two orthogonal
// directions) is radius*sqrt(2) = 6*spread apart.
double clean_center_radius(double cluster_spread);

std::vector<std::vector<double>> clean_centers(int num_classes, int feature_dim,
                                               double cluster_spread);

DatasetManifest make_synthetic_clean(int num_classes, int per_class,
                                     int feature_dim, double cluster_spread,
                                     std::uint64_t seed);

// Unlabeled out-of-distribution vectors. Cluster centers lie at distance
// offset + clean_center_radius(spread) from the origin, hence at least
// `offset` away from every clean center built with the same spread.
std::vector<std::vector<float>> make_open_pool(int num_clusters,
                                               int per_cluster,
                                               int feature_dim,
                                               double cluster_spread,
                                               double offset,
                                               std::uint64_t seed);

struct NoiseCounts {
  std::size_t closed = 0;
  std::size_t open = 0;
};

// n_closed = floor(rho*omega*N + 0.5), n_open = floor(rho*(1-omega)*N + 0.5),
// then n_open is trimmed so the total never exceeds floor(rho*N + 0.5).
NoiseCounts noise_counts(double rho, double omega, std::size_t n);

DatasetManifest inject_noise(const DatasetManifest& clean,
                             const std::vector<std::vector<float>>& pool,
                             const NoiseSpec& spec);

}  // namespace edm
