#include "edm/benchgen.hpp"

#include <cmath>
#include <numeric>

#include "edm/rng.hpp"

namespace edm {

namespace {

constexpr std::uint64_t kStreamClean = 0x636c65616eULL;
constexpr std::uint64_t kStreamPool = 0x706f6f6cULL;
constexpr std::uint64_t kStreamSelect = 0x73656c656374ULL;
constexpr std::uint64_t kStreamPoolPick = 0x7069636bULL;
constexpr std::uint64_t kStreamLabels = 0x6c6162656cULL;

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kClean:
      return "clean";
    case Provenance::kClosed:
      return "closed";
    case Provenance::kOpen:
      return "open";
  }
  return "unknown";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "clean") return Provenance::kClean;
  if (s == "closed") return Provenance::kClosed;
  if (s == "open") return Provenance::kOpen;
  throw BenchgenError("unknown provenance '" + std::string(s) + "'");
}

std::vector<double> LabeledSample::one_hot(int num_classes) const {
  std::vector<double> y(static_cast<std::size_t>(num_classes), 0.0);
  y.at(static_cast<std::size_t>(observed_class)) = 1.0;
  return y;
}

ProvenanceCounts count_provenance(const std::vector<LabeledSample>& samples) {
  ProvenanceCounts c;
  for (const auto& s : samples) {
    switch (s.provenance) {
      case Provenance::kClean:
        ++c.clean;
        break;
      case Provenance::kClosed:
        ++c.closed;
        break;
      case Provenance::kOpen:
        ++c.open;
        break;
    }
  }
  return c;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.num_classes < 1) throw BenchgenError("num_classes must be positive");
  if (m.feature_dim < 1) throw BenchgenError("feature_dim must be positive");
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& s = m.samples[i];
    const std::string where = "sample " + std::to_string(i);
    if (s.id != static_cast<std::int64_t>(i))
      throw BenchgenError(where + ": ids must be dense 0..N-1");
    if (s.features.size() != static_cast<std::size_t>(m.feature_dim))
      throw BenchgenError(where + ": feature width mismatch");
    if (s.observed_class < 0 || s.observed_class >= m.num_classes)
      throw BenchgenError(where + ": observed class out of range");
    switch (s.provenance) {
      case Provenance::kClean:
        if (s.true_class != s.observed_class)
          throw BenchgenError(where + ": clean sample with flipped label");
        break;
      case Provenance::kClosed:
        if (s.true_class == kNoClass || s.true_class == s.observed_class)
          throw BenchgenError(where + ": closed-set sample keeps true label");
        break;
      case Provenance::kOpen:
        if (s.true_class != kNoClass)
          throw BenchgenError(where + ": open-set sample with a true class");
        break;
    }
    if (s.true_class != kNoClass &&
        (s.true_class < 0 || s.true_class >= m.num_classes))
      throw BenchgenError(where + ": true class out of range");
  }
  if (count_provenance(m.samples) != m.counts)
    throw BenchgenError("provenance counts disagree with sample tags");
}

double clean_center_radius(double cluster_spread) {
  return 3.0 * std::numbers::sqrt2 * cluster_spread;
}

std::vector<std::vector<double>> clean_centers(int num_classes, int feature_dim,
                                               double cluster_spread) {
  if (num_classes > 2 * feature_dim)
    throw BenchgenError("feature_dim " + std::to_string(feature_dim) +
                        " cannot host " + std::to_string(num_classes) +
                        " separated class centers (need <= 2*dim classes)");
  const double r = clean_center_radius(cluster_spread);
  std::vector<std::vector<double>> centers;
  centers.reserve(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> v(static_cast<std::size_t>(feature_dim), 0.0);
    const int axis = c % feature_dim;
    v[static_cast<std::size_t>(axis)] = c < feature_dim ? r : -r;
    centers.push_back(std::move(v));
  }
  return centers;
}

DatasetManifest make_synthetic_clean(int num_classes, int per_class,
                                     int feature_dim, double cluster_spread,
                                     std::uint64_t seed) {
  if (num_classes < 2) throw BenchgenError("num_classes must be >= 2");
  if (per_class < 1) throw BenchgenError("per_class must be >= 1");
  if (feature_dim < 2) throw BenchgenError("feature_dim must be >= 2");
  if (!(cluster_spread > 0.0))
    throw BenchgenError("cluster_spread must be > 0");
  const auto centers = clean_centers(num_classes, feature_dim, cluster_spread);

  DatasetManifest m;
  m.num_classes = num_classes;
  m.feature_dim = feature_dim;
  m.noise_spec.seed = seed;
  Rng rng(derive_seed(seed, kStreamClean));
  const auto n = static_cast<std::size_t>(num_classes) *
                 static_cast<std::size_t>(per_class);
  m.samples.reserve(n);
  // Classes are interleaved so any prefix of the manifest is balanced.
  for (int k = 0; k < per_class; ++k) {
    for (int c = 0; c < num_classes; ++c) {
      LabeledSample s;
      s.id = static_cast<std::int64_t>(m.samples.size());
      s.features.resize(static_cast<std::size_t>(feature_dim));
      const auto& mu = centers[static_cast<std::size_t>(c)];
      for (std::size_t j = 0; j < s.features.size(); ++j)
        s.features[j] = static_cast<float>(rng.normal(mu[j], cluster_spread));
      s.observed_class = c;
      s.true_class = c;
      s.provenance = Provenance::kClean;
      m.samples.push_back(std::move(s));
    }
  }
  m.counts = count_provenance(m.samples);
  return m;
}

std::vector<std::vector<float>> make_open_pool(int num_clusters,
                                               int per_cluster,
                                               int feature_dim,
                                               double cluster_spread,
                                               double offset,
                                               std::uint64_t seed) {
  if (num_clusters < 0 || per_cluster < 0)
    throw BenchgenError("pool sizes must be non-negative");
  if (num_clusters == 0 || per_cluster == 0) return {};
  if (feature_dim < 1) throw BenchgenError("feature_dim must be >= 1");
  if (!(cluster_spread > 0.0))
    throw BenchgenError("cluster_spread must be > 0");
  if (!(offset > 0.0)) throw BenchgenError("pool offset must be > 0");

  // Cluster k points along a sign pattern of the all-ones diagonal; patterns
  // beyond 2^dim reuse directions at a larger radius.
  const double base = offset + clean_center_radius(cluster_spread);
  const double inv_norm = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  const std::uint64_t patterns =
      feature_dim >= 63 ? ~std::uint64_t{0} : (std::uint64_t{1} << feature_dim);

  Rng rng(derive_seed(seed, kStreamPool));
  std::vector<std::vector<float>> pool;
  pool.reserve(static_cast<std::size_t>(num_clusters) *
               static_cast<std::size_t>(per_cluster));
  for (int k = 0; k < num_clusters; ++k) {
    const auto uk = static_cast<std::uint64_t>(k);
    const std::uint64_t pattern = uk % patterns;
    const double radius = base * (1.0 + static_cast<double>(uk / patterns));
    std::vector<double> center(static_cast<std::size_t>(feature_dim));
    for (int j = 0; j < feature_dim; ++j) {
      const bool negative = j < 64 && ((pattern >> j) & 1U) != 0;
      center[static_cast<std::size_t>(j)] =
          (negative ? -1.0 : 1.0) * radius * inv_norm;
    }
    for (int i = 0; i < per_cluster; ++i) {
      std::vector<float> v(static_cast<std::size_t>(feature_dim));
      for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = static_cast<float>(rng.normal(center[j], cluster_spread));
      pool.push_back(std::move(v));
    }
  }
  return pool;
}

NoiseCounts noise_counts(double rho, double omega, std::size_t n) {
  const double nn = static_cast<double>(n);
  NoiseCounts c;
  c.closed = static_cast<std::size_t>(std::floor(rho * omega * nn + 0.5));
  c.open = static_cast<std::size_t>(std::floor(rho * (1.0 - omega) * nn + 0.5));
  const auto total = static_cast<std::size_t>(std::floor(rho * nn + 0.5));
  if (c.closed + c.open > total) c.open -= (c.closed + c.open - total);
  return c;
}

DatasetManifest inject_noise(const DatasetManifest& clean,
                             const std::vector<std::vector<float>>& pool,
                             const NoiseSpec& spec) {
  if (!(spec.rho >= 0.0 && spec.rho <= 1.0))
    throw BenchgenError("rho must lie in [0,1]");
  if (!(spec.omega >= 0.0 && spec.omega <= 1.0))
    throw BenchgenError("omega must lie in [0,1]");
  if (clean.num_classes < 2)
    throw BenchgenError("noise injection needs at least 2 classes");
  for (const auto& s : clean.samples)
    if (s.provenance != Provenance::kClean)
      throw BenchgenError("inject_noise expects an all-clean manifest");

  const std::size_t n = clean.size();
  const NoiseCounts counts = noise_counts(spec.rho, spec.omega, n);
  if (pool.size() < counts.open)
    throw BenchgenError("open pool has " + std::to_string(pool.size()) +
                        " vectors but " + std::to_string(counts.open) +
                        " are required");
  if (counts.open > 0)
    for (const auto& v : pool)
      if (v.size() != static_cast<std::size_t>(clean.feature_dim))
        throw BenchgenError("open pool vector width does not match dataset");

  DatasetManifest out = clean;
  out.noise_spec = spec;

  auto order = iota_indices(n);
  Rng select(derive_seed(spec.seed, kStreamSelect));
  select.shuffle(order);

  auto pool_order = iota_indices(pool.size());
  Rng pick(derive_seed(spec.seed, kStreamPoolPick));
  pick.shuffle(pool_order);

  Rng labels(derive_seed(spec.seed, kStreamLabels));
  const auto k = static_cast<std::uint64_t>(clean.num_classes);
  for (std::size_t i = 0; i < counts.closed; ++i) {
    auto& s = out.samples[order[i]];
    const auto r = static_cast<int>(labels.below(k - 1));
    s.observed_class = r < s.true_class ? r : r + 1;
    s.provenance = Provenance::kClosed;
  }
  for (std::size_t i = 0; i < counts.open; ++i) {
    auto& s = out.samples[order[counts.closed + i]];
    s.features = pool[pool_order[i]];
    s.observed_class = static_cast<int>(labels.below(k));
    s.true_class = kNoClass;
    s.provenance = Provenance::kOpen;
  }
  out.counts = count_provenance(out.samples);
  return out;
}

}  // namespace edm
