#include "edm/noise_gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace edm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

// Fills `resp` (n x k) with normalized responsibilities and returns the mean
// log-likelihood of the data.
double e_step(const GmmModel& m, std::span<const double> x,
              std::vector<double>& resp) {
  const std::size_t k = m.size();
  resp.assign(x.size() * k, 0.0);
  std::vector<double> log_w(k);
  for (std::size_t j = 0; j < k; ++j)
    log_w[j] = m.weights[j] > 0.0 ? std::log(m.weights[j]) : kNegInf;
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double* r = resp.data() + i * k;
    double mx = kNegInf;
    for (std::size_t j = 0; j < k; ++j) {
      r[j] = log_w[j] == kNegInf ? kNegInf
                                 : log_w[j] + log_normal(x[i], m.means[j], m.variances[j]);
      mx = std::max(mx, r[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      r[j] = r[j] == kNegInf ? 0.0 : std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < k; ++j) r[j] /= sum;
    total += mx + std::log(sum);
  }
  return total / static_cast<double>(x.size());
}

void m_step(GmmModel& m, std::span<const double> x,
            const std::vector<double>& resp, double variance_floor) {
  const std::size_t k = m.size();
  const auto n = static_cast<double>(x.size());
  std::vector<double> nk(k, 0.0);
  std::vector<double> sx(k, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double r = resp[i * k + j];
      nk[j] += r;
      sx[j] += r * x[i];
    }
  std::vector<double> sxx(k, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    if (nk[j] > 0.0) m.means[j] = sx[j] / nk[j];
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double d = x[i] - m.means[j];
      sxx[j] += resp[i * k + j] * d * d;
    }
  double wsum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    // A component that lost all mass keeps its mean and variance.
    if (nk[j] > 0.0) m.variances[j] = std::max(sxx[j] / nk[j], variance_floor);
    m.weights[j] = nk[j] / n;
    wsum += m.weights[j];
  }
  for (double& w : m.weights) w /= wsum;
}

double interpolated_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - t) + sorted[hi] * t;
}

}  // namespace

void GmmConfig::validate() const {
  if (num_components < 1) throw GmmError("num_components must be >= 1");
  if (!(mu_min > 0.0 && mu_min < mu_max && mu_max < 1.0))
    throw GmmError("need 0 < mu_min < mu_max < 1");
  if (max_iters < 1) throw GmmError("max_iters must be >= 1");
  if (!(tol >= 0.0)) throw GmmError("tol must be >= 0");
  if (!(variance_floor > 0.0)) throw GmmError("variance_floor must be > 0");
}

std::vector<double> normalize_losses(std::span<const double> raw) {
  std::vector<double> out(raw.size(), 0.0);
  if (raw.empty()) return out;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *lo) / range;
  return out;
}

GmmModel fit_em(std::span<const double> losses, const GmmConfig& cfg) {
  if (cfg.num_components < 1) throw GmmError("num_components must be >= 1");
  if (!(cfg.variance_floor > 0.0)) throw GmmError("variance_floor must be > 0");
  const auto k = static_cast<std::size_t>(cfg.num_components);
  if (losses.size() < k)
    throw GmmError("fit_em needs at least as many samples (" +
                   std::to_string(losses.size()) + ") as components (" +
                   std::to_string(k) + ")");
  for (double v : losses)
    if (!std::isfinite(v)) throw GmmError("fit_em: non-finite loss value");

  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  double mean = 0.0;
  for (double v : losses) mean += v;
  mean /= static_cast<double>(losses.size());
  double var = 0.0;
  for (double v : losses) var += (v - mean) * (v - mean);
  var /= static_cast<double>(losses.size());

  GmmModel m;
  m.weights.assign(k, 1.0 / static_cast<double>(k));
  m.variances.assign(k, std::max(var / static_cast<double>(k), cfg.variance_floor));
  m.means.resize(k);
  for (std::size_t j = 0; j < k; ++j)
    m.means[j] = interpolated_quantile(
        sorted, (static_cast<double>(j) + 0.5) / static_cast<double>(k));

  std::vector<double> resp;
  bool converged = false;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double ll = e_step(m, losses, resp);
    m.log_likelihood_trace.push_back(ll);
    const auto& tr = m.log_likelihood_trace;
    if (tr.size() >= 2 && tr[tr.size() - 1] - tr[tr.size() - 2] < cfg.tol) {
      converged = true;
      break;
    }
    m_step(m, losses, resp, cfg.variance_floor);
    ++m.iterations;
  }
  if (!converged) m.log_likelihood_trace.push_back(e_step(m, losses, resp));
  return m;
}

std::vector<double> responsibilities(const GmmModel& model,
                                     std::span<const double> losses) {
  std::vector<double> resp;
  if (!losses.empty()) e_step(model, losses, resp);
  return resp;
}

PosteriorSplit group_posteriors(const GmmModel& model,
                                std::span<const double> losses,
                                const GmmConfig& cfg) {
  const std::size_t k = model.size();
  const auto resp = responsibilities(model, losses);
  PosteriorSplit out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    auto& g = out[i];
    for (std::size_t j = 0; j < k; ++j) {
      const double r = resp[i * k + j];
      if (model.means[j] <= cfg.mu_min)
        g.clean += r;
      else if (model.means[j] >= cfg.mu_max)
        g.closed += r;
      else
        g.open += r;
    }
  }
  return out;
}

Partition partition(const PosteriorSplit& split) {
  Partition p;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& g = split[i];
    if (g.clean > std::max(g.open, g.closed))
      p.clean.push_back(i);
    else if (g.closed > std::max(g.clean, g.open))
      p.closed.push_back(i);
    else
      p.open.push_back(i);
  }
  return p;
}

NoiseGroup predicted_group(const GroupPosterior& g) {
  if (g.clean >= g.open && g.clean >= g.closed) return NoiseGroup::kClean;
  if (g.open >= g.closed) return NoiseGroup::kOpen;
  return NoiseGroup::kClosed;
}

std::string split_dump_csv(std::span<const double> normalized_losses,
                           const PosteriorSplit& split,
                           const DatasetManifest& manifest) {
  if (normalized_losses.size() != split.size() ||
      split.size() != manifest.size())
    throw GmmError("split dump: length mismatch");
  std::ostringstream out;
  out.precision(17);
  out << "id,normalized_loss,w,w_op,w_cl,provenance\n";
  for (std::size_t i = 0; i < split.size(); ++i)
    out << manifest.samples[i].id << ',' << normalized_losses[i] << ','
        << split[i].clean << ',' << split[i].open << ',' << split[i].closed
        << ',' << to_string(manifest.samples[i].provenance) << '\n';
  return out.str();
}

}  // namespace edm
