#include "edm/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "edm/binary_io.hpp"

namespace edm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t group_column(NoiseGroup g) {
  switch (g) {
    case NoiseGroup::kClean:
      return 0;
    case NoiseGroup::kClosed:
      return 1;
    case NoiseGroup::kOpen:
      return 2;
  }
  return 0;
}

}  // namespace

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Matrix features_of(const DatasetManifest& m) {
  Matrix x(m.size(), static_cast<std::size_t>(m.feature_dim));
  for (std::size_t i = 0; i < m.size(); ++i)
    std::copy(m.samples[i].features.begin(), m.samples[i].features.end(),
              x.row(i).begin());
  return x;
}

double test_accuracy(const ModelParams& model, const DatasetManifest& test) {
  if (test.samples.empty()) throw EvalError("test_accuracy: empty test set");
  const Matrix probs = softmax_probs(forward_logits(model, features_of(test)));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& s = test.samples[i];
    if (s.provenance != Provenance::kClean)
      throw EvalError("test_accuracy: test manifest must be all-clean");
    if (static_cast<int>(argmax(probs.row(i))) == s.true_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

std::size_t SplitConfusion::total() const {
  std::size_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

std::size_t SplitConfusion::row_total(Provenance p) const {
  const auto& row = counts[static_cast<std::size_t>(p)];
  return row[0] + row[1] + row[2];
}

std::size_t SplitConfusion::column_total(NoiseGroup g) const {
  const std::size_t c = group_column(g);
  return counts[0][c] + counts[1][c] + counts[2][c];
}

std::size_t SplitConfusion::at(Provenance truth, NoiseGroup predicted) const {
  return counts[static_cast<std::size_t>(truth)][group_column(predicted)];
}

double SplitConfusion::recall(Provenance p) const {
  const std::size_t n = row_total(p);
  if (n == 0) return kNaN;
  // Provenance and predicted-group columns share the order clean, closed, open.
  const auto i = static_cast<std::size_t>(p);
  return static_cast<double>(counts[i][i]) / static_cast<double>(n);
}

double SplitConfusion::precision(NoiseGroup g) const {
  const std::size_t n = column_total(g);
  if (n == 0) return kNaN;
  const std::size_t c = group_column(g);
  return static_cast<double>(counts[c][c]) / static_cast<double>(n);
}

double SplitConfusion::balanced_accuracy() const {
  double sum = 0.0;
  int present = 0;
  for (auto p : {Provenance::kClean, Provenance::kClosed, Provenance::kOpen}) {
    const double r = recall(p);
    if (std::isnan(r)) continue;
    sum += r;
    ++present;
  }
  return present == 0 ? kNaN : sum / present;
}

SplitConfusion split_confusion(const PosteriorSplit& split,
                               const DatasetManifest& manifest) {
  if (split.size() != manifest.size())
    throw EvalError("split_confusion: split and manifest lengths differ");
  SplitConfusion c;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto row = static_cast<std::size_t>(manifest.samples[i].provenance);
    ++c.counts[row][group_column(predicted_group(split[i]))];
  }
  return c;
}

AccuracyReport AccuracyReport::from(std::vector<double> per_epoch) {
  AccuracyReport r;
  r.per_epoch = std::move(per_epoch);
  if (!r.per_epoch.empty()) {
    r.best = *std::max_element(r.per_epoch.begin(), r.per_epoch.end());
    r.last = r.per_epoch.back();
  }
  return r;
}

LossHistogram loss_histogram(std::span<const double> normalized_losses,
                             std::span<const Provenance> provenance, int bins) {
  if (bins < 2) throw EvalError("loss histogram needs at least 2 bins");
  if (normalized_losses.size() != provenance.size())
    throw EvalError("loss histogram: length mismatch");
  LossHistogram h;
  h.bins = bins;
  for (auto& row : h.counts) row.assign(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < normalized_losses.size(); ++i) {
    const double x = std::clamp(normalized_losses[i], 0.0, 1.0);
    auto b = static_cast<std::size_t>(std::floor(x * bins));
    b = std::min(b, static_cast<std::size_t>(bins - 1));
    ++h.counts[static_cast<std::size_t>(provenance[i])][b];
  }
  return h;
}

std::string loss_histogram_csv(const LossHistogram& h) {
  std::ostringstream out;
  out << "provenance";
  for (int b = 0; b < h.bins; ++b) out << ",bin_" << b;
  out << '\n';
  for (auto p : {Provenance::kClean, Provenance::kClosed, Provenance::kOpen}) {
    out << to_string(p);
    for (auto v : h.counts[static_cast<std::size_t>(p)]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

void export_loss_histogram(std::span<const double> normalized_losses,
                           std::span<const Provenance> provenance, int bins,
                           const std::string& path) {
  bin::write_file(path,
                  loss_histogram_csv(loss_histogram(normalized_losses, provenance, bins)));
}

std::string features_csv(const ModelParams& model, const DatasetManifest& m) {
  const ForwardCache cache = forward(model, features_of(m));
  const Matrix& feats = cache.penultimate();
  std::ostringstream out;
  out.precision(9);
  out << "id,provenance";
  for (std::size_t j = 0; j < feats.cols(); ++j) out << ",f_" << j;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.samples[i].id << ',' << to_string(m.samples[i].provenance);
    for (double v : feats.row(i)) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

void export_features(const ModelParams& model, const DatasetManifest& m,
                     const std::string& path) {
  bin::write_file(path, features_csv(model, m));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r' && c != '\n') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace edm
