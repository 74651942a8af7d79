// Acceptance suite: one line per criterion, non-zero exit when any fails.
//
//   acceptance [--only N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edm/benchgen.hpp"
#include "edm/binary_io.hpp"
#include "edm/edm_train.hpp"
#include "edm/losses.hpp"
#include "edm/noise_gmm.hpp"
#include "edm/run_experiment.hpp"
#include "../support/oracles.hpp"

using namespace edm;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kExampleTol = 1e-9;
constexpr double kGradRelTol = 1e-3;
constexpr double kFdStep = 1e-4;
constexpr int kFdCoords = 100;
constexpr int kFdSeeds = 5;
constexpr double kLlSlack = 1e-8;
constexpr double kMeanTol = 0.02;
constexpr double kWeightTol = 0.05;
constexpr double kClosedFormTol = 1e-12;
constexpr double kSplitAccuracy = 0.99;
constexpr double kPosteriorSumTol = 1e-6;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail.clear();
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[192];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ---------------------------------------------------------------- AC1

Outcome loss_units() {
  Outcome o;
  const auto near = [&](double got, double want, const std::string& name) {
    o.require(std::abs(got - want) <= kExampleTol,
              name + fmt(" = %.12g, expected %.12g", got, want));
  };
  using V = std::vector<double>;
  near(sl_loss(V{0, 0}, V{1, 0}), 0.25 + 0.25 + 2.0 * (1.0 * 1.0) / (4.0 * 3.0), "sl zero-logit");
  near(sl_loss(V{2, -1}, V{1, 0}), 0.0625 + 0.0625 + 0.0375 + 0.0375, "sl confident-right");
  near(sl_loss(V{2, -1}, V{0, 1}), 0.5625 + 0.5625 + 0.0375 + 0.0375, "sl confident-wrong");
  near(ce_loss(V{0.5, 0.5}, V{1, 0}), std::numbers::ln2, "ce uniform");
  near(ce_loss(V{0.9, 0.1}, V{1, 0}), -std::log(0.9), "ce confident");
  near(unlabeled_mse(V{1, 0}, V{0, 1}), 2.0, "mse opposite");
  near(unlabeled_mse(V{0.75, 0.25}, V{0.5, 0.5}), 0.125, "mse near");
  near(reg_loss(V{0.75, 0.25}), 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25),
       "reg imbalanced");
  near(reg_loss(V{0.5, 0.5}), 0.0, "reg uniform");
  near(dm_loss(1.0, 0.1, V{0.5, 0.5}, LossWeights{25.0, 1.0}), 3.5, "dm");
  const auto s = temp_sharpen(V{0.8, 0.2}, 0.5);
  near(s[0], 16.0 / 17.0, "sharpen[0]");
  near(s[1], 1.0 / 17.0, "sharpen[1]");
  o.require(reg_loss(V{1.0, 0.0}) > reg_loss(V{0.99, 0.01}) &&
                reg_loss(V{0.99, 0.01}) > reg_loss(V{0.75, 0.25}),
            "reg not monotone in imbalance");
  if (o.pass) o.detail = "12 examples within 1e-9";
  return o;
}

// ---------------------------------------------------------------- AC2

Outcome gradient_fidelity() {
  Outcome o;
  const Architecture arch = default_architecture(8, 4);
  double worst = 0.0;
  for (int seed = 1; seed <= kFdSeeds; ++seed) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed), 0xAC2));
    const auto model = init_model(arch, NetRole::kNetD, static_cast<std::uint64_t>(seed));
    const Matrix x = test::random_matrix(16, 8, rng);
    Matrix onehot(16, 4);
    for (std::size_t r = 0; r < 16; ++r) onehot(r, rng.below(4)) = 1.0;
    const Matrix soft = test::random_distributions(16, 4, rng);
    const std::vector<std::pair<std::string, std::function<LossNode(const Matrix&)>>> losses{
        {"sl", [&](const Matrix& z) { return sl_batch(z, onehot); }},
        {"ce", [&](const Matrix& z) { return ce_batch(z, soft); }},
        {"dm", [&](const Matrix& z) { return dm_batch(z, soft, 8, LossWeights{}).node; }},
    };
    for (const auto& [name, fn] : losses) {
      const auto cache = forward(model, x);
      const auto g = backward(model, cache, fn(cache.logits()));
      const auto r = test::finite_difference_check(
          model, g, x, [&](const ModelParams& m) { return fn(forward_logits(m, x)).value; },
          kFdCoords, static_cast<std::uint64_t>(seed), kFdStep);
      o.require(r.checked == kFdCoords, name + ": too many coordinates on rectifier kinks");
      o.require(r.max_rel_error <= kGradRelTol,
                name + fmt(" seed %.0f rel err %.3g", seed, r.max_rel_error));
      worst = std::max(worst, r.max_rel_error);
    }
  }
  if (o.pass)
    o.detail = fmt("max rel err %.3g over 3 losses x %.0f seeds x 100 coords", worst, kFdSeeds);
  return o;
}

// ---------------------------------------------------------------- AC3

Outcome em_properties() {
  Outcome o;
  Rng rng(0xAC3);
  double worst_drop = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(400);
    const int modes = 1 + t % 4;
    for (auto& v : x) v = rng.normal(static_cast<double>(rng.below(modes)) / modes, 0.08);
    GmmConfig cfg;
    cfg.num_components = 2 + t % 19;
    const auto m = fit_em(normalize_losses(x), cfg);
    for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i)
      worst_drop = std::max(worst_drop, m.log_likelihood_trace[i - 1] - m.log_likelihood_trace[i]);
  }
  o.require(worst_drop <= kLlSlack, fmt("log-likelihood dropped by %.3g", worst_drop));

  const auto s = test::draw_modes({0.1, 0.9}, 0.01, 500, 0xAC3);
  GmmConfig two;
  two.num_components = 2;
  const auto m = fit_em(s.values, two);
  const std::size_t lo = m.means[0] < m.means[1] ? 0 : 1;
  o.require(std::abs(m.means[lo] - 0.1) <= kMeanTol && std::abs(m.means[1 - lo] - 0.9) <= kMeanTol,
            fmt("two-mode means %.4f, %.4f", m.means[lo], m.means[1 - lo]));
  o.require(std::abs(m.weights[0] - 0.5) <= kWeightTol && std::abs(m.weights[1] - 0.5) <= kWeightTol,
            fmt("two-mode weights %.4f, %.4f", m.weights[0], m.weights[1]));

  GmmConfig one;
  one.num_components = 1;
  std::vector<double> y(257);
  for (auto& v : y) v = rng.uniform();
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  const auto single = fit_em(y, one);
  o.require(std::abs(single.means[0] - mean) <= kClosedFormTol &&
                std::abs(single.variances[0] - std::max(var, one.variance_floor)) <= kClosedFormTol,
            "one-component fit differs from the sample moments");
  if (o.pass)
    o.detail = fmt("worst LL drop %.2g; means %.4f/%.4f", worst_drop, m.means[lo], m.means[1 - lo]);
  return o;
}

// ---------------------------------------------------------------- AC4

Outcome three_way_split() {
  Outcome o;
  const auto s = test::draw_modes({0.1, 0.5, 0.9}, 0.02, 1000, 0xAC4);
  const GmmConfig cfg;  // psi = 20, mu_min = 0.3, mu_max = 0.7
  const auto m = fit_em(s.values, cfg);
  const auto g = group_posteriors(m, s.values, cfg);
  double correct[3] = {0, 0, 0}, total[3] = {0, 0, 0};
  for (std::size_t i = 0; i < g.size(); ++i) {
    // Max posterior with the clean > open > closed tie priority, by hand.
    int pred = 0;  // 0 clean, 1 open, 2 closed
    if (g[i].open > g[i].clean) pred = 1;
    if (g[i].closed > std::max(g[i].clean, g[i].open)) pred = 2;
    const int mode = s.mode[i];
    total[mode] += 1;
    if (pred == mode) correct[mode] += 1;
  }
  const double bal = (correct[0] / total[0] + correct[1] / total[1] + correct[2] / total[2]) / 3.0;
  o.require(bal >= kSplitAccuracy, fmt("balanced accuracy %.4f", bal));
  if (o.pass) o.detail = fmt("balanced accuracy %.4f", bal);
  return o;
}

// ---------------------------------------------------------------- AC5

Outcome noise_injection() {
  Outcome o;
  const auto clean = make_synthetic_clean(10, 1000, 8, 0.5, 0xAC5);
  const auto pool = make_open_pool(4, 2000, 8, 0.5, 3.0, 0xAC5 + 1);
  const double n = 10000.0;
  int points = 0;
  for (double rho : {0.3, 0.6})
    for (double omega : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto out = inject_noise(
          clean, pool, NoiseSpec{rho, omega, "pool", FlipDistribution::kUniformExcludingTrue, 7});
      auto want_closed = static_cast<std::size_t>(std::floor(rho * omega * n + 0.5));
      auto want_open = static_cast<std::size_t>(std::floor(rho * (1.0 - omega) * n + 0.5));
      const auto cap = static_cast<std::size_t>(std::floor(rho * n + 0.5));
      if (want_closed + want_open > cap) want_open -= want_closed + want_open - cap;
      std::size_t c = 0, cl = 0, op = 0, kept = 0;
      for (const auto& smp : out.samples) {
        if (smp.provenance == Provenance::kClean) ++c;
        if (smp.provenance == Provenance::kClosed) {
          ++cl;
          if (smp.observed_class == smp.true_class) ++kept;
        }
        if (smp.provenance == Provenance::kOpen) ++op;
      }
      const std::string at = fmt(" at rho=%.2f omega=%.2f", rho, omega);
      o.require(cl == want_closed && op == want_open && c == 10000 - want_closed - want_open,
                "counts" + at);
      o.require(kept == 0, "closed sample kept its label" + at);
      if (omega == 0.0) o.require(cl == 0, "omega=0 produced closed noise" + at);
      if (omega == 1.0) o.require(op == 0, "omega=1 produced open noise" + at);
      ++points;
    }
  if (o.pass) o.detail = std::to_string(points) + " grid points exact";
  return o;
}

// ---------------------------------------------------------------- shared benchmark

cli::ResolvedConfig blobs_config(int epochs, std::uint64_t seed, const std::string& algo = "edm") {
  return cli::resolve_config("run",
                             {{"rho", "0.6"},
                              {"omega", "0.5"},
                              {"epochs", std::to_string(epochs)},
                              {"seed", std::to_string(seed)},
                              {"algo", algo}},
                             {});
}

// ---------------------------------------------------------------- AC6

Outcome warmup_ordering() {
  Outcome o;
  const auto cfg = blobs_config(0, 1);
  const auto bench = cli::generate_benchmark(cfg);
  o.require(bench.train.size() == 2000, "benchmark size");
  const auto data = TrainingData::from(bench.train);
  auto nets = make_networks(cfg.gen.dim, cfg.gen.classes, cfg.train);
  warmup(nets, data, cfg.train);

  // Per-sample SL loss and min-max normalization computed here, not by the trainer.
  const Matrix z = forward_logits(nets.nets, data.features);
  std::vector<double> loss(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> y(static_cast<std::size_t>(data.num_classes), 0.0);
    y[static_cast<std::size_t>(data.labels[i])] = 1.0;
    const auto zr = z.row(i);
    double strength = 0.0;
    std::vector<double> alpha(zr.size());
    for (std::size_t c = 0; c < zr.size(); ++c) {
      alpha[c] = std::max(zr[c], 0.0) + 1.0;
      strength += alpha[c];
    }
    double l = 0.0;
    for (std::size_t c = 0; c < zr.size(); ++c) {
      const double p = alpha[c] / strength;
      l += (y[c] - p) * (y[c] - p) + alpha[c] * (strength - alpha[c]) /
                                         (strength * strength * (strength + 1.0));
    }
    loss[i] = l;
  }
  const auto [lo, hi] = std::minmax_element(loss.begin(), loss.end());
  const double a = *lo, b = *hi;
  double sum[3] = {0, 0, 0}, cnt[3] = {0, 0, 0};
  for (std::size_t i = 0; i < loss.size(); ++i) {
    const auto p = static_cast<std::size_t>(bench.train.samples[i].provenance);
    sum[p] += (loss[i] - a) / (b - a);
    cnt[p] += 1;
  }
  const double clean = sum[0] / cnt[0], closed = sum[1] / cnt[1], open = sum[2] / cnt[2];
  const std::string means = fmt("clean %.3f, open %.3f, closed %.3f", clean, open, closed);
  o.require(clean < open && open < closed, means);
  if (o.pass) o.detail = means;
  return o;
}

// ---------------------------------------------------------------- AC7, AC8, AC10

struct PairedRun {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t test_n = 0;
  RunResult edm;
  RunResult ce;
};

std::vector<PairedRun>& paired_runs() {
  static std::vector<PairedRun> runs = [] {
    std::vector<PairedRun> out;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto cfg = blobs_config(30, seed);
      const auto bench = cli::generate_benchmark(cfg);
      PairedRun r;
      r.seed = seed;
      r.n = bench.train.size();
      r.test_n = bench.test.size();
      r.edm = run(bench.train, bench.test, cfg.train);
      r.ce = run_baseline_ce(bench.train, bench.test, blobs_config(30, seed, "ce").train);
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

Outcome end_to_end_trend() {
  Outcome o;
  std::ostringstream d;
  for (const auto& r : paired_runs()) {
    const double e_last = r.edm.reports.back().test_accuracy;
    const double c_last = r.ce.reports.back().test_accuracy;
    double e_best = 0.0, c_best = 0.0;
    for (const auto& rep : r.edm.reports) e_best = std::max(e_best, rep.test_accuracy);
    for (const auto& rep : r.ce.reports) c_best = std::max(c_best, rep.test_accuracy);
    const double e_gap = e_best - e_last, c_gap = c_best - c_last;
    // Accuracies are multiples of 1/|test|; compare in sample counts so
    // equal gaps compare equal.
    const auto hits = [&](double acc) { return std::llround(acc * static_cast<double>(r.test_n)); };
    const std::string at = " seed " + std::to_string(r.seed);
    o.require(hits(e_last) > hits(c_last),
              fmt("EDM last %.4f <= CE last %.4f", e_last, c_last) + at);
    o.require(hits(e_best) - hits(e_last) <= hits(c_best) - hits(c_last),
              fmt("EDM gap %.4f > CE gap %.4f", e_gap, c_gap) + at);
    d << (d.tellp() > 0 ? "; " : "") << "s" << r.seed
      << fmt(" last %.3f/%.3f", e_last, c_last) << fmt(" gap %.3f/%.3f", e_gap, c_gap);
  }
  if (o.pass) o.detail = "EDM/CE " + d.str();
  return o;
}

double balanced_from_counts(const SplitConfusion& c) {
  double sum = 0.0;
  int groups = 0;
  for (std::size_t row = 0; row < 3; ++row) {
    const std::size_t total = c.counts[row][0] + c.counts[row][1] + c.counts[row][2];
    if (total == 0) continue;
    sum += static_cast<double>(c.counts[row][row]) / static_cast<double>(total);
    ++groups;
  }
  return sum / groups;
}

Outcome split_trend() {
  Outcome o;
  std::ostringstream d;
  for (const auto& r : paired_runs()) {
    const double first = balanced_from_counts(r.edm.reports.at(0).confusion);
    const double tenth = balanced_from_counts(r.edm.reports.at(9).confusion);
    o.require(tenth >= first,
              fmt("epoch 10 %.4f < epoch 1 %.4f", tenth, first) + " seed " + std::to_string(r.seed));
    d << (d.tellp() > 0 ? "; " : "") << "s" << r.seed << fmt(" %.3f -> %.3f", first, tenth);
  }
  if (o.pass) o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------- AC9

Outcome determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "edm_acceptance_determinism";
  fs::remove_all(root);
  for (const char* sub : {"a", "b"}) {
    auto cfg = blobs_config(5, 11);
    cfg.paths.out_dir = (root / sub).string();
    // Keep the run's JSON log lines out of the criterion report.
    std::ostringstream sink;
    auto* saved = std::cout.rdbuf(sink.rdbuf());
    const int code = cli::run_experiment(cfg);
    std::cout.rdbuf(saved);
    o.require(code == cli::kExitOk, std::string("run ") + sub + " failed");
  }
  int compared = 0;
  for (const char* f : {"epochs.jsonl", "netd_best.ckpt", "netd_last.ckpt", "nets_last.ckpt"}) {
    const auto pa = root / "a" / f, pb = root / "b" / f;
    if (!fs::exists(pa) || !fs::exists(pb)) {
      o.require(false, std::string(f) + " missing");
      continue;
    }
    o.require(bin::read_file(pa.string()) == bin::read_file(pb.string()),
              std::string(f) + " differs");
    ++compared;
  }
  fs::remove_all(root);
  if (o.pass) o.detail = std::to_string(compared) + " artifacts byte-identical";
  return o;
}

// ---------------------------------------------------------------- AC10

Outcome structure_audits() {
  Outcome o;
  // Reported audits of the full runs.
  std::size_t epochs = 0;
  for (const auto& r : paired_runs())
    for (const auto& rep : r.edm.reports) {
      ++epochs;
      const std::string at = fmt(" (seed %.0f epoch %.0f)", r.seed, rep.epoch);
      o.require(rep.clean_set + rep.closed_set + rep.open_set == r.n, "|X|+|U|+|O| != N" + at);
      o.require(rep.confusion.total() == r.n, "confusion total != N" + at);
      o.require(rep.open_in_netd == 0, "open sample in a NetD step" + at);
      o.require(rep.max_posterior_deviation <= kPosteriorSumTol, "posterior sum" + at);
    }

  // Independent loop: split, partition and NetD epoch, checking the touched
  // indices against O and the posterior sums directly.
  const auto cfg = blobs_config(0, 4);
  const auto bench = cli::generate_benchmark(cfg);
  const auto data = TrainingData::from(bench.train);
  auto nets = make_networks(cfg.gen.dim, cfg.gen.classes, cfg.train);
  warmup(nets, data, cfg.train);
  Rng rng(derive_seed(4, 0xA10));
  for (int e = 0; e < 3; ++e) {
    const auto st = compute_split(nets.nets, data, cfg.train.gmm);
    for (const auto& g : st.split)
      o.require(std::abs(g.clean + g.open + g.closed - 1.0) <= kPosteriorSumTol,
                "posterior triple off unity");
    std::vector<int> bucket(data.size(), 0);  // 1 = X, 2 = U, 3 = O
    std::vector<std::size_t> x, u;
    std::vector<double> w;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& g = st.split[i];
      if (g.clean > g.open && g.clean > g.closed) {
        bucket[i] = 1;
        x.push_back(i);
        w.push_back(g.clean);
      } else if (g.closed > g.clean && g.closed > g.open) {
        bucket[i] = 2;
        u.push_back(i);
      } else {
        bucket[i] = 3;
      }
    }
    const auto p = partition(st.split);
    o.require(p.clean == x && p.closed == u &&
                  p.clean.size() + p.closed.size() + p.open.size() == data.size(),
              "partition disagrees with the strict-max rule");
    const auto stats = train_netd_epoch(nets.netd, nets.opt_d, data, x, w, u, cfg.train, rng);
    for (auto i : stats.touched) o.require(bucket[i] != 3, "predicted-open sample touched");
    const auto labels = relabel_for_nets(nets.netd, data, st.split);
    train_nets_epoch(nets.nets, nets.opt_s, data.features, labels, cfg.train, rng);
  }
  if (o.pass) o.detail = std::to_string(epochs) + " reported epochs + 3 audited epochs clean";
  return o;
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*fn)();
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc == 3 && std::string(argv[1]) == "--only") only = std::stoi(argv[2]);

  const Criterion criteria[] = {
      {1, "loss unit correctness", loss_units},
      {2, "gradient fidelity", gradient_fidelity},
      {3, "EM properties", em_properties},
      {4, "three-way split oracle", three_way_split},
      {5, "noise-injection exactness", noise_injection},
      {6, "warm-up loss ordering", warmup_ordering},
      {7, "end-to-end trend vs CE baseline", end_to_end_trend},
      {8, "split-quality trend", split_trend},
      {9, "determinism", determinism},
      {10, "algorithm-structure audits", structure_audits},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out.pass) ++failed;
    std::printf("[%s] AC%d %s: %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", c.id, c.name,
                out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
