#include "edm/edm_train.hpp"

#include <algorithm>
#include <cmath>

namespace edm {

namespace {

constexpr std::uint64_t kStreamWarmD = 0x7761726d64ULL;
constexpr std::uint64_t kStreamWarmS = 0x7761726d73ULL;
constexpr std::uint64_t kStreamNetD = 0x6e657464ULL;
constexpr std::uint64_t kStreamNetS = 0x6e657473ULL;
constexpr std::uint64_t kStreamBaseline = 0x62617365ULL;

// B indices from `pool`: without replacement when the pool is large enough,
// with replacement otherwise.
std::vector<std::size_t> sample_indices(std::span<const std::size_t> pool,
                                        std::size_t b, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(b);
  if (pool.empty()) return out;
  if (pool.size() >= b) {
    std::vector<std::size_t> tmp(pool.begin(), pool.end());
    for (std::size_t i = 0; i < b; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(tmp.size() - i));
      std::swap(tmp[i], tmp[j]);
      out.push_back(tmp[i]);
    }
  } else {
    for (std::size_t i = 0; i < b; ++i)
      out.push_back(pool[static_cast<std::size_t>(rng.below(pool.size()))]);
  }
  return out;
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = src.row(idx[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

Matrix one_hot_rows(std::span<const int> labels, std::span<const std::size_t> idx,
                    int num_classes) {
  Matrix out(idx.size(), static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out(i, static_cast<std::size_t>(labels[idx[i]])) = 1.0;
  return out;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + what + " loss");
}

// Mean softmax over `m` augmented copies of `x`; returns the M augmented
// batches alongside.
Matrix averaged_probs(const ModelParams& model, const Matrix& x, int m,
                      const AugmentSpec& aug, Rng& rng,
                      std::vector<Matrix>& augmented) {
  Matrix mean(x.rows(), static_cast<std::size_t>(model.arch.output_dim()));
  augmented.clear();
  for (int k = 0; k < m; ++k) {
    augmented.push_back(augment(x, aug, rng));
    const Matrix p = softmax_probs(forward_logits(model, augmented.back()));
    for (std::size_t i = 0; i < p.values().size(); ++i)
      mean.values()[i] += p.values()[i] / m;
  }
  return mean;
}

void ce_epoch(ModelParams& model, OptimState& opt, const TrainingData& data,
              int batch_size, Rng& rng) {
  auto order = iota_indices(data.size());
  rng.shuffle(order);
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += b) {
    const std::span<const std::size_t> idx(
        order.data() + start, std::min(b, order.size() - start));
    const Matrix x = gather_rows(data.features, idx);
    const Matrix y = one_hot_rows(data.labels, idx, data.num_classes);
    const ForwardCache cache = forward(model, x);
    const LossNode node = ce_batch(cache.logits(), y);
    check_finite(node.value, "cross-entropy");
    sgd_step(model, backward(model, cache, node), opt);
  }
}

double max_posterior_deviation(const PosteriorSplit& split) {
  double dev = 0.0;
  for (const auto& g : split)
    dev = std::max(dev, std::abs(g.clean + g.open + g.closed - 1.0));
  return dev;
}

}  // namespace

void TrainConfig::validate() const {
  if (augmentations < 1) throw TrainError("M (augmentations) must be >= 1");
  if (!(temperature > 0.0)) throw TrainError("temperature T must be > 0");
  if (!(mix_alpha > 0.0)) throw TrainError("mix alpha must be > 0");
  if (epochs < 0) throw TrainError("epochs must be >= 0");
  if (batch_size < 1) throw TrainError("batch size must be >= 1");
  if (!(learning_rate >= 0.0)) throw TrainError("learning rate must be >= 0");
  if (!(momentum >= 0.0)) throw TrainError("momentum must be >= 0");
  if (!(weight_decay >= 0.0)) throw TrainError("weight decay must be >= 0");
  if (!(lr_drop_factor >= 0.0)) throw TrainError("lr drop factor must be >= 0");
  if (warmup_epochs_netd < 0 || warmup_epochs_nets < 0)
    throw TrainError("warm-up epochs must be >= 0");
  if (!(loss_weights.lambda_u >= 0.0) || !(loss_weights.lambda_reg >= 0.0))
    throw TrainError("loss weights must be >= 0");
  if (!(augment.jitter_sigma >= 0.0)) throw TrainError("jitter sigma must be >= 0");
  for (int w : hidden_widths)
    if (w < 1) throw TrainError("hidden widths must be >= 1");
  try {
    gmm.validate();
  } catch (const GmmError& e) {
    throw TrainError(e.what());
  }
  if (gmm.num_components < 3)
    throw TrainError("the three-way split needs psi >= 3 components");
}

int TrainConfig::effective_drop_epoch() const {
  return lr_drop_epoch >= 0 ? lr_drop_epoch : epochs / 2;
}

double TrainConfig::learning_rate_at(int epoch) const {
  return epoch >= effective_drop_epoch() ? learning_rate * lr_drop_factor
                                         : learning_rate;
}

Networks make_networks(int feature_dim, int num_classes, const TrainConfig& cfg) {
  Architecture arch;
  arch.widths.push_back(feature_dim);
  for (int w : cfg.hidden_widths) arch.widths.push_back(w);
  arch.widths.push_back(num_classes);
  Networks n;
  n.netd = init_model(arch, NetRole::kNetD, cfg.seed);
  n.nets = init_model(arch, NetRole::kNetS, cfg.seed);
  n.opt_d = make_optim_state(n.netd, cfg.learning_rate, cfg.momentum,
                             cfg.weight_decay);
  n.opt_s = make_optim_state(n.nets, cfg.learning_rate, cfg.momentum,
                             cfg.weight_decay);
  return n;
}

TrainingData TrainingData::from(const DatasetManifest& m) {
  TrainingData d;
  d.features = features_of(m);
  d.num_classes = m.num_classes;
  d.labels.reserve(m.size());
  for (const auto& s : m.samples) d.labels.push_back(s.observed_class);
  return d;
}

void warmup(Networks& nets, const TrainingData& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw TrainError("warm-up on an empty dataset");
  for (int e = 0; e < cfg.warmup_epochs_netd; ++e) {
    Rng rng(derive_seed(cfg.seed, kStreamWarmD, static_cast<std::uint64_t>(e)));
    ce_epoch(nets.netd, nets.opt_d, data, cfg.batch_size, rng);
  }
  for (int e = 0; e < cfg.warmup_epochs_nets; ++e) {
    Rng rng(derive_seed(cfg.seed, kStreamWarmS, static_cast<std::uint64_t>(e)));
    train_nets_epoch(nets.nets, nets.opt_s, data.features, data.labels, cfg, rng);
  }
}

std::vector<double> co_refine(std::span<const double> y, double clean_weight,
                              std::span<const double> p, double temperature) {
  if (!(clean_weight >= 0.0 && clean_weight <= 1.0))
    throw TrainError("co_refine: clean weight outside [0,1]");
  if (y.size() != p.size()) throw TrainError("co_refine: length mismatch");
  std::vector<double> blend(y.size());
  for (std::size_t c = 0; c < y.size(); ++c)
    blend[c] = clean_weight * y[c] + (1.0 - clean_weight) * p[c];
  if (temperature == 1.0) return blend;
  return temp_sharpen(blend, temperature);
}

std::vector<double> guess_unlabeled(const ModelParams& model,
                                    std::span<const double> sample, int m,
                                    double temperature,
                                    const AugmentSpec& augment_spec, Rng& rng) {
  if (m < 1) throw TrainError("guess_unlabeled: M must be >= 1");
  Matrix x(1, sample.size());
  std::copy(sample.begin(), sample.end(), x.row(0).begin());
  std::vector<Matrix> augmented;
  const Matrix mean = averaged_probs(model, x, m, augment_spec, rng, augmented);
  return temp_sharpen(mean.row(0), temperature);
}

MixOutput mix_pair(const MixInput& a, const MixInput& b, double l) {
  if (a.input.size() != b.input.size() || a.target.size() != b.target.size())
    throw TrainError("mix_pair: operand shapes differ");
  const double lam = std::max(l, 1.0 - l);
  MixOutput out;
  out.lambda = lam;
  out.input.resize(a.input.size());
  out.target.resize(a.target.size());
  for (std::size_t i = 0; i < a.input.size(); ++i)
    out.input[i] = lam * a.input[i] + (1.0 - lam) * b.input[i];
  for (std::size_t i = 0; i < a.target.size(); ++i)
    out.target[i] = lam * a.target[i] + (1.0 - lam) * b.target[i];
  return out;
}

MixOutput mixmatch_pair(const MixInput& a, const MixInput& b, double mix_alpha,
                        Rng& rng) {
  return mix_pair(a, b, rng.beta(mix_alpha, mix_alpha));
}

NetdEpochStats train_netd_epoch(ModelParams& netd, OptimState& opt,
                                const TrainingData& data,
                                std::span<const std::size_t> clean_set,
                                std::span<const double> clean_weights,
                                std::span<const std::size_t> closed_set,
                                const TrainConfig& cfg, Rng& rng) {
  if (clean_weights.size() != clean_set.size())
    throw TrainError("train_netd_epoch: one clean weight per X sample required");
  NetdEpochStats stats;
  if (clean_set.empty()) return stats;

  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const auto k = static_cast<std::size_t>(data.num_classes);
  const auto d = data.features.cols();
  const int m = cfg.augmentations;
  const std::size_t iters = (clean_set.size() + b - 1) / b;

  // Position of each X member, to look up its clean posterior.
  std::vector<std::size_t> positions(clean_set.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;

  std::vector<bool> touched(data.size(), false);
  std::vector<Matrix> aug_x;
  std::vector<Matrix> aug_u;
  for (std::size_t it = 0; it < iters; ++it) {
    const auto picks = sample_indices(positions, b, rng);
    std::vector<std::size_t> lab(picks.size());
    for (std::size_t i = 0; i < picks.size(); ++i) lab[i] = clean_set[picks[i]];
    const auto unl = sample_indices(closed_set, b, rng);
    for (auto i : lab) touched[i] = true;
    for (auto i : unl) touched[i] = true;

    // Co-refined labels for X, sharpened guesses for U.
    const Matrix xb = gather_rows(data.features, lab);
    const Matrix px = averaged_probs(netd, xb, m, cfg.augment, rng, aug_x);
    std::vector<std::vector<double>> y_hat(lab.size());
    for (std::size_t i = 0; i < lab.size(); ++i) {
      std::vector<double> y(k, 0.0);
      y[static_cast<std::size_t>(data.labels[lab[i]])] = 1.0;
      y_hat[i] = co_refine(y, clean_weights[picks[i]], px.row(i), cfg.temperature);
    }
    std::vector<std::vector<double>> q_hat(unl.size());
    if (!unl.empty()) {
      const Matrix ub = gather_rows(data.features, unl);
      const Matrix pu = averaged_probs(netd, ub, m, cfg.augment, rng, aug_u);
      for (std::size_t i = 0; i < unl.size(); ++i)
        q_hat[i] = temp_sharpen(pu.row(i), cfg.temperature);
    } else {
      aug_u.clear();
    }

    // X-hat and U-hat: every augmented copy paired with its sample's target.
    std::vector<MixInput> pool;
    pool.reserve(static_cast<std::size_t>(m) * (lab.size() + unl.size()));
    auto append = [&](const std::vector<Matrix>& aug,
                      const std::vector<std::vector<double>>& targets) {
      for (const Matrix& a : aug)
        for (std::size_t i = 0; i < a.rows(); ++i)
          pool.push_back(MixInput{{a.row(i).begin(), a.row(i).end()}, targets[i]});
    };
    append(aug_x, y_hat);
    const std::size_t n_x = pool.size();
    append(aug_u, q_hat);

    auto partner = iota_indices(pool.size());
    rng.shuffle(partner);
    Matrix inputs(pool.size(), d);
    Matrix targets(pool.size(), k);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const MixOutput mixed =
          mixmatch_pair(pool[i], pool[partner[i]], cfg.mix_alpha, rng);
      stats.min_mix_lambda = std::min(stats.min_mix_lambda, mixed.lambda);
      std::copy(mixed.input.begin(), mixed.input.end(), inputs.row(i).begin());
      std::copy(mixed.target.begin(), mixed.target.end(), targets.row(i).begin());
    }

    const ForwardCache cache = forward(netd, inputs);
    const DmLossNode loss = dm_batch(cache.logits(), targets, n_x, cfg.loss_weights);
    if (!std::isfinite(loss.node.value))
      throw NumericError("non-finite DM loss at NetD iteration " +
                         std::to_string(it + 1));
    sgd_step(netd, backward(netd, cache, loss.node), opt);

    stats.mean_labeled += loss.labeled;
    stats.mean_unlabeled += loss.unlabeled;
    stats.mean_reg += loss.reg;
    stats.mean_total += loss.node.value;
    ++stats.iterations;
  }
  const auto n = static_cast<double>(stats.iterations);
  stats.mean_labeled /= n;
  stats.mean_unlabeled /= n;
  stats.mean_reg /= n;
  stats.mean_total /= n;
  for (std::size_t i = 0; i < touched.size(); ++i)
    if (touched[i]) stats.touched.push_back(i);
  return stats;
}

std::vector<int> relabel_for_nets(const ModelParams& netd,
                                  const TrainingData& data,
                                  const PosteriorSplit& split) {
  if (split.size() != data.size())
    throw TrainError("relabel_for_nets: split not aligned with dataset");
  const Matrix probs = softmax_probs(forward_logits(netd, data.features));
  std::vector<int> out(data.size());
  std::vector<double> score(probs.cols());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double w = split[i].closed;
    for (std::size_t c = 0; c < score.size(); ++c) {
      const double y = static_cast<int>(c) == data.labels[i] ? 1.0 : 0.0;
      score[c] = w * probs(i, c) + (1.0 - w) * y;
    }
    out[i] = static_cast<int>(argmax(score));
  }
  return out;
}

double train_nets_epoch(ModelParams& nets, OptimState& opt,
                        const Matrix& features, std::span<const int> labels,
                        const TrainConfig& cfg, Rng& rng) {
  if (labels.size() != features.rows())
    throw TrainError("train_nets_epoch: label count mismatch");
  if (labels.empty()) return 0.0;
  auto order = iota_indices(labels.size());
  rng.shuffle(order);
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const int k = nets.arch.output_dim();
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += b) {
    const std::span<const std::size_t> idx(order.data() + start,
                                           std::min(b, order.size() - start));
    const Matrix x = gather_rows(features, idx);
    const Matrix y = one_hot_rows(labels, idx, k);
    const ForwardCache cache = forward(nets, x);
    const LossNode node = sl_batch(cache.logits(), y);
    check_finite(node.value, "subjective-logic");
    sgd_step(nets, backward(nets, cache, node), opt);
    total += node.value;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

SplitState compute_split(const ModelParams& nets, const TrainingData& data,
                         const GmmConfig& gmm) {
  SplitState s;
  s.raw_losses = sl_dataset_loss(nets, data.features, data.labels).per_sample;
  s.normalized = normalize_losses(s.raw_losses);
  s.gmm = fit_em(s.normalized, gmm);
  s.split = group_posteriors(s.gmm, s.normalized, gmm);
  return s;
}

RunResult run(const DatasetManifest& train, const DatasetManifest& test,
              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.samples.empty()) throw TrainError("empty training manifest");
  if (test.feature_dim != train.feature_dim ||
      test.num_classes != train.num_classes)
    throw TrainError("test manifest shape differs from training manifest");
  const TrainingData data = TrainingData::from(train);

  RunResult result;
  Networks nets = make_networks(train.feature_dim, train.num_classes, cfg);
  warmup(nets, data, cfg);
  result.best_netd = nets.netd;

  std::vector<double> accs;
  double best = -1.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.learning_rate_at(e);
    nets.opt_d.learning_rate = lr;
    nets.opt_s.learning_rate = lr;

    EpochReport rep;
    rep.epoch = e + 1;
    rep.learning_rate = lr;

    SplitState st = compute_split(nets.nets, data, cfg.gmm);
    rep.mean_sl = 0.0;
    for (double v : st.raw_losses) rep.mean_sl += v;
    rep.mean_sl /= static_cast<double>(st.raw_losses.size());
    rep.max_posterior_deviation = max_posterior_deviation(st.split);
    const Partition part = partition(st.split);
    rep.clean_set = part.clean.size();
    rep.closed_set = part.closed.size();
    rep.open_set = part.open.size();
    rep.confusion = split_confusion(st.split, train);
    rep.split_balanced_accuracy = rep.confusion.balanced_accuracy();

    std::vector<double> w(part.clean.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = st.split[part.clean[i]].clean;

    Rng rng_d(derive_seed(cfg.seed, kStreamNetD, static_cast<std::uint64_t>(e)));
    if (part.clean.empty()) {
      rep.netd_skipped = true;  // the caller logs this
    } else {
      const NetdEpochStats ds = train_netd_epoch(nets.netd, nets.opt_d, data,
                                                 part.clean, w, part.closed, cfg,
                                                 rng_d);
      rep.netd_iterations = ds.iterations;
      rep.mean_labeled = ds.mean_labeled;
      rep.mean_unlabeled = ds.mean_unlabeled;
      rep.mean_reg = ds.mean_reg;
      std::size_t o = 0;
      for (std::size_t idx : ds.touched)
        if (std::binary_search(part.open.begin(), part.open.end(), idx)) ++o;
      rep.open_in_netd = o;
    }

    const std::vector<int> relabeled = relabel_for_nets(nets.netd, data, st.split);
    Rng rng_s(derive_seed(cfg.seed, kStreamNetS, static_cast<std::uint64_t>(e)));
    train_nets_epoch(nets.nets, nets.opt_s, data.features, relabeled, cfg, rng_s);

    rep.test_accuracy = test_accuracy(nets.netd, test);
    if (rep.test_accuracy > best) {
      best = rep.test_accuracy;
      result.best_netd = nets.netd;
    }
    accs.push_back(rep.test_accuracy);
    if (on_epoch) on_epoch(rep);
    result.reports.push_back(rep);
    result.last_normalized_losses = std::move(st.normalized);
    result.last_split = std::move(st.split);
  }
  result.accuracy = AccuracyReport::from(std::move(accs));
  result.final_networks = std::move(nets);
  return result;
}

RunResult run_baseline_ce(const DatasetManifest& train,
                          const DatasetManifest& test, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.samples.empty()) throw TrainError("empty training manifest");
  if (test.feature_dim != train.feature_dim ||
      test.num_classes != train.num_classes)
    throw TrainError("test manifest shape differs from training manifest");
  const TrainingData data = TrainingData::from(train);

  RunResult result;
  Networks nets = make_networks(train.feature_dim, train.num_classes, cfg);
  for (int e = 0; e < cfg.warmup_epochs_netd; ++e) {
    Rng rng(derive_seed(cfg.seed, kStreamWarmD, static_cast<std::uint64_t>(e)));
    ce_epoch(nets.netd, nets.opt_d, data, cfg.batch_size, rng);
  }
  result.best_netd = nets.netd;

  std::vector<double> accs;
  double best = -1.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochReport rep;
    rep.epoch = e + 1;
    rep.learning_rate = cfg.learning_rate_at(e);
    nets.opt_d.learning_rate = rep.learning_rate;
    Rng rng(derive_seed(cfg.seed, kStreamBaseline, static_cast<std::uint64_t>(e)));
    ce_epoch(nets.netd, nets.opt_d, data, cfg.batch_size, rng);
    rep.clean_set = data.size();
    rep.netd_iterations = (data.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                          static_cast<std::size_t>(cfg.batch_size);
    rep.test_accuracy = test_accuracy(nets.netd, test);
    if (rep.test_accuracy > best) {
      best = rep.test_accuracy;
      result.best_netd = nets.netd;
    }
    accs.push_back(rep.test_accuracy);
    if (on_epoch) on_epoch(rep);
    result.reports.push_back(rep);
  }
  result.accuracy = AccuracyReport::from(std::move(accs));
  result.final_networks = std::move(nets);
  return result;
}

}  // namespace edm
