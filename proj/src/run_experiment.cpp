#include "edm/run_experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "edm/binary_io.hpp"
#include "edm/checkpoint.hpp"
#include "edm/eval_harness.hpp"
#include "edm/manifest_io.hpp"

namespace edm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

std::string file_digest(const std::string& path) {
  return "fnv1a64:" + hex64(bin::fnv1a64(bin::read_file(path)));
}

json log_line(const std::string& event) {
  return json{{"schema", kLogSchemaVersion}, {"event", event}};
}

void emit(std::ostream& os, const json& j) {
  os << j.dump() << '\n';
  os.flush();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json epoch_json(const EpochReport& r, Algo algo) {
  json conf = json::array();
  for (const auto& row : r.confusion.counts) conf.push_back(row);
  json j = log_line("epoch");
  j["algo"] = algo == Algo::kEdm ? "edm" : "ce";
  j["epoch"] = r.epoch;
  j["learning_rate"] = r.learning_rate;
  j["set_sizes"] = {{"clean", r.clean_set}, {"closed", r.closed_set}, {"open", r.open_set}};
  j["mean_losses"] = {{"sl", r.mean_sl},
                      {"labeled", r.mean_labeled},
                      {"unlabeled", r.mean_unlabeled},
                      {"reg", r.mean_reg}};
  j["test_accuracy"] = r.test_accuracy;
  j["split_confusion"] = conf;
  j["split_balanced_accuracy"] = number_or_null(r.split_balanced_accuracy);
  j["netd_iterations"] = r.netd_iterations;
  j["netd_skipped"] = r.netd_skipped;
  j["audit"] = {{"open_in_netd", r.open_in_netd},
                {"max_posterior_deviation", r.max_posterior_deviation}};
  return j;
}

// Tracks artifacts and writes the run manifest.
class RunRecord {
 public:
  RunRecord(const ResolvedConfig& cfg, fs::path dir)
      : cfg_(cfg), dir_(std::move(dir)), started_(utc_now()) {}

  std::string path(const std::string& name) {
    artifacts_.push_back(name);
    return (dir_ / name).string();
  }
  void input(const std::string& role, const std::string& file) {
    inputs_[role] = {{"path", file}, {"digest", file_digest(file)}};
  }
  void result(const std::string& key, json value) { results_[key] = std::move(value); }

  void finish(const std::string& status) {
    const std::string manifest_path = path("run_manifest.json");
    json j = {
        {"schema", kLogSchemaVersion},
        {"artifact_version", kArtifactVersion},
        {"command", cfg_.command},
        {"config", cfg_.settings},
        {"inputs", inputs_},
        {"artifacts", artifacts_},
        {"results", results_},
        {"started", started_},
        {"finished", utc_now()},
        {"status", status},
    };
    bin::write_file(manifest_path, j.dump(2) + "\n");
  }

 private:
  const ResolvedConfig& cfg_;
  fs::path dir_;
  std::string started_;
  json inputs_ = json::object();
  json results_ = json::object();
  std::vector<std::string> artifacts_;
};

DatasetManifest load_input_manifest(const std::string& flag, const std::string& path,
                                    std::optional<int> expected_dim = {}) {
  if (path.empty()) throw ConfigError("--" + flag + " is required");
  return load_manifest(path, expected_dim);
}

ModelParams load_input_checkpoint(const std::string& path) {
  return load_checkpoint(path);
}

void check_pair(const DatasetManifest& train, const DatasetManifest& test) {
  if (train.num_classes != test.num_classes)
    throw DataError("test manifest has " + std::to_string(test.num_classes) +
                    " classes, training manifest " +
                    std::to_string(train.num_classes));
  for (const auto& s : test.samples)
    if (s.provenance != Provenance::kClean)
      throw DataError("test manifest must contain only clean samples");
  if (test.samples.empty()) throw DataError("test manifest is empty");
}

}  // namespace

Benchmark generate_benchmark(const ResolvedConfig& cfg) {
  const auto& g = cfg.gen;
  const std::uint64_t seed = cfg.noise.seed;
  Benchmark out;
  const DatasetManifest clean =
      make_synthetic_clean(g.classes, g.per_class, g.dim, g.spread, derive_seed(seed, 1));
  const std::size_t n = clean.size();
  const NoiseCounts counts = noise_counts(cfg.noise.rho, cfg.noise.omega, n);
  std::vector<std::vector<float>> pool;
  if (counts.open > 0) {
    if (g.pool_clusters < 1)
      throw ConfigError("--pool-clusters must be >= 1 when open-set noise is requested");
    const auto per = static_cast<int>((counts.open + static_cast<std::size_t>(g.pool_clusters) - 1) /
                                      static_cast<std::size_t>(g.pool_clusters));
    pool = make_open_pool(g.pool_clusters, per, g.dim, g.spread, g.pool_offset,
                          derive_seed(seed, 3));
  }
  out.train = inject_noise(clean, pool, cfg.noise);
  if (g.test_per_class > 0) {
    out.test = make_synthetic_clean(g.classes, g.test_per_class, g.dim, g.spread,
                                    derive_seed(seed, 2));
    out.test.noise_spec.seed = seed;
  }
  return out;
}

namespace {

int cmd_gen(const ResolvedConfig& cfg) {
  if (cfg.paths.out.empty()) throw ConfigError("--out is required");
  const Benchmark g = generate_benchmark(cfg);
  save_manifest(g.train, cfg.paths.out);
  json j = log_line("gen");
  j["out"] = cfg.paths.out;
  j["counts"] = {{"clean", g.train.counts.clean},
                 {"closed", g.train.counts.closed},
                 {"open", g.train.counts.open}};
  if (!cfg.paths.test_out.empty()) {
    if (g.test.samples.empty())
      throw ConfigError("--test-out given but --test-per-class is 0");
    save_manifest(g.test, cfg.paths.test_out);
    j["test_out"] = cfg.paths.test_out;
  }
  emit(std::cout, j);
  return kExitOk;
}

struct TrainOutcome {
  RunResult result;
};

TrainOutcome train_into(const ResolvedConfig& cfg, const DatasetManifest& train,
                        const DatasetManifest& test, RunRecord& rec) {
  std::ofstream log(rec.path("epochs.jsonl"), std::ios::trunc);
  if (!log) throw bin::IoError("cannot write epoch log in " + cfg.paths.out_dir);
  const EpochCallback on_epoch = [&](const EpochReport& r) {
    const json j = epoch_json(r, cfg.algo);
    emit(log, j);
    json brief = log_line("epoch");
    brief["epoch"] = r.epoch;
    brief["test_accuracy"] = r.test_accuracy;
    brief["set_sizes"] = j["set_sizes"];
    emit(std::cout, brief);
    if (r.netd_skipped) {
      json w = log_line("warning");
      w["epoch"] = r.epoch;
      w["message"] = "no sample predicted clean; NetD update skipped";
      emit(std::cerr, w);
    }
  };
  TrainOutcome out;
  out.result = cfg.algo == Algo::kEdm ? run(train, test, cfg.train, on_epoch)
                                      : run_baseline_ce(train, test, cfg.train, on_epoch);
  const auto& res = out.result;
  save_checkpoint(res.best_netd, rec.path("netd_best.ckpt"));
  save_checkpoint(res.final_networks.netd, rec.path("netd_last.ckpt"));
  if (cfg.algo == Algo::kEdm)
    save_checkpoint(res.final_networks.nets, rec.path("nets_last.ckpt"));
  rec.result("best_accuracy", res.accuracy.best);
  rec.result("last_accuracy", res.accuracy.last);
  rec.result("epochs_run", res.reports.size());
  return out;
}

json eval_into(const ResolvedConfig& cfg, const ModelParams& netd,
               const ModelParams* nets, const DatasetManifest& train,
               const DatasetManifest& test, RunRecord& rec) {
  json summary = log_line("eval");
  summary["test_accuracy"] = test_accuracy(netd, test);
  export_features(netd, train, rec.path("features.csv"));
  if (nets != nullptr) {
    const TrainingData data = TrainingData::from(train);
    const SplitState st = compute_split(*nets, data, cfg.train.gmm);
    std::vector<Provenance> prov;
    prov.reserve(train.size());
    for (const auto& s : train.samples) prov.push_back(s.provenance);
    export_loss_histogram(st.normalized, prov, cfg.histogram_bins,
                          rec.path("loss_histogram.csv"));
    bin::write_file(rec.path("split.csv"), split_dump_csv(st.normalized, st.split, train));
    const SplitConfusion conf = split_confusion(st.split, train);
    json rows = json::array();
    for (const auto& row : conf.counts) rows.push_back(row);
    summary["split_confusion"] = rows;
    summary["split_balanced_accuracy"] = number_or_null(conf.balanced_accuracy());
  }
  bin::write_file(rec.path("eval.json"), summary.dump(2) + "\n");
  return summary;
}

int cmd_train(const ResolvedConfig& cfg) {
  if (cfg.paths.out_dir.empty()) throw ConfigError("--out-dir is required");
  const DatasetManifest train = load_input_manifest("manifest", cfg.paths.manifest);
  const DatasetManifest test =
      load_input_manifest("test-manifest", cfg.paths.test_manifest, train.feature_dim);
  check_pair(train, test);
  fs::create_directories(cfg.paths.out_dir);
  RunRecord rec(cfg, cfg.paths.out_dir);
  rec.input("manifest", cfg.paths.manifest);
  rec.input("test_manifest", cfg.paths.test_manifest);
  const TrainOutcome t = train_into(cfg, train, test, rec);
  rec.finish("ok");
  json j = log_line("train_done");
  j["best_accuracy"] = t.result.accuracy.best;
  j["last_accuracy"] = t.result.accuracy.last;
  emit(std::cout, j);
  return kExitOk;
}

int cmd_eval(const ResolvedConfig& cfg) {
  if (cfg.paths.out_dir.empty()) throw ConfigError("--out-dir is required");
  if (cfg.paths.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const ModelParams netd = load_input_checkpoint(cfg.paths.checkpoint);
  std::optional<ModelParams> nets;
  if (!cfg.paths.nets_checkpoint.empty())
    nets = load_input_checkpoint(cfg.paths.nets_checkpoint);
  const DatasetManifest train =
      load_input_manifest("manifest", cfg.paths.manifest, netd.arch.input_dim());
  const DatasetManifest test =
      load_input_manifest("test-manifest", cfg.paths.test_manifest, netd.arch.input_dim());
  check_pair(train, test);
  if (netd.arch.output_dim() != train.num_classes)
    throw DataError("checkpoint output width does not match the class count");
  if (nets && (nets->arch.input_dim() != train.feature_dim ||
               nets->arch.output_dim() != train.num_classes))
    throw DataError("NetS checkpoint shape does not match the manifest");
  fs::create_directories(cfg.paths.out_dir);
  RunRecord rec(cfg, cfg.paths.out_dir);
  rec.input("checkpoint", cfg.paths.checkpoint);
  if (nets) rec.input("nets_checkpoint", cfg.paths.nets_checkpoint);
  rec.input("manifest", cfg.paths.manifest);
  rec.input("test_manifest", cfg.paths.test_manifest);
  json summary = eval_into(cfg, netd, nets ? &*nets : nullptr, train, test, rec);
  rec.result("test_accuracy", summary["test_accuracy"]);
  rec.finish("ok");
  emit(std::cout, summary);
  return kExitOk;
}

int cmd_run(const ResolvedConfig& cfg) {
  if (cfg.paths.out_dir.empty()) throw ConfigError("--out-dir is required");
  DatasetManifest train;
  DatasetManifest test;
  const bool generate_data = cfg.paths.manifest.empty();
  if (!generate_data) {
    train = load_input_manifest("manifest", cfg.paths.manifest);
    test = load_input_manifest("test-manifest", cfg.paths.test_manifest, train.feature_dim);
    check_pair(train, test);
  } else {
    if (cfg.gen.test_per_class < 1)
      throw ConfigError("--test-per-class must be >= 1 when run generates data");
    Benchmark g = generate_benchmark(cfg);
    train = std::move(g.train);
    test = std::move(g.test);
  }
  fs::create_directories(cfg.paths.out_dir);
  RunRecord rec(cfg, cfg.paths.out_dir);
  if (generate_data) {
    save_manifest(train, rec.path("train.manifest"));
    save_manifest(test, rec.path("test.manifest"));
  } else {
    rec.input("manifest", cfg.paths.manifest);
    rec.input("test_manifest", cfg.paths.test_manifest);
  }
  const TrainOutcome t = train_into(cfg, train, test, rec);
  const auto& nets = t.result.final_networks;
  json summary = eval_into(cfg, nets.netd, cfg.algo == Algo::kEdm ? &nets.nets : nullptr,
                           train, test, rec);
  rec.result("test_accuracy", summary["test_accuracy"]);
  rec.finish("ok");
  json j = log_line("run_done");
  j["best_accuracy"] = t.result.accuracy.best;
  j["last_accuracy"] = t.result.accuracy.last;
  emit(std::cout, j);
  return kExitOk;
}

int report_error(int code, const std::string& kind, const std::string& message) {
  json j = log_line("error");
  j["exit_code"] = code;
  j["kind"] = kind;
  j["message"] = message;
  emit(std::cerr, j);
  return code;
}

}  // namespace

int run_experiment(const ResolvedConfig& cfg) {
  try {
    if (cfg.command == "gen") return cmd_gen(cfg);
    if (cfg.command == "train") return cmd_train(cfg);
    if (cfg.command == "eval") return cmd_eval(cfg);
    if (cfg.command == "run") return cmd_run(cfg);
    throw ConfigError("unknown subcommand '" + cfg.command + "'");
  } catch (const ConfigError& e) {
    return report_error(kExitConfig, "config", e.what());
  } catch (const BenchgenError& e) {
    return report_error(kExitConfig, "config", e.what());
  } catch (const ManifestError& e) {
    return report_error(kExitData, "data", e.what());
  } catch (const CheckpointError& e) {
    return report_error(kExitData, "data", e.what());
  } catch (const DataError& e) {
    return report_error(kExitData, "data", e.what());
  } catch (const std::exception& e) {
    return report_error(kExitRuntime, "runtime", e.what());
  }
}

int main_entry(int argc, const char* const* argv) {
  ResolvedConfig cfg;
  try {
    cfg = parse_command_line(argc, argv);
  } catch (const HelpRequested& h) {
    std::cout << h.what();
    return kExitOk;
  } catch (const ConfigError& e) {
    return report_error(kExitConfig, "config", e.what());
  }
  return run_experiment(cfg);
}

}  // namespace edm::cli
