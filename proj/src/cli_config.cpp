#include "edm/cli_config.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace edm::cli {

namespace {

enum Cmd : unsigned { kGen = 1, kTrain = 2, kEval = 4, kRun = 8 };

unsigned command_bit(const std::string& command) {
  if (command == "gen") return kGen;
  if (command == "train") return kTrain;
  if (command == "eval") return kEval;
  if (command == "run") return kRun;
  throw ConfigError("unknown subcommand '" + command +
                    "' (expected gen, train, eval or run)");
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
  throw ConfigError("--" + key + ": value '" + value + "' " + why);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out))
    bad_value(key, v, "is not a finite number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    bad_value(key, v, "is not an integer");
  return out;
}

int int_at_least(const std::string& key, const std::string& v, long long lo) {
  const long long x = to_int(key, v);
  if (x < lo || x > 1'000'000'000)
    bad_value(key, v, "must be an integer >= " + std::to_string(lo));
  return static_cast<int>(x);
}

double in_unit_interval(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x < 0.0 || x > 1.0) bad_value(key, v, "outside [0,1]");
  return x;
}

double non_negative(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x < 0.0) bad_value(key, v, "must be >= 0");
  return x;
}

double positive(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (!(x > 0.0)) bad_value(key, v, "must be > 0");
  return x;
}

std::vector<int> parse_widths(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) bad_value(key, v, "has an empty width");
    out.push_back(int_at_least(key, tok, 1));
  }
  if (out.empty()) bad_value(key, v, "needs at least one hidden width");
  return out;
}

std::string join_widths(const std::vector<int>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(w[i]);
  }
  return s;
}

struct Setting {
  std::string key;
  std::string help;
  unsigned commands;
  std::function<std::string(const ResolvedConfig&)> current;
  std::function<void(ResolvedConfig&, const std::string&)> apply;
};

const std::vector<Setting>& settings_table() {
  constexpr unsigned kGenLike = kGen | kRun;
  constexpr unsigned kTrainLike = kTrain | kRun;
  constexpr unsigned kAll = kGen | kTrain | kEval | kRun;
  static const std::vector<Setting> table = {
      {"config", "flat key=value config file", kAll,
       [](const ResolvedConfig& c) { return c.paths.config_file; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.config_file = v; }},
      // ---- benchmark generation ----
      {"classes", "number of classes", kGenLike,
       [](const ResolvedConfig& c) { return std::to_string(c.gen.classes); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.classes = int_at_least("classes", v, 2); }},
      {"per-class", "training samples per class", kGenLike,
       [](const ResolvedConfig& c) { return std::to_string(c.gen.per_class); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.per_class = int_at_least("per-class", v, 1); }},
      {"test-per-class", "clean test samples per class (0 = none)", kGenLike,
       [](const ResolvedConfig& c) { return std::to_string(c.gen.test_per_class); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.test_per_class = int_at_least("test-per-class", v, 0); }},
      {"dim", "feature dimension", kGenLike,
       [](const ResolvedConfig& c) { return std::to_string(c.gen.dim); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.dim = int_at_least("dim", v, 2); }},
      {"spread", "cluster standard deviation", kGenLike,
       [](const ResolvedConfig& c) { return fmt_double(c.gen.spread); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.spread = positive("spread", v); }},
      {"rho", "total noise rate", kGenLike,
       [](const ResolvedConfig& c) { return fmt_double(c.noise.rho); },
       [](ResolvedConfig& c, const std::string& v) { c.noise.rho = in_unit_interval("rho", v); }},
      {"omega", "closed-set share of the noise", kGenLike,
       [](const ResolvedConfig& c) { return fmt_double(c.noise.omega); },
       [](ResolvedConfig& c, const std::string& v) { c.noise.omega = in_unit_interval("omega", v); }},
      {"pool-clusters", "out-of-distribution pool clusters", kGenLike,
       [](const ResolvedConfig& c) { return std::to_string(c.gen.pool_clusters); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.pool_clusters = int_at_least("pool-clusters", v, 0); }},
      {"pool-offset", "pool distance from the clean centers", kGenLike,
       [](const ResolvedConfig& c) { return fmt_double(c.gen.pool_offset); },
       [](ResolvedConfig& c, const std::string& v) { c.gen.pool_offset = positive("pool-offset", v); }},
      {"out", "training manifest output path", kGen,
       [](const ResolvedConfig& c) { return c.paths.out; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.out = v; }},
      {"test-out", "test manifest output path", kGen,
       [](const ResolvedConfig& c) { return c.paths.test_out; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.test_out = v; }},
      {"seed", "master seed (EDM_SEED overrides)", kAll,
       [](const ResolvedConfig& c) { return std::to_string(c.train.seed); },
       [](ResolvedConfig& c, const std::string& v) {
         const long long s = to_int("seed", v);
         if (s < 0) bad_value("seed", v, "must be >= 0");
         c.train.seed = static_cast<std::uint64_t>(s);
         c.noise.seed = c.train.seed;
       }},
      // ---- training ----
      {"manifest", "training manifest path", kTrain | kEval | kRun,
       [](const ResolvedConfig& c) { return c.paths.manifest; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.manifest = v; }},
      {"test-manifest", "clean test manifest path", kTrain | kEval | kRun,
       [](const ResolvedConfig& c) { return c.paths.test_manifest; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.test_manifest = v; }},
      {"out-dir", "artifact directory", kTrain | kEval | kRun,
       [](const ResolvedConfig& c) { return c.paths.out_dir; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.out_dir = v; }},
      {"epochs", "main-loop epochs E", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.epochs); },
       [](ResolvedConfig& c, const std::string& v) { c.train.epochs = int_at_least("epochs", v, 0); }},
      {"batch", "mini-batch size B", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.batch_size); },
       [](ResolvedConfig& c, const std::string& v) { c.train.batch_size = int_at_least("batch", v, 1); }},
      {"lr", "initial learning rate", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.learning_rate); },
       [](ResolvedConfig& c, const std::string& v) { c.train.learning_rate = non_negative("lr", v); }},
      {"lr-drop-epoch", "epoch of the x0.1 learning-rate drop (-1 = E/2)", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.lr_drop_epoch); },
       [](ResolvedConfig& c, const std::string& v) { c.train.lr_drop_epoch = int_at_least("lr-drop-epoch", v, -1); }},
      {"momentum", "SGD momentum", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.momentum); },
       [](ResolvedConfig& c, const std::string& v) { c.train.momentum = non_negative("momentum", v); }},
      {"weight-decay", "SGD weight decay", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.weight_decay); },
       [](ResolvedConfig& c, const std::string& v) { c.train.weight_decay = non_negative("weight-decay", v); }},
      {"lambda-u", "unlabeled loss weight", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.loss_weights.lambda_u); },
       [](ResolvedConfig& c, const std::string& v) { c.train.loss_weights.lambda_u = non_negative("lambda-u", v); }},
      {"lambda-reg", "regularizer weight", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.loss_weights.lambda_reg); },
       [](ResolvedConfig& c, const std::string& v) { c.train.loss_weights.lambda_reg = non_negative("lambda-reg", v); }},
      {"mix-alpha", "MixMatch Beta parameter", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.mix_alpha); },
       [](ResolvedConfig& c, const std::string& v) { c.train.mix_alpha = positive("mix-alpha", v); }},
      {"m", "augmentations per sample M", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.augmentations); },
       [](ResolvedConfig& c, const std::string& v) { c.train.augmentations = int_at_least("m", v, 1); }},
      {"t", "sharpening temperature T", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.temperature); },
       [](ResolvedConfig& c, const std::string& v) { c.train.temperature = positive("t", v); }},
      {"psi", "GMM components", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.gmm.num_components); },
       [](ResolvedConfig& c, const std::string& v) { c.train.gmm.num_components = int_at_least("psi", v, 3); }},
      {"mu-min", "clean-group mean threshold", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.gmm.mu_min); },
       [](ResolvedConfig& c, const std::string& v) {
         const double x = to_double("mu-min", v);
         if (!(x > 0.0 && x < 1.0)) bad_value("mu-min", v, "outside (0,1)");
         c.train.gmm.mu_min = x;
       }},
      {"mu-max", "closed-group mean threshold", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.gmm.mu_max); },
       [](ResolvedConfig& c, const std::string& v) {
         const double x = to_double("mu-max", v);
         if (!(x > 0.0 && x < 1.0)) bad_value("mu-max", v, "outside (0,1)");
         c.train.gmm.mu_max = x;
       }},
      {"gmm-iters", "maximum EM iterations", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.gmm.max_iters); },
       [](ResolvedConfig& c, const std::string& v) { c.train.gmm.max_iters = int_at_least("gmm-iters", v, 1); }},
      {"warmup-d", "NetD warm-up epochs", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.warmup_epochs_netd); },
       [](ResolvedConfig& c, const std::string& v) { c.train.warmup_epochs_netd = int_at_least("warmup-d", v, 0); }},
      {"warmup-s", "NetS warm-up epochs", kTrainLike,
       [](const ResolvedConfig& c) { return std::to_string(c.train.warmup_epochs_nets); },
       [](ResolvedConfig& c, const std::string& v) { c.train.warmup_epochs_nets = int_at_least("warmup-s", v, 0); }},
      {"jitter", "Gaussian augmentation sigma (0 disables)", kTrainLike,
       [](const ResolvedConfig& c) { return fmt_double(c.train.augment.jitter_sigma); },
       [](ResolvedConfig& c, const std::string& v) {
         c.train.augment.jitter_sigma = non_negative("jitter", v);
         c.train.augment.mode = c.train.augment.jitter_sigma > 0.0
                                    ? AugmentMode::kGaussianJitter
                                    : AugmentMode::kNone;
       }},
      {"hidden", "comma-separated hidden layer widths", kTrainLike,
       [](const ResolvedConfig& c) { return join_widths(c.train.hidden_widths); },
       [](ResolvedConfig& c, const std::string& v) { c.train.hidden_widths = parse_widths("hidden", v); }},
      {"algo", "edm or ce", kTrainLike,
       [](const ResolvedConfig& c) { return std::string(c.algo == Algo::kEdm ? "edm" : "ce"); },
       [](ResolvedConfig& c, const std::string& v) {
         if (v == "edm")
           c.algo = Algo::kEdm;
         else if (v == "ce")
           c.algo = Algo::kCe;
         else
           bad_value("algo", v, "must be 'edm' or 'ce'");
       }},
      // ---- evaluation ----
      {"checkpoint", "NetD checkpoint to evaluate", kEval,
       [](const ResolvedConfig& c) { return c.paths.checkpoint; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.checkpoint = v; }},
      {"nets-checkpoint", "optional NetS checkpoint for split exports", kEval,
       [](const ResolvedConfig& c) { return c.paths.nets_checkpoint; },
       [](ResolvedConfig& c, const std::string& v) { c.paths.nets_checkpoint = v; }},
      {"bins", "loss histogram bins", kEval | kRun,
       [](const ResolvedConfig& c) { return std::to_string(c.histogram_bins); },
       [](ResolvedConfig& c, const std::string& v) { c.histogram_bins = int_at_least("bins", v, 2); }},
  };
  return table;
}

const Setting* find_setting(const std::string& key, unsigned bit) {
  for (const auto& s : settings_table())
    if (s.key == key && (s.commands & bit)) return &s;
  return nullptr;
}

}  // namespace

std::vector<std::string> keys_for(const std::string& command) {
  const unsigned bit = command_bit(command);
  std::vector<std::string> out;
  for (const auto& s : settings_table())
    if (s.commands & bit) out.push_back(s.key);
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::map<std::string, std::string> out;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    if (key.starts_with("--")) key.erase(0, 2);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ResolvedConfig resolve_config(const std::string& command,
                              const std::map<std::string, std::string>& flags,
                              const std::map<std::string, std::string>& file,
                              const std::optional<std::string>& env_seed) {
  const unsigned bit = command_bit(command);
  ResolvedConfig cfg;
  cfg.command = command;
  cfg.noise.open_source = "blobs-pool";

  auto apply_all = [&](const std::map<std::string, std::string>& kv,
                       const char* origin) {
    for (const auto& [key, value] : kv) {
      const Setting* s = find_setting(key, bit);
      if (!s)
        throw ConfigError(std::string(origin) + ": unknown setting '" + key +
                          "' for '" + command + "'");
      s->apply(cfg, value);
    }
  };
  apply_all(file, "config file");
  apply_all(flags, "flag");
  if (env_seed) find_setting("seed", bit)->apply(cfg, *env_seed);

  if (!(cfg.train.gmm.mu_min < cfg.train.gmm.mu_max))
    throw ConfigError("--mu-min must be smaller than --mu-max");
  if (2 * cfg.gen.dim < cfg.gen.classes)
    throw ConfigError("--dim " + std::to_string(cfg.gen.dim) +
                      " too small for --classes " + std::to_string(cfg.gen.classes));
  try {
    cfg.train.validate();
  } catch (const TrainError& e) {
    throw ConfigError(e.what());
  }

  for (const auto& s : settings_table())
    if (s.commands & bit) cfg.settings[s.key] = s.current(cfg);
  return cfg;
}

std::string usage() {
  std::ostringstream out;
  out << "usage: edm <gen|train|eval|run> [--key value ...]\n\n";
  for (const char* cmd : {"gen", "train", "eval", "run"}) {
    out << cmd << ":\n";
    const unsigned bit = command_bit(cmd);
    for (const auto& s : settings_table())
      if (s.commands & bit) out << "  --" << s.key << "  " << s.help << '\n';
  }
  out << "\nEDM_SEED, when set, overrides --seed.\n";
  return out.str();
}

ResolvedConfig parse_command_line(int argc, const char* const* argv) {
  if (argc < 2) throw ConfigError("missing subcommand\n" + usage());
  const std::string command = argv[1];
  if (command == "--help" || command == "-h" || command == "help")
    throw HelpRequested(usage());
  const unsigned bit = command_bit(command);

  CLI::App app{"edm " + command};
  std::map<std::string, std::string> storage;
  std::map<std::string, CLI::Option*> options;
  for (const auto& s : settings_table())
    if (s.commands & bit)
      options[s.key] = app.add_option("--" + s.key, storage[s.key], s.help);

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 2; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.help());
  } catch (const CLI::ParseError& e) {
    throw ConfigError(std::string(e.what()));
  }

  std::map<std::string, std::string> flags;
  for (const auto& [key, opt] : options)
    if (opt->count() > 0) flags[key] = storage[key];

  std::map<std::string, std::string> file;
  if (auto it = flags.find("config"); it != flags.end() && !it->second.empty())
    file = read_config_file(it->second);

  std::optional<std::string> env_seed;
  if (const char* s = std::getenv("EDM_SEED"); s != nullptr && *s != '\0')
    env_seed = s;
  return resolve_config(command, flags, file, env_seed);
}

}  // namespace edm::cli
