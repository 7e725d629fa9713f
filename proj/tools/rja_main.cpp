// rja: data generation, training, evaluation, ablation and gradient checks.
//
// Exit codes: 0 success, 1 check or metric failure, 2 usage or I/O error,
// 3 shape or config mismatch between artifacts.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rja/core/grad_check.hpp"
#include "rja/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kMismatch = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string shell_quote(const std::string& s) {
  if (!s.empty() && s.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_.,/=:+") == std::string::npos)
    return s;
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

/// Record of one invocation, written as JSON.
class RunManifest {
 public:
  RunManifest(std::string command, int argc, char** argv) : command_(std::move(command)) {
    doc_["command"] = command_;
    doc_["tool_version"] = kToolVersion;
    doc_["started_at"] = utc_now();
    std::vector<std::string> args(argv, argv + argc);
    doc_["argv"] = args;
  }

  void config(const rja::KeyValues& kv) {
    for (const auto& [k, v] : kv) doc_["config"][k] = v;
  }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void artifact(const std::string& role, const fs::path& path) { doc_["artifacts"][role] = path.string(); }
  void replay(const std::vector<std::string>& args) {
    std::string line = "rja " + command_;
    for (const auto& a : args) line += " " + shell_quote(a);
    doc_["replay"] = line;
  }
  void result(const std::string& key, json value) { doc_["result"][key] = std::move(value); }

  void finish(int exit_code, const std::string& error = "") {
    doc_["finished_at"] = utc_now();
    doc_["exit_code"] = exit_code;
    if (!error.empty()) doc_["error"] = error;
  }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc_.dump(2) << "\n";
  }

  std::string dump() const { return doc_.dump(2); }

 private:
  std::string command_;
  json doc_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

fs::path split_file(const fs::path& data, const std::string& split) {
  return fs::is_directory(data) ? data / (split + ".avf") : data;
}

// ---------------------------------------------------------------------------
// Config resolution for train and ablate
// ---------------------------------------------------------------------------

struct RunConfig {
  rja::AblationConfig model;
  rja::TrainConfig train;
  rja::KeyValues explicit_model;  // model.* keys given by the user
};

/// Accepts config files and key=value pairs; bare keys resolve to train.* or
/// model.* by name. Later entries override earlier ones.
RunConfig resolve_config(const std::vector<std::string>& entries) {
  rja::KeyValues known;
  rja::AblationConfig{}.write(known);
  rja::TrainConfig{}.write(known);

  rja::KeyValues given;
  auto add = [&](std::string key, const std::string& value) {
    if (!known.count(key)) {
      if (known.count("train." + key)) {
        key = "train." + key;
      } else if (known.count("model." + key)) {
        key = "model." + key;
      } else {
        throw UsageError("unknown config key '" + key + "'");
      }
    }
    given[key] = value;
  };
  for (const auto& entry : entries) {
    rja::KeyValues kv;
    if (fs::is_regular_file(entry)) {
      kv = rja::load_key_values(entry);
    } else if (entry.find('=') != std::string::npos) {
      kv = rja::parse_key_values(entry);
    } else {
      throw UsageError("--config '" + entry + "' is neither a file nor key=value");
    }
    for (const auto& [k, v] : kv) add(k, v);
  }

  RunConfig rc;
  try {
    rc.model.read(given);
    rc.train.read(given);
    rc.train.validate();
  } catch (const rja::ConfigError& e) {
    throw UsageError(e.what());
  }
  for (const auto& [k, v] : given)
    if (k.rfind("model.", 0) == 0) rc.explicit_model[k] = v;
  return rc;
}

/// Fills the data-dependent model sizes, refusing explicit values that
/// disagree with the data.
void bind_to_data(RunConfig& rc, const rja::FeatureSet& train) {
  auto bind = [&](const char* key, Eigen::Index& field, Eigen::Index actual, const char* label) {
    if (rc.explicit_model.count(key) && field != actual)
      throw MismatchError(std::string("config sets ") + label + "=" + std::to_string(field) +
                          " but the data has " + label + "=" + std::to_string(actual));
    field = actual;
  };
  bind("model.d_a", rc.model.audio_dim, train.audio_dim(), "d_a");
  bind("model.d_v", rc.model.visual_dim, train.visual_dim(), "d_v");
  bind("model.m", rc.model.output_dim, train.output_dim(), "m");
  try {
    rc.model.validate();
  } catch (const rja::ConfigError& e) {
    throw UsageError(e.what());
  }
}

rja::KeyValues resolved_kv(const RunConfig& rc) {
  rja::KeyValues kv;
  rc.model.write(kv);
  rc.train.write(kv);
  return kv;
}

std::vector<std::string> config_args(const rja::KeyValues& kv) {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv) {
    out.push_back("--config");
    out.push_back(k + "=" + v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenOptions {
  rja::SynthConfig synth;
  std::string mode = "emotion";
  fs::path out = "data";
};

int run_gen_data(const GenOptions& opt, RunManifest& manifest) {
  rja::SynthConfig cfg = opt.synth;
  try {
    cfg.mode = rja::parse_label_mode(opt.mode);
    if (cfg.mode == rja::LabelMode::fatigue) cfg.output_dim = 1;
    cfg.validate();
  } catch (const rja::ConfigError& e) {
    throw UsageError(e.what());
  }
  rja::KeyValues kv;
  cfg.write(kv);
  manifest.config(kv);
  manifest.seed(cfg.seed);

  const rja::SplitData data = rja::generate(cfg);
  ensure_dir(opt.out);
  rja::write_features(data.train, opt.out / "train.avf");
  rja::write_features(data.val, opt.out / "val.avf");
  manifest.artifact("train", opt.out / "train.avf");
  manifest.artifact("val", opt.out / "val.avf");
  manifest.result("train_clips", data.train.n_clips());
  manifest.result("val_clips", data.val.n_clips());

  std::vector<std::string> replay = {"--out", opt.out.string(), "--seed", std::to_string(cfg.seed),
                                     "--n-videos", std::to_string(cfg.n_videos),
                                     "--clips-per-video", std::to_string(cfg.clips_per_video),
                                     "--d-a", std::to_string(cfg.audio_dim), "--d-v",
                                     std::to_string(cfg.visual_dim), "--m", std::to_string(cfg.output_dim),
                                     "--noise-std", rja::format_double(cfg.noise_std), "--corruption",
                                     rja::format_double(cfg.corruption), "--mode", rja::to_string(cfg.mode)};
  manifest.replay(replay);
  std::cout << "wrote " << (opt.out / "train.avf").string() << " (" << data.train.n_clips()
            << " clips) and " << (opt.out / "val.avf").string() << " (" << data.val.n_clips()
            << " clips)\n";
  return kOk;
}

struct TrainOptions {
  fs::path data;
  std::vector<std::string> config;
  fs::path out = "run";
};

int run_train(const TrainOptions& opt, RunManifest& manifest) {
  RunConfig rc = resolve_config(opt.config);
  const rja::FeatureSet train = rja::read_features(split_file(opt.data, "train"));
  const rja::FeatureSet val = rja::read_features(split_file(opt.data, "val"));
  bind_to_data(rc, train);
  const rja::KeyValues kv = resolved_kv(rc);
  manifest.config(kv);
  manifest.seed(rc.train.seed);
  std::vector<std::string> replay = {"--data", opt.data.string(), "--out", opt.out.string()};
  for (auto& a : config_args(kv)) replay.push_back(a);
  manifest.replay(replay);

  ensure_dir(opt.out);
  rja::Rng rng = rja::Rng(rc.train.seed).derive("model");
  rja::FusionModel model = rja::FusionModel::init(rc.model, rng);
  std::optional<rja::Trainer> trainer;
  try {
    trainer.emplace(std::move(model), train, val, rc.train);
  } catch (const rja::ConfigError& e) {
    throw MismatchError(e.what());
  }

  std::ofstream log_file(opt.out / "train_log.csv", std::ios::trunc);
  if (!log_file) throw std::runtime_error("cannot write " + (opt.out / "train_log.csv").string());
  log_file << rja::train_log_header(rc.train.loss, rc.model.output_dim) << "\n";
  while (!trainer->state().stopped && trainer->state().epoch < rc.train.epochs) {
    const std::size_t steps = trainer->steps_per_epoch();
    while (trainer->state().step_in_epoch < steps) trainer->step();
    const rja::EpochLog row = trainer->end_epoch();
    log_file << rja::train_log_row(row) << "\n" << std::flush;
    std::cerr << "epoch " << row.epoch << " train_loss " << row.train_loss << " val_ccc";
    for (double c : row.val_ccc) std::cerr << " " << c;
    std::cerr << "\n";
  }
  const rja::TrainResult result = trainer->run();
  rja::save_checkpoint(result.best, opt.out / "checkpoint.rjac");
  rja::save_checkpoint(result.last, opt.out / "last.rjac");

  manifest.artifact("checkpoint", opt.out / "checkpoint.rjac");
  manifest.artifact("last_checkpoint", opt.out / "last.rjac");
  manifest.artifact("train_log", opt.out / "train_log.csv");
  manifest.result("best_epoch", result.best.state.best_epoch);
  manifest.result("best_val_ccc", result.best.state.best_val_ccc);
  manifest.result("epochs_run", trainer->state().epoch);
  std::cout << "best epoch " << result.best.state.best_epoch << " val ccc "
            << rja::format_double(result.best.state.best_val_ccc) << "\n";
  return kOk;
}

struct EvalOptions {
  fs::path checkpoint;
  fs::path data;
  bool header = false;
};

int run_eval(const EvalOptions& opt, RunManifest& manifest) {
  const rja::Checkpoint ckpt = rja::load_checkpoint(opt.checkpoint);
  const rja::FeatureSet fs = rja::read_features(split_file(opt.data, "val"));
  const rja::AblationConfig& mc = ckpt.model_config;
  rja::KeyValues kv;
  mc.write(kv);
  manifest.config(kv);
  manifest.seed(ckpt.train_config.seed);
  manifest.artifact("checkpoint", opt.checkpoint);
  manifest.artifact("data", split_file(opt.data, "val"));
  manifest.replay({"--checkpoint", opt.checkpoint.string(), "--data", opt.data.string()});

  auto check = [](const char* label, Eigen::Index model, Eigen::Index data) {
    if (model != data)
      throw MismatchError(std::string("checkpoint expects ") + label + "=" + std::to_string(model) +
                          ", data has " + label + "=" + std::to_string(data));
  };
  if (mc.modality != rja::Modality::visual) check("d_a", mc.audio_dim, fs.audio_dim());
  if (mc.modality != rja::Modality::audio) check("d_v", mc.visual_dim, fs.visual_dim());
  check("m", mc.output_dim, fs.output_dim());

  rja::FusionModel model = [&] {
    try {
      return ckpt.model();
    } catch (const rja::ConfigError& e) {
      throw MismatchError(e.what());
    }
  }();
  const rja::EvalReport report = rja::evaluate(model, fs);
  const rja::EvalRowContext ctx{mc.hash(), mc.recursion_depth, mc.use_u_blstm, mc.use_j_blstm,
                                mc.weight_sharing};
  if (opt.header) std::cout << rja::eval_csv_header() << "\n";
  std::cout << rja::eval_csv_row(ctx, report) << "\n";
  manifest.result("mean_ccc", report.mean_ccc());
  manifest.result("ccc", report.ccc);
  return kOk;
}

struct AblateOptions {
  fs::path data;
  std::string grid = "default";
  std::vector<std::string> config;
  fs::path out = "ablation";
};

int run_ablate(const AblateOptions& opt, RunManifest& manifest) {
  RunConfig rc = resolve_config(opt.config);
  const rja::AblationGrid grid = [&] {
    try {
      return rja::AblationGrid::parse(opt.grid);
    } catch (const rja::ConfigError& e) {
      throw UsageError(e.what());
    }
  }();
  const rja::FeatureSet train = rja::read_features(split_file(opt.data, "train"));
  const rja::FeatureSet val = rja::read_features(split_file(opt.data, "val"));
  bind_to_data(rc, train);
  const rja::KeyValues kv = resolved_kv(rc);
  manifest.config(kv);
  manifest.seed(rc.train.seed);
  std::vector<std::string> replay = {"--data", opt.data.string(), "--grid", opt.grid, "--out",
                                     opt.out.string()};
  for (auto& a : config_args(kv)) replay.push_back(a);
  manifest.replay(replay);

  ensure_dir(opt.out);
  const auto rows = rja::ablate(train, val, rc.model, rc.train, grid);
  std::string csv = rja::ablation_csv_header() + "\n";
  int failed = 0;
  for (const auto& row : rows) {
    csv += rja::ablation_csv_row(row) + "\n";
    failed += row.report ? 0 : 1;
  }
  write_text(opt.out / "ablation.csv", csv);
  std::cout << csv;

  // Depth trend per switch combination, reported only.
  json trend = json::array();
  for (const auto& row : rows) {
    if (!row.report) continue;
    trend.push_back({{"u", row.context.use_u_blstm}, {"j", row.context.use_j_blstm},
                     {"t", row.context.recursion_depth}, {"mean_ccc", row.report->mean_ccc()}});
  }
  manifest.artifact("ablation", opt.out / "ablation.csv");
  manifest.result("rows", rows.size());
  manifest.result("failed_rows", failed);
  manifest.result("trend", trend);
  return kOk;
}

struct GradcheckOptions {
  std::vector<long> dims = {4, 6, 8, 5};
  int t = 2;
  double tol = 1e-4;
  std::uint64_t seed = 42;
};

int run_gradcheck(const GradcheckOptions& opt, RunManifest& manifest) {
  if (opt.dims.size() != 4) throw UsageError("--dims takes L,d_a,d_v,h");
  for (long d : opt.dims)
    if (d < 1) throw UsageError("--dims entries must be >= 1");

  rja::AblationConfig cfg;
  cfg.seq_len = opt.dims[0];
  cfg.audio_dim = opt.dims[1];
  cfg.visual_dim = opt.dims[2];
  cfg.u_hidden_audio = cfg.u_hidden_visual = cfg.j_hidden = opt.dims[3];
  cfg.recursion_depth = opt.t;
  try {
    cfg.validate();
  } catch (const rja::ConfigError& e) {
    throw UsageError(e.what());
  }
  rja::KeyValues kv;
  cfg.write(kv);
  kv["gradcheck.tol"] = rja::format_double(opt.tol);
  manifest.config(kv);
  manifest.seed(opt.seed);
  std::ostringstream dims;
  dims << opt.dims[0] << "," << opt.dims[1] << "," << opt.dims[2] << "," << opt.dims[3];
  manifest.replay({"--dims", dims.str(), "--t", std::to_string(opt.t), "--tol",
                   rja::format_double(opt.tol), "--seed", std::to_string(opt.seed)});

  const rja::Rng root(opt.seed);
  rja::Rng model_rng = root.derive("model");
  rja::Rng input_rng = root.derive("inputs");
  const rja::FusionModel model = rja::FusionModel::init(cfg, model_rng);
  const rja::Tensor x_a(rja::uniform_matrix<double>(cfg.seq_len, cfg.audio_dim, -1.0, 1.0, input_rng));
  const rja::Tensor x_v(rja::uniform_matrix<double>(cfg.seq_len, cfg.visual_dim, -1.0, 1.0, input_rng));
  const rja::Matrix labels = rja::uniform_matrix<double>(cfg.seq_len, cfg.output_dim, -1.0, 1.0, input_rng);
  const auto params = model.parameters();

  rja::GradCheckOptions gopt;
  gopt.tol = opt.tol;
  const auto started = std::chrono::steady_clock::now();
  const rja::GradCheckReport rep =
      rja::grad_check([&] { return rja::ccc_loss(model.forward(x_a, x_v), labels); }, params, gopt);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::cout << "entries " << rep.entries_checked << " max_rel_error " << rja::format_double(rep.max_rel_error)
            << " worst " << rep.worst_param << "[" << rep.worst_index << "] analytic "
            << rja::format_double(rep.worst_analytic) << " numeric " << rja::format_double(rep.worst_numeric)
            << " seconds " << seconds << "\n";
  if (!rep.failure.empty()) std::cout << "failure: " << rep.failure << "\n";
  std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
  manifest.result("max_rel_error", rep.max_rel_error);
  manifest.result("worst_param", rep.worst_param);
  manifest.result("entries", rep.entries_checked);
  manifest.result("pass", rep.pass);
  return rep.pass ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recursive joint cross-attention fusion: data, training and checks"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  std::string manifest_path;
  app.add_option("--manifest", manifest_path,
                 "Where to write the run manifest (default: <out>/run_manifest.json; eval: next to\n"
                 "the checkpoint; gradcheck: standard error)");

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic train/val feature set");
  gen_cmd->add_option("--seed", gen.synth.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--n-videos", gen.synth.n_videos)->capture_default_str();
  gen_cmd->add_option("--clips-per-video", gen.synth.clips_per_video)->capture_default_str();
  gen_cmd->add_option("--d-a", gen.synth.audio_dim, "Audio feature width")->capture_default_str();
  gen_cmd->add_option("--d-v", gen.synth.visual_dim, "Visual feature width")->capture_default_str();
  gen_cmd->add_option("--m", gen.synth.output_dim, "Label dimensions (emotion mode)")->capture_default_str();
  gen_cmd->add_option("--noise-std", gen.synth.noise_std)->capture_default_str();
  gen_cmd->add_option("--corruption", gen.synth.corruption, "Corrupted fraction per video")
      ->capture_default_str();
  gen_cmd->add_option("--mode", gen.mode, "emotion or fatigue")
      ->check(CLI::IsMember({"emotion", "fatigue"}))
      ->capture_default_str();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and keep the best checkpoint");
  train_cmd->add_option("--data", train.data, "Directory with train.avf and val.avf")->required();
  train_cmd->add_option("--config", train.config, "Config file or key=value (repeatable)");
  train_cmd->add_option("--out", train.out, "Output directory")->capture_default_str();

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print one CSV row");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--data", eval.data, "AVF1 file, or a directory (uses val.avf)")->required();
  eval_cmd->add_flag("--header", eval.header, "Print the CSV header first");

  AblateOptions abl;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every grid configuration and tabulate");
  ablate_cmd->add_option("--data", abl.data, "Directory with train.avf and val.avf")->required();
  ablate_cmd->add_option("--grid", abl.grid, "e.g. u=0,1;j=0,1;t=1,2,3,4")->capture_default_str();
  ablate_cmd->add_option("--config", abl.config, "Config file or key=value (repeatable)");
  ablate_cmd->add_option("--out", abl.out, "Output directory")->capture_default_str();

  GradcheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  gc_cmd->add_option("--dims", gc.dims, "L,d_a,d_v,h")->delimiter(',')->expected(4);
  gc_cmd->add_option("--t", gc.t, "Recursion depth")->check(CLI::PositiveNumber)->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol, "Max relative error")->check(CLI::PositiveNumber)->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  RunManifest manifest(cmd->get_name(), argc, argv);
  fs::path default_manifest;
  if (cmd == gen_cmd) default_manifest = gen.out / "run_manifest.json";
  if (cmd == train_cmd) default_manifest = train.out / "run_manifest.json";
  if (cmd == ablate_cmd) default_manifest = abl.out / "run_manifest.json";
  if (cmd == eval_cmd) default_manifest = fs::absolute(eval.checkpoint).parent_path() / "eval_manifest.json";
  const fs::path manifest_file = manifest_path.empty() ? default_manifest : fs::path(manifest_path);

  int code = kOk;
  std::string error;
  try {
    if (cmd == gen_cmd) code = run_gen_data(gen, manifest);
    if (cmd == train_cmd) code = run_train(train, manifest);
    if (cmd == eval_cmd) code = run_eval(eval, manifest);
    if (cmd == ablate_cmd) code = run_ablate(abl, manifest);
    if (cmd == gc_cmd) code = run_gradcheck(gc, manifest);
  } catch (const MismatchError& e) {
    code = kMismatch;
    error = e.what();
  } catch (const UsageError& e) {
    code = kUsage;
    error = e.what();
  } catch (const rja::MetricError& e) {
    code = kCheckFailed;
    error = e.what();
  } catch (const rja::NumericError& e) {
    code = kCheckFailed;
    error = e.what();
  } catch (const rja::ConfigError& e) {
    code = kMismatch;
    error = e.what();
  } catch (const rja::DimensionError& e) {
    code = kMismatch;
    error = e.what();
  } catch (const std::exception& e) {
    code = kUsage;
    error = e.what();
  }
  if (!error.empty()) std::cerr << "error: " << error << "\n";

  manifest.finish(code, error);
  try {
    const bool writable = !manifest_path.empty() ||
                          (!manifest_file.empty() && fs::is_directory(manifest_file.parent_path()));
    if (!writable) {
      std::cerr << manifest.dump() << "\n";
    } else {
      manifest.write(manifest_file);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (code == kOk) code = kUsage;
  }
  return code;
}
