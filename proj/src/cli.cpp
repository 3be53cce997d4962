#include "fcac/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fcac/checkpoint.hpp"
#include "fcac/selfcheck.hpp"

namespace fcac::cli {

namespace {

namespace fs = std::filesystem;
using config::RunConfig;

// Flag values that overlay the config file. Unset = keep the file value.
struct Overrides {
  std::string config_path;
  std::string out_dir;
  std::string base_mode;
  std::string perturb;
  std::string manifest_path;
  std::string checkpoint_path;
  std::string out_path;
  std::uint64_t seed = 0;
  int workers = 0;
  int trials = 20;
  double lambda = -1.0, beta = -1.0, alpha = -1.0, tau = -1.0, scale = -1.0, sigma_init = -1.0;
  bool seed_set = false, workers_set = false;
};

void add_common_options(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path, "JSON config file");
  cmd->add_option("--seed", ov.seed, "run seed")->each([&ov](const std::string&) { ov.seed_set = true; });
  cmd->add_option("--workers", ov.workers, "parallel workers for extraction/evaluation")
      ->each([&ov](const std::string&) { ov.workers_set = true; });
  cmd->add_option("--out-dir", ov.out_dir, "output directory");
  cmd->add_option("--base-mode", ov.base_mode, "base training mode: joint or two-stage")
      ->check(CLI::IsMember({"joint", "two-stage"}));
  cmd->add_option("--lambda", ov.lambda, "cross-entropy coefficient");
  cmd->add_option("--beta", ov.beta, "contrastive coefficient");
  cmd->add_option("--alpha", ov.alpha, "prototype-loss share");
  cmd->add_option("--tau", ov.tau, "contrastive temperature");
  cmd->add_option("--scale", ov.scale, "cosine softmax scale");
  cmd->add_option("--sigma-init", ov.sigma_init, "noise scale for new classifier columns");
}

// Environment overlay, FCAC_* variables; file < environment < flags.
void apply_env(RunConfig& cfg) {
  auto env = [](const char* name) -> const char* { return std::getenv(name); };
  if (const char* v = env("FCAC_SEED")) cfg.settings.protocol.seed = std::strtoull(v, nullptr, 10);
  if (const char* v = env("FCAC_WORKERS")) cfg.settings.workers = std::atoi(v);
  if (const char* v = env("FCAC_OUT_DIR")) cfg.out_dir = v;
  if (const char* v = env("FCAC_BASE_MODE")) {
    cfg.settings.protocol.base_mode =
        std::string(v) == "two-stage" ? protocol::BaseMode::kTwoStage : protocol::BaseMode::kJoint;
  }
  if (const char* v = env("FCAC_LAMBDA")) cfg.settings.protocol.loss.lambda = std::atof(v);
  if (const char* v = env("FCAC_BETA")) cfg.settings.protocol.loss.beta = std::atof(v);
  if (const char* v = env("FCAC_ALPHA")) cfg.settings.protocol.loss.alpha = std::atof(v);
  if (const char* v = env("FCAC_TAU")) cfg.settings.protocol.loss.tau = std::atof(v);
  if (const char* v = env("FCAC_SCALE")) cfg.settings.protocol.loss.scale = std::atof(v);
  if (const char* v = env("FCAC_SIGMA_INIT")) cfg.settings.protocol.classifier.sigma_init = std::atof(v);
}

RunConfig effective_config(const Overrides& ov) {
  RunConfig cfg = ov.config_path.empty() ? config::default_config()
                                         : config::load_config_file(ov.config_path);
  apply_env(cfg);
  if (ov.seed_set) cfg.settings.protocol.seed = ov.seed;
  if (ov.workers_set) cfg.settings.workers = ov.workers;
  if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
  if (!ov.base_mode.empty()) {
    cfg.settings.protocol.base_mode =
        ov.base_mode == "two-stage" ? protocol::BaseMode::kTwoStage : protocol::BaseMode::kJoint;
  }
  if (ov.lambda >= 0.0) cfg.settings.protocol.loss.lambda = ov.lambda;
  if (ov.beta >= 0.0) cfg.settings.protocol.loss.beta = ov.beta;
  if (ov.alpha >= 0.0) cfg.settings.protocol.loss.alpha = ov.alpha;
  if (ov.tau >= 0.0) cfg.settings.protocol.loss.tau = ov.tau;
  if (ov.scale >= 0.0) cfg.settings.protocol.loss.scale = ov.scale;
  if (ov.sigma_init >= 0.0) cfg.settings.protocol.classifier.sigma_init = ov.sigma_init;
  if (!ov.manifest_path.empty()) {
    cfg.dataset.kind = config::DatasetConfig::Kind::kManifest;
    cfg.dataset.manifest_path = ov.manifest_path;
  }
  cfg.validate();
  return cfg;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * fraction);
  return buf;
}

std::string percent_points(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * fraction);
  return buf;
}

}  // namespace

std::string report_csv(const protocol::RunReport& report) {
  std::string out = "row";
  for (const auto& s : report.sessions) out += ",sess" + std::to_string(s.session_index);
  out += ",AA,PD\n";

  out += "Base";
  for (const auto& s : report.sessions) out += "," + percent(s.base.accuracy());
  out += report.base ? "," + percent_points(report.base->aa / 1.0) + "," + percent_points(report.base->pd)
                     : ",-,-";
  out += "\n";

  out += "Incr.";
  for (const auto& s : report.sessions) out += s.incr ? "," + percent(s.incr->accuracy()) : ",-";
  out += report.incr ? "," + percent_points(report.incr->aa) + "," + percent_points(report.incr->pd)
                     : ",-,-";
  out += "\n";

  out += "All";
  for (const auto& s : report.sessions) out += "," + percent(s.all.accuracy());
  out += report.all ? "," + percent_points(report.all->aa) + "," + percent_points(report.all->pd)
                    : ",-,-";
  out += "\n";
  return out;
}

nlohmann::json report_json(const protocol::RunReport& report, const RunConfig& cfg) {
  nlohmann::json j;
  j["schema"] = 1;
  j["seed"] = report.seed;
  j["config_digest"] = config::config_digest(cfg);
  j["config"] = config::to_json(cfg);
  j["clustering_ratio_base"] = report.base_clustering_ratio;
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& s : report.sessions) {
    nlohmann::json js;
    js["session"] = s.session_index;
    js["base"] = {{"correct", s.base.correct}, {"total", s.base.total}, {"accuracy", s.base.accuracy()}};
    if (s.incr) {
      js["incr"] = {{"correct", s.incr->correct}, {"total", s.incr->total}, {"accuracy", s.incr->accuracy()}};
    } else {
      js["incr"] = nullptr;
    }
    js["all"] = {{"correct", s.all.correct}, {"total", s.all.total}, {"accuracy", s.all.accuracy()}};
    sessions.push_back(js);
  }
  j["sessions"] = sessions;
  nlohmann::json summary;
  auto put = [&summary](const char* key, const std::optional<protocol::AaPd>& v) {
    if (v) {
      summary[key] = {{"aa", v->aa}, {"pd", v->pd}};
    } else {
      summary[key] = nullptr;
    }
  };
  put("all", report.all);
  put("base", report.base);
  put("incr", report.incr);
  j["summary"] = summary;
  return j;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::kIoError, "short write to " + path);
}

void write_reports(const protocol::RunReport& report, const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/report.csv", report_csv(report));
  write_text(cfg.out_dir + "/report.json", report_json(report, cfg).dump(2) + "\n");
}

void print_table(const protocol::RunReport& report) { std::cout << report_csv(report); }

int cmd_run(const Overrides& ov) {
  RunConfig cfg = effective_config(ov);
  datagen::ManifestClipProvider provider = config::make_provider(cfg);
  protocol::RunOutcome outcome = protocol::run_protocol_full(provider, cfg.settings);
  write_reports(outcome.report, cfg);
  checkpoint::Checkpoint ckpt;
  ckpt.params = std::move(outcome.params);
  ckpt.state = std::move(outcome.state);
  ckpt.run_seed = cfg.settings.protocol.seed;
  ckpt.completed_sessions = cfg.settings.protocol.sessions + 1;
  checkpoint::save_checkpoint(ckpt, cfg.out_dir + "/checkpoint.bin");
  print_table(outcome.report);
  return kExitOk;
}

int cmd_train_base(const Overrides& ov) {
  RunConfig cfg = effective_config(ov);
  datagen::ManifestClipProvider provider = config::make_provider(cfg);
  auto sessions = protocol::split_dataset(provider.manifest(), cfg.settings.protocol,
                                          cfg.settings.protocol.seed);
  protocol::SessionDataset base_train;
  base_train.session_index = 0;
  base_train.class_set = sessions[0].class_set;
  base_train.train_by_class = std::move(sessions[0].train_by_class);
  sessions[0].drop_train_data();

  protocol::BaseResult base = protocol::train_base(provider, std::move(base_train), cfg.settings);

  protocol::RunReport report;
  report.seed = cfg.settings.protocol.seed;
  report.base_clustering_ratio = base.clustering_ratio;
  protocol::EvalContext ctx(provider, cfg.settings);
  report.sessions.push_back(protocol::evaluate(0, base.params, base.state, sessions, ctx));
  write_reports(report, cfg);

  checkpoint::Checkpoint ckpt;
  ckpt.params = std::move(base.params);
  ckpt.state = std::move(base.state);
  ckpt.run_seed = cfg.settings.protocol.seed;
  ckpt.completed_sessions = 1;
  checkpoint::save_checkpoint(ckpt, cfg.out_dir + "/checkpoint.bin");
  print_table(report);
  return kExitOk;
}

int cmd_train_incr(const Overrides& ov) {
  RunConfig cfg = effective_config(ov);
  if (ov.checkpoint_path.empty()) fail(ErrorCode::kInvalidConfig, "--checkpoint is required");
  checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ov.checkpoint_path);
  if (ckpt.run_seed != cfg.settings.protocol.seed) {
    fail(ErrorCode::kInvalidConfig, "checkpoint seed does not match the configured seed");
  }
  if (ckpt.completed_sessions < 1) {
    fail(ErrorCode::kInvalidConfig, "checkpoint has no trained base session");
  }
  datagen::ManifestClipProvider provider = config::make_provider(cfg);
  auto sessions = protocol::split_dataset(provider.manifest(), cfg.settings.protocol,
                                          cfg.settings.protocol.seed);

  protocol::RunReport report;
  report.seed = cfg.settings.protocol.seed;
  protocol::EvalContext ctx(provider, cfg.settings);
  classifier::StochasticClassifierState state = std::move(ckpt.state);
  std::map<int, Tensor> prototypes = state.prototypes();
  for (int m = ckpt.completed_sessions; m <= cfg.settings.protocol.sessions; ++m) {
    std::vector<size_t> support = protocol::sample_episode(
        sessions[static_cast<size_t>(m)], cfg.settings.protocol.way, cfg.settings.protocol.shot,
        cfg.settings.protocol.seed);
    sessions[static_cast<size_t>(m)].drop_train_data();
    state = protocol::train_incremental(m, provider, support,
                                        sessions[static_cast<size_t>(m)].class_set, ckpt.params,
                                        std::move(state), prototypes, cfg.settings);
    prototypes = state.prototypes();
    report.sessions.push_back(protocol::evaluate(m, ckpt.params, state, sessions, ctx));
  }
  write_reports(report, cfg);

  checkpoint::Checkpoint out;
  out.params = std::move(ckpt.params);
  out.state = std::move(state);
  out.run_seed = cfg.settings.protocol.seed;
  out.completed_sessions = cfg.settings.protocol.sessions + 1;
  checkpoint::save_checkpoint(out, cfg.out_dir + "/checkpoint.bin");
  print_table(report);
  return kExitOk;
}

int cmd_eval(const Overrides& ov) {
  RunConfig cfg = effective_config(ov);
  if (ov.checkpoint_path.empty()) fail(ErrorCode::kInvalidConfig, "--checkpoint is required");
  checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ov.checkpoint_path);
  datagen::ManifestClipProvider provider = config::make_provider(cfg);
  auto sessions = protocol::split_dataset(provider.manifest(), cfg.settings.protocol,
                                          cfg.settings.protocol.seed);
  const int at = ckpt.completed_sessions - 1;
  if (at < 0 || at >= static_cast<int>(sessions.size())) {
    fail(ErrorCode::kInvalidConfig, "checkpoint session index outside this protocol");
  }
  protocol::EvalContext ctx(provider, cfg.settings);
  protocol::RunReport report;
  report.seed = cfg.settings.protocol.seed;
  report.sessions.push_back(protocol::evaluate(at, ckpt.params, ckpt.state, sessions, ctx));
  print_table(report);
  return kExitOk;
}

int cmd_extract(const Overrides& ov) {
  RunConfig cfg = effective_config(ov);
  if (ov.out_path.empty()) fail(ErrorCode::kInvalidConfig, "--out is required");

  datagen::DatasetManifest manifest;
  if (!ov.manifest_path.empty()) {
    manifest = datagen::load_manifest(ov.manifest_path, /*check_files=*/false);
  } else if (cfg.dataset.kind == config::DatasetConfig::Kind::kManifest) {
    manifest = datagen::load_manifest(cfg.dataset.manifest_path, /*check_files=*/false);
  } else {
    datagen::SyntheticSpec spec = cfg.dataset.synthetic;
    spec.seed = cfg.settings.protocol.seed;
    manifest = datagen::synthetic_manifest(spec);
  }

  struct Record {
    std::string clip_id;
    Tensor values;
  };
  std::vector<Record> records;
  std::vector<std::string> failures;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    try {
      dsp::AudioClip clip = datagen::load_entry(manifest, i);
      dsp::LogMelSpectrogram spec = dsp::log_mel_spectrogram(clip, cfg.settings.dsp);
      records.push_back({manifest.entries[i].source, std::move(spec.values)});
    } catch (const Error& e) {
      failures.push_back(manifest.entries[i].source + ": " + e.what());
      std::cerr << "extract failed for " << manifest.entries[i].source << ": " << e.what() << "\n";
    }
  }

  // 16-byte header: magic, version, record count.
  std::ofstream out(ov.out_path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + ov.out_path);
  const char magic[8] = {'F', 'C', 'A', 'C', 'F', 'E', 'A', 'T'};
  out.write(magic, 8);
  const std::uint32_t version = 1;
  const std::uint32_t count = static_cast<std::uint32_t>(records.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const Record& r : records) {
    const std::uint32_t len = static_cast<std::uint32_t>(r.clip_id.size());
    const std::uint32_t frames = static_cast<std::uint32_t>(r.values.shape()[0]);
    const std::uint32_t mels = static_cast<std::uint32_t>(r.values.shape()[1]);
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(r.clip_id.data(), len);
    out.write(reinterpret_cast<const char*>(&frames), 4);
    out.write(reinterpret_cast<const char*>(&mels), 4);
    out.write(reinterpret_cast<const char*>(r.values.data()),
              static_cast<std::streamsize>(r.values.size()) * 8);
  }
  if (!out) fail(ErrorCode::kIoError, "short write to " + ov.out_path);
  out.close();

  std::cerr << "extracted " << records.size() << "/" << manifest.entries.size() << " clips\n";
  if (!failures.empty()) {
    std::cerr << failures.size() << " clip(s) failed:\n";
    for (const std::string& f : failures) std::cerr << "  " << f << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_verify(const Overrides& ov) {
  const std::uint64_t seed = ov.seed_set ? ov.seed : 1;
  const selfcheck::Perturbation p = selfcheck::perturbation_from_name(ov.perturb);
  const auto results = selfcheck::run_all(seed, p, ov.trials);
  bool all_ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "[ ok ] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    all_ok = all_ok && r.passed;
  }
  if (!all_ok) {
    std::cerr << "verification failed\n";
    return kExitVerification;
  }
  return kExitOk;
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kParseError:
    case ErrorCode::kMissingFile:
    case ErrorCode::kInsufficientClasses:
    case ErrorCode::kInsufficientShots:
      return true;
    default:
      return false;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("fcac");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"few-shot class-incremental audio classification engine"};
  app.require_subcommand(1);
  Overrides ov;

  CLI::App* extract = app.add_subcommand("extract", "compute log-mel features into a cache file");
  add_common_options(extract, ov);
  extract->add_option("--manifest", ov.manifest_path, "dataset manifest");
  extract->add_option("--out", ov.out_path, "feature cache output path")->required();

  CLI::App* train_base = app.add_subcommand("train-base", "train the base session");
  add_common_options(train_base, ov);

  CLI::App* train_incr = app.add_subcommand("train-incr", "run incremental sessions from a checkpoint");
  add_common_options(train_incr, ov);
  train_incr->add_option("--checkpoint", ov.checkpoint_path, "checkpoint to continue from")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common_options(eval_cmd, ov);
  eval_cmd->add_option("--checkpoint", ov.checkpoint_path, "checkpoint to evaluate")->required();

  CLI::App* run_cmd = app.add_subcommand("run", "full base + incremental protocol");
  add_common_options(run_cmd, ov);

  CLI::App* verify = app.add_subcommand("verify", "run the built-in oracle suite");
  add_common_options(verify, ov);
  verify->add_option("--perturb", ov.perturb, "inject a named fault (test fixture)");
  verify->add_option("--trials", ov.trials, "gradient-check trials per loss");

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (extract->parsed()) return cmd_extract(ov);
    if (train_base->parsed()) return cmd_train_base(ov);
    if (train_incr->parsed()) return cmd_train_incr(ov);
    if (eval_cmd->parsed()) return cmd_eval(ov);
    if (run_cmd->parsed()) return cmd_run(ov);
    if (verify->parsed()) return cmd_verify(ov);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_error(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace fcac::cli
