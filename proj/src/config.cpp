#include "fcac/config.hpp"

#include <cstdio>
#include <fstream>

#include "fcac/rng.hpp"

namespace fcac::config {

using nlohmann::json;

void RunConfig::validate() const {
  settings.dsp.validate(dataset.kind == DatasetConfig::Kind::kSynthetic
                            ? dataset.synthetic.sample_rate
                            : 16000);
  settings.embedder.validate();
  if (settings.workers < 1) fail(ErrorCode::kInvalidConfig, "workers must be >= 1");
  if (settings.embedder.n_mels != settings.dsp.n_mels) {
    fail(ErrorCode::kInvalidConfig, "embedder n_mels must match dsp n_mels");
  }
  if (dataset.kind == DatasetConfig::Kind::kManifest && dataset.manifest_path.empty()) {
    fail(ErrorCode::kInvalidConfig, "manifest dataset needs a path");
  }
  // Protocol invariants are checked against the actual class count at split
  // time; basic field sanity happens here.
  settings.protocol.validate(settings.protocol.n_base_classes +
                             settings.protocol.way * settings.protocol.sessions);
}

RunConfig default_config() {
  RunConfig cfg;
  cfg.settings.embedder.n_mels = cfg.settings.dsp.n_mels;
  return cfg;
}

namespace {

template <class T>
void get_to_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void apply_dsp(const json& j, dsp::DspConfig& c) {
  get_to_if(j, "frame_len_ms", c.frame_len_ms);
  get_to_if(j, "hop_ms", c.hop_ms);
  get_to_if(j, "n_fft", c.n_fft);
  get_to_if(j, "n_mels", c.n_mels);
  get_to_if(j, "fmin_hz", c.fmin_hz);
  get_to_if(j, "fmax_hz", c.fmax_hz);
  get_to_if(j, "log_floor", c.log_floor);
}

void apply_embedder(const json& j, embedder::EmbedderConfig& c) {
  get_to_if(j, "embedding_dim", c.embedding_dim);
  get_to_if(j, "channels", c.channels);
  get_to_if(j, "blocks", c.blocks);
  get_to_if(j, "projection_dim", c.projection_dim);
}

void apply_loss(const json& j, losses::LossConfig& c) {
  get_to_if(j, "tau", c.tau);
  get_to_if(j, "lambda", c.lambda);
  get_to_if(j, "beta", c.beta);
  get_to_if(j, "alpha", c.alpha);
  get_to_if(j, "scale", c.scale);
}

void apply_optimizer(const json& j, OptimizerConfig& c) {
  get_to_if(j, "learning_rate", c.learning_rate);
  get_to_if(j, "momentum", c.momentum);
}

void apply_classifier(const json& j, classifier::ClassifierOptions& c) {
  get_to_if(j, "sigma_init", c.sigma_init);
  get_to_if(j, "stochastic", c.stochastic);
  get_to_if(j, "train_sigma", c.train_sigma);
}

void apply_protocol(const json& j, protocol::ProtocolConfig& c) {
  get_to_if(j, "n_base_classes", c.n_base_classes);
  get_to_if(j, "sessions", c.sessions);
  get_to_if(j, "way", c.way);
  get_to_if(j, "shot", c.shot);
  get_to_if(j, "base_epochs", c.base_epochs);
  get_to_if(j, "classifier_epochs", c.classifier_epochs);
  get_to_if(j, "incremental_epochs", c.incremental_epochs);
  get_to_if(j, "batch_size", c.batch_size);
  if (j.contains("base_mode")) {
    const std::string mode = j.at("base_mode").get<std::string>();
    if (mode == "joint") {
      c.base_mode = protocol::BaseMode::kJoint;
    } else if (mode == "two-stage" || mode == "two_stage") {
      c.base_mode = protocol::BaseMode::kTwoStage;
    } else {
      fail(ErrorCode::kInvalidConfig, "base_mode must be joint or two-stage");
    }
  }
}

void apply_dataset(const json& j, DatasetConfig& c) {
  if (j.contains("kind")) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "synthetic") {
      c.kind = DatasetConfig::Kind::kSynthetic;
    } else if (kind == "manifest") {
      c.kind = DatasetConfig::Kind::kManifest;
    } else {
      fail(ErrorCode::kInvalidConfig, "dataset kind must be synthetic or manifest");
    }
  }
  get_to_if(j, "path", c.manifest_path);
  get_to_if(j, "classes", c.synthetic.n_classes);
  get_to_if(j, "train_per_class", c.synthetic.train_per_class);
  get_to_if(j, "eval_per_class", c.synthetic.eval_per_class);
  get_to_if(j, "duration_s", c.synthetic.duration_s);
  get_to_if(j, "sample_rate", c.synthetic.sample_rate);
  get_to_if(j, "noise_level", c.synthetic.noise_level);
}

}  // namespace

void apply_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) fail(ErrorCode::kParseError, "config root must be a JSON object");
  if (j.contains("seed")) cfg.settings.protocol.seed = j.at("seed").get<std::uint64_t>();
  get_to_if(j, "workers", cfg.settings.workers);
  get_to_if(j, "out_dir", cfg.out_dir);
  if (j.contains("dsp")) apply_dsp(j.at("dsp"), cfg.settings.dsp);
  if (j.contains("embedder")) apply_embedder(j.at("embedder"), cfg.settings.embedder);
  if (j.contains("loss")) apply_loss(j.at("loss"), cfg.settings.protocol.loss);
  if (j.contains("optimizer")) apply_optimizer(j.at("optimizer"), cfg.settings.protocol.optimizer);
  if (j.contains("classifier")) apply_classifier(j.at("classifier"), cfg.settings.protocol.classifier);
  if (j.contains("protocol")) apply_protocol(j.at("protocol"), cfg.settings.protocol);
  if (j.contains("dataset")) apply_dataset(j.at("dataset"), cfg.dataset);
  // Feature dimensions stay in lockstep unless overridden explicitly.
  if (j.contains("dsp") && j.at("dsp").contains("n_mels") &&
      !(j.contains("embedder") && j.at("embedder").contains("n_mels"))) {
    cfg.settings.embedder.n_mels = cfg.settings.dsp.n_mels;
  }
  if (j.contains("embedder")) get_to_if(j.at("embedder"), "n_mels", cfg.settings.embedder.n_mels);
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, path + ": " + e.what());
  }
  RunConfig cfg = default_config();
  apply_json(cfg, j);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  const protocol::ProtocolConfig& p = cfg.settings.protocol;
  json j;
  j["seed"] = p.seed;
  j["workers"] = cfg.settings.workers;
  j["out_dir"] = cfg.out_dir;
  j["dsp"] = {{"frame_len_ms", cfg.settings.dsp.frame_len_ms},
              {"hop_ms", cfg.settings.dsp.hop_ms},
              {"n_fft", cfg.settings.dsp.n_fft},
              {"n_mels", cfg.settings.dsp.n_mels},
              {"fmin_hz", cfg.settings.dsp.fmin_hz},
              {"fmax_hz", cfg.settings.dsp.fmax_hz},
              {"log_floor", cfg.settings.dsp.log_floor}};
  j["embedder"] = {{"embedding_dim", cfg.settings.embedder.embedding_dim},
                   {"channels", cfg.settings.embedder.channels},
                   {"blocks", cfg.settings.embedder.blocks},
                   {"projection_dim", cfg.settings.embedder.projection_dim},
                   {"n_mels", cfg.settings.embedder.n_mels}};
  j["loss"] = {{"tau", p.loss.tau},
               {"lambda", p.loss.lambda},
               {"beta", p.loss.beta},
               {"alpha", p.loss.alpha},
               {"scale", p.loss.scale}};
  j["optimizer"] = {{"learning_rate", p.optimizer.learning_rate},
                    {"momentum", p.optimizer.momentum}};
  j["classifier"] = {{"sigma_init", p.classifier.sigma_init},
                     {"stochastic", p.classifier.stochastic},
                     {"train_sigma", p.classifier.train_sigma}};
  j["protocol"] = {{"n_base_classes", p.n_base_classes},
                   {"sessions", p.sessions},
                   {"way", p.way},
                   {"shot", p.shot},
                   {"base_epochs", p.base_epochs},
                   {"classifier_epochs", p.classifier_epochs},
                   {"incremental_epochs", p.incremental_epochs},
                   {"batch_size", p.batch_size},
                   {"base_mode", p.base_mode == protocol::BaseMode::kJoint ? "joint" : "two-stage"}};
  json d;
  d["kind"] = cfg.dataset.kind == DatasetConfig::Kind::kSynthetic ? "synthetic" : "manifest";
  if (cfg.dataset.kind == DatasetConfig::Kind::kManifest) {
    d["path"] = cfg.dataset.manifest_path;
  } else {
    d["classes"] = cfg.dataset.synthetic.n_classes;
    d["train_per_class"] = cfg.dataset.synthetic.train_per_class;
    d["eval_per_class"] = cfg.dataset.synthetic.eval_per_class;
    d["duration_s"] = cfg.dataset.synthetic.duration_s;
    d["sample_rate"] = cfg.dataset.synthetic.sample_rate;
    d["noise_level"] = cfg.dataset.synthetic.noise_level;
  }
  j["dataset"] = d;
  return j;
}

std::string config_digest(const RunConfig& cfg) {
  const std::string dump = to_json(cfg).dump();
  const std::uint64_t h = hash_str(dump);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

datagen::ManifestClipProvider make_provider(const RunConfig& cfg) {
  if (cfg.dataset.kind == DatasetConfig::Kind::kSynthetic) {
    datagen::SyntheticSpec spec = cfg.dataset.synthetic;
    spec.seed = cfg.settings.protocol.seed;
    return datagen::ManifestClipProvider(datagen::synthetic_manifest(spec));
  }
  return datagen::ManifestClipProvider(datagen::load_manifest(cfg.dataset.manifest_path));
}

}  // namespace fcac::config
