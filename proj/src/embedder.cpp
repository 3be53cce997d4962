#include "fcac/embedder.hpp"

#include <array>
#include <cmath>

#include "fcac/rng.hpp"

namespace fcac::embedder {

void EmbedderConfig::validate() const {
  if (embedding_dim < 2) fail(ErrorCode::kInvalidConfig, "embedding_dim must be at least 2");
  if (projection_dim <= 0) fail(ErrorCode::kInvalidConfig, "projection_dim must be positive");
  if (n_mels <= 0) fail(ErrorCode::kInvalidConfig, "n_mels must be positive");
  if (channels.empty() || channels.size() != blocks.size()) {
    fail(ErrorCode::kInvalidConfig, "channels and blocks must be non-empty and equal length");
  }
  for (int c : channels) {
    if (c <= 0) fail(ErrorCode::kInvalidConfig, "channel widths must be positive");
  }
  for (int b : blocks) {
    if (b < 0) fail(ErrorCode::kInvalidConfig, "block counts must be >= 0");
  }
}

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, std::uint64_t seed, const std::string& name) {
  RandomStream rng = RandomStream::keyed(seed, "init:" + name);
  Tensor t(std::move(shape));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long long i = 0; i < t.size(); ++i) t[i] = std_dev * rng.normal();
  return t;
}

void add_conv(ParamSet& p, const std::string& prefix, int c_out, int c_in, std::uint64_t seed) {
  p.add(prefix + ".w", he_normal({c_out, c_in, 3, 3}, c_in * 9, seed, prefix + ".w"));
  p.add(prefix + ".gamma", Tensor::full({c_out}, 1.0));
  p.add(prefix + ".beta", Tensor({c_out}));
}

}  // namespace

EmbedderParams init_embedder(const EmbedderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EmbedderParams ep;
  ep.config = cfg;
  ParamSet& p = ep.tensors;

  // Stem sees two channels: the spectrogram and a mel-position ramp. Global
  // pooling would otherwise wash out where along the mel axis energy sits.
  add_conv(p, "stem", cfg.channels[0], 2, seed);
  for (int s = 0; s < cfg.n_stages(); ++s) {
    if (s > 0) add_conv(p, "stage" + std::to_string(s) + ".trans", cfg.channels[s], cfg.channels[s - 1], seed);
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      add_conv(p, bp + ".conv1", cfg.channels[s], cfg.channels[s], seed);
      add_conv(p, bp + ".conv2", cfg.channels[s], cfg.channels[s], seed);
    }
  }
  const int head_in = cfg.head_input_dim();
  p.add("head.w", he_normal({cfg.trained_dim(), head_in}, head_in, seed, "head.w"));
  p.add("head.b", Tensor({cfg.trained_dim()}));
  // Seeded but never optimized; carries the raw mel profile into the
  // embedding so the trained half cannot rotate unseen classes onto seen
  // ones. The "fixed." prefix exempts it from gradient updates.
  p.add("fixed.skip", he_normal({cfg.anchor_dim(), cfg.n_mels}, cfg.n_mels, seed, "fixed.skip"));
  p.add("proj.w1", he_normal({cfg.embedding_dim, cfg.embedding_dim}, cfg.embedding_dim, seed, "proj.w1"));
  // Positive bias keeps the hidden ReLU mostly out of the all-dead region at
  // small embedding dims.
  p.add("proj.b1", Tensor::full({cfg.embedding_dim}, 0.1));
  p.add("proj.w2",
        he_normal({cfg.projection_dim, cfg.embedding_dim}, cfg.embedding_dim, seed, "proj.w2"));
  // Small nonzero output bias: a fully dead hidden layer still projects to a
  // well-defined unit vector instead of an unnormalizable zero.
  {
    Tensor b2({cfg.projection_dim});
    RandomStream rng = RandomStream::keyed(seed, "init:proj.b2");
    for (long long i = 0; i < b2.size(); ++i) b2[i] = 0.01 * rng.normal();
    p.add("proj.b2", std::move(b2));
  }
  return ep;
}

bool is_projection_param(const std::string& name) { return name.rfind("proj.", 0) == 0; }

BoundVars bind_params(diff::Tape& t, const ParamSet& params) {
  BoundVars vars;
  for (const auto& [name, tensor] : params.items()) vars.emplace(name, t.input(tensor));
  return vars;
}

namespace {

// Per-sample, per-channel normalization to zero mean / unit variance,
// composed from the tape primitives so gradients flow through the statistics.
// Without it the convolution outputs carry a large constant component that
// swamps the input-dependent signal after spatial pooling.
diff::Var instance_norm(diff::Tape& t, diff::Var x) {
  const int channels = t.value(x).shape()[0];
  diff::Var ones = t.input(Tensor::full({channels}, 1.0));
  diff::Var zeros = t.input(Tensor({channels}));
  diff::Var neg_mean = t.scale(t.global_mean_pool(x), -1.0);
  diff::Var centered = t.channel_affine(x, ones, neg_mean);
  diff::Var var = t.global_mean_pool(t.mul(centered, centered));
  diff::Var inv_std = t.exp(t.scale(t.log(t.add(var, t.constant(1e-5))), -0.5));
  return t.channel_affine(centered, inv_std, zeros);
}

diff::Var conv_affine_relu(diff::Tape& t, diff::Var x, const std::string& prefix,
                           const BoundVars& p, bool with_relu) {
  diff::Var y = t.conv2d_same(x, p.at(prefix + ".w"));
  y = instance_norm(t, y);
  y = t.channel_affine(y, p.at(prefix + ".gamma"), p.at(prefix + ".beta"));
  return with_relu ? t.relu(y) : y;
}

diff::Var normalize(diff::Tape& t, diff::Var v) {
  diff::Var norm = t.l2norm(v);
  if (t.value(norm).scalar_value() == 0.0) {
    fail(ErrorCode::kZeroVector, "zero vector before normalization");
  }
  return t.div(v, norm);
}

}  // namespace

diff::Var embed_graph(diff::Tape& t, const Tensor& spec_values, const EmbedderConfig& cfg,
                      const BoundVars& p) {
  if (spec_values.ndim() != 2 || spec_values.shape()[1] != cfg.n_mels) {
    fail(ErrorCode::kShapeMismatch,
         "spectrogram shape " + spec_values.shape_string() + " does not match n_mels " +
             std::to_string(cfg.n_mels));
  }
  const int frames = spec_values.shape()[0];
  const int min_extent = 1 << cfg.n_pools();
  if (frames < min_extent || cfg.n_mels < min_extent) {
    fail(ErrorCode::kShapeMismatch, "spectrogram too small for " +
                                        std::to_string(cfg.n_pools()) + " pooling stages");
  }

  // Standardize per spectrogram; raw log-mel values carry a large negative
  // offset that would otherwise swamp the convolution stem.
  double mean = 0.0;
  for (long long i = 0; i < spec_values.size(); ++i) mean += spec_values[i];
  mean /= static_cast<double>(spec_values.size());
  double var = 0.0;
  for (long long i = 0; i < spec_values.size(); ++i) {
    const double d = spec_values[i] - mean;
    var += d * d;
  }
  const double inv_std = 1.0 / std::max(std::sqrt(var / static_cast<double>(spec_values.size())), 1e-6);

  Tensor image({2, frames, cfg.n_mels});
  Tensor spec_only({1, frames, cfg.n_mels});
  for (long long i = 0; i < spec_values.size(); ++i) {
    const double v = (spec_values[i] - mean) * inv_std;
    image[i] = v;
    spec_only[i] = v;
  }
  for (int h = 0; h < frames; ++h) {
    for (int w = 0; w < cfg.n_mels; ++w) {
      image.at(1, h, w) = cfg.n_mels > 1 ? 2.0 * w / (cfg.n_mels - 1) - 1.0 : 0.0;
    }
  }
  diff::Var x = t.input(std::move(image));
  diff::Var input = t.input(std::move(spec_only));

  x = conv_affine_relu(t, x, "stem", p, true);
  x = t.mean_pool2(x);
  for (int s = 0; s < cfg.n_stages(); ++s) {
    if (s > 0) {
      x = conv_affine_relu(t, x, "stage" + std::to_string(s) + ".trans", p, true);
      x = t.mean_pool2(x);
    }
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      diff::Var y = conv_affine_relu(t, x, bp + ".conv1", p, true);
      y = conv_affine_relu(t, y, bp + ".conv2", p, false);
      x = t.relu(t.add(x, y));
    }
  }
  // Head input: learned channel profiles plus a skip from the raw mel
  // profile, both averaged over time. The skip keeps tone position available
  // to the embedding even for frequency ranges the base classes never
  // exercised.
  diff::Var conv_profile = t.flatten(t.mean_over_height(x));
  diff::Var input_profile = t.flatten(t.mean_over_height(input));
  std::array<diff::Var, 2> parts = {conv_profile, input_profile};
  diff::Var profile = t.concat(parts);
  // Standardize so no shared component dominates; otherwise every embedding
  // collapses into a narrow cone and unseen classes cannot land apart from
  // seen ones.
  diff::Var centered = t.sub(profile, t.mean(profile));
  diff::Var spread = t.mean(t.mul(centered, centered));
  diff::Var inv_dev = t.exp(t.scale(t.log(t.add(spread, t.constant(1e-8))), -0.5));
  diff::Var trained = t.add(t.matmul(p.at("head.w"), t.mul(centered, inv_dev)), p.at("head.b"));

  // Fixed half: a seeded, untrained projection of the standardized raw
  // profile. Each half is normalized on its own so relative scale stays 1:1.
  diff::Var rc = t.sub(input_profile, t.mean(input_profile));
  diff::Var rv = t.mean(t.mul(rc, rc));
  diff::Var rinv = t.exp(t.scale(t.log(t.add(rv, t.constant(1e-8))), -0.5));
  diff::Var anchored = t.matmul(p.at("fixed.skip"), t.mul(rc, rinv));

  std::array<diff::Var, 2> halves = {normalize(t, trained), normalize(t, anchored)};
  return normalize(t, t.concat(halves));
}

diff::Var project_graph(diff::Tape& t, diff::Var embedding, const EmbedderConfig& cfg,
                        const BoundVars& p) {
  (void)cfg;
  diff::Var h = t.relu(t.add(t.matmul(p.at("proj.w1"), embedding), p.at("proj.b1")));
  diff::Var z = t.add(t.matmul(p.at("proj.w2"), h), p.at("proj.b2"));
  return normalize(t, z);
}

Tensor embed(const dsp::LogMelSpectrogram& spec, const EmbedderParams& params) {
  diff::Tape t;
  BoundVars vars = bind_params(t, params.tensors);
  return t.value(embed_graph(t, spec.values, params.config, vars));
}

Tensor project(const Tensor& embedding, const EmbedderParams& params) {
  diff::Tape t;
  BoundVars vars = bind_params(t, params.tensors);
  return t.value(project_graph(t, t.input(embedding), params.config, vars));
}

}  // namespace fcac::embedder
