#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fcac/autodiff.hpp"
#include "fcac/dsp.hpp"
#include "fcac/optim.hpp"
#include "fcac/tensor.hpp"

namespace fcac::embedder {

// Compact residual backbone: stem conv, one residual stage per channel width
// with mean-pool downsampling between stages, global mean pool, linear head
// to the embedding dimension, then L2 normalization. Per-channel affine
// scale/shift stands in for batch norm.
struct EmbedderConfig {
  int embedding_dim = 64;           // 512 matches the published prototype size
  std::vector<int> channels = {8, 16};
  std::vector<int> blocks = {2, 2};  // residual blocks per stage
  int projection_dim = 32;
  int n_mels = 128;

  void validate() const;
  int n_stages() const { return static_cast<int>(channels.size()); }
  // 2x2 pools: one after the stem plus one per stage transition.
  int n_pools() const { return n_stages(); }
  // Mel positions surviving the pools; the head consumes channels x positions
  // after averaging over time, keeping where along the mel axis energy sits.
  int mel_positions_after_pools() const {
    int w = n_mels;
    for (int i = 0; i < n_pools(); ++i) w /= 2;
    return w;
  }
  // Learned channel profiles plus the raw-profile skip.
  int head_input_dim() const { return channels.back() * mel_positions_after_pools() + n_mels; }
  // The embedding splits into a trained part and a smaller fixed random
  // projection of the raw mel profile; each part is unit-normalized before
  // the final normalization, so training can reshape its own subspace but can
  // never erase the raw-profile geometry that keeps unseen classes apart.
  int anchor_dim() const { return std::max(1, embedding_dim / 4); }
  int trained_dim() const { return embedding_dim - anchor_dim(); }
};

struct EmbedderParams {
  EmbedderConfig config;
  ParamSet tensors;
  bool frozen = false;

  void assert_mutable() const {
    if (frozen) fail(ErrorCode::kInvalidConfig, "attempt to mutate a frozen backbone");
  }
};

// Seeded He-style initialization; per-parameter streams keyed by name.
EmbedderParams init_embedder(const EmbedderConfig& cfg, std::uint64_t seed);

// Names of the projection-head parameters (trained with the backbone during
// the representation phase, discarded at inference).
bool is_projection_param(const std::string& name);

using BoundVars = std::map<std::string, diff::Var>;

// Bind every parameter tensor onto a tape, once per training step.
BoundVars bind_params(diff::Tape& t, const ParamSet& params);

// Unit-norm embedding of a spectrogram, built on the tape (differentiable
// w.r.t. the bound parameters).
diff::Var embed_graph(diff::Tape& t, const Tensor& spec_values, const EmbedderConfig& cfg,
                      const BoundVars& p);

// Two-layer MLP projection head followed by L2 normalization.
diff::Var project_graph(diff::Tape& t, diff::Var embedding, const EmbedderConfig& cfg,
                        const BoundVars& p);

// Plain evaluations (same graph path, values only).
Tensor embed(const dsp::LogMelSpectrogram& spec, const EmbedderParams& params);
Tensor project(const Tensor& embedding, const EmbedderParams& params);

}  // namespace fcac::embedder
