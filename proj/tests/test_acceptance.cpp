// Acceptance suite: every criterion runs standalone at its stated tolerance
// and prints one PASS line when it holds.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <set>

#include "fcac/protocol.hpp"
#include "fcac/rng.hpp"
#include "fcac/selfcheck.hpp"
#include "oracles.hpp"

using namespace fcac;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void pass_line(const char* name) { std::cout << "[ACCEPTANCE] " << name << ": PASS\n"; }

// Desk-scale configuration for the synthetic experiments.
protocol::RunSettings acceptance_settings() {
  protocol::RunSettings s;
  s.dsp.n_mels = 48;
  s.dsp.fmin_hz = 100.0;
  s.embedder.embedding_dim = 16;
  s.embedder.channels = {4, 8};
  s.embedder.blocks = {1, 1};
  s.embedder.projection_dim = 8;
  s.embedder.n_mels = 48;
  s.protocol.n_base_classes = 6;
  s.protocol.sessions = 2;
  s.protocol.way = 2;
  s.protocol.shot = 5;
  s.protocol.base_epochs = 20;
  s.protocol.classifier_epochs = 8;
  s.protocol.incremental_epochs = 60;
  s.protocol.batch_size = 32;
  s.protocol.base_mode = protocol::BaseMode::kJoint;
  s.protocol.optimizer.learning_rate = 0.05;
  s.protocol.optimizer.momentum = 0.9;
  s.protocol.loss.scale = 16.0;
  s.protocol.loss.lambda = 0.2;
  s.protocol.loss.beta = 1.0;
  s.protocol.loss.alpha = 0.5;
  s.protocol.loss.tau = 0.07;
  s.protocol.classifier.sigma_init = 0.1;
  return s;
}

datagen::SyntheticSpec acceptance_dataset() {
  datagen::SyntheticSpec spec;
  spec.n_classes = 10;
  spec.train_per_class = 25;
  spec.eval_per_class = 8;
  spec.duration_s = 0.3;
  spec.sample_rate = 16000;
  spec.noise_level = 0.05;
  return spec;
}

datagen::ManifestClipProvider acceptance_provider(std::uint64_t seed) {
  datagen::SyntheticSpec spec = acceptance_dataset();
  spec.seed = seed;
  return datagen::ManifestClipProvider(datagen::synthetic_manifest(spec));
}

Tensor random_unit_rows(int n, int d, RandomStream& rng) {
  Tensor t({n, d});
  for (int i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < d; ++j) {
      t.at(i, j) = rng.normal();
      norm2 += t.at(i, j) * t.at(i, j);
    }
    for (int j = 0; j < d; ++j) t.at(i, j) /= std::sqrt(norm2);
  }
  return t;
}

}  // namespace

TEST_CASE("metric reproduction: published AA/PD cells from printed rows") {
  const auto start = std::chrono::steady_clock::now();
  int cells = 0;
  for (const auto* table : {&selfcheck::published_rows_nsynth100(),
                            &selfcheck::published_rows_ls100()}) {
    for (const selfcheck::PublishedRow& row : *table) {
      const auto variant = std::string(row.variant) == "Incr" ? protocol::MetricVariant::kIncr
                           : std::string(row.variant) == "Base" ? protocol::MetricVariant::kBase
                                                                : protocol::MetricVariant::kAll;
      const protocol::AaPd got = protocol::aa_pd(row.accuracies, variant);
      CHECK_MESSAGE(std::abs(got.aa - row.aa) <= row.aa_tol + 1e-9, row.method, "/", row.variant);
      CHECK_MESSAGE(std::abs(got.pd - row.pd) <= 0.01 + 1e-9, row.method, "/", row.variant);
      ++cells;
    }
  }
  CHECK(cells == 36);  // 6 methods x 3 variants x 2 datasets

  // spot anchors
  const auto& nsynth = selfcheck::published_rows_nsynth100();
  const auto ours_all_nsynth = protocol::aa_pd(nsynth.back().accuracies, protocol::MetricVariant::kAll);
  CHECK(std::abs(ours_all_nsynth.aa - 95.77) <= 0.01);
  CHECK(ours_all_nsynth.pd == doctest::Approx(8.27).epsilon(1e-12));
  const auto& ls = selfcheck::published_rows_ls100();
  const auto ours_all_ls = protocol::aa_pd(ls.back().accuracies, protocol::MetricVariant::kAll);
  CHECK(std::abs(ours_all_ls.aa - 91.41) <= 0.01);
  CHECK(std::abs(ours_all_ls.pd - 4.18) <= 0.01 + 1e-9);

  CHECK(seconds_since(start) < 1.0);
  pass_line("metric-reproduction");
}

TEST_CASE("gradient oracle: reverse mode matches central differences") {
  const auto start = std::chrono::steady_clock::now();
  using selfcheck::LossKind;
  const struct {
    LossKind kind;
    const char* name;
  } losses[] = {{LossKind::kSupcon, "supcon"},
                {LossKind::kCosineCe, "cosine_ce"},
                {LossKind::kJointBase, "joint_base"},
                {LossKind::kPrototype, "prototype"},
                {LossKind::kIncremental, "incremental"}};
  for (const auto& entry : losses) {
    const double worst = selfcheck::gradient_check(entry.kind, 616, 100);
    CHECK_MESSAGE(worst < 1e-4, entry.name, " worst relative error ", worst);
  }
  CHECK(seconds_since(start) < 30.0);
  pass_line("gradient-oracle");
}

TEST_CASE("supcon equivalence and permutation invariance") {
  double worst_diff = 0.0;
  double worst_perm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    RandomStream rng(mix_tag(424242, static_cast<std::uint64_t>(trial)));
    losses::LabeledBatch batch;
    const int n_classes = 2 + static_cast<int>(rng.uniform_int(3));
    for (int c = 0; c < n_classes; ++c) {
      const int count = 2 + static_cast<int>(rng.uniform_int(2));
      for (int k = 0; k < count; ++k) batch.labels.push_back(c);
    }
    const int n = static_cast<int>(batch.labels.size());
    const int d = 2 + static_cast<int>(rng.uniform_int(7));
    batch.rows = random_unit_rows(n, d, rng);
    const double tau = 0.03 + rng.uniform();

    const double stable = losses::supcon_loss_value(batch, tau);
    worst_diff = std::max(worst_diff, std::abs(stable - oracles::naive_supcon(batch, tau)));

    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    losses::LabeledBatch shuffled;
    shuffled.rows = Tensor({n, d});
    shuffled.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      shuffled.labels[static_cast<size_t>(i)] = batch.labels[static_cast<size_t>(perm[i])];
      for (int j = 0; j < d; ++j) {
        shuffled.rows.at(i, j) = batch.rows.at(perm[static_cast<size_t>(i)], j);
      }
    }
    worst_perm = std::max(worst_perm, std::abs(losses::supcon_loss_value(shuffled, tau) - stable));
  }
  CHECK(worst_diff < 1e-10);
  CHECK(worst_perm < 1e-12);
  pass_line("supcon-equivalence");
}

TEST_CASE("stochastic classifier: zero-sigma bit identity and sampler moments") {
  // A full protocol run with sigma = 0 must be bit-identical to the
  // deterministic-classifier run under the same seed.
  protocol::RunSettings stochastic = acceptance_settings();
  stochastic.protocol.seed = 3;
  stochastic.protocol.classifier.stochastic = true;
  stochastic.protocol.classifier.sigma_init = 0.0;
  stochastic.protocol.classifier.train_sigma = false;

  protocol::RunSettings deterministic = stochastic;
  deterministic.protocol.classifier.stochastic = false;

  auto provider = acceptance_provider(3);
  protocol::RunOutcome a = protocol::run_protocol_full(provider, stochastic);
  protocol::RunOutcome b = protocol::run_protocol_full(provider, deterministic);
  CHECK(a.state.mu.bit_equal(b.state.mu));
  CHECK(a.state.sigma.bit_equal(b.state.sigma));
  CHECK(a.params.tensors.bit_equal(b.params.tensors));
  REQUIRE(a.report.sessions.size() == b.report.sessions.size());
  for (size_t m = 0; m < a.report.sessions.size(); ++m) {
    CHECK(a.report.sessions[m].base.correct == b.report.sessions[m].base.correct);
    CHECK(a.report.sessions[m].all.correct == b.report.sessions[m].all.correct);
  }
  CHECK(a.report.base_clustering_ratio == b.report.base_clustering_ratio);

  // Monte-Carlo moments over 10 000 seeded draws.
  const int d = 8, n_classes = 4, draws = 10000;
  classifier::StochasticClassifierState state;
  state.dim = d;
  state.mu = Tensor({d, n_classes});
  state.sigma = Tensor({d, n_classes});
  RandomStream rng(515);
  for (long long i = 0; i < state.mu.size(); ++i) {
    state.mu[i] = rng.normal();
    state.sigma[i] = 0.05 + 0.5 * rng.uniform();
  }
  for (int j = 0; j < n_classes; ++j) state.class_ids.push_back(j);
  state.session_boundaries.push_back(0);

  Tensor sum({d, n_classes}), sum_sq({d, n_classes});
  for (int k = 0; k < draws; ++k) {
    Tensor w = classifier::sample_weights(state, mix_tag(717, static_cast<std::uint64_t>(k)));
    for (long long i = 0; i < w.size(); ++i) {
      sum[i] += w[i];
      sum_sq[i] += w[i] * w[i];
    }
  }
  for (long long i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / draws;
    const double sd = std::sqrt(std::max(0.0, sum_sq[i] / draws - mean * mean));
    CHECK(std::abs(mean - state.mu[i]) <= 4.0 * state.sigma[i] / std::sqrt(double(draws)));
    CHECK(std::abs(sd - state.sigma[i]) / state.sigma[i] <= 0.05);
  }
  pass_line("stochastic-classifier");
}

TEST_CASE("synthetic end-to-end: 6 base + 2 x 2-way 5-shot") {
  const auto start = std::chrono::steady_clock::now();
  int passing_seeds = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    protocol::RunSettings settings = acceptance_settings();
    settings.protocol.seed = seed;
    auto provider = acceptance_provider(seed);
    protocol::RunReport report = protocol::run_protocol(provider, settings);
    REQUIRE(report.sessions.size() == 3);
    const double final_all = report.sessions.back().all.accuracy();
    const double base_drop =
        report.sessions.front().base.accuracy() - report.sessions.back().base.accuracy();
    const bool ok = final_all >= 0.90 && base_drop < 0.05;
    MESSAGE("seed ", seed, ": final all ", final_all, ", base drop ", base_drop);
    passing_seeds += ok;
  }
  CHECK(passing_seeds >= 4);
  CHECK(seconds_since(start) < 600.0);
  pass_line("synthetic-end-to-end");
}

TEST_CASE("clustering claim: contrastive base training tightens clusters") {
  int wins = 0;
  std::vector<double> scl_ratios, ce_ratios;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    double ratio[2];
    for (int variant = 0; variant < 2; ++variant) {
      protocol::RunSettings settings = acceptance_settings();
      settings.protocol.seed = seed;
      settings.protocol.sessions = 0;
      settings.protocol.loss.beta = variant == 0 ? 1.0 : 0.0;
      auto provider = acceptance_provider(seed);
      auto sessions = protocol::split_dataset(provider.manifest(), settings.protocol, seed);
      protocol::SessionDataset base;
      base.session_index = 0;
      base.class_set = sessions[0].class_set;
      base.train_by_class = std::move(sessions[0].train_by_class);

      embedder::EmbedderParams params =
          protocol::train_representation(provider, base, settings);
      params.frozen = true;
      std::vector<size_t> entries;
      std::vector<int> labels;
      for (const auto& [c, v] : base.train_by_class) {
        for (size_t e : v) {
          entries.push_back(e);
          labels.push_back(c);
        }
      }
      Tensor emb({static_cast<int>(entries.size()), settings.embedder.embedding_dim});
      for (size_t i = 0; i < entries.size(); ++i) {
        auto spec = dsp::log_mel_spectrogram(provider.load(entries[i]), settings.dsp);
        Tensor e = embedder::embed(spec, params);
        for (long long k = 0; k < e.size(); ++k) emb.at(static_cast<int>(i), static_cast<int>(k)) = e[k];
      }
      ratio[variant] = protocol::clustering_ratio(emb, labels);
    }
    scl_ratios.push_back(ratio[0]);
    ce_ratios.push_back(ratio[1]);
    wins += ratio[0] < ratio[1];
    MESSAGE("seed ", seed, ": scl+ce ", ratio[0], " vs ce-only ", ratio[1]);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  CHECK(median(scl_ratios) < median(ce_ratios));
  // one-sided sign test over 10 paired seeds at the 5% level needs >= 9 wins
  CHECK(wins >= 9);
  pass_line("clustering-claim");
}

namespace {

class LoggingProvider : public datagen::ClipProvider {
 public:
  explicit LoggingProvider(const datagen::ClipProvider& inner) : inner_(inner) {}
  dsp::AudioClip load(size_t entry_index) const override {
    log_.push_back(entry_index);
    return inner_.load(entry_index);
  }
  const datagen::DatasetManifest& manifest() const override { return inner_.manifest(); }
  const std::vector<size_t>& log() const { return log_; }

 private:
  const datagen::ClipProvider& inner_;
  mutable std::vector<size_t> log_;
};

}  // namespace

TEST_CASE("protocol invariants: data isolation, frozen backbone, class growth") {
  protocol::RunSettings settings = acceptance_settings();
  settings.protocol.seed = 2;
  auto inner = acceptance_provider(2);
  LoggingProvider provider(inner);

  // manual lifecycle so the backbone can be snapshotted between sessions
  auto sessions = protocol::split_dataset(inner.manifest(), settings.protocol, 2);
  std::vector<std::set<size_t>> train_sets;
  for (const auto& s : sessions) {
    std::set<size_t> t;
    for (const auto& [c, v] : s.train_by_class) t.insert(v.begin(), v.end());
    train_sets.push_back(std::move(t));
  }
  std::vector<std::set<size_t>> supports(sessions.size());
  for (int m = 1; m <= settings.protocol.sessions; ++m) {
    auto sup = protocol::sample_episode(sessions[static_cast<size_t>(m)], settings.protocol.way,
                                        settings.protocol.shot, 2);
    supports[static_cast<size_t>(m)] = std::set<size_t>(sup.begin(), sup.end());
  }

  protocol::SessionDataset base;
  base.session_index = 0;
  base.class_set = sessions[0].class_set;
  base.train_by_class = std::move(sessions[0].train_by_class);
  protocol::BaseResult br = protocol::train_base(provider, std::move(base), settings);
  const ParamSet frozen_snapshot = br.params.tensors;

  auto state = br.state;
  auto prototypes = state.prototypes();
  protocol::EvalContext ctx(provider, settings);
  for (int m = 1; m <= settings.protocol.sessions; ++m) {
    auto support = protocol::sample_episode(sessions[static_cast<size_t>(m)],
                                            settings.protocol.way, settings.protocol.shot, 2);
    state = protocol::train_incremental(m, provider, support,
                                        sessions[static_cast<size_t>(m)].class_set, br.params,
                                        std::move(state), prototypes, settings);
    prototypes = state.prototypes();
    protocol::evaluate(m, br.params, state, sessions, ctx);
    // backbone bitwise frozen, class count grows by exactly N per session
    CHECK(br.params.tensors.bit_equal(frozen_snapshot));
    CHECK(state.n_classes() == settings.protocol.n_base_classes + m * settings.protocol.way);
  }

  // old-session training data is structurally out of reach afterwards
  const auto& log = provider.log();
  std::map<int, size_t> first_access, last_access;
  for (size_t pos = 0; pos < log.size(); ++pos) {
    for (size_t m = 0; m < train_sets.size(); ++m) {
      if (train_sets[m].count(log[pos])) {
        if (!first_access.count(static_cast<int>(m))) first_access[static_cast<int>(m)] = pos;
        last_access[static_cast<int>(m)] = pos;
      }
    }
  }
  for (int m = 0; m < settings.protocol.sessions; ++m) {
    REQUIRE(last_access.count(m));
    if (first_access.count(m + 1)) CHECK(last_access[m] < first_access[m + 1]);
  }
  for (int m = 1; m <= settings.protocol.sessions; ++m) {
    for (size_t pos = 0; pos < log.size(); ++pos) {
      if (train_sets[static_cast<size_t>(m)].count(log[pos])) {
        CHECK(supports[static_cast<size_t>(m)].count(log[pos]) == 1);
      }
    }
  }
  pass_line("protocol-invariants");
}

TEST_CASE("dsp: Parseval, frame counts, shapes and tone localization") {
  // Parseval within 1e-9 relative on random frames
  RandomStream rng(88);
  for (int trial = 0; trial < 50; ++trial) {
    const int n_fft = 512;
    std::vector<double> frame(static_cast<size_t>(n_fft));
    double energy = 0.0;
    for (auto& x : frame) {
      x = rng.uniform(-1.0, 1.0);
      energy += x * x;
    }
    auto power = dsp::power_spectrum(frame, n_fft);
    double two_sided = power[0] + power[static_cast<size_t>(n_fft / 2)];
    for (int k = 1; k < n_fft / 2; ++k) two_sided += 2.0 * power[static_cast<size_t>(k)];
    CHECK(std::abs(two_sided - n_fft * energy) <= 1e-9 * n_fft * energy);
  }

  // frame-count formula matches start-index enumeration
  for (int trial = 0; trial < 200; ++trial) {
    const int frame = 2 + static_cast<int>(rng.uniform_int(400));
    const int hop = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(frame)));
    const long long n = frame + static_cast<long long>(rng.uniform_int(4000));
    CHECK(dsp::frame_count(n, frame, hop) == oracles::loop_frame_count(n, frame, hop));
  }

  // 4 s at 16 kHz under defaults: 398 x 128
  dsp::DspConfig cfg;
  dsp::AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(64000);
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.5 * std::sin(2.0 * oracles::kPi * 440.0 * static_cast<double>(i) / 16000.0);
  }
  auto spec = dsp::log_mel_spectrogram(clip, cfg);
  CHECK(spec.n_frames() == 398);
  CHECK(spec.n_mels() == 128);

  // the tone's argmax mel bin is the filter whose center is nearest 440 Hz
  auto centers = dsp::mel_filter_centers_hz(cfg, 16000);
  int nearest = 0;
  for (size_t m = 1; m < centers.size(); ++m) {
    if (std::abs(centers[m] - 440.0) < std::abs(centers[static_cast<size_t>(nearest)] - 440.0)) {
      nearest = static_cast<int>(m);
    }
  }
  for (int t = 0; t < spec.n_frames(); ++t) {
    int argmax = 0;
    for (int m = 1; m < spec.n_mels(); ++m) {
      if (spec.values.at(t, m) > spec.values.at(t, argmax)) argmax = m;
    }
    CHECK(argmax == nearest);
  }
  pass_line("dsp");
}
