#include "fcac/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "fcac/rng.hpp"

namespace fcac::protocol {

size_t SessionDataset::train_size() const {
  size_t n = 0;
  for (const auto& [c, v] : train_by_class) n += v.size();
  return n;
}

void ProtocolConfig::validate(int available_classes) const {
  if (n_base_classes < 1) fail(ErrorCode::kInvalidConfig, "need at least one base class");
  if (sessions < 0) fail(ErrorCode::kInvalidConfig, "sessions must be >= 0");
  if (way < 1 && sessions > 0) fail(ErrorCode::kInvalidConfig, "way must be >= 1");
  if (shot < 1) fail(ErrorCode::kInvalidConfig, "shot must be >= 1");
  if (base_epochs < 1 || classifier_epochs < 1 || (sessions > 0 && incremental_epochs < 1)) {
    fail(ErrorCode::kInvalidConfig, "epoch counts must be >= 1");
  }
  if (batch_size < 4 || (sessions > 0 && batch_size < 2 * way)) {
    fail(ErrorCode::kInvalidConfig, "batch_size must be >= max(4, 2*way)");
  }
  loss.validate();
  classifier.validate();
  if (n_base_classes + way * sessions > available_classes) {
    fail(ErrorCode::kInsufficientClasses,
         std::to_string(n_base_classes) + " base + " + std::to_string(sessions) + " x " +
             std::to_string(way) + "-way needs more classes than the " +
             std::to_string(available_classes) + " available");
  }
}

AaPd aa_pd(const std::vector<double>& accuracies, MetricVariant variant) {
  const size_t min_len = variant == MetricVariant::kIncr ? 1 : 2;
  if (accuracies.size() < min_len) {
    fail(ErrorCode::kTooFewSessions, "need at least " + std::to_string(min_len) +
                                         " accuracies, got " + std::to_string(accuracies.size()));
  }
  AaPd out;
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  out.aa = sum / static_cast<double>(accuracies.size());
  out.pd = accuracies.front() - accuracies.back();
  return out;
}

double clustering_ratio(const Tensor& embeddings, const std::vector<int>& labels) {
  if (embeddings.ndim() != 2) fail(ErrorCode::kShapeMismatch, "embeddings must be n x d");
  const int n = embeddings.shape()[0];
  const int d = embeddings.shape()[1];
  if (static_cast<int>(labels.size()) != n) {
    fail(ErrorCode::kShapeMismatch, "labels do not match embeddings");
  }

  std::map<int, std::pair<Tensor, int>> acc;
  for (int i = 0; i < n; ++i) {
    auto [it, fresh] = acc.try_emplace(labels[static_cast<size_t>(i)], Tensor({d}), 0);
    for (int j = 0; j < d; ++j) it->second.first[j] += embeddings.at(i, j);
    it->second.second += 1;
  }
  if (acc.size() < 2) fail(ErrorCode::kDegenerateInput, "need at least two classes");
  std::map<int, Tensor> centroids;
  for (auto& [c, sum_count] : acc) {
    if (sum_count.second < 2) {
      fail(ErrorCode::kDegenerateInput, "class " + std::to_string(c) + " has fewer than 2 samples");
    }
    Tensor centroid = sum_count.first;
    for (int j = 0; j < d; ++j) centroid[j] /= sum_count.second;
    centroids.emplace(c, std::move(centroid));
  }

  double intra = 0.0;
  for (int i = 0; i < n; ++i) {
    const Tensor& c = centroids.at(labels[static_cast<size_t>(i)]);
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = embeddings.at(i, j) - c[j];
      s += diff * diff;
    }
    intra += std::sqrt(s);
  }
  intra /= n;

  double inter = 0.0;
  int pairs = 0;
  for (auto a = centroids.begin(); a != centroids.end(); ++a) {
    for (auto b = std::next(a); b != centroids.end(); ++b) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = a->second[j] - b->second[j];
        s += diff * diff;
      }
      inter += std::sqrt(s);
      ++pairs;
    }
  }
  inter /= pairs;
  if (inter == 0.0) fail(ErrorCode::kDegenerateInput, "all class centroids coincide");
  return intra / inter;
}

std::vector<SessionDataset> split_dataset(const datagen::DatasetManifest& manifest,
                                          const ProtocolConfig& cfg, std::uint64_t seed) {
  manifest.validate();
  const int n_classes = manifest.n_classes();
  cfg.validate(n_classes);

  std::vector<int> order(static_cast<size_t>(n_classes));
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng = RandomStream::keyed(seed, "split");
  rng.shuffle(order);

  std::vector<SessionDataset> sessions(static_cast<size_t>(cfg.sessions) + 1);
  std::map<int, int> session_of;
  size_t cursor = 0;
  for (int m = 0; m <= cfg.sessions; ++m) {
    SessionDataset& s = sessions[static_cast<size_t>(m)];
    s.session_index = m;
    const int take = m == 0 ? cfg.n_base_classes : cfg.way;
    for (int i = 0; i < take; ++i) s.class_set.push_back(order[cursor++]);
    std::sort(s.class_set.begin(), s.class_set.end());
    for (int c : s.class_set) session_of[c] = m;
  }

  for (size_t idx = 0; idx < manifest.entries.size(); ++idx) {
    const datagen::ManifestEntry& e = manifest.entries[idx];
    auto it = session_of.find(e.class_id);
    if (it == session_of.end()) continue;  // class unused by this split
    SessionDataset& s = sessions[static_cast<size_t>(it->second)];
    if (e.is_eval) {
      s.eval_entries.push_back(idx);
    } else {
      s.train_by_class[e.class_id].push_back(idx);
    }
  }

  for (const SessionDataset& s : sessions) {
    std::map<int, int> eval_per_class;
    for (size_t idx : s.eval_entries) ++eval_per_class[manifest.entries[idx].class_id];
    for (int c : s.class_set) {
      const int need = s.session_index == 0 ? 2 : cfg.shot;
      auto it = s.train_by_class.find(c);
      const int have = it == s.train_by_class.end() ? 0 : static_cast<int>(it->second.size());
      if (have < need) {
        fail(ErrorCode::kInsufficientShots, "class " + std::to_string(c) + " has " +
                                                std::to_string(have) + " train clips, needs " +
                                                std::to_string(need));
      }
      if (eval_per_class[c] < 1) {
        fail(ErrorCode::kEmptyEvalSet, "class " + std::to_string(c) + " has no eval clips");
      }
    }
  }
  return sessions;
}

std::vector<size_t> sample_episode(const SessionDataset& session, int way, int shot,
                                   std::uint64_t seed) {
  if (static_cast<int>(session.train_by_class.size()) < way) {
    fail(ErrorCode::kInsufficientShots, "session has fewer than " + std::to_string(way) + " classes");
  }
  std::vector<int> classes;
  for (const auto& [c, v] : session.train_by_class) classes.push_back(c);
  RandomStream class_rng = RandomStream::keyed(seed, "episode.classes",
                                               static_cast<std::uint64_t>(session.session_index));
  class_rng.shuffle(classes);
  classes.resize(static_cast<size_t>(way));
  std::sort(classes.begin(), classes.end());

  std::vector<size_t> support;
  for (int c : classes) {
    std::vector<size_t> pool = session.train_by_class.at(c);
    if (static_cast<int>(pool.size()) < shot) {
      fail(ErrorCode::kInsufficientShots,
           "class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
               " train clips, episode needs " + std::to_string(shot));
    }
    RandomStream rng = RandomStream::keyed(seed, "episode.shots", static_cast<std::uint64_t>(c));
    rng.shuffle(pool);
    support.insert(support.end(), pool.begin(), pool.begin() + shot);
  }
  return support;
}

// --- internal helpers -------------------------------------------------------

namespace {

using classifier::StochasticClassifierState;
using datagen::ClipProvider;
using embedder::EmbedderParams;

// Run fn(i) for i in [0, n) on up to `workers` threads; outputs land in
// caller-owned slots so results do not depend on scheduling.
void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min<int>(workers, static_cast<int>(n));
  pool.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

// Log-mel features for a set of entries, keyed by entry index.
std::map<size_t, Tensor> extract_features(const ClipProvider& provider,
                                          const std::vector<size_t>& entries,
                                          const dsp::DspConfig& cfg, int workers) {
  std::vector<Tensor> slots(entries.size());
  std::exception_ptr err;
  std::mutex err_mu;
  parallel_for(entries.size(), workers, [&](size_t i) {
    try {
      slots[i] = dsp::log_mel_spectrogram(provider.load(entries[i]), cfg).values;
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
  std::map<size_t, Tensor> out;
  for (size_t i = 0; i < entries.size(); ++i) out.emplace(entries[i], std::move(slots[i]));
  return out;
}

std::string col_name(const char* kind, int j) { return std::string(kind) + "." + std::to_string(j); }

// Cycling per-class pool of entry indices, reshuffled each pass.
class ClassPool {
 public:
  ClassPool(std::vector<size_t> entries, std::uint64_t seed, const std::string& tag, int class_id)
      : entries_(std::move(entries)), seed_(seed), tag_(tag), class_id_(class_id) {
    reshuffle();
  }

  size_t next() {
    if (cursor_ >= entries_.size()) reshuffle();
    return entries_[cursor_++];
  }

 private:
  void reshuffle() {
    RandomStream rng = RandomStream::keyed(seed_, tag_, static_cast<std::uint64_t>(class_id_),
                                           static_cast<std::uint64_t>(pass_++));
    rng.shuffle(entries_);
    cursor_ = 0;
  }

  std::vector<size_t> entries_;
  std::uint64_t seed_;
  std::string tag_;
  int class_id_;
  size_t cursor_ = 0;
  int pass_ = 0;
};

struct BatchItem {
  size_t entry;
  int class_id;
};

// Class-balanced batches: every selected class contributes at least two
// samples so the contrastive index sets are never empty.
class BalancedSampler {
 public:
  BalancedSampler(const SessionDataset& session, int batch_size, std::uint64_t seed,
                  const std::string& phase)
      : seed_(seed), phase_(phase) {
    for (const auto& [c, entries] : session.train_by_class) {
      class_ids_.push_back(c);
      pools_.emplace_back(entries, seed, phase + ".pool", c);
    }
    const int n_classes = static_cast<int>(class_ids_.size());
    classes_per_batch_ = std::min(n_classes, batch_size / 2);
    per_class_ = batch_size / classes_per_batch_;
    steps_per_epoch_ = static_cast<int>(
        (session.train_size() + static_cast<size_t>(classes_per_batch_ * per_class_) - 1) /
        static_cast<size_t>(classes_per_batch_ * per_class_));
  }

  int steps_per_epoch() const { return steps_per_epoch_; }

  std::vector<BatchItem> next_batch(int epoch, int step) {
    const int n_classes = static_cast<int>(class_ids_.size());
    std::vector<int> order(static_cast<size_t>(n_classes));
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng = RandomStream::keyed(seed_, phase_ + ".classes",
                                           static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(step));
    rng.shuffle(order);
    std::vector<BatchItem> batch;
    batch.reserve(static_cast<size_t>(classes_per_batch_ * per_class_));
    for (int k = 0; k < classes_per_batch_; ++k) {
      const int ci = order[static_cast<size_t>(k)];
      for (int q = 0; q < per_class_; ++q) {
        batch.push_back({pools_[static_cast<size_t>(ci)].next(), class_ids_[static_cast<size_t>(ci)]});
      }
    }
    return batch;
  }

 private:
  std::uint64_t seed_;
  std::string phase_;
  std::vector<int> class_ids_;
  std::vector<ClassPool> pools_;
  int classes_per_batch_ = 0;
  int per_class_ = 0;
  int steps_per_epoch_ = 0;
};

GradMap collect_grads(const diff::Tape& t, const embedder::BoundVars& vars,
                      const std::function<bool(const std::string&)>& want) {
  GradMap grads;
  for (const auto& [name, var] : vars) {
    if (want(name)) grads.emplace(name, t.grad(var));
  }
  return grads;
}

double finite_or_diverged(const diff::Tape& t, diff::Var loss) {
  const double v = t.value(loss).scalar_value();
  if (!std::isfinite(v)) fail(ErrorCode::kDiverged, "loss is not finite");
  return v;
}

// Embeddings (n x d) for a list of entries under frozen or fixed params.
Tensor embed_entries(const ClipProvider& provider, const std::vector<size_t>& entries,
                     const EmbedderParams& params, const dsp::DspConfig& dsp_cfg, int workers,
                     std::vector<int>* labels_out) {
  const int d = params.config.embedding_dim;
  Tensor out({static_cast<int>(entries.size()), d});
  std::exception_ptr err;
  std::mutex err_mu;
  parallel_for(entries.size(), workers, [&](size_t i) {
    try {
      const dsp::AudioClip clip = provider.load(entries[i]);
      const Tensor e = embedder::embed(dsp::log_mel_spectrogram(clip, dsp_cfg), params);
      for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = e[j];
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
  if (labels_out) {
    labels_out->clear();
    for (size_t idx : entries) {
      labels_out->push_back(provider.manifest().entries[idx].class_id);
    }
  }
  return out;
}

// Mu/sigma columns as a mutable ParamSet for the optimizer.
ParamSet classifier_param_set(const StochasticClassifierState& state) {
  ParamSet p;
  for (int j = 0; j < state.n_classes(); ++j) {
    p.add(col_name("mu", j), state.mu_column(j));
    p.add(col_name("sigma", j), state.sigma_column(j));
  }
  return p;
}

void write_back_classifier(const ParamSet& p, StochasticClassifierState& state) {
  for (int j = 0; j < state.n_classes(); ++j) {
    const Tensor& mu = p.at(col_name("mu", j));
    const Tensor& sigma = p.at(col_name("sigma", j));
    for (int i = 0; i < state.dim; ++i) {
      state.mu.at(i, j) = mu[i];
      state.sigma.at(i, j) = std::max(0.0, sigma[i]);
    }
  }
}

// Bind classifier columns on a tape; weights resampled via mu + eps*sigma
// when stochastic, plain mu otherwise.
struct BoundClassifier {
  std::map<std::string, diff::Var> leaves;  // mu.j / sigma.j inputs
  std::vector<diff::Var> weight_cols;
};

BoundClassifier bind_classifier(diff::Tape& t, const ParamSet& p, int n_classes, int dim,
                                bool stochastic, RandomStream* noise) {
  BoundClassifier bc;
  for (int j = 0; j < n_classes; ++j) {
    diff::Var mu = t.input(p.at(col_name("mu", j)));
    bc.leaves.emplace(col_name("mu", j), mu);
    if (stochastic) {
      diff::Var sigma = t.input(p.at(col_name("sigma", j)));
      bc.leaves.emplace(col_name("sigma", j), sigma);
      Tensor eps({dim});
      for (int i = 0; i < dim; ++i) eps[i] = noise->normal();
      bc.weight_cols.push_back(t.add(mu, t.mul(t.input(std::move(eps)), sigma)));
    } else {
      bc.weight_cols.push_back(mu);
    }
  }
  return bc;
}

void classifier_sgd_step(diff::Tape& t, const BoundClassifier& bc, ParamSet& params,
                         OptimizerState& opt, bool train_sigma) {
  GradMap grads;
  for (const auto& [name, var] : bc.leaves) {
    if (!train_sigma && name.rfind("sigma.", 0) == 0) continue;
    grads.emplace(name, t.grad(var));
  }
  sgd_step(params, grads, opt);
}

// CE training of (mu, sigma) on fixed embeddings; shared by the base tail and
// nothing else. Labels are column indices.
void train_classifier_ce(ParamSet& cls_params, StochasticClassifierState& state,
                         const Tensor& embeddings, const std::vector<int>& column_labels,
                         const RunSettings& settings, const std::string& noise_tag) {
  const ProtocolConfig& cfg = settings.protocol;
  const int n = embeddings.shape()[0];
  const int d = embeddings.shape()[1];
  OptimizerState opt = OptimizerState::create(cfg.optimizer, cls_params);
  int step_counter = 0;
  for (int epoch = 0; epoch < cfg.classifier_epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng = RandomStream::keyed(cfg.seed, noise_tag + ".order",
                                           static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      diff::Tape t;
      RandomStream noise = RandomStream::keyed(cfg.seed, noise_tag + ".noise",
                                               static_cast<std::uint64_t>(step_counter));
      BoundClassifier bc = bind_classifier(t, cls_params, state.n_classes(), d,
                                           cfg.classifier.stochastic, &noise);
      std::vector<diff::Var> embs;
      std::vector<int> labels;
      for (int k = start; k < stop; ++k) {
        const int i = order[static_cast<size_t>(k)];
        Tensor row({d});
        for (int j = 0; j < d; ++j) row[j] = embeddings.at(i, j);
        embs.push_back(t.input(std::move(row)));
        labels.push_back(column_labels[static_cast<size_t>(i)]);
      }
      diff::Var loss = losses::cosine_ce_loss(t, embs, labels, bc.weight_cols, cfg.loss.scale);
      finite_or_diverged(t, loss);
      t.backward(loss);
      classifier_sgd_step(t, bc, cls_params, opt, cfg.classifier.train_sigma);
      // sigma stays nonnegative
      for (int j = 0; j < state.n_classes(); ++j) {
        Tensor& s = cls_params.at(col_name("sigma", j));
        for (int i = 0; i < d; ++i) s[i] = std::max(0.0, s[i]);
      }
      ++step_counter;
    }
  }
  write_back_classifier(cls_params, state);
}

}  // namespace

// --- training ---------------------------------------------------------------

embedder::EmbedderParams train_representation(const ClipProvider& provider,
                                              const SessionDataset& base,
                                              const RunSettings& settings) {
  const ProtocolConfig& cfg = settings.protocol;
  if (base.train_by_class.empty()) fail(ErrorCode::kInvalidConfig, "base session has no train data");

  std::vector<size_t> all_entries;
  for (const auto& [c, v] : base.train_by_class) {
    all_entries.insert(all_entries.end(), v.begin(), v.end());
  }
  std::map<size_t, Tensor> features =
      extract_features(provider, all_entries, settings.dsp, settings.workers);

  EmbedderParams params = embedder::init_embedder(settings.embedder, cfg.seed);

  // Column order for the temporary base head: sorted class ids.
  std::map<int, int> column_of;
  for (int c : base.class_set) column_of.emplace(c, static_cast<int>(column_of.size()));

  const bool joint = cfg.base_mode == BaseMode::kJoint;
  ParamSet head;
  if (joint) {
    RandomStream rng = RandomStream::keyed(cfg.seed, "base.head");
    for (int j = 0; j < static_cast<int>(base.class_set.size()); ++j) {
      Tensor col({settings.embedder.embedding_dim});
      for (long long i = 0; i < col.size(); ++i) col[i] = 0.1 * rng.normal();
      head.add(col_name("basew", j), std::move(col));
    }
  }

  OptimizerState opt_net = OptimizerState::create(cfg.optimizer, params.tensors);
  OptimizerState opt_head = joint ? OptimizerState::create(cfg.optimizer, head) : OptimizerState{};

  BalancedSampler sampler(base, cfg.batch_size, cfg.seed, "base");
  for (int epoch = 0; epoch < cfg.base_epochs; ++epoch) {
    for (int step = 0; step < sampler.steps_per_epoch(); ++step) {
      std::vector<BatchItem> batch = sampler.next_batch(epoch, step);
      diff::Tape t;
      embedder::BoundVars vars = embedder::bind_params(t, params.tensors);
      std::vector<diff::Var> embs, projs;
      std::vector<int> labels;
      for (const BatchItem& item : batch) {
        diff::Var e = embedder::embed_graph(t, features.at(item.entry), settings.embedder, vars);
        embs.push_back(e);
        projs.push_back(embedder::project_graph(t, e, settings.embedder, vars));
        labels.push_back(column_of.at(item.class_id));
      }

      diff::Var loss{};
      std::vector<diff::Var> wcols;
      if (joint) {
        for (size_t j = 0; j < head.size(); ++j) {
          wcols.push_back(t.input(head.at(col_name("basew", static_cast<int>(j)))));
        }
        loss = losses::joint_base_loss(t, embs, projs, labels, wcols, cfg.loss);
      } else {
        loss = losses::supcon_loss(t, projs, labels, cfg.loss.tau);
      }
      finite_or_diverged(t, loss);
      t.backward(loss);

      GradMap net_grads = collect_grads(
          t, vars, [](const std::string& name) { return name.rfind("fixed.", 0) != 0; });
      sgd_step(params.tensors, net_grads, opt_net);
      if (joint) {
        GradMap head_grads;
        for (size_t j = 0; j < head.size(); ++j) {
          const std::string name = col_name("basew", static_cast<int>(j));
          head_grads.emplace(name, t.grad(wcols[j]));
        }
        sgd_step(head, head_grads, opt_head);
      }
    }
  }
  return params;
}

BaseResult train_base(const ClipProvider& provider, SessionDataset base,
                      const RunSettings& settings) {
  const ProtocolConfig& cfg = settings.protocol;
  BaseResult result;
  result.params = train_representation(provider, base, settings);
  result.params.frozen = true;  // incremental phases never touch the backbone

  // Final embeddings of the base train data under the frozen backbone.
  std::vector<size_t> all_entries;
  for (const auto& [c, v] : base.train_by_class) {
    all_entries.insert(all_entries.end(), v.begin(), v.end());
  }
  std::vector<int> labels;
  Tensor embeddings = embed_entries(provider, all_entries, result.params, settings.dsp,
                                    settings.workers, &labels);
  result.clustering_ratio = clustering_ratio(embeddings, labels);

  std::map<int, classifier::Prototype> protos =
      classifier::class_prototypes(embeddings, labels, base.class_set);
  std::vector<classifier::Prototype> ordered;
  for (int c : base.class_set) ordered.push_back(protos.at(c));
  StochasticClassifierState state;
  state = classifier::expand(state, ordered, cfg.classifier.sigma_init);

  std::map<int, int> column_of;
  for (int j = 0; j < state.n_classes(); ++j) column_of.emplace(state.class_ids[static_cast<size_t>(j)], j);
  std::vector<int> column_labels;
  for (int c : labels) column_labels.push_back(column_of.at(c));

  ParamSet cls = classifier_param_set(state);
  train_classifier_ce(cls, state, embeddings, column_labels, settings, "base.cls");

  base.drop_train_data();
  result.state = std::move(state);
  return result;
}

classifier::StochasticClassifierState train_incremental(
    int session_index, const ClipProvider& provider, const std::vector<size_t>& support_entries,
    const std::vector<int>& session_classes, const EmbedderParams& params,
    StochasticClassifierState state, const std::map<int, Tensor>& old_prototypes,
    const RunSettings& settings) {
  const ProtocolConfig& cfg = settings.protocol;
  if (!params.frozen) fail(ErrorCode::kInvalidConfig, "incremental training needs a frozen backbone");
  if (support_entries.empty()) fail(ErrorCode::kInvalidConfig, "empty support set");

  std::vector<int> labels;
  Tensor embeddings = embed_entries(provider, support_entries, params, settings.dsp,
                                    settings.workers, &labels);
  for (int c : labels) {
    if (!std::binary_search(session_classes.begin(), session_classes.end(), c)) {
      fail(ErrorCode::kInvalidConfig, "support clip from class " + std::to_string(c) +
                                          " outside the current session");
    }
  }

  std::map<int, classifier::Prototype> protos =
      classifier::class_prototypes(embeddings, labels, session_classes);
  std::vector<classifier::Prototype> ordered;
  for (int c : session_classes) ordered.push_back(protos.at(c));
  const int n_old = state.n_classes();
  state = classifier::expand(state, ordered, cfg.classifier.sigma_init);

  // Denominator prototypes, fixed for the whole session: carried-over
  // prototypes for old columns, the support means (this session's mu
  // initialization) for the new ones.
  std::vector<Tensor> anchor(static_cast<size_t>(n_old));
  for (int j = 0; j < n_old; ++j) {
    const int cid = state.class_ids[static_cast<size_t>(j)];
    auto it = old_prototypes.find(cid);
    if (it == old_prototypes.end()) {
      fail(ErrorCode::kMissingPrototype, "no prototype for class " + std::to_string(cid));
    }
    anchor[static_cast<size_t>(j)] = it->second;
  }
  for (int j = n_old; j < state.n_classes(); ++j) anchor.push_back(state.mu_column(j));

  std::map<int, int> column_of;
  for (int j = 0; j < state.n_classes(); ++j) column_of.emplace(state.class_ids[static_cast<size_t>(j)], j);
  std::vector<int> column_labels;
  for (int c : labels) column_labels.push_back(column_of.at(c));

  ParamSet cls = classifier_param_set(state);
  OptimizerState opt = OptimizerState::create(cfg.optimizer, cls);
  const int n = embeddings.shape()[0];
  const int d = embeddings.shape()[1];
  int step_counter = 0;
  for (int epoch = 0; epoch < cfg.incremental_epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng = RandomStream::keyed(cfg.seed, "incr.order",
                                           static_cast<std::uint64_t>(session_index),
                                           static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      diff::Tape t;
      RandomStream noise = RandomStream::keyed(cfg.seed, "incr.noise",
                                               static_cast<std::uint64_t>(session_index),
                                               static_cast<std::uint64_t>(step_counter));
      BoundClassifier bc = bind_classifier(t, cls, state.n_classes(), d,
                                           cfg.classifier.stochastic, &noise);
      std::vector<diff::Var> embs;
      std::vector<int> batch_labels;
      for (int k = start; k < stop; ++k) {
        const int i = order[static_cast<size_t>(k)];
        Tensor row({d});
        for (int j = 0; j < d; ++j) row[j] = embeddings.at(i, j);
        embs.push_back(t.input(std::move(row)));
        batch_labels.push_back(column_labels[static_cast<size_t>(i)]);
      }
      diff::Var loss = losses::incremental_loss(t, embs, batch_labels, anchor,
                                                bc.weight_cols, n_old, cfg.loss);
      finite_or_diverged(t, loss);
      t.backward(loss);
      classifier_sgd_step(t, bc, cls, opt, cfg.classifier.train_sigma);
      for (int j = 0; j < state.n_classes(); ++j) {
        Tensor& s = cls.at(col_name("sigma", j));
        for (int i = 0; i < d; ++i) s[i] = std::max(0.0, s[i]);
      }
      ++step_counter;
    }
  }
  write_back_classifier(cls, state);
  return state;
}

// --- evaluation ---------------------------------------------------------

const Tensor& EvalContext::embedding_of(size_t entry_index, const EmbedderParams& params) {
  auto it = cache_.find(entry_index);
  if (it != cache_.end()) return it->second;
  const dsp::AudioClip clip = provider_.load(entry_index);
  Tensor e = embedder::embed(dsp::log_mel_spectrogram(clip, settings_.dsp), params);
  return cache_.emplace(entry_index, std::move(e)).first->second;
}

SessionMetrics evaluate(int session_index, const EmbedderParams& params,
                        const StochasticClassifierState& state,
                        const std::vector<SessionDataset>& sessions, EvalContext& ctx) {
  if (session_index < 0 || session_index >= static_cast<int>(sessions.size())) {
    fail(ErrorCode::kInvalidConfig, "session index out of range");
  }
  for (int m = 0; m <= session_index; ++m) {
    for (int c : sessions[static_cast<size_t>(m)].class_set) {
      if (state.column_of(c) < 0) {
        fail(ErrorCode::kInvalidConfig,
             "classifier does not cover class " + std::to_string(c));
      }
    }
  }

  SessionMetrics metrics;
  metrics.session_index = session_index;
  if (session_index >= 1) metrics.incr = SubsetMetrics{};
  for (int m = 0; m <= session_index; ++m) {
    const SessionDataset& s = sessions[static_cast<size_t>(m)];
    if (s.eval_entries.empty()) {
      fail(ErrorCode::kEmptyEvalSet, "session " + std::to_string(m) + " has no eval data");
    }
    for (size_t idx : s.eval_entries) {
      const int truth = ctx.label_of(idx);
      const classifier::Prediction pred = classifier::predict(ctx.embedding_of(idx, params), state);
      const bool ok = pred.class_id == truth;
      if (m == 0) {
        metrics.base.total += 1;
        metrics.base.correct += ok;
      } else {
        metrics.incr->total += 1;
        metrics.incr->correct += ok;
      }
      metrics.all.total += 1;
      metrics.all.correct += ok;
    }
  }
  return metrics;
}

RunReport run_protocol(const ClipProvider& provider, const RunSettings& settings) {
  return run_protocol_full(provider, settings).report;
}

RunOutcome run_protocol_full(const ClipProvider& provider, const RunSettings& settings) {
  const ProtocolConfig& cfg = settings.protocol;
  std::vector<SessionDataset> sessions =
      split_dataset(provider.manifest(), cfg, cfg.seed);

  // Base training consumes the base train data; only eval entries stay behind.
  SessionDataset base_train;
  base_train.session_index = 0;
  base_train.class_set = sessions[0].class_set;
  base_train.train_by_class = std::move(sessions[0].train_by_class);
  sessions[0].drop_train_data();

  BaseResult base = train_base(provider, std::move(base_train), settings);

  RunOutcome outcome;
  RunReport& report = outcome.report;
  report.seed = cfg.seed;
  report.base_clustering_ratio = base.clustering_ratio;

  EvalContext ctx(provider, settings);
  report.sessions.push_back(evaluate(0, base.params, base.state, sessions, ctx));

  StochasticClassifierState state = std::move(base.state);
  std::map<int, Tensor> prototypes = state.prototypes();
  for (int m = 1; m <= cfg.sessions; ++m) {
    std::vector<size_t> support = sample_episode(sessions[static_cast<size_t>(m)], cfg.way,
                                                 cfg.shot, cfg.seed);
    sessions[static_cast<size_t>(m)].drop_train_data();  // support is all this session may use
    state = train_incremental(m, provider, support, sessions[static_cast<size_t>(m)].class_set,
                              base.params, std::move(state), prototypes, settings);
    prototypes = state.prototypes();
    report.sessions.push_back(evaluate(m, base.params, state, sessions, ctx));
  }

  if (cfg.sessions >= 1) {
    std::vector<double> all, base_acc, incr;
    for (const SessionMetrics& m : report.sessions) {
      all.push_back(m.all.accuracy());
      base_acc.push_back(m.base.accuracy());
      if (m.incr) incr.push_back(m.incr->accuracy());
    }
    report.all = aa_pd(all, MetricVariant::kAll);
    report.base = aa_pd(base_acc, MetricVariant::kBase);
    report.incr = aa_pd(incr, MetricVariant::kIncr);
  }
  outcome.params = std::move(base.params);
  outcome.state = std::move(state);
  return outcome;
}

}  // namespace fcac::protocol
