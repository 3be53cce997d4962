#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fcac/classifier.hpp"
#include "fcac/datagen.hpp"
#include "fcac/dsp.hpp"
#include "fcac/embedder.hpp"
#include "fcac/losses.hpp"
#include "fcac/optim.hpp"

namespace fcac::protocol {

enum class BaseMode { kJoint, kTwoStage };

struct ProtocolConfig {
  int n_base_classes = 6;
  int sessions = 2;  // incremental sessions after the base session
  int way = 2;       // classes per incremental session
  int shot = 5;      // labeled clips per incremental class
  int base_epochs = 200;
  int classifier_epochs = 100;  // CE phase on the frozen representation
  int incremental_epochs = 200;
  int batch_size = 64;
  BaseMode base_mode = BaseMode::kJoint;
  std::uint64_t seed = 1;
  losses::LossConfig loss;
  OptimizerConfig optimizer;
  classifier::ClassifierOptions classifier;

  void validate(int available_classes) const;
};

// Everything a run needs besides the dataset itself.
struct RunSettings {
  dsp::DspConfig dsp;
  embedder::EmbedderConfig embedder;
  ProtocolConfig protocol;
  int workers = 1;
};

struct SessionDataset {
  int session_index = 0;
  std::vector<int> class_set;                       // sorted, disjoint across sessions
  std::map<int, std::vector<size_t>> train_by_class;  // manifest indices per class
  std::vector<size_t> eval_entries;

  size_t train_size() const;
  void drop_train_data() { train_by_class.clear(); }
};

struct SubsetMetrics {
  long long correct = 0;
  long long total = 0;
  double accuracy() const { return total > 0 ? static_cast<double>(correct) / total : 0.0; }
};

struct SessionMetrics {
  int session_index = 0;
  SubsetMetrics base;                  // session-0 eval data
  std::optional<SubsetMetrics> incr;   // eval data of sessions 1..m, absent at m=0
  SubsetMetrics all;                   // pooled union
};

struct AaPd {
  double aa = 0.0;
  double pd = 0.0;
};

enum class MetricVariant { kAll, kBase, kIncr };

// all/base: AA = mean(list), PD = first - last, list = per-session accuracies
// from session 0. incr: the list holds incremental-session accuracies
// (sessions 1..), same arithmetic. Throws kTooFewSessions when empty or, for
// all/base, shorter than 2.
AaPd aa_pd(const std::vector<double>& accuracies, MetricVariant variant);

// Mean distance to the own-class centroid divided by the mean pairwise
// centroid distance. Lower means tighter, better-separated classes.
double clustering_ratio(const Tensor& embeddings /* n x d */, const std::vector<int>& labels);

std::vector<SessionDataset> split_dataset(const datagen::DatasetManifest& manifest,
                                          const ProtocolConfig& cfg, std::uint64_t seed);

// K entries per class for `way` classes, seeded, no duplicates.
std::vector<size_t> sample_episode(const SessionDataset& session, int way, int shot,
                                   std::uint64_t seed);

struct BaseResult {
  embedder::EmbedderParams params;  // frozen on return
  classifier::StochasticClassifierState state;
  double clustering_ratio = 0.0;  // on the base train embeddings at freeze time
};

// Representation phase only (joint or contrastive-only per mode); returns
// unfrozen params. Exposed separately so unfreeze-free experiments can reuse
// it.
embedder::EmbedderParams train_representation(const datagen::ClipProvider& provider,
                                              const SessionDataset& base,
                                              const RunSettings& settings);

BaseResult train_base(const datagen::ClipProvider& provider, SessionDataset base,
                      const RunSettings& settings);

// Expands the state with the support classes and optimizes every (mu, sigma)
// column against the incremental objective. The backbone is never touched.
classifier::StochasticClassifierState train_incremental(
    int session_index, const datagen::ClipProvider& provider,
    const std::vector<size_t>& support_entries, const std::vector<int>& session_classes,
    const embedder::EmbedderParams& params, classifier::StochasticClassifierState state,
    const std::map<int, Tensor>& old_prototypes, const RunSettings& settings);

// Caches eval-clip embeddings across sessions (the backbone is frozen).
class EvalContext {
 public:
  EvalContext(const datagen::ClipProvider& provider, const RunSettings& settings)
      : provider_(provider), settings_(settings) {}

  const Tensor& embedding_of(size_t entry_index, const embedder::EmbedderParams& params);
  int label_of(size_t entry_index) const {
    return provider_.manifest().entries[entry_index].class_id;
  }

 private:
  const datagen::ClipProvider& provider_;
  const RunSettings& settings_;
  std::map<size_t, Tensor> cache_;
};

SessionMetrics evaluate(int session_index, const embedder::EmbedderParams& params,
                        const classifier::StochasticClassifierState& state,
                        const std::vector<SessionDataset>& sessions, EvalContext& ctx);

struct RunReport {
  std::vector<SessionMetrics> sessions;
  std::optional<AaPd> all;
  std::optional<AaPd> base;
  std::optional<AaPd> incr;
  double base_clustering_ratio = 0.0;
  std::uint64_t seed = 0;
};

RunReport run_protocol(const datagen::ClipProvider& provider, const RunSettings& settings);

// run_protocol plus the final model, for callers that persist a checkpoint.
struct RunOutcome {
  RunReport report;
  embedder::EmbedderParams params;
  classifier::StochasticClassifierState state;
};

RunOutcome run_protocol_full(const datagen::ClipProvider& provider, const RunSettings& settings);

}  // namespace fcac::protocol
