#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fcac/error.hpp"
#include "fcac/tensor.hpp"

namespace fcac::classifier {

struct Prototype {
  int class_id = -1;
  Tensor vector;  // d, finite and nonzero
};

struct ClassifierOptions {
  double sigma_init = 0.1;  // per-entry noise scale for new columns
  bool stochastic = true;   // false: weights are exactly mu, no sampling
  bool train_sigma = true;  // false: sigma stays fixed during optimization

  void validate() const {
    if (sigma_init < 0.0) fail(ErrorCode::kInvalidConfig, "sigma_init must be >= 0");
  }
};

// Expandable per-class (mu, sigma) columns, grouped by session. Columns keep
// their session order; class_ids[j] names column j.
struct StochasticClassifierState {
  int dim = 0;
  Tensor mu;     // dim x n_classes, absent while n_classes == 0
  Tensor sigma;  // dim x n_classes, entries >= 0
  std::vector<int> class_ids;
  std::vector<int> session_boundaries;  // first column index of each session

  int n_classes() const { return static_cast<int>(class_ids.size()); }
  int n_sessions() const { return static_cast<int>(session_boundaries.size()); }

  Tensor mu_column(int j) const;
  Tensor sigma_column(int j) const;
  int column_of(int class_id) const;  // -1 when absent
  // mu columns keyed by class id; the prototype memory carried forward.
  std::map<int, Tensor> prototypes() const;
  void validate() const;
};

// Normalized mean embedding per class. `expected_classes`, when non-empty,
// must all be present (kEmptyClass otherwise). A class whose mean collapses
// to zero raises kEmptyPrototype.
std::map<int, Prototype> class_prototypes(const Tensor& embeddings /* n x d */,
                                          const std::vector<int>& labels,
                                          const std::vector<int>& expected_classes = {});

// W = mu + eps (.) sigma with eps elementwise standard normal, drawn in
// row-major order from the stream for rng_seed. Deterministic per seed.
Tensor sample_weights(const StochasticClassifierState& state, std::uint64_t rng_seed);

// Appends one column per prototype (mu = prototype vector, sigma =
// sigma_init) as a new session. Existing columns are untouched.
StochasticClassifierState expand(const StochasticClassifierState& state,
                                 const std::vector<Prototype>& new_prototypes,
                                 double sigma_init);

struct Prediction {
  int class_id = -1;
  int column = -1;
  std::vector<double> scores;  // cosine against each mu column
};

// Deterministic scoring against mu; ties go to the smallest class id.
Prediction predict(const Tensor& embedding, const StochasticClassifierState& state);

}  // namespace fcac::classifier
