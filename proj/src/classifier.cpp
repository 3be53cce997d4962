#include "fcac/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "fcac/losses.hpp"
#include "fcac/rng.hpp"

namespace fcac::classifier {

Tensor StochasticClassifierState::mu_column(int j) const {
  Tensor col({dim});
  for (int i = 0; i < dim; ++i) col[i] = mu.at(i, j);
  return col;
}

Tensor StochasticClassifierState::sigma_column(int j) const {
  Tensor col({dim});
  for (int i = 0; i < dim; ++i) col[i] = sigma.at(i, j);
  return col;
}

int StochasticClassifierState::column_of(int class_id) const {
  for (size_t j = 0; j < class_ids.size(); ++j) {
    if (class_ids[j] == class_id) return static_cast<int>(j);
  }
  return -1;
}

std::map<int, Tensor> StochasticClassifierState::prototypes() const {
  std::map<int, Tensor> out;
  for (int j = 0; j < n_classes(); ++j) out.emplace(class_ids[static_cast<size_t>(j)], mu_column(j));
  return out;
}

void StochasticClassifierState::validate() const {
  if (n_classes() == 0) return;
  if (dim <= 0) fail(ErrorCode::kInvalidConfig, "classifier dim must be positive");
  if (mu.ndim() != 2 || mu.shape()[0] != dim || mu.shape()[1] != n_classes()) {
    fail(ErrorCode::kShapeMismatch, "mu shape " + mu.shape_string());
  }
  if (!sigma.same_shape(mu)) fail(ErrorCode::kShapeMismatch, "sigma shape " + sigma.shape_string());
  for (long long i = 0; i < sigma.size(); ++i) {
    if (sigma[i] < 0.0) fail(ErrorCode::kInvalidConfig, "negative sigma entry");
  }
  std::set<int> seen(class_ids.begin(), class_ids.end());
  if (seen.size() != class_ids.size()) fail(ErrorCode::kDuplicateClass, "repeated class id");
}

std::map<int, Prototype> class_prototypes(const Tensor& embeddings, const std::vector<int>& labels,
                                          const std::vector<int>& expected_classes) {
  if (embeddings.ndim() != 2) fail(ErrorCode::kShapeMismatch, "embeddings must be n x d");
  const int n = embeddings.shape()[0];
  const int d = embeddings.shape()[1];
  if (static_cast<int>(labels.size()) != n) {
    fail(ErrorCode::kShapeMismatch, "labels size does not match embeddings");
  }

  std::map<int, std::pair<Tensor, int>> sums;
  for (int i = 0; i < n; ++i) {
    auto [it, fresh] = sums.try_emplace(labels[static_cast<size_t>(i)], Tensor({d}), 0);
    for (int j = 0; j < d; ++j) it->second.first[j] += embeddings.at(i, j);
    it->second.second += 1;
  }
  for (int c : expected_classes) {
    if (!sums.count(c)) fail(ErrorCode::kEmptyClass, "class " + std::to_string(c) + " has no samples");
  }

  std::map<int, Prototype> out;
  for (auto& [c, acc] : sums) {
    Tensor mean = acc.first;
    for (int j = 0; j < d; ++j) mean[j] /= acc.second;
    const double norm = l2_norm(mean);
    if (norm < 1e-12) {
      fail(ErrorCode::kEmptyPrototype, "class " + std::to_string(c) + " mean embedding is zero");
    }
    for (int j = 0; j < d; ++j) mean[j] /= norm;
    out.emplace(c, Prototype{c, std::move(mean)});
  }
  return out;
}

Tensor sample_weights(const StochasticClassifierState& state, std::uint64_t rng_seed) {
  state.validate();
  if (state.n_classes() == 0) fail(ErrorCode::kEmptyClassifier, "no classes to sample");
  RandomStream rng(rng_seed);
  Tensor w(state.mu.shape());
  for (long long i = 0; i < w.size(); ++i) {
    w[i] = state.mu[i] + rng.normal() * state.sigma[i];
  }
  return w;
}

StochasticClassifierState expand(const StochasticClassifierState& state,
                                 const std::vector<Prototype>& new_prototypes,
                                 double sigma_init) {
  if (new_prototypes.empty()) fail(ErrorCode::kInvalidConfig, "nothing to expand with");
  if (sigma_init < 0.0) fail(ErrorCode::kInvalidConfig, "sigma_init must be >= 0");
  const int d = state.n_classes() > 0 ? state.dim
                                      : static_cast<int>(new_prototypes.front().vector.size());

  std::set<int> ids(state.class_ids.begin(), state.class_ids.end());
  for (const Prototype& p : new_prototypes) {
    if (static_cast<int>(p.vector.size()) != d) {
      fail(ErrorCode::kShapeMismatch, "prototype dim mismatch for class " + std::to_string(p.class_id));
    }
    if (!ids.insert(p.class_id).second) {
      fail(ErrorCode::kDuplicateClass, "class " + std::to_string(p.class_id) + " already present");
    }
  }

  StochasticClassifierState out;
  out.dim = d;
  const int old_n = state.n_classes();
  const int new_n = old_n + static_cast<int>(new_prototypes.size());
  out.mu = Tensor({d, new_n});
  out.sigma = Tensor({d, new_n});
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < old_n; ++j) {
      out.mu.at(i, j) = state.mu.at(i, j);
      out.sigma.at(i, j) = state.sigma.at(i, j);
    }
  }
  out.class_ids = state.class_ids;
  for (size_t k = 0; k < new_prototypes.size(); ++k) {
    const int j = old_n + static_cast<int>(k);
    for (int i = 0; i < d; ++i) {
      out.mu.at(i, j) = new_prototypes[k].vector[i];
      out.sigma.at(i, j) = sigma_init;
    }
    out.class_ids.push_back(new_prototypes[k].class_id);
  }
  out.session_boundaries = state.session_boundaries;
  out.session_boundaries.push_back(old_n);
  out.validate();
  return out;
}

Prediction predict(const Tensor& embedding, const StochasticClassifierState& state) {
  if (state.n_classes() == 0) fail(ErrorCode::kEmptyClassifier, "predict on empty classifier");
  state.validate();
  Prediction pred;
  pred.scores.resize(static_cast<size_t>(state.n_classes()));
  for (int j = 0; j < state.n_classes(); ++j) {
    pred.scores[static_cast<size_t>(j)] = losses::cosine_similarity(embedding, state.mu_column(j));
  }
  for (int j = 0; j < state.n_classes(); ++j) {
    const double s = pred.scores[static_cast<size_t>(j)];
    const int cid = state.class_ids[static_cast<size_t>(j)];
    if (pred.column < 0 || s > pred.scores[static_cast<size_t>(pred.column)] ||
        (s == pred.scores[static_cast<size_t>(pred.column)] && cid < pred.class_id)) {
      pred.column = j;
      pred.class_id = cid;
    }
  }
  return pred;
}

}  // namespace fcac::classifier
