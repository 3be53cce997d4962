#include "fcac/losses.hpp"

#include <cmath>
#include <string>

namespace fcac::losses {

Tensor LabeledBatch::row(int i) const {
  Tensor r({dim()});
  for (int j = 0; j < dim(); ++j) r[j] = rows.at(i, j);
  return r;
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size()) fail(ErrorCode::kShapeMismatch, "cosine operands differ in size");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) fail(ErrorCode::kZeroVector, "cosine of a zero vector");
  return dot(u, v) / (nu * nv);
}

diff::Var cosine(diff::Tape& t, diff::Var u, diff::Var v) {
  diff::Var nu = t.l2norm(u);
  diff::Var nv = t.l2norm(v);
  if (t.value(nu).scalar_value() == 0.0 || t.value(nv).scalar_value() == 0.0) {
    fail(ErrorCode::kZeroVector, "cosine of a zero vector");
  }
  return t.div(t.dot(u, v), t.mul(nu, nv));
}

diff::Var log_sum_exp(diff::Tape& t, diff::Var x) {
  diff::Var m = t.max(x);
  diff::Var shifted = t.sub(x, m);
  return t.add(m, t.log(t.sum(t.exp(shifted))));
}

diff::Var supcon_loss(diff::Tape& t, const std::vector<diff::Var>& z,
                      const std::vector<int>& labels, double tau) {
  const int n = static_cast<int>(z.size());
  if (n < 2) fail(ErrorCode::kBatchTooSmall, "contrastive batch needs n >= 2");
  if (labels.size() != z.size()) fail(ErrorCode::kShapeMismatch, "labels/batch size mismatch");
  if (tau <= 0.0) fail(ErrorCode::kInvalidConfig, "tau must be positive");

  // Pairwise similarities once; reused by every anchor.
  std::vector<std::vector<diff::Var>> sim(static_cast<size_t>(n),
                                          std::vector<diff::Var>(static_cast<size_t>(n)));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      diff::Var d = t.scale(t.dot(z[static_cast<size_t>(i)], z[static_cast<size_t>(j)]), 1.0 / tau);
      sim[static_cast<size_t>(i)][static_cast<size_t>(j)] = d;
      sim[static_cast<size_t>(j)][static_cast<size_t>(i)] = d;
    }
  }

  diff::Var total = t.constant(0.0);
  std::vector<diff::Var> others;
  others.reserve(static_cast<size_t>(n) - 1);
  for (int a = 0; a < n; ++a) {
    others.clear();
    std::vector<int> positives;
    for (int i = 0; i < n; ++i) {
      if (i == a) continue;
      if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(a)]) {
        positives.push_back(static_cast<int>(others.size()));
      }
      others.push_back(sim[static_cast<size_t>(a)][static_cast<size_t>(i)]);
    }
    if (positives.empty()) {
      fail(ErrorCode::kNoPositives, "anchor " + std::to_string(a) + " has no positive partner");
    }
    diff::Var lse = log_sum_exp(t, t.concat(others));
    diff::Var pos_sum = t.constant(0.0);
    for (int idx : positives) {
      pos_sum = t.add(pos_sum, t.sub(others[static_cast<size_t>(idx)], lse));
    }
    total = t.add(total, t.scale(pos_sum, -1.0 / static_cast<double>(positives.size())));
  }
  return total;
}

namespace {
// Scaled cosine scores of one vector against every weight column, with norms
// shared across calls via caller-provided caches.
diff::Var class_scores(diff::Tape& t, diff::Var e, const std::vector<diff::Var>& weight_cols,
                       std::vector<diff::Var>& wnorm_cache, double scale) {
  diff::Var ne = t.l2norm(e);
  if (t.value(ne).scalar_value() == 0.0) fail(ErrorCode::kZeroVector, "zero embedding");
  std::vector<diff::Var> scores;
  scores.reserve(weight_cols.size());
  for (size_t h = 0; h < weight_cols.size(); ++h) {
    if (!wnorm_cache[h].valid()) {
      wnorm_cache[h] = t.l2norm(weight_cols[h]);
      if (t.value(wnorm_cache[h]).scalar_value() == 0.0) {
        fail(ErrorCode::kZeroVector, "zero weight column " + std::to_string(h));
      }
    }
    diff::Var c = t.div(t.dot(e, weight_cols[h]), t.mul(ne, wnorm_cache[h]));
    scores.push_back(t.scale(c, scale));
  }
  return t.concat(scores);
}
}  // namespace

diff::Var cosine_ce_loss(diff::Tape& t, const std::vector<diff::Var>& embeddings,
                         const std::vector<int>& labels,
                         const std::vector<diff::Var>& weight_cols, double scale) {
  const int n = static_cast<int>(embeddings.size());
  const int n_classes = static_cast<int>(weight_cols.size());
  if (n == 0) fail(ErrorCode::kBatchTooSmall, "empty batch");
  if (labels.size() != embeddings.size()) fail(ErrorCode::kShapeMismatch, "labels/batch mismatch");
  if (n_classes == 0) fail(ErrorCode::kEmptyClassifier, "no weight columns");
  for (int y : labels) {
    if (y < 0 || y >= n_classes) {
      fail(ErrorCode::kLabelOutOfRange,
           "label " + std::to_string(y) + " with " + std::to_string(n_classes) + " classes");
    }
  }

  std::vector<diff::Var> wnorms(weight_cols.size());
  diff::Var total = t.constant(0.0);
  for (int i = 0; i < n; ++i) {
    diff::Var scores = class_scores(t, embeddings[static_cast<size_t>(i)], weight_cols, wnorms, scale);
    diff::Var lse = log_sum_exp(t, scores);
    // score of the true class = dot with a one-hot mask
    Tensor mask({n_classes});
    mask[labels[static_cast<size_t>(i)]] = 1.0;
    diff::Var target = t.dot(scores, t.input(mask));
    total = t.add(total, t.sub(lse, target));
  }
  return t.scale(total, 1.0 / static_cast<double>(n));
}

diff::Var joint_base_loss(diff::Tape& t, const std::vector<diff::Var>& embeddings,
                          const std::vector<diff::Var>& projections,
                          const std::vector<int>& labels,
                          const std::vector<diff::Var>& weight_cols, const LossConfig& cfg) {
  cfg.validate();
  diff::Var ce = cosine_ce_loss(t, embeddings, labels, weight_cols, cfg.scale);
  diff::Var cl = supcon_loss(t, projections, labels, cfg.tau);
  return t.add(t.scale(ce, cfg.lambda), t.scale(cl, cfg.beta));
}

diff::Var prototype_loss(diff::Tape& t, const std::vector<Tensor>& prototypes,
                         const std::vector<diff::Var>& weight_cols, int n_scored, double scale) {
  const int n_classes = static_cast<int>(weight_cols.size());
  if (n_classes == 0) fail(ErrorCode::kEmptyClassifier, "no weight columns");
  if (static_cast<int>(prototypes.size()) != n_classes) {
    fail(ErrorCode::kMissingPrototype, "need one prototype per class column");
  }
  if (n_scored <= 0 || n_scored > n_classes) {
    fail(ErrorCode::kInvalidConfig, "n_scored out of range");
  }

  // One diagonal score per class; the denominator is shared by every term.
  std::vector<diff::Var> diag;
  diag.reserve(static_cast<size_t>(n_classes));
  for (int h = 0; h < n_classes; ++h) {
    diff::Var p = t.input(prototypes[static_cast<size_t>(h)]);
    diag.push_back(t.scale(cosine(t, p, weight_cols[static_cast<size_t>(h)]), scale));
  }
  diff::Var scores = t.concat(diag);
  diff::Var lse = log_sum_exp(t, scores);
  diff::Var total = t.constant(0.0);
  for (int c = 0; c < n_scored; ++c) {
    total = t.add(total, t.sub(lse, diag[static_cast<size_t>(c)]));
  }
  return t.scale(total, 1.0 / static_cast<double>(n_scored));
}

diff::Var incremental_loss(diff::Tape& t, const std::vector<diff::Var>& support_embeddings,
                           const std::vector<int>& support_labels,
                           const std::vector<Tensor>& prototypes,
                           const std::vector<diff::Var>& weight_cols, int n_old,
                           const LossConfig& cfg) {
  cfg.validate();
  diff::Var lp = prototype_loss(t, prototypes, weight_cols, n_old, cfg.scale);
  diff::Var ce = cosine_ce_loss(t, support_embeddings, support_labels, weight_cols, cfg.scale);
  return t.add(t.scale(lp, cfg.alpha), t.scale(ce, 1.0 - cfg.alpha));
}

std::vector<diff::Var> weight_columns(diff::Tape& t, const Tensor& weights) {
  if (weights.ndim() != 2) fail(ErrorCode::kShapeMismatch, "weights must be d x C");
  const int d = weights.shape()[0];
  const int c = weights.shape()[1];
  std::vector<diff::Var> cols;
  cols.reserve(static_cast<size_t>(c));
  for (int j = 0; j < c; ++j) {
    Tensor col({d});
    for (int i = 0; i < d; ++i) col[i] = weights.at(i, j);
    cols.push_back(t.input(std::move(col)));
  }
  return cols;
}

std::vector<diff::Var> batch_rows(diff::Tape& t, const LabeledBatch& batch) {
  std::vector<diff::Var> rows;
  rows.reserve(static_cast<size_t>(batch.size()));
  for (int i = 0; i < batch.size(); ++i) rows.push_back(t.input(batch.row(i)));
  return rows;
}

double supcon_loss_value(const LabeledBatch& batch, double tau) {
  diff::Tape t;
  return t.value(supcon_loss(t, batch_rows(t, batch), batch.labels, tau)).scalar_value();
}

double cosine_ce_loss_value(const LabeledBatch& batch, const Tensor& weights, double scale) {
  diff::Tape t;
  auto cols = weight_columns(t, weights);
  return t.value(cosine_ce_loss(t, batch_rows(t, batch), batch.labels, cols, scale)).scalar_value();
}

double joint_base_loss_value(const LabeledBatch& embeddings, const LabeledBatch& projections,
                             const Tensor& weights, const LossConfig& cfg) {
  diff::Tape t;
  auto cols = weight_columns(t, weights);
  auto loss = joint_base_loss(t, batch_rows(t, embeddings), batch_rows(t, projections),
                              embeddings.labels, cols, cfg);
  return t.value(loss).scalar_value();
}

double prototype_loss_value(const std::map<int, Tensor>& prototypes,
                            const std::vector<int>& class_ids, const Tensor& weights,
                            double scale) {
  if (weights.ndim() != 2 || weights.shape()[1] != static_cast<int>(class_ids.size())) {
    fail(ErrorCode::kShapeMismatch, "weights must have one column per class id");
  }
  const int d = weights.shape()[0];
  // Scored classes come first in column order by construction of the
  // classifier state; here scored = classes present in the map.
  std::vector<Tensor> aligned;
  int n_scored = 0;
  for (size_t j = 0; j < class_ids.size(); ++j) {
    auto it = prototypes.find(class_ids[j]);
    if (it != prototypes.end()) {
      if (static_cast<int>(j) != n_scored) {
        fail(ErrorCode::kMissingPrototype,
             "prototype classes must occupy the leading columns");
      }
      aligned.push_back(it->second);
      ++n_scored;
    } else {
      Tensor col({d});
      for (int i = 0; i < d; ++i) col[i] = weights.at(i, static_cast<int>(j));
      aligned.push_back(std::move(col));
    }
  }
  if (n_scored == 0) fail(ErrorCode::kMissingPrototype, "no prototypes supplied");
  diff::Tape t;
  auto cols = weight_columns(t, weights);
  return t.value(prototype_loss(t, aligned, cols, n_scored, scale)).scalar_value();
}

}  // namespace fcac::losses
