#pragma once

#include <map>
#include <vector>

#include "fcac/autodiff.hpp"
#include "fcac/error.hpp"
#include "fcac/tensor.hpp"

namespace fcac::losses {

struct LossConfig {
  double tau = 0.07;     // contrastive temperature
  double lambda = 0.2;   // cross-entropy coefficient in the joint base loss
  double beta = 1.0;     // contrastive coefficient in the joint base loss
  double alpha = 0.5;    // prototype-loss share of the incremental loss
  double scale = 16.0;   // softmax scale on cosine scores; 1 reproduces the raw form

  void validate() const {
    if (tau <= 0.0) fail(ErrorCode::kInvalidConfig, "tau must be positive");
    if (alpha < 0.0 || alpha > 1.0) fail(ErrorCode::kInvalidConfig, "alpha must be in [0,1]");
    if (scale <= 0.0) fail(ErrorCode::kInvalidConfig, "scale must be positive");
  }
};

// A batch of row vectors with class ids. Rows are unit-norm by the time a
// batch reaches a loss; positive/negative index sets are derived on the fly.
struct LabeledBatch {
  Tensor rows;              // n x dim
  std::vector<int> labels;  // n class ids

  int size() const { return rows.shape()[0]; }
  int dim() const { return rows.shape()[1]; }
  Tensor row(int i) const;
};

// u.v / (|u||v|), plain value. Throws kZeroVector on a zero operand.
double cosine_similarity(const Tensor& u, const Tensor& v);

// --- graph builders -------------------------------------------------------
// All of these append to the caller's tape and return a scalar Var, so the
// same code path serves loss evaluation and gradient computation.

diff::Var cosine(diff::Tape& t, diff::Var u, diff::Var v);

// Stable log(sum(exp(x))) of a 1-D var via the running max.
diff::Var log_sum_exp(diff::Tape& t, diff::Var x);

// Supervised contrastive loss: sum over anchors a of
//   -1/|I(a)| * sum_{i in I(a)} [ z_a.z_i/tau - logsumexp_{n != a}(z_a.z_n/tau) ].
// Throws kBatchTooSmall for n < 2 and kNoPositives when an anchor has no
// same-label partner.
diff::Var supcon_loss(diff::Tape& t, const std::vector<diff::Var>& z,
                      const std::vector<int>& labels, double tau);

// Cosine-softmax cross entropy, mean over the batch:
//   -log( exp(s cos(e, w_y)) / sum_h exp(s cos(e, w_h)) ).
diff::Var cosine_ce_loss(diff::Tape& t, const std::vector<diff::Var>& embeddings,
                         const std::vector<int>& labels,
                         const std::vector<diff::Var>& weight_cols, double scale);

// lambda * CE(embeddings vs weights) + beta * SupCon(projections).
diff::Var joint_base_loss(diff::Tape& t, const std::vector<diff::Var>& embeddings,
                          const std::vector<diff::Var>& projections,
                          const std::vector<int>& labels,
                          const std::vector<diff::Var>& weight_cols, const LossConfig& cfg);

// Prototype anchoring: mean over the first n_scored classes c of
//   -log( exp(s cos(p_c, w_c)) / sum_h exp(s cos(p_h, w_h)) ),
// the denominator pairing every prototype with its own column. Prototypes are
// constants; only the weight columns receive gradient.
diff::Var prototype_loss(diff::Tape& t, const std::vector<Tensor>& prototypes,
                         const std::vector<diff::Var>& weight_cols, int n_scored, double scale);

// alpha * prototype_loss + (1 - alpha) * cosine_ce_loss over all classes.
diff::Var incremental_loss(diff::Tape& t, const std::vector<diff::Var>& support_embeddings,
                           const std::vector<int>& support_labels,
                           const std::vector<Tensor>& prototypes,
                           const std::vector<diff::Var>& weight_cols, int n_old,
                           const LossConfig& cfg);

// --- value-level conveniences (fresh tape inside) --------------------------

double supcon_loss_value(const LabeledBatch& batch, double tau);
double cosine_ce_loss_value(const LabeledBatch& batch, const Tensor& weights /* d x C */,
                            double scale);
double joint_base_loss_value(const LabeledBatch& embeddings, const LabeledBatch& projections,
                             const Tensor& weights, const LossConfig& cfg);
// prototypes: class id -> vector; weights d x C with column c for class
// class_ids[c]. Classes absent from the map use their own weight column mean
// as prototype, i.e. they only sit in the denominator.
double prototype_loss_value(const std::map<int, Tensor>& prototypes,
                            const std::vector<int>& class_ids, const Tensor& weights,
                            double scale);

std::vector<diff::Var> weight_columns(diff::Tape& t, const Tensor& weights);
std::vector<diff::Var> batch_rows(diff::Tape& t, const LabeledBatch& batch);

}  // namespace fcac::losses
