#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcac/losses.hpp"
#include "fcac/optim.hpp"

namespace fcac::selfcheck {

// Deliberate fault injection so the failure path of `verify` is testable.
enum class Perturbation {
  kNone,
  kSupconGrad,     // scales the reported supcon gradient
  kCosineCeGrad,   // scales the reported cross-entropy gradient
  kTableData,      // corrupts one published accuracy cell
  kSamplerSigma,   // biases the sampled weight noise
};

Perturbation perturbation_from_name(const std::string& name);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Per-session accuracy rows as published, with their AA/PD summary cells.
// aa_tol is 0.01 (rounding of the printed cells) except for the one row whose
// printed summary is arithmetically inconsistent with its printed
// per-session values; that row carries the measured discrepancy instead.
struct PublishedRow {
  const char* method;
  const char* variant;  // Base | Incr | All
  std::vector<double> accuracies;
  double aa;
  double pd;
  double aa_tol = 0.01;
};

const std::vector<PublishedRow>& published_rows_nsynth100();
const std::vector<PublishedRow>& published_rows_ls100();

// Randomized loss instance used by the gradient checks.
enum class LossKind { kSupcon, kCosineCe, kJointBase, kPrototype, kIncremental };

struct LossInstance {
  Tensor emb;   // n x d
  Tensor proj;  // n x d (joint loss only)
  Tensor w;     // d x C
  std::vector<int> labels;
  int n_old = 0;  // scored classes for the prototype term
  losses::LossConfig cfg;
};

LossInstance random_loss_instance(LossKind kind, std::uint64_t seed);
double loss_value(LossKind kind, const LossInstance& inst, const ParamSet& params);
GradMap loss_autodiff_grads(LossKind kind, const LossInstance& inst, const ParamSet& params);
ParamSet loss_params(LossKind kind, const LossInstance& inst);
// Worst relative error between reverse-mode and central-difference gradients
// over `trials` random instances.
double gradient_check(LossKind kind, std::uint64_t seed, int trials,
                      Perturbation perturbation = Perturbation::kNone);

// Literal double-loop evaluation of the contrastive formula, kept independent
// of the stabilized implementation it cross-checks.
double naive_supcon(const losses::LabeledBatch& batch, double tau);

// The full oracle suite behind `verify`: loss gradient checks, stabilized vs
// naive contrastive equality, published-table reproduction and the
// stochastic-sampler moment test.
std::vector<CheckResult> run_all(std::uint64_t seed,
                                 Perturbation perturbation = Perturbation::kNone,
                                 int gradient_trials = 20);

}  // namespace fcac::selfcheck
