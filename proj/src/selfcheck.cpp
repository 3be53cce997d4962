#include "fcac/selfcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fcac/classifier.hpp"
#include "fcac/protocol.hpp"
#include "fcac/rng.hpp"

namespace fcac::selfcheck {

Perturbation perturbation_from_name(const std::string& name) {
  if (name.empty() || name == "none") return Perturbation::kNone;
  if (name == "supcon-grad") return Perturbation::kSupconGrad;
  if (name == "ce-grad") return Perturbation::kCosineCeGrad;
  if (name == "table-data") return Perturbation::kTableData;
  if (name == "sampler-sigma") return Perturbation::kSamplerSigma;
  fail(ErrorCode::kInvalidConfig, "unknown perturbation '" + name + "'");
}

const std::vector<PublishedRow>& published_rows_nsynth100() {
  static const std::vector<PublishedRow> rows = {
      {"Finetune", "Base", {99.96, 88.91, 85.41, 80.36, 72.51, 45.24, 59.31, 48.53, 50.68, 53.28}, 68.42, 46.68},
      {"Finetune", "Incr", {38.75, 30.25, 36.96, 37.54, 28.95, 27.24, 22.30, 20.58, 19.00}, 29.06, 19.75},
      {"Finetune", "All", {99.96, 84.73, 76.92, 71.06, 63.18, 40.15, 47.99, 38.33, 38.01, 37.86}, 59.82, 62.10},
      {"iCaRL", "Base", {99.98, 98.42, 99.25, 98.40, 94.56, 82.36, 85.09, 80.59, 75.78, 74.53}, 88.90, 25.45},
      {"iCaRL", "Incr", {36.94, 31.88, 35.03, 38.33, 35.27, 30.76, 26.75, 25.52, 22.27}, 31.42, 14.67},
      {"iCaRL", "All", {99.98, 93.30, 88.88, 84.82, 79.57, 67.65, 65.92, 59.65, 54.62, 51.01}, 74.54, 48.97},
      {"DFSL", "Base", {99.93, 99.11, 98.83, 95.83, 94.84, 94.81, 94.39, 93.76, 92.06, 91.61}, 95.52, 8.32},
      {"DFSL", "Incr", {57.01, 55.57, 59.89, 59.35, 56.46, 52.29, 50.94, 52.57, 52.49}, 55.17, 4.52},
      {"DFSL", "All", {99.93, 96.00, 92.95, 89.26, 86.47, 83.66, 80.28, 77.68, 76.12, 75.01}, 85.74, 24.92},
      {"CEC", "Base", {99.96, 99.87, 99.90, 99.29, 99.24, 99.30, 99.26, 99.24, 99.20, 99.23}, 99.45, 0.73},
      {"CEC", "Incr", {71.06, 71.61, 72.37, 69.17, 69.20, 66.92, 64.80, 65.28, 63.59}, 68.22, 7.47},
      {"CEC", "All", {99.96, 97.47, 95.56, 93.52, 91.22, 89.90, 87.85, 85.84, 84.92, 83.19}, 90.94, 16.77},
      // The printed AA of this row (97.56) cannot be reached from the printed
      // per-session values (mean 97.543, max rounding drift 0.005); the row
      // carries the observed 0.017 gap as its tolerance.
      {"SC", "Base", {99.98, 98.08, 98.69, 97.38, 96.44, 97.43, 96.99, 97.53, 96.10, 96.81}, 97.56, 3.17, 0.018},
      {"SC", "Incr", {95.60, 94.73, 93.45, 92.53, 85.20, 81.53, 78.50, 79.44, 77.86}, 86.53, 17.74},
      {"SC", "All", {99.98, 97.88, 98.08, 96.53, 95.55, 93.61, 91.54, 90.13, 89.09, 88.29}, 94.07, 11.69},
      {"Ours", "Base", {100.0, 99.66, 99.84, 98.53, 98.40, 98.70, 98.02, 97.82, 98.13, 97.22}, 98.63, 2.78},
      {"Ours", "Incr", {96.60, 93.60, 90.93, 90.65, 88.64, 85.17, 84.06, 85.68, 85.02}, 88.93, 11.58},
      {"Ours", "All", {100.0, 99.40, 98.88, 96.90, 96.33, 95.55, 93.50, 92.47, 92.88, 91.73}, 95.77, 8.27},
  };
  return rows;
}

const std::vector<PublishedRow>& published_rows_ls100() {
  static const std::vector<PublishedRow> rows = {
      {"Finetune", "Base", {92.02, 72.90, 37.03, 28.12, 20.75, 14.45, 5.70, 3.23, 0.27}, 30.50, 91.75},
      {"Finetune", "Incr", {86.60, 31.50, 28.87, 25.45, 24.24, 18.17, 13.46, 11.80}, 30.01, 74.80},
      {"Finetune", "All", {92.02, 73.95, 36.24, 28.27, 21.93, 17.33, 9.86, 7.00, 4.88}, 32.39, 87.14},
      {"iCaRL", "Base", {92.02, 80.80, 73.18, 58.45, 26.95, 16.93, 32.58, 29.53, 26.38}, 48.54, 65.64},
      {"iCaRL", "Incr", {58.00, 67.10, 57.40, 20.05, 16.48, 30.33, 26.83, 28.95}, 38.14, 29.05},
      {"iCaRL", "All", {92.02, 79.05, 72.31, 58.24, 25.23, 16.80, 31.83, 28.54, 27.41}, 47.94, 64.61},
      {"DFSL", "Base", {91.93, 91.93, 91.88, 91.85, 91.83, 91.86, 91.85, 91.85, 91.84}, 91.87, 0.09},
      {"DFSL", "Incr", {53.60, 61.90, 50.67, 48.90, 51.56, 47.97, 44.11, 45.38}, 50.51, 8.22},
      {"DFSL", "All", {91.93, 88.97, 87.60, 83.61, 81.11, 80.01, 77.22, 74.26, 73.25}, 81.99, 18.68},
      {"CEC", "Base", {91.72, 91.67, 91.25, 91.14, 91.10, 91.07, 90.97, 90.66, 90.72}, 91.14, 1.00},
      {"CEC", "Incr", {86.30, 82.76, 69.67, 68.25, 67.06, 66.03, 60.35, 60.05}, 70.06, 26.25},
      {"CEC", "All", {91.72, 91.25, 90.04, 86.84, 85.38, 84.01, 82.65, 79.49, 78.45}, 85.54, 13.27},
      {"SC", "Base", {92.73, 92.72, 92.62, 92.48, 92.48, 92.47, 92.34, 90.74, 90.67}, 92.14, 2.06},
      {"SC", "Incr", {86.84, 84.26, 77.74, 74.99, 75.79, 74.60, 72.45, 72.64}, 77.41, 14.20},
      {"SC", "All", {92.73, 92.27, 91.42, 89.53, 88.10, 87.56, 86.43, 84.00, 83.45}, 88.39, 9.28},
      {"Ours", "Base", {92.97, 92.80, 92.37, 91.50, 91.58, 91.90, 91.70, 91.03, 90.88}, 91.86, 2.09},
      {"Ours", "Incr", {99.60, 97.00, 92.73, 91.05, 89.64, 89.43, 86.14, 85.63}, 91.40, 13.97},
      {"Ours", "All", {92.97, 93.32, 93.03, 91.75, 91.46, 91.24, 90.95, 89.23, 88.78}, 91.41, 4.18},
  };
  return rows;
}

namespace {

Tensor random_unit_rows(int n, int d, RandomStream& rng) {
  Tensor t({n, d});
  for (int i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < d; ++j) {
      t.at(i, j) = rng.normal();
      norm2 += t.at(i, j) * t.at(i, j);
    }
    const double norm = std::sqrt(norm2);
    for (int j = 0; j < d; ++j) t.at(i, j) /= norm;
  }
  return t;
}

std::vector<diff::Var> rows_as_vars(diff::Tape& t, const Tensor& m) {
  std::vector<diff::Var> vars;
  for (int i = 0; i < m.shape()[0]; ++i) {
    Tensor row({m.shape()[1]});
    for (int j = 0; j < m.shape()[1]; ++j) row[j] = m.at(i, j);
    vars.push_back(t.input(std::move(row)));
  }
  return vars;
}

Tensor assemble_row_grads(const diff::Tape& t, const std::vector<diff::Var>& vars, int d) {
  Tensor g({static_cast<int>(vars.size()), d});
  for (size_t i = 0; i < vars.size(); ++i) {
    const Tensor& gi = t.grad(vars[i]);
    for (int j = 0; j < d; ++j) g.at(static_cast<int>(i), j) = gi[j];
  }
  return g;
}

Tensor assemble_col_grads(const diff::Tape& t, const std::vector<diff::Var>& vars, int d) {
  Tensor g({d, static_cast<int>(vars.size())});
  for (size_t j = 0; j < vars.size(); ++j) {
    const Tensor& gj = t.grad(vars[j]);
    for (int i = 0; i < d; ++i) g.at(i, static_cast<int>(j)) = gj[i];
  }
  return g;
}

diff::Var build_loss(diff::Tape& t, LossKind kind, const LossInstance& inst, const Tensor& emb,
                     const Tensor& proj, const Tensor& w, std::vector<diff::Var>* emb_vars,
                     std::vector<diff::Var>* proj_vars, std::vector<diff::Var>* w_vars) {
  std::vector<diff::Var> evs = rows_as_vars(t, emb);
  std::vector<diff::Var> wvs = losses::weight_columns(t, w);
  if (emb_vars) *emb_vars = evs;
  if (w_vars) *w_vars = wvs;
  switch (kind) {
    case LossKind::kSupcon:
      return losses::supcon_loss(t, evs, inst.labels, inst.cfg.tau);
    case LossKind::kCosineCe:
      return losses::cosine_ce_loss(t, evs, inst.labels, wvs, inst.cfg.scale);
    case LossKind::kJointBase: {
      std::vector<diff::Var> pvs = rows_as_vars(t, proj);
      if (proj_vars) *proj_vars = pvs;
      return losses::joint_base_loss(t, evs, pvs, inst.labels, wvs, inst.cfg);
    }
    case LossKind::kPrototype: {
      std::vector<Tensor> protos;
      for (int j = 0; j < w.shape()[1]; ++j) {
        Tensor p({w.shape()[0]});
        for (int i = 0; i < w.shape()[0]; ++i) p[i] = proj.at(std::min(j, proj.shape()[0] - 1), i);
        protos.push_back(std::move(p));
      }
      return losses::prototype_loss(t, protos, wvs, inst.n_old, inst.cfg.scale);
    }
    case LossKind::kIncremental: {
      std::vector<Tensor> protos;
      for (int j = 0; j < w.shape()[1]; ++j) {
        Tensor p({w.shape()[0]});
        for (int i = 0; i < w.shape()[0]; ++i) p[i] = proj.at(std::min(j, proj.shape()[0] - 1), i);
        protos.push_back(std::move(p));
      }
      return losses::incremental_loss(t, evs, inst.labels, protos, wvs, inst.n_old, inst.cfg);
    }
  }
  fail(ErrorCode::kInvalidConfig, "bad loss kind");
}

}  // namespace

LossInstance random_loss_instance(LossKind kind, std::uint64_t seed) {
  RandomStream rng(seed);
  LossInstance inst;
  inst.cfg.scale = 1.0;  // raw printed form for every oracle run
  inst.cfg.tau = 0.07 + 0.5 * rng.uniform();
  inst.cfg.lambda = 0.2;
  inst.cfg.beta = 1.0;
  inst.cfg.alpha = 0.2 + 0.6 * rng.uniform();

  const int d = 2 + static_cast<int>(rng.uniform_int(7));        // 2..8
  const int n_classes = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4
  const int pairs = std::max(1, static_cast<int>(rng.uniform_int(3)) + 1);  // samples per class
  int n = 0;
  switch (kind) {
    case LossKind::kSupcon:
    case LossKind::kJointBase: {
      // every class appears at least twice so I(a) is never empty
      for (int c = 0; c < n_classes && n + 2 <= 8; ++c) {
        int count = 2 + static_cast<int>(rng.uniform_int(2));
        count = std::min(count, 8 - n);
        for (int k = 0; k < count; ++k, ++n) inst.labels.push_back(c);
      }
      break;
    }
    default: {
      n = std::min(8, n_classes * pairs);
      for (int i = 0; i < n; ++i) {
        inst.labels.push_back(static_cast<int>(rng.uniform_int(n_classes)));
      }
      break;
    }
  }
  n = static_cast<int>(inst.labels.size());
  inst.emb = random_unit_rows(n, d, rng);
  inst.proj = random_unit_rows(std::max(n, n_classes), d, rng);
  inst.w = random_unit_rows(d, n_classes, rng);  // d x C with random entries
  // Re-draw W as plain gaussian columns (not unit) to exercise normalization.
  for (long long i = 0; i < inst.w.size(); ++i) inst.w[i] = rng.normal();
  inst.n_old = 1 + static_cast<int>(rng.uniform_int(n_classes));
  return inst;
}

ParamSet loss_params(LossKind kind, const LossInstance& inst) {
  ParamSet p;
  switch (kind) {
    case LossKind::kSupcon:
      p.add("emb", inst.emb);
      break;
    case LossKind::kCosineCe:
    case LossKind::kIncremental:
      p.add("emb", inst.emb);
      p.add("w", inst.w);
      break;
    case LossKind::kJointBase:
      p.add("emb", inst.emb);
      p.add("proj", inst.proj);
      p.add("w", inst.w);
      break;
    case LossKind::kPrototype:
      p.add("w", inst.w);
      break;
  }
  return p;
}

double loss_value(LossKind kind, const LossInstance& inst, const ParamSet& params) {
  diff::Tape t;
  const Tensor& emb = params.has("emb") ? params.at("emb") : inst.emb;
  const Tensor& proj = params.has("proj") ? params.at("proj") : inst.proj;
  const Tensor& w = params.has("w") ? params.at("w") : inst.w;
  return t.value(build_loss(t, kind, inst, emb, proj, w, nullptr, nullptr, nullptr)).scalar_value();
}

GradMap loss_autodiff_grads(LossKind kind, const LossInstance& inst, const ParamSet& params) {
  diff::Tape t;
  const Tensor& emb = params.has("emb") ? params.at("emb") : inst.emb;
  const Tensor& proj = params.has("proj") ? params.at("proj") : inst.proj;
  const Tensor& w = params.has("w") ? params.at("w") : inst.w;
  std::vector<diff::Var> evs, pvs, wvs;
  diff::Var loss = build_loss(t, kind, inst, emb, proj, w, &evs, &pvs, &wvs);
  t.backward(loss);
  GradMap g;
  if (params.has("emb")) g.emplace("emb", assemble_row_grads(t, evs, emb.shape()[1]));
  if (params.has("proj")) g.emplace("proj", assemble_row_grads(t, pvs, proj.shape()[1]));
  if (params.has("w")) g.emplace("w", assemble_col_grads(t, wvs, w.shape()[0]));
  return g;
}

double gradient_check(LossKind kind, std::uint64_t seed, int trials, Perturbation perturbation) {
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const LossInstance inst = random_loss_instance(kind, mix_tag(seed, static_cast<std::uint64_t>(trial)));
    ParamSet params = loss_params(kind, inst);
    GradMap analytic = loss_autodiff_grads(kind, inst, params);
    if (perturbation == Perturbation::kSupconGrad && kind == LossKind::kSupcon) {
      for (auto& [name, g] : analytic) {
        for (long long i = 0; i < g.size(); ++i) g[i] *= 1.01;
      }
    }
    if (perturbation == Perturbation::kCosineCeGrad && kind == LossKind::kCosineCe) {
      for (auto& [name, g] : analytic) {
        for (long long i = 0; i < g.size(); ++i) g[i] += 1e-2;
      }
    }
    GradMap numeric = finite_difference_gradient(
        [&](const ParamSet& p) { return loss_value(kind, inst, p); }, params, 1e-5);
    worst = std::max(worst, max_relative_error(analytic, numeric));
  }
  return worst;
}

double naive_supcon(const losses::LabeledBatch& batch, double tau) {
  const int n = batch.size();
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    std::vector<int> positives;
    for (int i = 0; i < n; ++i) {
      if (i != a && batch.labels[static_cast<size_t>(i)] == batch.labels[static_cast<size_t>(a)]) {
        positives.push_back(i);
      }
    }
    double denom = 0.0;
    for (int m = 0; m < n; ++m) {
      if (m == a) continue;
      denom += std::exp(dot(batch.row(a), batch.row(m)) / tau);
    }
    double inner = 0.0;
    for (int i : positives) {
      inner += std::log(std::exp(dot(batch.row(a), batch.row(i)) / tau) / denom);
    }
    total += -inner / static_cast<double>(positives.size());
  }
  return total;
}

namespace {

CheckResult check_gradient(const char* name, LossKind kind, std::uint64_t seed, int trials,
                           Perturbation perturbation) {
  CheckResult r;
  r.name = name;
  const double worst = gradient_check(kind, seed, trials, perturbation);
  r.passed = worst < 1e-4;
  r.detail = "max relative error " + std::to_string(worst);
  return r;
}

CheckResult check_supcon_equivalence(std::uint64_t seed) {
  CheckResult r;
  r.name = "supcon.stable_vs_naive";
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    RandomStream rng(mix_tag(seed, 9000 + static_cast<std::uint64_t>(trial)));
    const int d = 2 + static_cast<int>(rng.uniform_int(7));
    losses::LabeledBatch batch;
    std::vector<int> labels;
    const int n_classes = 2 + static_cast<int>(rng.uniform_int(2));
    for (int c = 0; c < n_classes; ++c) {
      const int count = 2 + static_cast<int>(rng.uniform_int(2));
      for (int k = 0; k < count; ++k) labels.push_back(c);
    }
    batch.labels = labels;
    batch.rows = random_unit_rows(static_cast<int>(labels.size()), d, rng);
    const double tau = 0.05 + rng.uniform();
    worst = std::max(worst, std::abs(losses::supcon_loss_value(batch, tau) -
                                     naive_supcon(batch, tau)));
  }
  r.passed = worst < 1e-10;
  r.detail = "max absolute difference " + std::to_string(worst);
  return r;
}

CheckResult check_tables(Perturbation perturbation) {
  CheckResult r;
  r.name = "metrics.tables";
  bool ok = true;
  double worst_aa = 0.0, worst_pd = 0.0;
  for (const auto* table : {&published_rows_nsynth100(), &published_rows_ls100()}) {
    for (const PublishedRow& row : *table) {
      std::vector<double> acc = row.accuracies;
      if (perturbation == Perturbation::kTableData) acc[0] += 3.0;
      const auto variant = std::string(row.variant) == "Incr" ? protocol::MetricVariant::kIncr
                           : std::string(row.variant) == "Base" ? protocol::MetricVariant::kBase
                                                                : protocol::MetricVariant::kAll;
      const protocol::AaPd got = protocol::aa_pd(acc, variant);
      const double aa_dev = std::abs(got.aa - row.aa);
      const double pd_dev = std::abs(got.pd - row.pd);
      worst_aa = std::max(worst_aa, aa_dev);
      worst_pd = std::max(worst_pd, pd_dev);
      if (aa_dev > row.aa_tol + 1e-9 || pd_dev > 0.01 + 1e-9) ok = false;
    }
  }
  r.passed = ok;
  r.detail = "worst AA dev " + std::to_string(worst_aa) + ", worst PD dev " + std::to_string(worst_pd);
  return r;
}

CheckResult check_sampler_moments(std::uint64_t seed, Perturbation perturbation) {
  CheckResult r;
  r.name = "classifier.moments";
  const int d = 8, n_classes = 4, draws = 10000;
  classifier::StochasticClassifierState state;
  state.dim = d;
  state.mu = Tensor({d, n_classes});
  state.sigma = Tensor({d, n_classes});
  RandomStream rng(mix_tag(seed, 77));
  for (long long i = 0; i < state.mu.size(); ++i) {
    state.mu[i] = rng.normal();
    state.sigma[i] = 0.05 + 0.5 * rng.uniform();
  }
  for (int j = 0; j < n_classes; ++j) state.class_ids.push_back(j);
  state.session_boundaries.push_back(0);

  Tensor sum({d, n_classes}), sum_sq({d, n_classes});
  for (int k = 0; k < draws; ++k) {
    Tensor w = classifier::sample_weights(state, mix_tag(seed, 100000 + static_cast<std::uint64_t>(k)));
    if (perturbation == Perturbation::kSamplerSigma) {
      for (long long i = 0; i < w.size(); ++i) w[i] += 0.5;
    }
    for (long long i = 0; i < w.size(); ++i) {
      sum[i] += w[i];
      sum_sq[i] += w[i] * w[i];
    }
  }
  bool ok = true;
  double worst_mean = 0.0, worst_std = 0.0;
  for (long long i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / draws;
    const double var = sum_sq[i] / draws - mean * mean;
    const double sd = std::sqrt(std::max(0.0, var));
    const double mean_bound = 4.0 * state.sigma[i] / std::sqrt(static_cast<double>(draws));
    const double mean_dev = std::abs(mean - state.mu[i]);
    const double std_dev_rel = std::abs(sd - state.sigma[i]) / state.sigma[i];
    worst_mean = std::max(worst_mean, mean_dev - mean_bound);
    worst_std = std::max(worst_std, std_dev_rel);
    if (mean_dev > mean_bound || std_dev_rel > 0.05) ok = false;
  }
  r.passed = ok;
  r.detail = "worst mean excess " + std::to_string(worst_mean) + ", worst std rel dev " +
             std::to_string(worst_std);
  return r;
}

}  // namespace

std::vector<CheckResult> run_all(std::uint64_t seed, Perturbation perturbation,
                                 int gradient_trials) {
  std::vector<CheckResult> results;
  results.push_back(check_gradient("gradient.supcon", LossKind::kSupcon, mix_tag(seed, 1),
                                   gradient_trials, perturbation));
  results.push_back(check_gradient("gradient.cosine_ce", LossKind::kCosineCe, mix_tag(seed, 2),
                                   gradient_trials, perturbation));
  results.push_back(check_gradient("gradient.joint_base", LossKind::kJointBase, mix_tag(seed, 3),
                                   gradient_trials, perturbation));
  results.push_back(check_gradient("gradient.prototype", LossKind::kPrototype, mix_tag(seed, 4),
                                   gradient_trials, perturbation));
  results.push_back(check_gradient("gradient.incremental", LossKind::kIncremental, mix_tag(seed, 5),
                                   gradient_trials, perturbation));
  results.push_back(check_supcon_equivalence(seed));
  results.push_back(check_tables(perturbation));
  results.push_back(check_sampler_moments(seed, perturbation));
  return results;
}

}  // namespace fcac::selfcheck
