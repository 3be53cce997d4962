#include "fcac/optim.hpp"

#include <algorithm>
#include <cmath>

namespace fcac {

void sgd_step(ParamSet& params, const GradMap& grads, OptimizerState& state) {
  for (auto& [name, p] : params.items()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // parameter not in this step's graph
    const Tensor& g = git->second;
    if (!g.same_shape(p)) {
      fail(ErrorCode::kShapeMismatch, "gradient shape for " + name + " is " + g.shape_string() +
                                          ", parameter is " + p.shape_string());
    }
    auto vit = state.velocity.find(name);
    if (vit == state.velocity.end()) {
      vit = state.velocity.emplace(name, Tensor(p.shape())).first;
    }
    Tensor& v = vit->second;
    if (!v.same_shape(p)) fail(ErrorCode::kShapeMismatch, "velocity shape mismatch for " + name);
    for (long long i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i];
      p[i] -= state.learning_rate * v[i];
    }
  }
}

GradMap finite_difference_gradient(const std::function<double(const ParamSet&)>& f,
                                   const ParamSet& params, double eps) {
  if (eps <= 0.0) fail(ErrorCode::kInvalidConfig, "eps must be positive");
  GradMap out;
  ParamSet work = params;
  for (auto& [name, p] : work.items()) {
    Tensor g(p.shape());
    for (long long i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double hi = f(work);
      p[i] = saved - eps;
      const double lo = f(work);
      p[i] = saved;
      g[i] = (hi - lo) / (2.0 * eps);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

double max_relative_error(const GradMap& a, const GradMap& b, double floor) {
  double worst = 0.0;
  for (const auto& [name, ga] : a) {
    auto it = b.find(name);
    if (it == b.end()) fail(ErrorCode::kInvalidConfig, "missing gradient for " + name);
    const Tensor& gb = it->second;
    if (!ga.same_shape(gb)) fail(ErrorCode::kShapeMismatch, "gradient shapes differ for " + name);
    for (long long i = 0; i < ga.size(); ++i) {
      const double denom = std::max({std::abs(ga[i]), std::abs(gb[i]), floor});
      worst = std::max(worst, std::abs(ga[i] - gb[i]) / denom);
    }
  }
  return worst;
}

}  // namespace fcac
