#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fcac/error.hpp"
#include "fcac/tensor.hpp"

namespace fcac {

// Named parameter tensors in a stable (insertion) order.
class ParamSet {
 public:
  void add(const std::string& name, Tensor t) {
    if (index_.count(name)) fail(ErrorCode::kInvalidConfig, "duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::kInvalidConfig, "unknown parameter " + name);
    return items_[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::kInvalidConfig, "unknown parameter " + name);
    return items_[it->second].second;
  }

  size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

  bool bit_equal(const ParamSet& other) const {
    if (items_.size() != other.items_.size()) return false;
    for (size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].first != other.items_[i].first) return false;
      if (!items_[i].second.bit_equal(other.items_[i].second)) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
};

// Classical (non-Nesterov) momentum: v <- momentum*v + g; p <- p - lr*v.
struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::map<std::string, Tensor> velocity;  // zero-initialized per parameter

  static OptimizerState create(const OptimizerConfig& cfg, const ParamSet& params) {
    OptimizerState s;
    s.learning_rate = cfg.learning_rate;
    s.momentum = cfg.momentum;
    for (const auto& [name, t] : params.items()) s.velocity.emplace(name, Tensor(t.shape()));
    return s;
  }
};

void sgd_step(ParamSet& params, const GradMap& grads, OptimizerState& state);

// Central differences (f(p+eps e_i) - f(p-eps e_i)) / (2 eps) per coordinate.
// Verification oracle; independent of the tape.
GradMap finite_difference_gradient(const std::function<double(const ParamSet&)>& f,
                                   const ParamSet& params, double eps);

// Max relative error between two gradient maps, |a-b| / max(|a|,|b|,floor).
double max_relative_error(const GradMap& a, const GradMap& b, double floor = 1e-6);

}  // namespace fcac
