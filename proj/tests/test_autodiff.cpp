#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fcac/autodiff.hpp"
#include "fcac/optim.hpp"
#include "fcac/rng.hpp"

using namespace fcac;
using diff::Tape;
using diff::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, RandomStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (long long i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Scalarize an arbitrary-shaped output against fixed random coefficients so
// gradient checks work through a scalar root.
Var scalarize(Tape& t, Var v, RandomStream& rng) {
  Tensor coeff(t.value(v).shape());
  for (long long i = 0; i < coeff.size(); ++i) coeff[i] = rng.uniform(0.5, 1.5);
  Tensor flat_coeff({static_cast<int>(coeff.size())});
  for (long long i = 0; i < coeff.size(); ++i) flat_coeff[i] = coeff[i];
  return t.sum(t.mul(v, t.input(coeff)));
}

}  // namespace

TEST_CASE("forward basics") {
  Tape t;
  Var x = t.input(Tensor::scalar(3.7));
  CHECK(t.value(t.log(t.exp(x))).scalar_value() == doctest::Approx(3.7).epsilon(1e-12));

  Var a = t.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = t.input(Tensor({3, 2}, {1, 0, 0, 1, 1, 1}));
  const Tensor& c = t.value(t.matmul(a, b));
  CHECK(c.at(0, 0) == 4.0);   // 1*1 + 2*0 + 3*1
  CHECK(c.at(0, 1) == 5.0);   // 2 + 3
  CHECK(c.at(1, 0) == 10.0);  // 4 + 6
  CHECK(c.at(1, 1) == 11.0);  // 5 + 6

  Var bad = t.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_WITH_AS(t.matmul(a, bad), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("backward basics") {
  Tape t;
  Var x = t.input(Tensor::scalar(3.0));
  Var y = t.mul(x, x);
  t.backward(y);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));

  Tape t2;
  Var v = t2.input(Tensor({2}, {-1.0, 2.0}));
  Var s = t2.sum(t2.relu(v));
  t2.backward(s);
  CHECK(t2.grad(v)[0] == 0.0);
  CHECK(t2.grad(v)[1] == 1.0);

  Tape t3;
  Var m = t3.input(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_WITH_AS(t3.backward(m), doctest::Contains("NonScalarRoot"), Error);
}

TEST_CASE("finite differences on simple functions") {
  ParamSet p;
  p.add("x", Tensor::scalar(2.0));
  p.add("y", Tensor::scalar(3.0));
  auto f = [](const ParamSet& q) { return q.at("x")[0] * q.at("y")[0]; };
  GradMap g = finite_difference_gradient(f, p, 1e-5);
  CHECK(g.at("x")[0] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(g.at("y")[0] == doctest::Approx(2.0).epsilon(1e-8));

  auto constant = [](const ParamSet&) { return 42.0; };
  GradMap zero = finite_difference_gradient(constant, p, 1e-5);
  CHECK(zero.at("x")[0] == 0.0);
  CHECK(zero.at("y")[0] == 0.0);
}

namespace {

enum class Prim {
  kAdd, kSub, kMul, kDiv, kMatmul, kExp, kLog, kRelu, kSum, kMean, kMax, kL2Norm, kDot,
  kConcat, kBroadcast, kScale, kConv, kMeanPool, kGlobalPool, kAffine,
};

// Builds the primitive over leaves bound from `p`, returns the scalarized root.
Var build_primitive(Tape& t, Prim prim, const ParamSet& p, RandomStream& rng,
                    std::vector<std::pair<std::string, Var>>& leaves) {
  auto bind = [&](const char* name) {
    Var v = t.input(p.at(name));
    leaves.emplace_back(name, v);
    return v;
  };
  switch (prim) {
    case Prim::kAdd: return scalarize(t, t.add(bind("a"), bind("b")), rng);
    case Prim::kSub: return scalarize(t, t.sub(bind("a"), bind("b")), rng);
    case Prim::kMul: return scalarize(t, t.mul(bind("a"), bind("b")), rng);
    case Prim::kDiv: return scalarize(t, t.div(bind("a"), bind("b")), rng);
    case Prim::kMatmul: return scalarize(t, t.matmul(bind("m"), bind("n")), rng);
    case Prim::kExp: return scalarize(t, t.exp(bind("a")), rng);
    case Prim::kLog: return scalarize(t, t.log(bind("pos")), rng);
    case Prim::kRelu: return scalarize(t, t.relu(bind("a")), rng);
    case Prim::kSum: return t.sum(bind("a"));
    case Prim::kMean: return t.mean(bind("a"));
    case Prim::kMax: return t.max(bind("a"));
    case Prim::kL2Norm: return t.l2norm(bind("a"));
    case Prim::kDot: return t.dot(bind("a"), bind("b"));
    case Prim::kConcat: {
      std::array<Var, 2> parts = {bind("a"), bind("b")};
      return scalarize(t, t.concat(parts), rng);
    }
    case Prim::kBroadcast: return scalarize(t, t.broadcast(bind("s"), {3, 2}), rng);
    case Prim::kScale: return scalarize(t, t.scale(bind("a"), 1.7), rng);
    case Prim::kConv: return scalarize(t, t.conv2d_same(bind("img"), bind("ker")), rng);
    case Prim::kMeanPool: return scalarize(t, t.mean_pool2(bind("img")), rng);
    case Prim::kGlobalPool: return scalarize(t, t.global_mean_pool(bind("img")), rng);
    case Prim::kAffine:
      return scalarize(t, t.channel_affine(bind("img"), bind("gamma"), bind("beta")), rng);
  }
  fail(ErrorCode::kInvalidConfig, "bad primitive");
}

ParamSet primitive_params(Prim prim, RandomStream& rng) {
  ParamSet p;
  switch (prim) {
    case Prim::kMatmul:
      p.add("m", random_tensor({3, 4}, rng));
      p.add("n", random_tensor({4, 2}, rng));
      break;
    case Prim::kLog: {
      Tensor pos = random_tensor({2, 3}, rng);
      for (long long i = 0; i < pos.size(); ++i) pos[i] = 0.5 + std::abs(pos[i]);
      p.add("pos", pos);
      break;
    }
    case Prim::kBroadcast:
      p.add("s", Tensor::scalar(rng.normal()));
      break;
    case Prim::kConv:
      p.add("img", random_tensor({2, 5, 4}, rng));
      p.add("ker", random_tensor({3, 2, 3, 3}, rng, 0.5));
      break;
    case Prim::kMeanPool:
    case Prim::kGlobalPool:
      p.add("img", random_tensor({2, 4, 4}, rng));
      break;
    case Prim::kAffine:
      p.add("img", random_tensor({3, 3, 2}, rng));
      p.add("gamma", random_tensor({3}, rng));
      p.add("beta", random_tensor({3}, rng));
      break;
    default:
      p.add("a", random_tensor({2, 3}, rng));
      if (prim == Prim::kAdd || prim == Prim::kSub || prim == Prim::kMul || prim == Prim::kDiv ||
          prim == Prim::kDot || prim == Prim::kConcat) {
        Tensor b = random_tensor({2, 3}, rng);
        if (prim == Prim::kDiv) {
          for (long long i = 0; i < b.size(); ++i) b[i] = 1.0 + std::abs(b[i]);
        }
        p.add("b", b);
      }
      break;
  }
  return p;
}

}  // namespace

TEST_CASE("every primitive matches central differences over 100 seeded trials") {
  const Prim prims[] = {Prim::kAdd, Prim::kSub, Prim::kMul, Prim::kDiv, Prim::kMatmul,
                        Prim::kExp, Prim::kLog, Prim::kRelu, Prim::kSum, Prim::kMean,
                        Prim::kMax, Prim::kL2Norm, Prim::kDot, Prim::kConcat, Prim::kBroadcast,
                        Prim::kScale, Prim::kConv, Prim::kMeanPool, Prim::kGlobalPool,
                        Prim::kAffine};
  int trial_count = 0;
  for (Prim prim : prims) {
    for (int trial = 0; trial < 5; ++trial, ++trial_count) {
      RandomStream rng(mix_tag(static_cast<std::uint64_t>(prim) * 131 + 7,
                               static_cast<std::uint64_t>(trial)));
      ParamSet params = primitive_params(prim, rng);
      RandomStream coeff_rng(999 + static_cast<std::uint64_t>(trial));

      std::vector<std::pair<std::string, Var>> leaves;
      Tape t;
      RandomStream coeff_copy = coeff_rng;
      Var root = build_primitive(t, prim, params, coeff_copy, leaves);
      t.backward(root);
      GradMap analytic;
      for (auto& [name, var] : leaves) analytic.emplace(name, t.grad(var));

      GradMap numeric = finite_difference_gradient(
          [&](const ParamSet& q) {
            Tape t2;
            std::vector<std::pair<std::string, Var>> l2;
            RandomStream c2 = coeff_rng;
            return t2.value(build_primitive(t2, prim, q, c2, l2)).scalar_value();
          },
          params, 1e-5);
      CHECK_MESSAGE(max_relative_error(analytic, numeric) < 1e-4,
                    "primitive ", static_cast<int>(prim), " trial ", trial);
    }
  }
  CHECK(trial_count == 100);
}

TEST_CASE("gradient of a sum is the sum of gradients") {
  RandomStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({4}, rng);

    auto grad_of = [&](bool use_f, bool use_g, bool combined) {
      Tape t;
      Var v = t.input(x);
      Var f = t.sum(t.mul(v, v));
      Var g = t.l2norm(v);
      Var root = combined ? t.add(f, g) : (use_f ? f : g);
      (void)use_g;
      t.backward(root);
      return t.grad(v);
    };
    Tensor gf = grad_of(true, false, false);
    Tensor gg = grad_of(false, true, false);
    Tensor gc = grad_of(false, false, true);
    for (long long i = 0; i < x.size(); ++i) {
      CHECK(gc[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward and backward are deterministic") {
  RandomStream rng(11);
  Tensor img = random_tensor({2, 6, 6}, rng);
  Tensor ker = random_tensor({2, 2, 3, 3}, rng);
  auto run = [&]() {
    Tape t;
    Var x = t.input(img);
    Var w = t.input(ker);
    Var root = t.l2norm(t.global_mean_pool(t.relu(t.conv2d_same(x, w))));
    t.backward(root);
    return std::make_pair(t.value(root).scalar_value(), t.grad(w));
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  CHECK(v1 == v2);
  CHECK(g1.bit_equal(g2));
}

TEST_CASE("sgd with momentum") {
  ParamSet p;
  p.add("w", Tensor::scalar(0.0));
  GradMap g;
  g.emplace("w", Tensor::scalar(1.0));

  OptimizerConfig plain{0.1, 0.0};
  OptimizerState s = OptimizerState::create(plain, p);
  sgd_step(p, g, s);
  CHECK(p.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-12));

  ParamSet p2;
  p2.add("w", Tensor::scalar(0.0));
  OptimizerConfig momentum{0.1, 0.9};
  OptimizerState s2 = OptimizerState::create(momentum, p2);
  sgd_step(p2, g, s2);
  sgd_step(p2, g, s2);
  CHECK(p2.at("w")[0] == doctest::Approx(-0.29).epsilon(1e-12));

  // zero grad, zero velocity: fixed point
  ParamSet p3;
  p3.add("w", Tensor::scalar(1.25));
  OptimizerState s3 = OptimizerState::create(momentum, p3);
  GradMap zero;
  zero.emplace("w", Tensor::scalar(0.0));
  sgd_step(p3, zero, s3);
  CHECK(p3.at("w")[0] == 1.25);

  GradMap bad;
  bad.emplace("w", Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_WITH_AS(sgd_step(p3, bad, s3), doctest::Contains("ShapeMismatch"), Error);
}
