#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fcac/classifier.hpp"
#include "fcac/losses.hpp"
#include "fcac/rng.hpp"

using namespace fcac;
using classifier::Prototype;
using classifier::StochasticClassifierState;

namespace {

StochasticClassifierState state_from_columns(const std::vector<Tensor>& mu_cols,
                                             double sigma_init = 0.0) {
  StochasticClassifierState s;
  std::vector<Prototype> protos;
  for (size_t j = 0; j < mu_cols.size(); ++j) {
    protos.push_back({static_cast<int>(j), mu_cols[j]});
  }
  return classifier::expand(s, protos, sigma_init);
}

}  // namespace

TEST_CASE("class prototypes") {
  // one sample per class: the prototype is that embedding
  Tensor e({2, 3}, {1, 0, 0, 0, 1, 0});
  auto protos = classifier::class_prototypes(e, {4, 9});
  CHECK(protos.at(4).vector.bit_equal(Tensor({3}, {1, 0, 0})));
  CHECK(protos.at(9).vector.bit_equal(Tensor({3}, {0, 1, 0})));

  // antipodal pair: zero mean
  Tensor anti({2, 2}, {1, 0, -1, 0});
  CHECK_THROWS_WITH_AS(classifier::class_prototypes(anti, {0, 0}),
                       doctest::Contains("EmptyPrototype"), Error);

  // expected class with no samples
  CHECK_THROWS_WITH_AS(classifier::class_prototypes(e, {4, 9}, {4, 9, 11}),
                       doctest::Contains("EmptyClass"), Error);

  // three random unit vectors: normalized mean, hand computed
  RandomStream rng(8);
  Tensor three({3, 4});
  Tensor mean({4});
  for (int i = 0; i < 3; ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < 4; ++j) {
      three.at(i, j) = rng.normal();
      norm2 += three.at(i, j) * three.at(i, j);
    }
    for (int j = 0; j < 4; ++j) {
      three.at(i, j) /= std::sqrt(norm2);
      mean[j] += three.at(i, j) / 3.0;
    }
  }
  double norm = 0.0;
  for (int j = 0; j < 4; ++j) norm += mean[j] * mean[j];
  norm = std::sqrt(norm);
  auto p = classifier::class_prototypes(three, {2, 2, 2});
  for (int j = 0; j < 4; ++j) {
    CHECK(p.at(2).vector[j] == doctest::Approx(mean[j] / norm).epsilon(1e-12));
  }
}

TEST_CASE("weight sampling") {
  RandomStream rng(21);
  Tensor mu0({3}, {0.3, -0.7, 1.1});
  Tensor mu1({3}, {-0.2, 0.4, 0.6});
  StochasticClassifierState s = state_from_columns({mu0, mu1}, 0.0);

  // sigma = 0 collapses to mu exactly
  CHECK(classifier::sample_weights(s, 99).bit_equal(s.mu));

  StochasticClassifierState noisy = state_from_columns({mu0, mu1}, 0.25);
  Tensor w1 = classifier::sample_weights(noisy, 1234);
  Tensor w2 = classifier::sample_weights(noisy, 1234);
  CHECK(w1.bit_equal(w2));
  Tensor w3 = classifier::sample_weights(noisy, 1235);
  CHECK_FALSE(w3.bit_equal(w1));
}

TEST_CASE("expansion keeps old columns bit-identical") {
  StochasticClassifierState empty;
  Tensor a({4}, {1, 0, 0, 0});
  Tensor b({4}, {0, 1, 0, 0});
  Tensor c({4}, {0, 0, 1, 0});
  StochasticClassifierState s3 = state_from_columns({a, b, c}, 0.1);
  CHECK(s3.n_classes() == 3);
  CHECK(s3.session_boundaries == std::vector<int>{0});

  // grow a larger state, then expand and compare the old block
  RandomStream rng(5);
  std::vector<Prototype> base;
  for (int j = 0; j < 60; ++j) {
    Tensor v({8});
    for (int i = 0; i < 8; ++i) v[i] = rng.normal();
    base.push_back({j, v});
  }
  StochasticClassifierState s60 = classifier::expand(StochasticClassifierState{}, base, 0.1);
  std::vector<Prototype> extra;
  for (int j = 0; j < 5; ++j) {
    Tensor v({8});
    for (int i = 0; i < 8; ++i) v[i] = rng.normal();
    extra.push_back({100 + j, v});
  }
  StochasticClassifierState s65 = classifier::expand(s60, extra, 0.2);
  CHECK(s65.n_classes() == 65);
  CHECK(s65.session_boundaries == std::vector<int>{0, 60});
  for (int j = 0; j < 60; ++j) {
    CHECK(s65.mu_column(j).bit_equal(s60.mu_column(j)));
    CHECK(s65.sigma_column(j).bit_equal(s60.sigma_column(j)));
  }

  Tensor dup({8});
  dup[0] = 1.0;
  CHECK_THROWS_WITH_AS(classifier::expand(s60, {{59, dup}}, 0.1),
                       doctest::Contains("DuplicateClass"), Error);
}

TEST_CASE("prediction") {
  Tensor a({3}, {1, 0, 0});
  Tensor b({3}, {0, 1, 0});
  StochasticClassifierState s = state_from_columns({a, b});

  auto hit = classifier::predict(Tensor({3}, {1, 0, 0}), s);
  CHECK(hit.class_id == 0);
  CHECK(hit.scores[0] == doctest::Approx(1.0).epsilon(1e-12));

  // identical columns: the smaller class id wins
  StochasticClassifierState tie = state_from_columns({a, a});
  CHECK(classifier::predict(Tensor({3}, {0.9, 0.1, 0}), tie).class_id == 0);

  // scaling the query cannot change the argmax
  RandomStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> cols;
    for (int j = 0; j < 5; ++j) {
      Tensor v({6});
      for (int i = 0; i < 6; ++i) v[i] = rng.normal();
      cols.push_back(v);
    }
    StochasticClassifierState st = state_from_columns(cols);
    Tensor e({6});
    for (int i = 0; i < 6; ++i) e[i] = rng.normal();

    // brute-force cosine argmax oracle
    int best = 0;
    double best_score = -2.0;
    for (int j = 0; j < 5; ++j) {
      const double score = losses::cosine_similarity(e, cols[static_cast<size_t>(j)]);
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    CHECK(classifier::predict(e, st).class_id == best);

    Tensor scaled = e;
    for (int i = 0; i < 6; ++i) scaled[i] *= 37.5;
    CHECK(classifier::predict(scaled, st).class_id == best);
  }

  StochasticClassifierState empty;
  CHECK_THROWS_WITH_AS(classifier::predict(a, empty), doctest::Contains("EmptyClassifier"), Error);
}

TEST_CASE("sampled moments match mu and sigma") {
  // compact version of the verification-suite moment test
  StochasticClassifierState s;
  s.dim = 4;
  s.mu = Tensor({4, 2});
  s.sigma = Tensor({4, 2});
  RandomStream rng(17);
  for (long long i = 0; i < s.mu.size(); ++i) {
    s.mu[i] = rng.normal();
    s.sigma[i] = 0.1 + 0.4 * rng.uniform();
  }
  s.class_ids = {0, 1};
  s.session_boundaries = {0};

  const int draws = 10000;
  Tensor sum({4, 2}), sum_sq({4, 2});
  for (int k = 0; k < draws; ++k) {
    Tensor w = classifier::sample_weights(s, mix_tag(99, static_cast<std::uint64_t>(k)));
    for (long long i = 0; i < w.size(); ++i) {
      sum[i] += w[i];
      sum_sq[i] += w[i] * w[i];
    }
  }
  for (long long i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / draws;
    const double sd = std::sqrt(std::max(0.0, sum_sq[i] / draws - mean * mean));
    CHECK(std::abs(mean - s.mu[i]) <= 4.0 * s.sigma[i] / std::sqrt(static_cast<double>(draws)));
    CHECK(std::abs(sd - s.sigma[i]) / s.sigma[i] <= 0.05);
  }
}
