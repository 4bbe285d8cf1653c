#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace geoprior {
namespace {

const double kLogHalf = std::log(0.5);

ModelParams zero_model(std::size_t classes, std::size_t photographers, const Variant& v = {}) {
  Rng rng(1);
  auto m = init_model({classes, photographers, 8, 2}, v, rng);
  for (Param* p : m.parameters()) p->value.fill(0.0);
  return m;
}

TEST(Embeddings, ZeroVectorsGiveOneHalf) {
  const Matrix o(4, 3), p(4, 2);
  const std::vector<double> e(4, 0.0);
  for (double v : object_affinity(e, o)) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(photographer_location_affinity(e, p, 1), 0.5);
  EXPECT_EQ(photographer_object_affinity(o, p, 2, 0), 0.5);
}

TEST(Embeddings, SaturateWithoutOverflow) {
  Matrix o(1, 2);
  o(0, 0) = 1e4;
  o(0, 1) = -1e4;
  const auto a = object_affinity(std::vector<double>{1.0}, o);
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(a[1], 0.0);
}

TEST(Embeddings, MatchBruteForce) {
  Rng rng(6);
  const Matrix o = make_embedding_matrix(5, 4, rng);
  const Matrix p = make_embedding_matrix(5, 3, rng);
  std::vector<double> e(5);
  for (double& v : e) v = rng.uniform(-1, 1);
  const auto a = object_affinity(e, o);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0;
    for (std::size_t d = 0; d < 5; ++d) s += e[d] * o(d, c);
    EXPECT_NEAR(a[c], 1 / (1 + std::exp(-s)), 1e-15);
  }
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t q = 0; q < 3; ++q) {
      double s = 0;
      for (std::size_t d = 0; d < 5; ++d) s += o(d, c) * p(d, q);
      EXPECT_NEAR(photographer_object_affinity(o, p, c, q), 1 / (1 + std::exp(-s)), 1e-15);
    }
  }
}

TEST(Embeddings, PhotographerObjectIsSymmetric) {
  Rng rng(2);
  const Matrix a = make_embedding_matrix(6, 3, rng);
  EXPECT_EQ(photographer_object_logit(a, a, 0, 2), photographer_object_logit(a, a, 2, 0));
}

TEST(Embeddings, LookupErrors) {
  const Matrix o(4, 3), p(4, 2);
  const std::vector<double> e(4, 0.0);
  try {
    photographer_location_affinity(e, p, 2);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Lookup);
  }
  EXPECT_THROW(photographer_object_affinity(o, p, 3, 0), Error);
  EXPECT_THROW(object_affinity(std::vector<double>(3, 0.0), o), Error);
}

TEST(Loss, ZeroModelObjectLocation) {
  const Matrix o(8, 3);
  const std::vector<double> f(8, 0.0);
  // lambda + (C - 1) + C terms of log 0.5
  EXPECT_NEAR(loss_object_location(f, f, o, 1, 3.0), 8 * kLogHalf, 1e-14);
  const Matrix single(8, 1);
  EXPECT_NEAR(loss_object_location(f, f, single, 0, 1.0), 2 * kLogHalf, 1e-14);
}

TEST(Loss, ZeroModelPhotographerTerms) {
  const Matrix o(8, 3), p(8, 2);
  const std::vector<double> f(8, 0.0);
  EXPECT_NEAR(loss_photographer_location(f, f, p, 1), 2 * kLogHalf, 1e-14);
  EXPECT_NEAR(loss_photographer_object(o, p, 0, 1, 1.0), 3 * kLogHalf, 1e-14);
}

TEST(Loss, ZeroModelTotal) {
  const auto m = zero_model(3, 2);
  TrainingExample ex{{10, 10, 0.5}, 1, 0, {50, -20, 0.1}};
  const LossConfig cfg{3.0, NegativeSampler::UniformSphere, {}};
  // object-location 8, photographer-location 2, photographer-object 3 + 2
  EXPECT_NEAR(total_loss(ex, m, cfg), (8 + 2 + 5) * kLogHalf, 1e-13);
  ex.p.reset();
  EXPECT_NEAR(total_loss(ex, m, cfg), 8 * kLogHalf, 1e-13);
}

TEST(Loss, BadLambdaIsConfigError) {
  const Matrix o(2, 2);
  const std::vector<double> f(2, 0.0);
  try {
    loss_object_location(f, f, o, 0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Loss, CategoryOutOfRangeIsLookupError) {
  const Matrix o(2, 2);
  const std::vector<double> f(2, 0.0);
  try {
    loss_object_location(f, f, o, 2, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Lookup);
  }
}

// Full presence/absence likelihood: sum_i z_i log s(a_i) + (1 - z_i) log(1 - s(a_i))
// with z one-hot. The presence-only objective at lambda = 1 contains exactly
// these terms plus the pseudo-negative ones, which the oracle adds separately.
TEST(Loss, ReducesToPresenceAbsenceLikelihood) {
  Rng rng(12);
  auto m = init_model({5, 0, 6, 1}, {}, rng);
  const TrainingExample ex{{30, 60, 0.4}, 2, std::nullopt, {-120, -10, 0.9}};
  const auto fx = embed(ex.x, m.encoder, m.variant);
  const auto fr = embed(ex.r, m.encoder, m.variant);
  double presence_absence = 0.0;
  double negatives = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    double ax = 0, ar = 0;
    for (std::size_t d = 0; d < 6; ++d) {
      ax += fx[d] * m.objects.value(d, i);
      ar += fr[d] * m.objects.value(d, i);
    }
    const double z = i == ex.y ? 1.0 : 0.0;
    presence_absence += z * std::log(1 / (1 + std::exp(-ax))) + (1 - z) * std::log(1 - 1 / (1 + std::exp(-ax)));
    negatives += std::log(1 - 1 / (1 + std::exp(-ar)));
  }
  const LossConfig cfg{1.0, NegativeSampler::UniformSphere, {}};
  EXPECT_NEAR(total_loss(ex, m, cfg), presence_absence + negatives, 1e-12);
}

TEST(Loss, LambdaWeightsOnlyThePositiveTerm) {
  Rng rng(13);
  auto m = init_model({4, 0, 6, 1}, {}, rng);
  const TrainingExample ex{{30, 60, 0.4}, 1, std::nullopt, {-120, -10, 0.9}};
  const auto fx = embed(ex.x, m.encoder, m.variant);
  double ay = 0;
  for (std::size_t d = 0; d < 6; ++d) ay += fx[d] * m.objects.value(d, 1);
  const double l1 = total_loss(ex, m, {1.0, NegativeSampler::UniformSphere, {}});
  const double l4 = total_loss(ex, m, {4.0, NegativeSampler::UniformSphere, {}});
  EXPECT_NEAR(l4 - l1, 3.0 * log_sigmoid(ay), 1e-12);
}

TEST(Loss, BatchObjectiveIsSumOfPerExampleLoss) {
  Rng rng(21);
  auto m = init_model({5, 3, 8, 2}, {}, rng);
  const auto batch = testing::random_batch(7, 5, 3, rng);
  const LossConfig cfg{5.0, NegativeSampler::UniformSphere, {}};
  double want = 0;
  for (const auto& ex : batch) want += total_loss(ex, m, cfg);
  EXPECT_NEAR(testing::objective(m, batch, cfg, 0.0, nullptr), want, 1e-10);
}

TEST(Loss, BatchObjectiveGradientMatchesFiniteDifferences) {
  Rng rng(22);
  for (const auto& v : testing::all_variants()) {
    auto m = init_model({4, 3, 6, 2}, v, rng);
    const auto batch = testing::random_batch(3, 4, 3, rng);
    const LossConfig cfg{4.0, NegativeSampler::UniformSphere, v};
    const Rng dropout(5);
    Rng pick(1);
    const auto r = testing::check_gradient(m, batch, cfg, 0.5, &dropout, 150, pick);
    EXPECT_LT(r.max_rel_error, 1e-5) << testing::variant_name(v);
    EXPECT_GT(r.nonzero, 0u);
  }
}

TEST(Loss, VariantMismatchIsConfigError) {
  Rng rng(1);
  auto m = init_model({2, 0, 4, 1}, {}, rng);
  const TrainingExample ex{{0, 0, 0}, 0, std::nullopt, {1, 1, 0}};
  try {
    total_loss(ex, m, {1.0, NegativeSampler::UniformSphere, {false, true, true}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Sampler, UniformSphereIsAreaUniform) {
  Rng rng(99);
  std::size_t tropics = 0;
  const std::size_t n = 20000;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(sample_uniform_sphere(rng).lat) < 30.0) ++tropics;
  }
  // sin(30 deg) of the sphere's area lies within 30 degrees of the equator.
  EXPECT_NEAR(static_cast<double>(tropics) / n, 0.5, 0.015);
}

TEST(Sampler, TimeMarginalPassesKolmogorovSmirnov) {
  Rng rng(7);
  const std::size_t n = 5000;
  std::vector<double> t(n);
  for (double& v : t) v = sample_uniform_sphere(rng).time;
  std::sort(t.begin(), t.end());
  double d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d = std::max({d, (i + 1.0) / n - t[i], t[i] - static_cast<double>(i) / n});
  }
  // Asymptotic critical value at alpha = 0.01.
  EXPECT_LT(d, 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST(Sampler, SingletonPoolAlwaysReturnsItsPoint) {
  Rng rng(1);
  const std::vector<SpatioTemporalPoint> pool{{12, -7, 0.3}};
  for (int i = 0; i < 20; ++i) {
    const auto p = sample_negative(NegativeSampler::PositivePool, rng, pool);
    EXPECT_EQ(p.lon, 12);
    EXPECT_EQ(p.lat, -7);
    EXPECT_EQ(p.time, 0.3);
  }
}

TEST(Sampler, EmptyPoolIsConfigError) {
  Rng rng(1);
  try {
    sample_negative(NegativeSampler::PositivePool, rng, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

}  // namespace
}  // namespace geoprior
