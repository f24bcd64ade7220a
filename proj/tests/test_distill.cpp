#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "core/distill.hpp"
#include "core/errors.hpp"
#include "oracles.hpp"

using namespace spsd;

namespace {

std::vector<double> random_logits(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> z(n);
  for (double& v : z) v = g(rng);
  return z;
}

}  // namespace

TEST(BetaSchedule, Endpoints) {
  EXPECT_EQ(beta_at(0, {0.8, 3000}), 0.0);
  EXPECT_EQ(beta_at(0, {0.3, 10}), 0.0);
  EXPECT_DOUBLE_EQ(beta_at(3000, {0.8, 3000}), 0.8);
  EXPECT_DOUBLE_EQ(beta_at(1500, {0.8, 3000}), 0.4);
}

TEST(BetaSchedule, Linear) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int64_t> step(0, 10000);
  for (int i = 0; i < 200; ++i) {
    const auto t = step(rng);
    EXPECT_NEAR(beta_at(t, {0.6, 10000}), 0.6 * static_cast<double>(t) / 10000.0, 1e-12);
  }
}

TEST(BetaSchedule, OutOfRangeIsScheduleError) {
  for (auto [t, T] : std::vector<std::pair<std::int64_t, std::int64_t>>{{11, 10}, {-1, 10}, {0, 0}}) {
    try {
      beta_at(t, {0.8, T});
      FAIL() << t << "/" << T;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Schedule);
    }
  }
}

TEST(Soften, ConvexCombination) {
  const std::vector<double> z{2.0, 0.0};
  EXPECT_EQ(soften<double>(z, 0, 0.0).combined, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(soften<double>(z, 0, 1.0).combined, (std::vector<double>{2.0, 0.0}));
  EXPECT_EQ(soften<double>(z, 0, 0.5).combined, (std::vector<double>{1.5, 0.0}));
  EXPECT_EQ(soften<double>(z, 0, 0.5).beta_used, 0.5);
}

TEST(Soften, RejectsBadInputs) {
  const std::vector<double> z{2.0, 0.0};
  for (auto [y, beta] : std::vector<std::pair<int, double>>{{2, 0.5}, {-1, 0.5}, {0, 1.5}, {0, -0.1}}) {
    try {
      soften<double>(z, y, beta);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
  }
}

TEST(KlTempered, IdenticalInputsGiveZero) {
  const std::vector<double> z{10.0, 0.0};
  EXPECT_EQ(kl_tempered<double>(z, z, 3.0), 0.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_logits(rng, 5, 4.0);
    EXPECT_NEAR(kl_tempered<double>(a, a, 0.5 + i * 0.1), 0.0, 1e-15);
  }
}

TEST(KlTempered, MatchesExtendedPrecisionOracle) {
  const std::vector<double> z{1.0, 0.0}, zj{0.0, 1.0};
  const long double expected = oracle::kl(oracle::scaled(z, 1.0L), oracle::scaled(zj, 1.0L));
  EXPECT_NEAR(kl_tempered<double>(z, zj, 1.0), static_cast<double>(expected), 1e-12);
  // Closed form for the two-class case: (e - 1) / (e + 1).
  EXPECT_NEAR(kl_tempered<double>(z, zj, 1.0), std::tanh(0.5), 1e-12);

  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_logits(rng, 5, 3.0), b = random_logits(rng, 5, 3.0);
    const double tau = 0.5 + 0.05 * i;
    const long double ref = oracle::kl(oracle::scaled(a, 1.0L / tau), oracle::scaled(b, 1.0L / tau));
    EXPECT_NEAR(kl_tempered<double>(a, b, tau), static_cast<double>(ref), 1e-12);
  }
}

TEST(KlTempered, RejectsBadInputs) {
  const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0, 3.0};
  EXPECT_THROW(kl_tempered<double>(a, b, 1.0), Error);
  EXPECT_THROW(kl_tempered<double>(a, a, 0.0), Error);
}

TEST(KlSoftened, VanishesAtBetaZero) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_logits(rng, 5, 10.0), b = random_logits(rng, 5, 10.0);
    EXPECT_EQ(kl_softened<double>(a, b, i % 5, 0.0, SoftenPlacement::Both), 0.0);
  }
}

TEST(KlSoftened, BetaOneReducesToUnitTemperature) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_logits(rng, 5, 5.0), b = random_logits(rng, 5, 5.0);
    EXPECT_NEAR(kl_softened<double>(a, b, i % 5, 1.0, SoftenPlacement::Both), kl_tempered<double>(a, b, 1.0),
                1e-12);
  }
}

TEST(KlSoftened, MatchesDirectFormula) {
  const std::vector<double> z{2.0, 0.0, 0.0}, zj{0.0, 2.0, 0.0};
  const long double expected = oracle::kl(oracle::softened(z, 0, 0.5L), oracle::softened(zj, 0, 0.5L));
  EXPECT_NEAR(kl_softened<double>(z, zj, 0, 0.5, SoftenPlacement::Both), static_cast<double>(expected), 1e-12);

  // One-sided placements soften only the named argument.
  const long double final_only = oracle::kl(oracle::softened(z, 0, 0.5L), oracle::scaled(zj, 1.0L));
  const long double inter_only = oracle::kl(oracle::scaled(z, 1.0L), oracle::softened(zj, 0, 0.5L));
  EXPECT_NEAR(kl_softened<double>(z, zj, 0, 0.5, SoftenPlacement::FinalOnly), static_cast<double>(final_only),
              1e-12);
  EXPECT_NEAR(kl_softened<double>(z, zj, 0, 0.5, SoftenPlacement::IntermediateOnly),
              static_cast<double>(inter_only), 1e-12);
}

TEST(KlProperties, NonnegativeIncludingExtremeLogits) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-50.0, 50.0), beta(0.0, 1.0), tau(0.1, 10.0);
  std::bernoulli_distribution extreme(0.3);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> a(5), b(5);
    for (int c = 0; c < 5; ++c) {
      a[c] = extreme(rng) ? (u(rng) > 0 ? 50.0 : -50.0) : u(rng);
      b[c] = extreme(rng) ? (u(rng) > 0 ? 50.0 : -50.0) : u(rng);
    }
    EXPECT_GE(kl_tempered<double>(a, b, tau(rng)), -1e-12);
    EXPECT_GE(kl_softened<double>(a, b, i % 5, beta(rng), SoftenPlacement::Both), -1e-12);
  }
}

TEST(Sampler, SingletonRange) {
  DistillConfig cfg;
  cfg.sample_range = {3};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_block(rng, cfg, 6), 3);
}

TEST(Sampler, DefaultRangeExcludesFinalBlock) {
  DistillConfig cfg;
  EXPECT_EQ(effective_sample_range(cfg, 6), (std::vector<int>{1, 2, 3, 4, 5}));
  // A single-block network has no intermediate route to distill into.
  EXPECT_THROW(effective_sample_range(cfg, 1), Error);
}

TEST(Sampler, UniformWithinThreeSigma) {
  DistillConfig cfg;
  cfg.sample_range = {1, 2, 3, 4, 5};
  std::mt19937_64 rng(123);
  const int n = 100000;
  std::vector<int> counts(6, 0);
  for (int i = 0; i < n; ++i) ++counts[sample_block(rng, cfg, 6)];
  const double sigma = std::sqrt(n * 0.2 * 0.8);
  for (int j = 1; j <= 5; ++j) EXPECT_NEAR(counts[j], n * 0.2, 3 * sigma) << j;
}

TEST(Sampler, SeededSequenceRepeats) {
  DistillConfig cfg;
  std::mt19937_64 a(42), b(42);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_block(a, cfg, 6), sample_block(b, cfg, 6));
}

TEST(Sampler, RangeOutsideNetworkRejected) {
  DistillConfig cfg;
  cfg.sample_range = {7};
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_block(rng, cfg, 6), Error);
}

namespace {

LogitBundle<double> bundle_of(std::vector<std::vector<double>> full, std::vector<std::vector<double>> route, int j) {
  LogitBundle<double> b;
  b.full.resize(full.size(), full[0].size());
  b.routes[j].resize(route.size(), route[0].size());
  for (std::size_t r = 0; r < full.size(); ++r)
    for (std::size_t c = 0; c < full[0].size(); ++c) {
      b.full(r, c) = full[r][c];
      b.routes[j](r, c) = route[r][c];
    }
  return b;
}

}  // namespace

TEST(TotalLoss, ErmIsMeanCrossEntropy) {
  const auto b = bundle_of({{1.0, 2.0, 0.5}, {0.0, -1.0, 3.0}}, {{0, 0, 0}, {0, 0, 0}}, 1);
  const std::vector<int> labels{0, 2};
  DistillConfig cfg;
  cfg.mode = Method::ERM;
  const auto loss = total_loss(b, labels, 1, 10, 100, cfg);
  const double ce0 = -std::log(oracle::softmax({1.0, 2.0, 0.5})[0]);
  const double ce1 = -std::log(oracle::softmax({0.0, -1.0, 3.0})[2]);
  EXPECT_NEAR(loss.total, (ce0 + ce1) / 2, 1e-14);
  EXPECT_EQ(loss.total, loss.ce);
  EXPECT_TRUE(loss.d_routes.empty());
}

TEST(TotalLoss, ZeroLambdaEqualsErm) {
  const auto b = bundle_of({{1.0, 2.0, 0.5}, {0.0, -1.0, 3.0}}, {{0.3, 0.1, 0}, {1, 0, -2}}, 1);
  const std::vector<int> labels{0, 2};
  DistillConfig spsd_cfg, erm;
  spsd_cfg.lambda = 0.0;
  erm.mode = Method::ERM;
  EXPECT_EQ(total_loss(b, labels, 1, 40, 100, spsd_cfg).total, total_loss(b, labels, 1, 40, 100, erm).total);
}

TEST(TotalLoss, SpsdMatchesEndToEndFormula) {
  const std::vector<double> z{1.2, -0.3, 0.4, 2.0, -1.0}, zj{0.1, 0.7, -0.2, 0.5, 0.0};
  const int y = 3;
  const auto b = bundle_of({z}, {zj}, 2);
  const std::vector<int> labels{y};
  DistillConfig cfg;  // lambda 0.7, beta_final 0.8
  const auto loss = total_loss(b, labels, 2, 750, 1000, cfg);
  const long double beta = 0.8L * 750 / 1000;
  const long double ce = -std::log(static_cast<long double>(oracle::softmax(z)[y]));
  const long double expected = ce + 0.7L * oracle::kl(oracle::softened(z, y, beta), oracle::softened(zj, y, beta));
  EXPECT_NEAR(loss.total, static_cast<double>(expected), 1e-10);
  EXPECT_NEAR(loss.beta, 0.6, 1e-15);
}

TEST(TotalLoss, SdUsesTemperature) {
  const std::vector<double> z{1.2, -0.3, 0.4}, zj{0.1, 0.7, -0.2};
  const auto b = bundle_of({z}, {zj}, 1);
  const std::vector<int> labels{1};
  DistillConfig cfg;
  cfg.mode = Method::SD;
  cfg.lambda = 0.5;
  cfg.tau = 2.0;
  const auto loss = total_loss(b, labels, 1, 1, 10, cfg);
  const long double ce = -std::log(static_cast<long double>(oracle::softmax(z)[1]));
  const long double expected = ce + 0.5L * oracle::kl(oracle::scaled(z, 0.5L), oracle::scaled(zj, 0.5L));
  EXPECT_NEAR(loss.total, static_cast<double>(expected), 1e-12);
}

TEST(TotalLoss, MissingRouteIsInvalidState) {
  LogitBundle<double> b;
  b.full = Matrix<double>::Zero(1, 3);
  const std::vector<int> labels{0};
  try {
    total_loss(b, labels, 1, 1, 10, DistillConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidState);
  }
}

TEST(DistillConfig, Validation) {
  DistillConfig cfg;
  cfg.lambda = -1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.beta_final = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.mode = Method::SD;
  cfg.tau = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(parse_method("SPSD"), Method::SPSD);
  EXPECT_THROW(parse_method("spsd-vit"), Error);
  EXPECT_EQ(parse_placement("final_only"), SoftenPlacement::FinalOnly);
}
