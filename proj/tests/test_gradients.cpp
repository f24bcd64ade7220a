#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "core/distill.hpp"
#include "core/model.hpp"

using namespace spsd;

namespace {

NetworkConfig tiny() {
  NetworkConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.num_blocks = 2;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.mlp_ratio = 2.0;
  c.num_classes = 3;
  return c;
}

struct Probe {
  VisionTransformer<double> model{tiny(), 11};
  std::vector<Image> images;
  std::vector<int> labels{2};

  Probe() {
    // Larger weights than the init so that every term is well away from zero.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.3);
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
      for (Eigen::Index k = 0; k < model.parameters()[i].size(); ++k) model.parameters()[i].data()[k] += g(rng);
    Image img(8, 8);
    std::normal_distribution<float> px(0.0f, 1.0f);
    for (float& v : img.pixels) v = px(rng);
    images.push_back(img);
  }

  double loss(int j, const DistillConfig& cfg) const {
    std::set<int> routes;
    if (j) routes.insert(j);
    return total_loss(model.forward(images, routes), labels, j, 50, 100, cfg).total;
  }
};

// Largest relative error between analytic and central-difference gradients.
double max_relative_error(Probe& p, int j, const DistillConfig& cfg) {
  std::set<int> routes;
  if (j) routes.insert(j);
  ForwardCache<double> cache;
  const auto bundle = p.model.forward(p.images, routes, &cache);
  const auto terms = total_loss(bundle, p.labels, j, 50, 100, cfg);
  auto grads = p.model.zero_gradients();
  p.model.backward(cache, terms.d_full, terms.d_routes, grads);

  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& w = p.model.parameters()[i];
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double saved = w.data()[k];
      w.data()[k] = saved + h;
      const double up = p.loss(j, cfg);
      w.data()[k] = saved - h;
      const double down = p.loss(j, cfg);
      w.data()[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[i].data()[k];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST(Gradients, Erm) {
  Probe p;
  DistillConfig cfg;
  cfg.mode = Method::ERM;
  EXPECT_LT(max_relative_error(p, 0, cfg), 1e-4);
}

TEST(Gradients, TemperedSelfDistillation) {
  Probe p;
  DistillConfig cfg;
  cfg.mode = Method::SD;
  cfg.tau = 3.0;
  EXPECT_LT(max_relative_error(p, 1, cfg), 1e-4);
}

TEST(Gradients, SoftenedBothSides) {
  Probe p;
  DistillConfig cfg;  // lambda 0.7, beta_final 0.8, t = T/2 so beta_t = 0.4
  EXPECT_LT(max_relative_error(p, 1, cfg), 1e-4);
}

TEST(Gradients, SoftenedPlacements) {
  for (auto placement : {SoftenPlacement::FinalOnly, SoftenPlacement::IntermediateOnly}) {
    Probe p;
    DistillConfig cfg;
    cfg.placement = placement;
    EXPECT_LT(max_relative_error(p, 1, cfg), 1e-4) << to_string(placement);
  }
}

TEST(Gradients, IntermediateCrossEntropy) {
  Probe p;
  DistillConfig cfg;
  cfg.intermediate_ce = true;
  EXPECT_LT(max_relative_error(p, 1, cfg), 1e-4);
}

TEST(Gradients, FinalRouteSampled) {
  Probe p;
  DistillConfig cfg;
  cfg.sample_range = {1, 2};
  EXPECT_LT(max_relative_error(p, 2, cfg), 1e-4);
}

TEST(Gradients, DetachedTeacherDropsKlGradientOnFullLogits) {
  Probe p;
  DistillConfig cfg, erm;
  cfg.detach_teacher = true;
  erm.mode = Method::ERM;
  const auto bundle = p.model.forward(p.images, {1});
  const auto detached = total_loss(bundle, p.labels, 1, 50, 100, cfg);
  const auto plain = total_loss(bundle, p.labels, 0, 50, 100, erm);
  EXPECT_TRUE(detached.d_full.isApprox(plain.d_full, 1e-14));
  EXPECT_GT(detached.d_routes.at(1).cwiseAbs().sum(), 0.0);
}

TEST(Gradients, LossIsSmoothInBeta) {
  // d/dbeta of kl_softened against a central difference; beta on a grid in (0, 1).
  const std::vector<double> z{1.3, -0.4, 0.2}, zj{-0.5, 0.9, 0.1};
  for (double beta : {0.1, 0.35, 0.5, 0.8, 0.95}) {
    const double h = 1e-6;
    auto f = [&](double b) { return kl_softened<double>(z, zj, 0, b, SoftenPlacement::Both); };
    const double d1 = (f(beta + h) - f(beta - h)) / (2 * h);
    const double d2 = (f(beta + h / 2) - f(beta - h / 2)) / h;
    EXPECT_NEAR(d1, d2, 1e-6 * std::max(1.0, std::abs(d1)));
    // Second-order consistency rules out kinks.
    const double curvature = (f(beta + 1e-4) - 2 * f(beta) + f(beta - 1e-4)) / 1e-8;
    EXPECT_TRUE(std::isfinite(curvature));
  }
}
