#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "core/model.hpp"

namespace spsd {

enum class Method { ERM, SD, SPSD };

// Which side(s) of the distillation KL receive prediction softening.
enum class SoftenPlacement { FinalOnly, IntermediateOnly, Both };

const char* to_string(Method method);
const char* to_string(SoftenPlacement placement);
Method parse_method(const std::string& text);
SoftenPlacement parse_placement(const std::string& text);

struct DistillConfig {
  Method mode = Method::SPSD;
  double lambda = 0.7;
  // Temperature for SD mode only.
  double tau = 3.0;
  // Final mixing coefficient for SPSD mode only.
  double beta_final = 0.8;
  SoftenPlacement placement = SoftenPlacement::Both;
  // Blocks eligible as the distilled route. Empty means {1, ..., J-1}.
  std::vector<int> sample_range;
  // Stop gradients through the full-network side of the KL.
  bool detach_teacher = false;
  // Add cross-entropy on the sampled route as well.
  bool intermediate_ce = false;

  void validate() const;
};

struct BetaSchedule {
  double beta_final = 0.8;
  std::int64_t total_steps = 1;
};

// beta_final * t / T. Throws Error(Schedule) for t outside [0, T] or T <= 0.
double beta_at(std::int64_t t, const BetaSchedule& schedule);

template <typename S>
struct SoftPrediction {
  std::vector<S> combined;
  S beta_used{};
};

// beta * z + (1 - beta) * onehot(y), before any softmax.
template <typename S>
SoftPrediction<S> soften(std::span<const S> z, int y, S beta);

// KL(softmax(z / tau) || softmax(z_j / tau)), no tau^2 factor.
template <typename S>
S kl_tempered(std::span<const S> z, std::span<const S> z_j, S tau);

// KL between softmax of the softened full and intermediate logits; placement
// selects which arguments are softened.
template <typename S>
S kl_softened(std::span<const S> z, std::span<const S> z_j, int y, S beta, SoftenPlacement placement);

std::vector<int> effective_sample_range(const DistillConfig& config, int num_blocks);

// Uniform draw from the effective sample range.
int sample_block(std::mt19937_64& rng, const DistillConfig& config, int num_blocks);

template <typename S>
struct LossTerms {
  S total{};
  S ce{};
  S kl{};
  double beta = 0.0;
  // Gradients of total with respect to the full and route logits.
  Matrix<S> d_full;
  std::map<int, Matrix<S>> d_routes;
};

// CE + lambda * KL with batch-mean reduction. CE is on the full logits; the
// KL term compares the full logits with route j at training step t of
// total_steps.
template <typename S>
LossTerms<S> total_loss(const LogitBundle<S>& bundle, std::span<const int> labels, int j,
                        std::int64_t t, std::int64_t total_steps, const DistillConfig& config);

}  // namespace spsd
