#include "core/distill.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace spsd {

const char* to_string(Method method) {
  switch (method) {
    case Method::ERM: return "ERM";
    case Method::SD: return "SD";
    case Method::SPSD: return "SPSD";
  }
  return "?";
}

const char* to_string(SoftenPlacement placement) {
  switch (placement) {
    case SoftenPlacement::FinalOnly: return "final_only";
    case SoftenPlacement::IntermediateOnly: return "intermediate_only";
    case SoftenPlacement::Both: return "both";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "ERM") return Method::ERM;
  if (text == "SD") return Method::SD;
  if (text == "SPSD") return Method::SPSD;
  fail(ErrorKind::Config, "distill.mode: unknown method '" + text + "' (expected ERM, SD or SPSD)");
}

SoftenPlacement parse_placement(const std::string& text) {
  if (text == "final_only") return SoftenPlacement::FinalOnly;
  if (text == "intermediate_only") return SoftenPlacement::IntermediateOnly;
  if (text == "both") return SoftenPlacement::Both;
  fail(ErrorKind::Config, "distill.placement: unknown placement '" + text + "'");
}

void DistillConfig::validate() const {
  if (!(lambda >= 0.0)) fail(ErrorKind::Config, "distill.lambda: must be nonnegative");
  if (mode == Method::SD && !(tau > 0.0)) fail(ErrorKind::Config, "distill.tau: must be positive");
  if (mode == Method::SPSD && !(beta_final >= 0.0 && beta_final <= 1.0))
    fail(ErrorKind::Config, "distill.beta_final: must lie in [0, 1]");
}

double beta_at(std::int64_t t, const BetaSchedule& schedule) {
  if (schedule.total_steps <= 0) fail(ErrorKind::Schedule, "total steps must be positive");
  if (t < 0 || t > schedule.total_steps)
    fail(ErrorKind::Schedule, "step " + std::to_string(t) + " outside [0, " +
                                  std::to_string(schedule.total_steps) + "]");
  return schedule.beta_final * static_cast<double>(t) / static_cast<double>(schedule.total_steps);
}

namespace {

template <typename S>
void check_beta(S beta) {
  if (!(beta >= S(0) && beta <= S(1))) fail(ErrorKind::Domain, "beta must lie in [0, 1]");
}

template <typename S>
void check_label(int y, std::size_t num_classes) {
  if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
    fail(ErrorKind::Domain, "label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
}

template <typename S>
std::vector<S> log_softmax(std::span<const S> a) {
  const S peak = *std::max_element(a.begin(), a.end());
  S sum = 0;
  for (S v : a) sum += std::exp(v - peak);
  const S lse = peak + std::log(sum);
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - lse;
  return out;
}

// KL(softmax(a) || softmax(b)) and, optionally, its gradients:
// d/da = p * (log p - log q - KL), d/db = q - p.
template <typename S>
S kl_from_pre_softmax(std::span<const S> a, std::span<const S> b, S* d_a = nullptr, S* d_b = nullptr) {
  const auto log_p = log_softmax(a);
  const auto log_q = log_softmax(b);
  S kl = 0;
  for (std::size_t c = 0; c < a.size(); ++c) kl += std::exp(log_p[c]) * (log_p[c] - log_q[c]);
  if (d_a || d_b) {
    for (std::size_t c = 0; c < a.size(); ++c) {
      const S p = std::exp(log_p[c]);
      const S q = std::exp(log_q[c]);
      if (d_a) d_a[c] = p * (log_p[c] - log_q[c] - kl);
      if (d_b) d_b[c] = q - p;
    }
  }
  return kl;
}

template <typename S>
std::vector<S> soften_or_copy(std::span<const S> z, int y, S beta, bool softened) {
  if (!softened) return {z.begin(), z.end()};
  return soften(z, y, beta).combined;
}

}  // namespace

template <typename S>
SoftPrediction<S> soften(std::span<const S> z, int y, S beta) {
  check_beta(beta);
  check_label<S>(y, z.size());
  SoftPrediction<S> out;
  out.beta_used = beta;
  out.combined.resize(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) {
    const S onehot = static_cast<int>(c) == y ? S(1) : S(0);
    out.combined[c] = beta * z[c] + (S(1) - beta) * onehot;
  }
  return out;
}

template <typename S>
S kl_tempered(std::span<const S> z, std::span<const S> z_j, S tau) {
  if (!(tau > S(0))) fail(ErrorKind::Domain, "temperature must be positive");
  if (z.size() != z_j.size()) fail(ErrorKind::Shape, "logit vectors differ in length");
  std::vector<S> a(z.size()), b(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) {
    a[c] = z[c] / tau;
    b[c] = z_j[c] / tau;
  }
  return kl_from_pre_softmax<S>(a, b);
}

template <typename S>
S kl_softened(std::span<const S> z, std::span<const S> z_j, int y, S beta, SoftenPlacement placement) {
  check_beta(beta);
  if (z.size() != z_j.size()) fail(ErrorKind::Shape, "logit vectors differ in length");
  check_label<S>(y, z.size());
  const auto a = soften_or_copy(z, y, beta, placement != SoftenPlacement::IntermediateOnly);
  const auto b = soften_or_copy(z_j, y, beta, placement != SoftenPlacement::FinalOnly);
  return kl_from_pre_softmax<S>(a, b);
}

std::vector<int> effective_sample_range(const DistillConfig& config, int num_blocks) {
  std::vector<int> range = config.sample_range;
  if (range.empty()) {
    for (int j = 1; j < num_blocks; ++j) range.push_back(j);
  }
  if (range.empty()) fail(ErrorKind::Config, "distill.sample_range: no eligible blocks");
  for (int j : range) {
    if (j < 1 || j > num_blocks)
      fail(ErrorKind::Config, "distill.sample_range: block " + std::to_string(j) + " outside 1.." +
                                  std::to_string(num_blocks));
  }
  return range;
}

int sample_block(std::mt19937_64& rng, const DistillConfig& config, int num_blocks) {
  const auto range = effective_sample_range(config, num_blocks);
  std::uniform_int_distribution<std::size_t> pick(0, range.size() - 1);
  return range[pick(rng)];
}

template <typename S>
LossTerms<S> total_loss(const LogitBundle<S>& bundle, std::span<const int> labels, int j,
                        std::int64_t t, std::int64_t total_steps, const DistillConfig& config) {
  const Matrix<S>& z = bundle.full;
  const auto batch = z.rows();
  const auto classes = z.cols();
  if (batch == 0) fail(ErrorKind::Shape, "empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    fail(ErrorKind::Shape, "label count does not match batch");
  const S inv_batch = S(1) / static_cast<S>(batch);

  LossTerms<S> out;
  out.d_full = Matrix<S>::Zero(batch, classes);

  auto add_cross_entropy = [&](const Matrix<S>& logits, Matrix<S>& grad) {
    S sum = 0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      const int y = labels[b];
      check_label<S>(y, static_cast<std::size_t>(classes));
      std::span<const S> row(logits.row(b).data(), static_cast<std::size_t>(classes));
      const auto lp = log_softmax(row);
      sum -= lp[y];
      for (Eigen::Index c = 0; c < classes; ++c)
        grad(b, c) += (std::exp(lp[c]) - (c == y ? S(1) : S(0))) * inv_batch;
    }
    return sum * inv_batch;
  };

  out.ce = add_cross_entropy(z, out.d_full);
  out.total = out.ce;
  if (config.mode == Method::ERM) return out;

  auto route = bundle.routes.find(j);
  if (route == bundle.routes.end())
    fail(ErrorKind::InvalidState, "route " + std::to_string(j) + " missing from logit bundle");
  const Matrix<S>& z_j = route->second;
  Matrix<S>& d_route = out.d_routes[j];
  d_route = Matrix<S>::Zero(batch, classes);

  bool soften_full = false, soften_route = false;
  S scale_full = 1, scale_route = 1, beta = 0;
  if (config.mode == Method::SD) {
    scale_full = scale_route = S(1) / static_cast<S>(config.tau);
  } else {
    beta = static_cast<S>(beta_at(t, BetaSchedule{config.beta_final, total_steps}));
    out.beta = static_cast<double>(beta);
    soften_full = config.placement != SoftenPlacement::IntermediateOnly;
    soften_route = config.placement != SoftenPlacement::FinalOnly;
    if (soften_full) scale_full = beta;
    if (soften_route) scale_route = beta;
  }

  const S weight = static_cast<S>(config.lambda) * inv_batch;
  std::vector<S> a(classes), b(classes), d_a(classes), d_b(classes);
  S kl_sum = 0;
  for (Eigen::Index r = 0; r < batch; ++r) {
    const int y = labels[r];
    for (Eigen::Index c = 0; c < classes; ++c) {
      const S onehot = c == y ? S(1) : S(0);
      a[c] = soften_full ? beta * z(r, c) + (S(1) - beta) * onehot : z(r, c) * scale_full;
      b[c] = soften_route ? beta * z_j(r, c) + (S(1) - beta) * onehot : z_j(r, c) * scale_route;
    }
    kl_sum += kl_from_pre_softmax<S>(a, b, d_a.data(), d_b.data());
    for (Eigen::Index c = 0; c < classes; ++c) {
      if (!config.detach_teacher) out.d_full(r, c) += weight * scale_full * d_a[c];
      d_route(r, c) += weight * scale_route * d_b[c];
    }
  }
  out.kl = kl_sum * inv_batch;
  out.total = out.ce + static_cast<S>(config.lambda) * out.kl;

  if (config.intermediate_ce) out.total += add_cross_entropy(z_j, d_route);
  return out;
}

template SoftPrediction<float> soften(std::span<const float>, int, float);
template SoftPrediction<double> soften(std::span<const double>, int, double);
template float kl_tempered(std::span<const float>, std::span<const float>, float);
template double kl_tempered(std::span<const double>, std::span<const double>, double);
template float kl_softened(std::span<const float>, std::span<const float>, int, float, SoftenPlacement);
template double kl_softened(std::span<const double>, std::span<const double>, int, double,
                            SoftenPlacement);
template LossTerms<float> total_loss(const LogitBundle<float>&, std::span<const int>, int,
                                     std::int64_t, std::int64_t, const DistillConfig&);
template LossTerms<double> total_loss(const LogitBundle<double>&, std::span<const int>, int,
                                      std::int64_t, std::int64_t, const DistillConfig&);

}  // namespace spsd
