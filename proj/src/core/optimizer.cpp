#include "core/optimizer.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace spsd {

AdamW::AdamW(const AdamWOptions& options, const ParameterSet<float>& params)
    : options_(options), m_(params.zeros_like()), v_(params.zeros_like()) {}

void AdamW::step(ParameterSet<float>& params, const ParameterSet<float>& grads) {
  if (params.size() != grads.size() || params.size() != m_.size())
    fail(ErrorKind::Shape, "optimizer state does not match parameters");
  ++steps_;
  const float lr = static_cast<float>(options_.lr);
  const float b1 = static_cast<float>(options_.beta1);
  const float b2 = static_cast<float>(options_.beta2);
  const float eps = static_cast<float>(options_.eps);
  const float decay = 1.0f - lr * static_cast<float>(options_.weight_decay);
  const float bias1 = 1.0f - static_cast<float>(std::pow(options_.beta1, static_cast<double>(steps_)));
  const float bias2 = 1.0f - static_cast<float>(std::pow(options_.beta2, static_cast<double>(steps_)));
  const float step_size = lr / bias1;
  const float inv_sqrt_bias2 = 1.0f / std::sqrt(bias2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].array();
    const auto g = grads[i].array();
    auto m = m_[i].array();
    auto v = v_[i].array();
    p *= decay;
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    p -= step_size * m / (v.sqrt() * inv_sqrt_bias2 + eps);
  }
}

void AdamW::restore(std::int64_t steps, ParameterSet<float> m, ParameterSet<float> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    fail(ErrorKind::Shape, "restored optimizer state does not match parameters");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace spsd
