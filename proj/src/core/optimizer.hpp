#pragma once

#include <cstdint>

#include "core/model.hpp"

namespace spsd {

struct AdamWOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam, bias-corrected moments.
class AdamW {
 public:
  AdamW(const AdamWOptions& options, const ParameterSet<float>& params);

  void step(ParameterSet<float>& params, const ParameterSet<float>& grads);

  const AdamWOptions& options() const { return options_; }
  std::int64_t steps_taken() const { return steps_; }
  const ParameterSet<float>& first_moment() const { return m_; }
  const ParameterSet<float>& second_moment() const { return v_; }

  void restore(std::int64_t steps, ParameterSet<float> m, ParameterSet<float> v);

 private:
  AdamWOptions options_;
  std::int64_t steps_ = 0;
  ParameterSet<float> m_;
  ParameterSet<float> v_;
};

}  // namespace spsd
