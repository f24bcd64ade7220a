#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "core/config.hpp"
#include "core/model.hpp"
#include "core/optimizer.hpp"

namespace spsd {

struct OptimizerSnapshot {
  AdamWOptions options;
  std::int64_t steps = 0;
  ParameterSet<float> first_moment;
  ParameterSet<float> second_moment;
};

// On disk: the magic line "SPSDCKPT1\n", a little-endian u64 header length,
// a JSON header (network config, step, tensor index, extra), then the raw
// little-endian float32 tensor payload. Tensors are keyed by canonical
// parameter name; optimizer moments are prefixed "adam.m." / "adam.v.".
struct Checkpoint {
  NetworkConfig network;
  ParameterSet<float> params;
  std::optional<OptimizerSnapshot> optimizer;
  std::int64_t step = 0;
  json extra = json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace spsd
