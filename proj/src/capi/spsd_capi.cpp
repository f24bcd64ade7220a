#include "spsd/spsd.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "core/checkpoint.hpp"
#include "core/commands.hpp"
#include "core/distill.hpp"
#include "core/errors.hpp"
#include "core/metrics.hpp"

struct spsd_model {
  spsd::VisionTransformer<float> net;
};

namespace {

thread_local std::string last_error;

spsd_status status_of(spsd::ErrorKind kind) {
  using spsd::ErrorKind;
  switch (kind) {
    case ErrorKind::Config: return SPSD_ERR_CONFIG;
    case ErrorKind::Shape: return SPSD_ERR_SHAPE;
    case ErrorKind::InvalidRoute: return SPSD_ERR_INVALID_ROUTE;
    case ErrorKind::Domain: return SPSD_ERR_DOMAIN;
    case ErrorKind::Schedule: return SPSD_ERR_SCHEDULE;
    case ErrorKind::Io: return SPSD_ERR_IO;
    case ErrorKind::Validation: return SPSD_ERR_VALIDATION;
    case ErrorKind::InvalidState: return SPSD_ERR_INVALID_STATE;
  }
  return SPSD_ERR_INTERNAL;
}

template <typename F>
spsd_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return SPSD_OK;
  } catch (const spsd::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return SPSD_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return SPSD_ERR_IO;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return SPSD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return SPSD_ERR_INTERNAL;
  }
}

spsd_status invalid(const char* message) {
  last_error = message;
  return SPSD_ERR_INVALID_ARGUMENT;
}

std::function<void(const std::string&)> logger(spsd_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

spsd::CommandOptions command_options(const spsd_command_options* o) {
  spsd::CommandOptions out;
  if (o->config_path) out.config_path = o->config_path;
  if (o->out_dir) out.out_dir = o->out_dir;
  if (o->has_seed) out.seed = o->seed;
  out.resume = o->resume != 0;
  out.log = logger(o->log, o->log_user);
  return out;
}

std::vector<spsd::Image> unpack_images(const float* data, std::size_t n, int size) {
  const std::size_t stride = static_cast<std::size_t>(size) * size * 3;
  std::vector<spsd::Image> images(n, spsd::Image(size, size));
  for (std::size_t i = 0; i < n; ++i) std::memcpy(images[i].pixels.data(), data + i * stride, stride * sizeof(float));
  return images;
}

}  // namespace

extern "C" {

const char* spsd_last_error(void) { return last_error.c_str(); }

const char* spsd_status_string(spsd_status status) {
  switch (status) {
    case SPSD_OK: return "ok";
    case SPSD_ERR_CONFIG: return "config error";
    case SPSD_ERR_SHAPE: return "shape error";
    case SPSD_ERR_INVALID_ROUTE: return "invalid route";
    case SPSD_ERR_DOMAIN: return "domain error";
    case SPSD_ERR_SCHEDULE: return "schedule error";
    case SPSD_ERR_IO: return "io error";
    case SPSD_ERR_VALIDATION: return "validation error";
    case SPSD_ERR_INVALID_STATE: return "invalid state";
    case SPSD_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SPSD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

spsd_status spsd_model_create(const char* network_json, uint64_t seed, spsd_model** out) {
  if (!network_json || !out) return invalid("network_json and out must be non-null");
  return guarded([&] {
    const auto net = spsd::parse_network_config(spsd::json::parse(network_json));
    *out = new spsd_model{spsd::VisionTransformer<float>(net, seed)};
  });
}

spsd_status spsd_model_load(const char* checkpoint_path, spsd_model** out) {
  if (!checkpoint_path || !out) return invalid("checkpoint_path and out must be non-null");
  return guarded([&] {
    auto ck = spsd::load_checkpoint(checkpoint_path);
    *out = new spsd_model{spsd::VisionTransformer<float>(ck.network, std::move(ck.params))};
  });
}

spsd_status spsd_model_save(const spsd_model* model, const char* checkpoint_path) {
  if (!model || !checkpoint_path) return invalid("model and checkpoint_path must be non-null");
  return guarded([&] {
    spsd::save_checkpoint(checkpoint_path,
                          spsd::Checkpoint{model->net.config(), model->net.parameters(), std::nullopt, 0, {}});
  });
}

void spsd_model_destroy(spsd_model* model) { delete model; }

spsd_status spsd_model_info(const spsd_model* model, int* image_size, int* num_blocks, int* num_classes) {
  if (!model) return invalid("model must be non-null");
  const auto& c = model->net.config();
  if (image_size) *image_size = c.image_size;
  if (num_blocks) *num_blocks = c.num_blocks;
  if (num_classes) *num_classes = c.num_classes;
  last_error.clear();
  return SPSD_OK;
}

spsd_status spsd_model_forward(const spsd_model* model, const float* images, size_t n, int route, float* logits) {
  if (!model || !images || !logits) return invalid("model, images and logits must be non-null");
  return guarded([&] {
    const auto& c = model->net.config();
    const auto batch = unpack_images(images, n, c.image_size);
    std::set<int> routes;
    if (route != 0) routes.insert(route);
    const auto bundle = model->net.forward(batch, routes);
    const auto& out = route == 0 ? bundle.full : bundle.routes.at(route);
    std::memcpy(logits, out.data(), static_cast<std::size_t>(out.size()) * sizeof(float));
  });
}

spsd_status spsd_model_heatmap(const spsd_model* model, const float* image, int rollout, double* map) {
  if (!model || !image || !map) return invalid("model, image and map must be non-null");
  return guarded([&] {
    const auto& c = model->net.config();
    const auto batch = unpack_images(image, 1, c.image_size);
    const auto heat = spsd::attention_heatmap(
        model->net, batch[0], rollout ? spsd::HeatmapMode::Rollout : spsd::HeatmapMode::ClassTokenAttention);
    std::memcpy(map, heat.values.data(), heat.values.size() * sizeof(double));
  });
}

spsd_status spsd_beta_at(int64_t step, int64_t total_steps, double beta_final, double* beta) {
  if (!beta) return invalid("beta must be non-null");
  return guarded([&] { *beta = spsd::beta_at(step, spsd::BetaSchedule{beta_final, total_steps}); });
}

spsd_status spsd_kl_tempered(const double* teacher, const double* student, size_t num_classes, double tau,
                             double* kl) {
  if (!teacher || !student || !kl) return invalid("teacher, student and kl must be non-null");
  return guarded([&] {
    *kl = spsd::kl_tempered<double>({teacher, num_classes}, {student, num_classes}, tau);
  });
}

spsd_status spsd_kl_softened(const double* teacher, const double* student, size_t num_classes, int label,
                             double beta, spsd_placement placement, double* kl) {
  if (!teacher || !student || !kl) return invalid("teacher, student and kl must be non-null");
  return guarded([&] {
    spsd::SoftenPlacement p;
    switch (placement) {
      case SPSD_PLACEMENT_FINAL_ONLY: p = spsd::SoftenPlacement::FinalOnly; break;
      case SPSD_PLACEMENT_INTERMEDIATE_ONLY: p = spsd::SoftenPlacement::IntermediateOnly; break;
      case SPSD_PLACEMENT_BOTH: p = spsd::SoftenPlacement::Both; break;
      default: spsd::fail(spsd::ErrorKind::Config, "unknown softening placement");
    }
    *kl = spsd::kl_softened<double>({teacher, num_classes}, {student, num_classes}, label, beta, p);
  });
}

spsd_status spsd_ece(const double* confidences, const int* correct, size_t n, int num_bins, double* ece) {
  if ((!confidences || !correct) && n > 0) return invalid("confidences and correct must be non-null");
  if (!ece) return invalid("ece must be non-null");
  return guarded([&] {
    std::vector<bool> hits(n);
    for (size_t i = 0; i < n; ++i) hits[i] = correct[i] != 0;
    *ece = spsd::ece({confidences, n}, hits, num_bins);
  });
}

spsd_status spsd_sce(const double* probs, const int* labels, size_t n, size_t num_classes, int num_bins,
                     double* sce) {
  if ((!probs || !labels) && n > 0) return invalid("probs and labels must be non-null");
  if (!sce) return invalid("sce must be non-null");
  return guarded([&] {
    spsd::Matrix<double> p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(num_classes));
    if (n > 0) std::memcpy(p.data(), probs, n * num_classes * sizeof(double));
    *sce = spsd::sce(p, {labels, n}, num_bins);
  });
}

spsd_status spsd_make_data(const spsd_command_options* options) {
  if (!options) return invalid("options must be non-null");
  return guarded([&] { spsd::cmd_make_data(command_options(options)); });
}

spsd_status spsd_train(const spsd_command_options* options) {
  if (!options) return invalid("options must be non-null");
  return guarded([&] { spsd::cmd_train(command_options(options)); });
}

spsd_status spsd_sweep(const spsd_command_options* options) {
  if (!options) return invalid("options must be non-null");
  return guarded([&] {
    const auto result = spsd::cmd_sweep(command_options(options));
    if (options->log) {
      const auto& best = result.grid[result.best];
      const std::string line = "best lambda=" + spsd::format_number(best.lambda, 2) +
                               " beta_final=" + spsd::format_number(best.beta_final, 2) +
                               " val_accuracy=" + spsd::format_number(best.val_accuracy, 2);
      options->log(line.c_str(), options->log_user);
    }
  });
}

spsd_status spsd_report(const char* results_dir, spsd_log_fn log, void* log_user) {
  if (!results_dir) return invalid("results_dir must be non-null");
  return guarded([&] { spsd::cmd_report(results_dir, logger(log, log_user)); });
}

}  // extern "C"
