#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace spsd {

template <typename S>
int argmax_row(const Matrix<S>& logits, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index c = 1; c < logits.cols(); ++c)
    if (logits(row, c) > logits(row, best)) best = static_cast<int>(c);
  return best;
}

template <typename S>
double top1_accuracy(const Matrix<S>& logits, std::span<const int> labels) {
  if (logits.rows() == 0) fail(ErrorKind::Validation, "accuracy of an empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    fail(ErrorKind::Shape, "label count does not match logits");
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) hits += argmax_row(logits, r) == labels[r];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

int calibration_bin(double confidence, int num_bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0))
    fail(ErrorKind::Domain, "confidence " + std::to_string(confidence) + " outside [0, 1]");
  return std::min(static_cast<int>(confidence * num_bins), num_bins - 1);
}

namespace {

void check_bins(int num_bins) {
  if (num_bins < 1) fail(ErrorKind::Config, "num_bins: must be at least 1");
}

void finish_bins(std::vector<CalibrationBin>& bins) {
  for (auto& b : bins) {
    if (b.count == 0) continue;
    b.mean_confidence /= static_cast<double>(b.count);
    b.mean_accuracy /= static_cast<double>(b.count);
  }
}

}  // namespace

double calibration_error_from_bins(std::span<const CalibrationBin> bins, std::size_t num_samples) {
  if (num_samples == 0) return 0.0;
  double total = 0;
  for (const auto& b : bins)
    total += static_cast<double>(b.count) / static_cast<double>(num_samples) *
             std::abs(b.mean_accuracy - b.mean_confidence);
  return total;
}

std::vector<CalibrationBin> ece_bins(std::span<const double> confidences, const std::vector<bool>& correct,
                                     int num_bins) {
  check_bins(num_bins);
  if (confidences.size() != correct.size())
    fail(ErrorKind::Shape, "confidence and correctness counts differ");
  std::vector<CalibrationBin> bins(num_bins);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    auto& b = bins[calibration_bin(confidences[i], num_bins)];
    ++b.count;
    b.mean_confidence += confidences[i];
    b.mean_accuracy += correct[i] ? 1.0 : 0.0;
  }
  finish_bins(bins);
  return bins;
}

double ece(std::span<const double> confidences, const std::vector<bool>& correct, int num_bins) {
  const auto bins = ece_bins(confidences, correct, num_bins);
  return calibration_error_from_bins(bins, confidences.size());
}

std::vector<std::vector<CalibrationBin>> sce_bins(const Matrix<double>& probs, std::span<const int> labels,
                                                  int num_bins) {
  check_bins(num_bins);
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    fail(ErrorKind::Shape, "label count does not match probability rows");
  const auto classes = probs.cols();
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (std::abs(probs.row(r).sum() - 1.0) > 1e-5)
      fail(ErrorKind::Validation, "probability row " + std::to_string(r) + " does not sum to 1");
    if (labels[r] < 0 || labels[r] >= classes)
      fail(ErrorKind::Validation, "label " + std::to_string(labels[r]) + " outside class range");
  }
  std::vector<std::vector<CalibrationBin>> per_class(classes, std::vector<CalibrationBin>(num_bins));
  for (Eigen::Index c = 0; c < classes; ++c) {
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      auto& b = per_class[c][calibration_bin(probs(r, c), num_bins)];
      ++b.count;
      b.mean_confidence += probs(r, c);
      b.mean_accuracy += labels[r] == c ? 1.0 : 0.0;
    }
    finish_bins(per_class[c]);
  }
  return per_class;
}

double sce(const Matrix<double>& probs, std::span<const int> labels, int num_bins) {
  const auto per_class = sce_bins(probs, labels, num_bins);
  if (per_class.empty()) return 0.0;
  double total = 0;
  for (const auto& bins : per_class) total += calibration_error_from_bins(bins, labels.size());
  return total / static_cast<double>(per_class.size());
}

template <typename S>
Matrix<double> softmax_probabilities(const Matrix<S>& logits) {
  return softmax_rows<double>(logits.template cast<double>());
}

CalibrationReport calibration_report(const Matrix<double>& probs, std::span<const int> labels,
                                     int num_bins) {
  CalibrationReport report;
  report.num_bins = num_bins;
  report.num_samples = labels.size();
  std::vector<double> confidences(probs.rows());
  std::vector<bool> correct(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int pred = argmax_row(probs, r);
    confidences[r] = std::clamp(probs(r, pred), 0.0, 1.0);
    correct[r] = pred == labels[r];
  }
  report.per_bin = ece_bins(confidences, correct, num_bins);
  report.ece = calibration_error_from_bins(report.per_bin, report.num_samples);
  report.per_class = sce_bins(probs, labels, num_bins);
  double total = 0;
  for (const auto& bins : report.per_class) total += calibration_error_from_bins(bins, report.num_samples);
  report.sce = report.per_class.empty() ? 0.0 : total / static_cast<double>(report.per_class.size());
  return report;
}

BlockAccuracyProfile blockwise_accuracy(const VisionTransformer<float>& model,
                                        std::span<const Image> images, std::span<const int> labels,
                                        int batch_size) {
  const int J = model.config().num_blocks;
  std::set<int> routes;
  for (int j = 1; j <= J; ++j) routes.insert(j);
  std::map<int, std::size_t> hits;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, images.size() - start);
    const auto bundle = model.forward(images.subspan(start, n), routes);
    for (const auto& [j, logits] : bundle.routes)
      for (Eigen::Index r = 0; r < logits.rows(); ++r)
        hits[j] += argmax_row(logits, r) == labels[start + r];
  }
  BlockAccuracyProfile profile;
  for (int j = 1; j <= J; ++j)
    profile.per_block[j] =
        images.empty() ? 0.0 : 100.0 * static_cast<double>(hits[j]) / static_cast<double>(images.size());
  return profile;
}

namespace {

GrayMap upsample_and_normalize(const Matrix<double>& grid_values, int image_size) {
  const int grid = static_cast<int>(grid_values.rows());
  GrayMap map{image_size, image_size, std::vector<double>(static_cast<std::size_t>(image_size) * image_size)};
  const double scale = static_cast<double>(grid) / image_size;
  for (int y = 0; y < image_size; ++y) {
    const double fy = std::clamp((y + 0.5) * scale - 0.5, 0.0, grid - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, grid - 1);
    const double wy = fy - y0;
    for (int x = 0; x < image_size; ++x) {
      const double fx = std::clamp((x + 0.5) * scale - 0.5, 0.0, grid - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, grid - 1);
      const double wx = fx - x0;
      map.at(y, x) = (grid_values(y0, x0) * (1 - wx) + grid_values(y0, x1) * wx) * (1 - wy) +
                     (grid_values(y1, x0) * (1 - wx) + grid_values(y1, x1) * wx) * wy;
    }
  }
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double low = *lo, range = *hi - *lo;
  for (double& v : map.values) v = range > 1e-12 ? (v - low) / range : 0.0;
  return map;
}

}  // namespace

template <typename S>
GrayMap heatmap_from_attention(const AttentionMaps<S>& maps, int batch_index, int grid, int image_size) {
  if (maps.tokens != grid * grid + 1) fail(ErrorKind::Shape, "attention size does not match patch grid");
  Matrix<double> values = Matrix<double>::Zero(grid, grid);
  for (int h = 0; h < maps.heads; ++h) {
    const auto& a = maps.at(batch_index, h);
    for (int p = 0; p < grid * grid; ++p) values(p / grid, p % grid) += static_cast<double>(a(0, p + 1));
  }
  values /= std::max(1, maps.heads);
  return upsample_and_normalize(values, image_size);
}

GrayMap attention_rollout(const std::vector<AttentionMaps<float>>& per_block, int batch_index, int grid,
                          int image_size) {
  if (per_block.empty()) fail(ErrorKind::InvalidState, "no attention maps for rollout");
  const int m = per_block.front().tokens;
  Matrix<double> rollout = Matrix<double>::Identity(m, m);
  for (const auto& maps : per_block) {
    Matrix<double> mean = Matrix<double>::Zero(m, m);
    for (int h = 0; h < maps.heads; ++h) mean += maps.at(batch_index, h).template cast<double>();
    mean /= maps.heads;
    Matrix<double> mixed = 0.5 * mean + 0.5 * Matrix<double>::Identity(m, m);
    for (int r = 0; r < m; ++r) mixed.row(r) /= mixed.row(r).sum();
    rollout = mixed * rollout;
  }
  Matrix<double> values(grid, grid);
  for (int p = 0; p < grid * grid; ++p) values(p / grid, p % grid) = rollout(0, p + 1);
  return upsample_and_normalize(values, image_size);
}

GrayMap attention_heatmap(const VisionTransformer<float>& model, const Image& normalized_image,
                          HeatmapMode mode) {
  const auto& cfg = model.config();
  std::span<const Image> one(&normalized_image, 1);
  if (mode == HeatmapMode::Rollout) {
    const auto acts = model.activations(one);
    return attention_rollout(acts.attention_maps, 0, cfg.grid(), cfg.image_size);
  }
  return heatmap_from_attention(model.attention_of_final_block(one), 0, cfg.grid(), cfg.image_size);
}

template int argmax_row(const Matrix<float>&, Eigen::Index);
template int argmax_row(const Matrix<double>&, Eigen::Index);
template double top1_accuracy(const Matrix<float>&, std::span<const int>);
template double top1_accuracy(const Matrix<double>&, std::span<const int>);
template Matrix<double> softmax_probabilities(const Matrix<float>&);
template Matrix<double> softmax_probabilities(const Matrix<double>&);
template GrayMap heatmap_from_attention(const AttentionMaps<float>&, int, int, int);
template GrayMap heatmap_from_attention(const AttentionMaps<double>&, int, int, int);

}  // namespace spsd
