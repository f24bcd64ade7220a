#pragma once

#include <map>
#include <span>
#include <vector>

#include "core/image.hpp"
#include "core/model.hpp"

namespace spsd {

// Argmax ties resolve to the lowest class index.
template <typename S>
int argmax_row(const Matrix<S>& logits, Eigen::Index row);

// Percentage of rows whose argmax equals the label. Throws on an empty batch.
template <typename S>
double top1_accuracy(const Matrix<S>& logits, std::span<const int> labels);

struct CalibrationBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  double sce = 0.0;
  int num_bins = 15;
  std::size_t num_samples = 0;
  std::vector<CalibrationBin> per_bin;
  // per_class[c][b] for the static calibration error.
  std::vector<std::vector<CalibrationBin>> per_class;
};

// Equal-width bins over [0, 1]; confidence 1.0 falls in the top bin.
int calibration_bin(double confidence, int num_bins);

std::vector<CalibrationBin> ece_bins(std::span<const double> confidences, const std::vector<bool>& correct,
                                     int num_bins);
double ece(std::span<const double> confidences, const std::vector<bool>& correct, int num_bins = 15);

std::vector<std::vector<CalibrationBin>> sce_bins(const Matrix<double>& probs, std::span<const int> labels,
                                                  int num_bins);
double sce(const Matrix<double>& probs, std::span<const int> labels, int num_bins = 15);

// Sum of (n_b / N) |acc_b - conf_b| over bins.
double calibration_error_from_bins(std::span<const CalibrationBin> bins, std::size_t num_samples);

CalibrationReport calibration_report(const Matrix<double>& probs, std::span<const int> labels,
                                     int num_bins = 15);

template <typename S>
Matrix<double> softmax_probabilities(const Matrix<S>& logits);

struct BlockAccuracyProfile {
  std::map<int, double> per_block;
};

// Top-1 accuracy of every route 1..J on pre-normalized images.
BlockAccuracyProfile blockwise_accuracy(const VisionTransformer<float>& model,
                                        std::span<const Image> images, std::span<const int> labels,
                                        int batch_size = 128);

enum class HeatmapMode { ClassTokenAttention, Rollout };

// Class-token attention to the patch tokens, averaged over heads, bilinearly
// upsampled to image_size and min-max normalized (a constant map becomes zeros).
template <typename S>
GrayMap heatmap_from_attention(const AttentionMaps<S>& maps, int batch_index, int grid, int image_size);

GrayMap attention_rollout(const std::vector<AttentionMaps<float>>& per_block, int batch_index, int grid,
                          int image_size);

GrayMap attention_heatmap(const VisionTransformer<float>& model, const Image& normalized_image,
                          HeatmapMode mode = HeatmapMode::ClassTokenAttention);

}  // namespace spsd
