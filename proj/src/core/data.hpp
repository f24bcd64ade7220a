#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/image.hpp"

namespace spsd {

struct Sample {
  Image image;
  int label = 0;
  int domain_id = 0;
};

struct DomainDataset {
  int num_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<int> labels() const;
};

// One synthetic acquisition site. The nuisance cue is a colored corner marker
// whose class agrees with the label with probability spurious_correlation and
// is otherwise drawn uniformly from the remaining classes.
struct SyntheticDomainSpec {
  int domain_id = 0;
  std::string name;
  std::array<float, 3> background_tint{0.5f, 0.5f, 0.5f};
  std::uint64_t texture_seed = 0;
  double blur_sigma = 0.0;
  double exposure_gain = 1.0;
  double spurious_correlation = 0.0;

  void validate() const;
};

// per_domain_count samples per domain. class_profile, when nonempty, gives
// relative class frequencies; otherwise labels are balanced.
DomainDataset generate_synthetic(std::span<const SyntheticDomainSpec> domains, int per_domain_count,
                                 int num_classes, int image_size, std::uint64_t seed,
                                 std::span<const double> class_profile = {});

// Color of the nuisance marker for a cue class.
std::array<float, 3> cue_color(int cue, int num_classes);
// Side length in pixels of the corner marker.
int cue_marker_size(int image_size);

// labels_file has header "filename,label"; filenames are relative to root.
DomainDataset load_folder_dataset(const std::filesystem::path& root,
                                  const std::filesystem::path& labels_file, int num_classes,
                                  int domain_id = 0);

// Writes img_NNNNN.png files plus labels.csv into dir.
void write_folder_dataset(const DomainDataset& dataset, const std::filesystem::path& dir);

struct ChannelStats {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> std{1.f, 1.f, 1.f};
};

ChannelStats channel_stats(std::span<const Sample> samples);

Image normalize(const Image& image, const ChannelStats& stats);
Image resize_bilinear(const Image& image, int height, int width);
Image to_grayscale(const Image& image);

struct AugmentConfig {
  int resolution = 32;
  double crop_scale_min = 0.7;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  double brightness = 0.3;
  double contrast = 0.3;
  double saturation = 0.3;
  double hue = 0.3;
  double grayscale_prob = 0.1;
  ChannelStats normalization;

  void validate() const;
};

// Random resized crop, horizontal flip, color jitter, random grayscale,
// normalization. Label and domain are carried over unchanged.
Sample augment(const Sample& sample, std::mt19937_64& rng, const AugmentConfig& config);

// Resize to the configured resolution and normalize.
Image eval_transform(const Image& image, const AugmentConfig& config);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

// Index partition, stratified by class; |train| = round(fraction * n).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::span<const int> labels, int num_classes, const SplitSpec& spec);

std::pair<DomainDataset, DomainDataset> split_train_val(const DomainDataset& dataset,
                                                        const SplitSpec& spec);

}  // namespace spsd
