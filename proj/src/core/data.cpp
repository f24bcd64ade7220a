#include "core/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "core/rng.hpp"

namespace spsd {

namespace {

constexpr std::uint64_t kLabelStream = 0x6c61626cULL;
constexpr std::uint64_t kSampleStream = 0x73616d70ULL;
constexpr std::uint64_t kSplitStream = 0x73706c74ULL;

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double hi = std::max({r, g, b});
  const double lo = std::min({r, g, b});
  const double delta = hi - lo;
  v = hi;
  s = hi > 0 ? delta / hi : 0.0;
  if (delta <= 0) {
    h = 0;
    return;
  }
  if (hi == r)
    h = std::fmod((g - b) / delta, 6.0);
  else if (hi == g)
    h = (b - r) / delta + 2.0;
  else
    h = (r - g) / delta + 4.0;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

void gaussian_blur(Image& img, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& w : kernel) w /= total;

  Image tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * img.at(y, std::clamp(x + k, 0, img.width - 1), c);
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * tmp.at(std::clamp(y + k, 0, img.height - 1), x, c);
        img.at(y, x, c) = static_cast<float>(acc);
      }
}

std::vector<int> class_counts(int total, int num_classes, std::span<const double> profile) {
  std::vector<int> counts(num_classes, 0);
  if (profile.empty()) {
    for (int c = 0; c < num_classes; ++c) counts[c] = total / num_classes + (c < total % num_classes);
    return counts;
  }
  if (static_cast<int>(profile.size()) != num_classes)
    fail(ErrorKind::Config, "data.class_profile: expected one entry per class");
  const double sum = std::accumulate(profile.begin(), profile.end(), 0.0);
  if (!(sum > 0) || std::any_of(profile.begin(), profile.end(), [](double p) { return p < 0; }))
    fail(ErrorKind::Config, "data.class_profile: entries must be nonnegative with positive sum");
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double exact = total * profile[c] / sum;
    counts[c] = static_cast<int>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - counts[c], c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k].second];
  return counts;
}

struct TextureWave {
  double fx, fy, phase, amp;
};

Image render_sample(const SyntheticDomainSpec& spec, const std::vector<TextureWave>& texture,
                    int label, int num_classes, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double two_pi = 2.0 * M_PI;

  double amp_total = 0;
  for (const auto& w : texture) amp_total += w.amp;

  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double tex = 0;
      for (const auto& w : texture)
        tex += w.amp * std::sin(two_pi * (w.fx * x + w.fy * y) / size + w.phase);
      tex /= amp_total;
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(spec.background_tint[c] * (0.7 + 0.3 * tex) + noise(rng));
    }

  // Disc with class-dependent bright blobs.
  const double jitter = size / 16.0;
  const double cx = size / 2.0 + (unit(rng) * 2 - 1) * jitter;
  const double cy = size / 2.0 + (unit(rng) * 2 - 1) * jitter;
  const double disc_radius = 0.38 * size;
  const std::array<double, 3> disc_base{0.78, 0.36, 0.18};
  std::array<double, 3> disc_color{};
  for (int c = 0; c < 3; ++c) disc_color[c] = 0.75 * disc_base[c] + 0.25 * spec.background_tint[c];

  auto paint_circle = [&](double ox, double oy, double r, const std::array<double, 3>& color) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dist = std::hypot(x + 0.5 - ox, y + 0.5 - oy);
        const double alpha = std::clamp(r + 0.5 - dist, 0.0, 1.0);
        if (alpha <= 0) continue;
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = static_cast<float>(img.at(y, x, c) * (1 - alpha) + color[c] * alpha);
      }
  };
  paint_circle(cx, cy, disc_radius, disc_color);

  const std::array<double, 3> blob_color{1.0, 0.93, 0.55};
  const double blob_radius = size * (0.045 + 0.012 * label);
  const double spread = std::max(0.0, disc_radius - blob_radius - 1.0);
  for (int k = 0; k <= label; ++k) {
    double bx, by;
    do {
      bx = (unit(rng) * 2 - 1) * spread;
      by = (unit(rng) * 2 - 1) * spread;
    } while (bx * bx + by * by > spread * spread);
    paint_circle(cx + bx, cy + by, blob_radius, blob_color);
  }

  gaussian_blur(img, spec.blur_sigma);
  for (float& v : img.pixels) v = std::clamp(static_cast<float>(v * spec.exposure_gain), 0.0f, 1.0f);

  // Nuisance corner marker.
  int cue = label;
  if (num_classes > 1 && !(unit(rng) < spec.spurious_correlation)) {
    std::uniform_int_distribution<int> other(0, num_classes - 2);
    cue = other(rng);
    if (cue >= label) ++cue;
  }
  const auto color = cue_color(cue, num_classes);
  const int side = cue_marker_size(size);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  return img;
}

}  // namespace

std::vector<int> DomainDataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void SyntheticDomainSpec::validate() const {
  const std::string prefix = "data.domains[" + (name.empty() ? std::to_string(domain_id) : name) + "].";
  if (!(spurious_correlation >= 0.0 && spurious_correlation <= 1.0))
    fail(ErrorKind::Validation, prefix + "spurious_correlation: must lie in [0, 1]");
  if (!(blur_sigma >= 0.0)) fail(ErrorKind::Validation, prefix + "blur_sigma: must be nonnegative");
  if (!(exposure_gain > 0.0)) fail(ErrorKind::Validation, prefix + "exposure_gain: must be positive");
  for (float t : background_tint)
    if (!(t >= 0.0f && t <= 1.0f))
      fail(ErrorKind::Validation, prefix + "background_tint: components must lie in [0, 1]");
}

std::array<float, 3> cue_color(int cue, int num_classes) {
  return hsv_to_rgb(static_cast<double>(cue) / std::max(1, num_classes), 1.0, 1.0);
}

int cue_marker_size(int image_size) { return std::max(2, image_size / 8); }

DomainDataset generate_synthetic(std::span<const SyntheticDomainSpec> domains, int per_domain_count,
                                 int num_classes, int image_size, std::uint64_t seed,
                                 std::span<const double> class_profile) {
  if (num_classes < 1) fail(ErrorKind::Config, "num_classes: must be positive");
  if (image_size < 8) fail(ErrorKind::Config, "image_size: must be at least 8");
  if (per_domain_count < 0) fail(ErrorKind::Config, "per_domain_count: must be nonnegative");
  if (per_domain_count > 0 && per_domain_count < num_classes)
    fail(ErrorKind::Config, "per_domain_count: must be at least num_classes");
  std::set<int> ids;
  for (const auto& spec : domains) {
    spec.validate();
    if (!ids.insert(spec.domain_id).second)
      fail(ErrorKind::Config, "data.domains: duplicate domain_id " + std::to_string(spec.domain_id));
  }

  DomainDataset out;
  out.num_classes = num_classes;
  if (per_domain_count == 0) return out;
  const auto counts = class_counts(per_domain_count, num_classes, class_profile);

  for (const auto& spec : domains) {
    std::vector<int> labels;
    for (int c = 0; c < num_classes; ++c) labels.insert(labels.end(), counts[c], c);
    auto label_rng = derived_rng({seed, static_cast<std::uint64_t>(spec.domain_id), kLabelStream});
    std::shuffle(labels.begin(), labels.end(), label_rng);

    std::mt19937_64 texture_rng(spec.texture_seed);
    std::uniform_real_distribution<double> freq(0.5, 3.0), phase(0.0, 2.0 * M_PI), amp(0.3, 1.0);
    std::vector<TextureWave> texture(3);
    for (auto& w : texture) w = {freq(texture_rng), freq(texture_rng), phase(texture_rng), amp(texture_rng)};

    for (int i = 0; i < per_domain_count; ++i) {
      auto rng = derived_rng({seed, static_cast<std::uint64_t>(spec.domain_id),
                              static_cast<std::uint64_t>(i), kSampleStream});
      out.samples.push_back(
          {render_sample(spec, texture, labels[i], num_classes, image_size, rng), labels[i], spec.domain_id});
    }
  }
  return out;
}

DomainDataset load_folder_dataset(const std::filesystem::path& root,
                                  const std::filesystem::path& labels_file, int num_classes,
                                  int domain_id) {
  std::ifstream in(labels_file);
  if (!in) fail(ErrorKind::Io, "cannot open labels file " + labels_file.string());

  DomainDataset out;
  out.num_classes = num_classes;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (line != "filename,label")
        fail(ErrorKind::Validation, labels_file.string() + ": expected header 'filename,label'");
      continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      fail(ErrorKind::Validation, labels_file.string() + ":" + std::to_string(line_no) + ": malformed row");
    const std::string filename = line.substr(0, comma);
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorKind::Validation,
           labels_file.string() + ":" + std::to_string(line_no) + ": label is not an integer");
    }
    if (label < 0 || label >= num_classes)
      fail(ErrorKind::Validation, labels_file.string() + ":" + std::to_string(line_no) + ": label " +
                                      std::to_string(label) + " outside [0, " +
                                      std::to_string(num_classes) + ")");
    const auto path = root / filename;
    if (!std::filesystem::exists(path))
      fail(ErrorKind::Io, labels_file.string() + ":" + std::to_string(line_no) + ": missing image " +
                              path.string());
    out.samples.push_back({read_png(path), label, domain_id});
  }
  return out;
}

void write_folder_dataset(const DomainDataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream labels(dir / "labels.csv", std::ios::binary);
  if (!labels) fail(ErrorKind::Io, "cannot write " + (dir / "labels.csv").string());
  labels << "filename,label\n";
  char name[32];
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    write_png(dir / name, dataset.samples[i].image);
    labels << name << ',' << dataset.samples[i].label << '\n';
  }
  if (!labels) fail(ErrorKind::Io, "failed writing " + (dir / "labels.csv").string());
}

ChannelStats channel_stats(std::span<const Sample> samples) {
  ChannelStats stats;
  std::array<double, 3> sum{}, sq{};
  std::size_t count = 0;
  for (const auto& s : samples) {
    const auto& px = s.image.pixels;
    for (std::size_t i = 0; i < px.size(); i += 3)
      for (int c = 0; c < 3; ++c) {
        sum[c] += px[i + c];
        sq[c] += static_cast<double>(px[i + c]) * px[i + c];
      }
    count += px.size() / 3;
  }
  if (count == 0) return stats;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean * mean);
    stats.mean[c] = static_cast<float>(mean);
    stats.std[c] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  return stats;
}

Image normalize(const Image& image, const ChannelStats& stats) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3)
    for (int c = 0; c < 3; ++c) out.pixels[i + c] = (out.pixels[i + c] - stats.mean[c]) / stats.std[c];
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image to_grayscale(const Image& image) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    const float g = 0.299f * out.pixels[i] + 0.587f * out.pixels[i + 1] + 0.114f * out.pixels[i + 2];
    out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = g;
  }
  return out;
}

void AugmentConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) fail(ErrorKind::Config, std::string("augment.") + field + ": " + what);
  };
  require(resolution > 0, "resolution", "must be positive");
  require(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
          "crop_scale_min", "need 0 < crop_scale_min <= crop_scale_max <= 1");
  require(crop_ratio_min > 0 && crop_ratio_min <= crop_ratio_max, "crop_ratio_min",
          "need 0 < crop_ratio_min <= crop_ratio_max");
  require(flip_prob >= 0 && flip_prob <= 1, "flip_prob", "must lie in [0, 1]");
  require(brightness >= 0, "brightness", "must be nonnegative");
  require(contrast >= 0, "contrast", "must be nonnegative");
  require(saturation >= 0, "saturation", "must be nonnegative");
  require(hue >= 0 && hue <= 0.5, "hue", "must lie in [0, 0.5]");
  require(grayscale_prob >= 0 && grayscale_prob <= 1, "grayscale_prob", "must lie in [0, 1]");
}

Sample augment(const Sample& sample, std::mt19937_64& rng, const AugmentConfig& config) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Image& src = sample.image;
  const int H = src.height, W = src.width;

  // Random resized crop.
  int top = 0, left = 0, ch = H, cw = W;
  bool found = false;
  const double area = static_cast<double>(H) * W;
  const double log_rmin = std::log(config.crop_ratio_min), log_rmax = std::log(config.crop_ratio_max);
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * (config.crop_scale_min +
                                  (config.crop_scale_max - config.crop_scale_min) * unit(rng));
    const double ratio = std::exp(log_rmin + (log_rmax - log_rmin) * unit(rng));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && w <= W && h > 0 && h <= H) {
      top = std::uniform_int_distribution<int>(0, H - h)(rng);
      left = std::uniform_int_distribution<int>(0, W - w)(rng);
      ch = h;
      cw = w;
      found = true;
    }
  }
  if (!found) {
    const double in_ratio = static_cast<double>(W) / H;
    if (in_ratio < config.crop_ratio_min) {
      cw = W;
      ch = static_cast<int>(std::lround(cw / config.crop_ratio_min));
    } else if (in_ratio > config.crop_ratio_max) {
      ch = H;
      cw = static_cast<int>(std::lround(ch * config.crop_ratio_max));
    }
    top = (H - ch) / 2;
    left = (W - cw) / 2;
  }
  Image img;
  if (top == 0 && left == 0 && ch == H && cw == W) {
    img = src;
  } else {
    Image crop(ch, cw);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        for (int c = 0; c < 3; ++c) crop.at(y, x, c) = src.at(top + y, left + x, c);
    img = std::move(crop);
  }
  img = resize_bilinear(img, config.resolution, config.resolution);

  if (unit(rng) < config.flip_prob) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x)
        for (int c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
  }

  // Color jitter in random order.
  std::array<int, 4> order{0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng);
  // Uniform on [max(0, 1 - s), 1 + s].
  auto factor = [&](double strength) {
    const double lo = std::max(0.0, 1 - strength);
    return lo + (1 + strength - lo) * unit(rng);
  };
  for (int op : order) {
    switch (op) {
      case 0:
        if (config.brightness > 0) {
          const float f = static_cast<float>(factor(config.brightness));
          for (float& v : img.pixels) v = std::clamp(v * f, 0.0f, 1.0f);
        }
        break;
      case 1:
        if (config.contrast > 0) {
          const float f = static_cast<float>(factor(config.contrast));
          const Image gray = to_grayscale(img);
          double mean = 0;
          for (std::size_t i = 0; i < gray.pixels.size(); i += 3) mean += gray.pixels[i];
          const float m = static_cast<float>(mean / (gray.pixels.size() / 3));
          for (float& v : img.pixels) v = std::clamp(f * v + (1 - f) * m, 0.0f, 1.0f);
        }
        break;
      case 2:
        if (config.saturation > 0) {
          const float f = static_cast<float>(factor(config.saturation));
          const Image gray = to_grayscale(img);
          for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = std::clamp(f * img.pixels[i] + (1 - f) * gray.pixels[i], 0.0f, 1.0f);
        }
        break;
      default:
        if (config.hue > 0) {
          const double shift = (2 * unit(rng) - 1) * config.hue;
          for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
            double h, s, v;
            rgb_to_hsv(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2], h, s, v);
            const auto rgb = hsv_to_rgb(h + shift, s, v);
            for (int c = 0; c < 3; ++c) img.pixels[i + c] = rgb[c];
          }
        }
        break;
    }
  }

  if (unit(rng) < config.grayscale_prob) img = to_grayscale(img);

  return Sample{normalize(img, config.normalization), sample.label, sample.domain_id};
}

Image eval_transform(const Image& image, const AugmentConfig& config) {
  return normalize(resize_bilinear(image, config.resolution, config.resolution), config.normalization);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::span<const int> labels, int num_classes, const SplitSpec& spec) {
  if (!(spec.train_fraction >= 0.0 && spec.train_fraction <= 1.0))
    fail(ErrorKind::Config, "protocol.train_fraction: must lie in [0, 1]");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      fail(ErrorKind::Validation, "label " + std::to_string(labels[i]) + " outside class range");
    by_class[labels[i]].push_back(i);
  }
  const auto total_train =
      static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(labels.size())));

  std::vector<std::size_t> take(num_classes);
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double exact = spec.train_fraction * static_cast<double>(by_class[c].size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    remainders.emplace_back(exact - static_cast<double>(take[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total_train && k < remainders.size(); ++k) {
    const int c = remainders[k].second;
    if (take[c] < by_class[c].size()) {
      ++take[c];
      ++assigned;
    }
  }

  std::vector<std::size_t> train, val;
  for (int c = 0; c < num_classes; ++c) {
    auto rng = derived_rng({spec.split_seed, static_cast<std::uint64_t>(c), kSplitStream});
    auto idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
    val.insert(val.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

std::pair<DomainDataset, DomainDataset> split_train_val(const DomainDataset& dataset,
                                                        const SplitSpec& spec) {
  if (dataset.empty()) fail(ErrorKind::Validation, "cannot split an empty dataset");
  const auto labels = dataset.labels();
  const auto [train_idx, val_idx] = split_indices(labels, dataset.num_classes, spec);
  DomainDataset train, val;
  train.num_classes = val.num_classes = dataset.num_classes;
  for (auto i : train_idx) train.samples.push_back(dataset.samples[i]);
  for (auto i : val_idx) val.samples.push_back(dataset.samples[i]);
  return {std::move(train), std::move(val)};
}

}  // namespace spsd
