#pragma once

// Independent reference implementations used as test oracles. Plain loops,
// no Eigen, extended precision where cheap.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "core/image.hpp"
#include "core/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major

inline Mat from_params(const spsd::ParameterSet<double>& p, const std::string& name) {
  const auto& m = p.at(name);
  Mat out(m.rows(), Vec(m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline void add_row(Mat& a, const Vec& bias) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
}

inline Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= x.size();
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-6) * gamma[i] + beta[i];
  return out;
}

inline Vec softmax(const Vec& z) {
  long double peak = *std::max_element(z.begin(), z.end());
  long double total = 0;
  std::vector<long double> e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) total += e[i] = std::exp(static_cast<long double>(z[i]) - peak);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(e[i] / total);
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Class-token logits after every block (index 0 is block 1) for one image.
inline std::vector<Vec> vit_route_logits(const spsd::NetworkConfig& cfg, const spsd::ParameterSet<double>& p,
                                         const spsd::Image& img) {
  const int P = cfg.patch_size, G = cfg.image_size / P, d = cfg.embed_dim, H = cfg.num_heads, dh = d / H;
  const int n = G * G + 1;
  auto row0 = [&](const std::string& name) { return from_params(p, name)[0]; };

  Mat patches;
  for (int gy = 0; gy < G; ++gy)
    for (int gx = 0; gx < G; ++gx) {
      Vec v;
      for (int dy = 0; dy < P; ++dy)
        for (int dx = 0; dx < P; ++dx)
          for (int c = 0; c < 3; ++c) v.push_back(img.at(gy * P + dy, gx * P + dx, c));
      patches.push_back(v);
    }
  Mat emb = matmul(patches, from_params(p, "patch_embed.weight"));
  add_row(emb, row0("patch_embed.bias"));
  const Mat pos = from_params(p, "pos_embed");
  Mat x(n, Vec(d));
  const Vec cls = row0("cls_token");
  for (int k = 0; k < d; ++k) x[0][k] = cls[k] + pos[0][k];
  for (int t = 1; t < n; ++t)
    for (int k = 0; k < d; ++k) x[t][k] = emb[t - 1][k] + pos[t][k];

  auto head = [&](const Vec& token) {
    const Vec normed = layer_norm(token, row0("norm.weight"), row0("norm.bias"));
    Mat logits = matmul(Mat{normed}, from_params(p, "head.weight"));
    add_row(logits, row0("head.bias"));
    return logits[0];
  };

  std::vector<Vec> out;
  for (int j = 1; j <= cfg.num_blocks; ++j) {
    const std::string b = "block." + std::to_string(j) + ".";
    Mat ln1(n);
    for (int t = 0; t < n; ++t) ln1[t] = layer_norm(x[t], row0(b + "norm1.weight"), row0(b + "norm1.bias"));
    Mat qkv = matmul(ln1, from_params(p, b + "attn.qkv.weight"));
    add_row(qkv, row0(b + "attn.qkv.bias"));
    Mat attn_out(n, Vec(d, 0.0));
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < n; ++i) {
        Vec scores(n);
        for (int k = 0; k < n; ++k) {
          double s = 0;
          for (int e = 0; e < dh; ++e) s += qkv[i][h * dh + e] * qkv[k][d + h * dh + e];
          scores[k] = s / std::sqrt(static_cast<double>(dh));
        }
        const Vec a = softmax(scores);
        for (int k = 0; k < n; ++k)
          for (int e = 0; e < dh; ++e) attn_out[i][h * dh + e] += a[k] * qkv[k][2 * d + h * dh + e];
      }
    }
    Mat proj = matmul(attn_out, from_params(p, b + "attn.proj.weight"));
    add_row(proj, row0(b + "attn.proj.bias"));
    for (int t = 0; t < n; ++t)
      for (int k = 0; k < d; ++k) x[t][k] += proj[t][k];
    Mat ln2(n);
    for (int t = 0; t < n; ++t) ln2[t] = layer_norm(x[t], row0(b + "norm2.weight"), row0(b + "norm2.bias"));
    Mat hidden = matmul(ln2, from_params(p, b + "mlp.fc1.weight"));
    add_row(hidden, row0(b + "mlp.fc1.bias"));
    for (auto& row : hidden)
      for (double& v : row) v = gelu(v);
    Mat mlp = matmul(hidden, from_params(p, b + "mlp.fc2.weight"));
    add_row(mlp, row0(b + "mlp.fc2.bias"));
    for (int t = 0; t < n; ++t)
      for (int k = 0; k < d; ++k) x[t][k] += mlp[t][k];
    out.push_back(head(x[0]));
  }
  return out;
}

// KL(softmax(a) || softmax(b)) by direct summation in long double.
inline long double kl(const std::vector<long double>& a, const std::vector<long double>& b) {
  auto log_softmax = [](const std::vector<long double>& z) {
    long double peak = *std::max_element(z.begin(), z.end());
    long double total = 0;
    for (long double v : z) total += std::exp(v - peak);
    std::vector<long double> out;
    for (long double v : z) out.push_back(v - peak - std::log(total));
    return out;
  };
  const auto la = log_softmax(a), lb = log_softmax(b);
  long double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::exp(la[i]) * (la[i] - lb[i]);
  return total;
}

inline std::vector<long double> scaled(const Vec& z, long double factor) {
  std::vector<long double> out;
  for (double v : z) out.push_back(static_cast<long double>(v) * factor);
  return out;
}

inline std::vector<long double> softened(const Vec& z, int y, long double beta) {
  std::vector<long double> out;
  for (std::size_t i = 0; i < z.size(); ++i)
    out.push_back(beta * z[i] + (1.0L - beta) * (static_cast<int>(i) == y ? 1.0L : 0.0L));
  return out;
}

// Bin membership by interval test rather than floor().
inline int bin_of(double p, int bins) {
  for (int b = 0; b < bins - 1; ++b)
    if (p < static_cast<double>(b + 1) / bins) return b;
  return bins - 1;
}

inline double ece_loop(const Vec& conf, const std::vector<bool>& correct, int bins) {
  double total = 0;
  for (int b = 0; b < bins; ++b) {
    double sc = 0, sa = 0;
    int count = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      if (bin_of(conf[i], bins) != b) continue;
      ++count;
      sc += conf[i];
      sa += correct[i];
    }
    if (count) total += std::abs(sa / count - sc / count) * count / conf.size();
  }
  return total;
}

inline double sce_loop(const Mat& probs, const std::vector<int>& labels, int bins) {
  const int C = static_cast<int>(probs[0].size());
  double total = 0;
  for (int c = 0; c < C; ++c) {
    for (int b = 0; b < bins; ++b) {
      double sc = 0, sa = 0;
      int count = 0;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        if (bin_of(probs[i][c], bins) != b) continue;
        ++count;
        sc += probs[i][c];
        sa += labels[i] == c;
      }
      if (count) total += std::abs(sa / count - sc / count) * count / probs.size();
    }
  }
  return total / C;
}

}  // namespace oracle
