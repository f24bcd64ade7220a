#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/image.hpp"

namespace spsd {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetworkConfig {
  int image_size = 32;
  int patch_size = 4;
  int num_blocks = 6;
  int embed_dim = 128;
  int num_heads = 4;
  double mlp_ratio = 4.0;
  int num_classes = 5;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  // Patch tokens plus the class token.
  int num_tokens() const { return num_patches() + 1; }
  int head_dim() const { return embed_dim / num_heads; }
  int hidden_dim() const;
  int patch_dim() const { return patch_size * patch_size * 3; }

  // Throws Error(Config) naming the offending field.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Named, ordered collection of parameter (or gradient) tensors. Vectors are
// stored as 1 x n matrices.
template <typename S>
class ParameterSet {
 public:
  std::size_t add(const std::string& name, int rows, int cols);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix<S>& operator[](std::size_t i) { return values_[i]; }
  const Matrix<S>& operator[](std::size_t i) const { return values_[i]; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  Matrix<S>& at(const std::string& name) { return values_[index_of(name)]; }
  const Matrix<S>& at(const std::string& name) const { return values_[index_of(name)]; }

  std::size_t num_scalars() const;
  void set_zero();
  ParameterSet zeros_like() const;

  template <typename T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      out.add(names_[i], static_cast<int>(values_[i].rows()), static_cast<int>(values_[i].cols()));
      out[i] = values_[i].template cast<T>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<S>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Full-network logits plus the logits of each requested intermediate route.
// Block indices are 1-based, matching "block.{j}" parameter names.
template <typename S>
struct LogitBundle {
  Matrix<S> full;
  std::map<int, Matrix<S>> routes;
};

// Softmax attention weights for one block: maps[b * heads + h] is (tokens, tokens).
template <typename S>
struct AttentionMaps {
  int batch = 0;
  int heads = 0;
  int tokens = 0;
  std::vector<Matrix<S>> maps;

  const Matrix<S>& at(int b, int h) const { return maps[static_cast<std::size_t>(b) * heads + h]; }
};

template <typename S>
struct BlockActivations {
  // per_block_tokens[j - 1] is the (batch * tokens, dim) output of block j.
  std::vector<Matrix<S>> per_block_tokens;
  std::vector<AttentionMaps<S>> attention_maps;
};

template <typename S>
struct BlockCache {
  Matrix<S> ln1_hat, ln1_rstd, ln1_out;
  Matrix<S> qkv;
  std::vector<Matrix<S>> attn;
  Matrix<S> attn_out;
  Matrix<S> mid;
  Matrix<S> ln2_hat, ln2_rstd, ln2_out;
  Matrix<S> hidden_pre, hidden_act;
  Matrix<S> output;
};

template <typename S>
struct HeadCache {
  Matrix<S> hat, rstd, normed;
};

template <typename S>
struct ForwardCache {
  int batch = 0;
  Matrix<S> patches;
  std::vector<BlockCache<S>> blocks;
  // Keyed by block index; the full network is the entry for the last block.
  std::map<int, HeadCache<S>> heads;
};

// Row-wise softmax of pre-softmax attention scores.
template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& scores);

// Pre-norm ViT: patch embedding, class token, learned positions, J blocks of
// (attention, MLP), a final layer norm and a linear head on the class token.
// Every block output can be routed through the same final norm and head.
template <typename S>
class VisionTransformer {
 public:
  VisionTransformer(const NetworkConfig& config, std::uint64_t seed);
  VisionTransformer(const NetworkConfig& config, ParameterSet<S> params);

  const NetworkConfig& config() const { return config_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }

  // Images must already be normalized and sized image_size x image_size.
  LogitBundle<S> forward(std::span<const Image> images, const std::set<int>& routes,
                         ForwardCache<S>* cache = nullptr) const;

  // Accumulates into grads the gradient of a loss whose derivatives with
  // respect to the full and route logits are d_full and d_routes.
  void backward(const ForwardCache<S>& cache, const Matrix<S>& d_full,
                const std::map<int, Matrix<S>>& d_routes, ParameterSet<S>& grads) const;

  AttentionMaps<S> attention_of_final_block(std::span<const Image> images) const;
  BlockActivations<S> activations(std::span<const Image> images) const;

  ParameterSet<S> zero_gradients() const { return params_.zeros_like(); }

  template <typename T>
  VisionTransformer<T> cast() const {
    return VisionTransformer<T>(config_, params_.template cast<T>());
  }

  // Canonical parameter layout for a config, values zero.
  static ParameterSet<S> layout(const NetworkConfig& config);

 private:
  struct BlockIndex {
    std::size_t ln1_w, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    std::size_t ln2_w, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  void bind_indices();
  void initialize(std::uint64_t seed);
  void check_routes(const std::set<int>& routes) const;
  Matrix<S> embed(std::span<const Image> images, Matrix<S>& patches) const;
  void block_forward(int j, const Matrix<S>& x, int batch, BlockCache<S>& c) const;
  Matrix<S> block_backward(int j, const BlockCache<S>& c, const Matrix<S>& d_out, int batch,
                           ParameterSet<S>& grads) const;
  Matrix<S> head_forward(const Matrix<S>& block_out, int batch, HeadCache<S>& hc) const;
  Matrix<S> head_backward(const HeadCache<S>& hc, const Matrix<S>& d_logits,
                          ParameterSet<S>& grads) const;

  NetworkConfig config_;
  ParameterSet<S> params_;
  std::size_t patch_w_ = 0, patch_b_ = 0, cls_ = 0, pos_ = 0;
  std::size_t norm_w_ = 0, norm_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<BlockIndex> blocks_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class VisionTransformer<float>;
extern template class VisionTransformer<double>;

}  // namespace spsd
