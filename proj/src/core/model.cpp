#include "core/model.hpp"

#include <cmath>
#include <random>

#include "core/errors.hpp"

namespace spsd {

int NetworkConfig::hidden_dim() const {
  return static_cast<int>(std::lround(mlp_ratio * embed_dim));
}

void NetworkConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) fail(ErrorKind::Config, std::string("network.") + field + ": " + what);
  };
  require(image_size > 0, "image_size", "must be positive");
  require(patch_size > 0, "patch_size", "must be positive");
  require(image_size % patch_size == 0, "image_size", "must be divisible by patch_size");
  require(num_blocks >= 2, "num_blocks", "must be at least 2");
  require(embed_dim > 0, "embed_dim", "must be positive");
  require(num_heads > 0, "num_heads", "must be positive");
  require(embed_dim % num_heads == 0, "embed_dim", "must be divisible by num_heads");
  require(mlp_ratio > 0 && hidden_dim() >= 1, "mlp_ratio", "must give a positive hidden width");
  require(num_classes >= 1, "num_classes", "must be positive");
}

template <typename S>
std::size_t ParameterSet<S>::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) fail(ErrorKind::InvalidState, "duplicate parameter " + name);
  index_.emplace(name, values_.size());
  names_.push_back(name);
  values_.push_back(Matrix<S>::Zero(rows, cols));
  return values_.size() - 1;
}

template <typename S>
std::size_t ParameterSet<S>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::InvalidState, "unknown parameter " + name);
  return it->second;
}

template <typename S>
std::size_t ParameterSet<S>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

template <typename S>
void ParameterSet<S>::set_zero() {
  for (auto& v : values_) v.setZero();
}

template <typename S>
ParameterSet<S> ParameterSet<S>::zeros_like() const {
  ParameterSet out;
  for (std::size_t i = 0; i < values_.size(); ++i)
    out.add(names_[i], static_cast<int>(values_[i].rows()), static_cast<int>(values_[i].cols()));
  return out;
}

template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& scores) {
  Matrix<S> out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const S peak = scores.row(r).maxCoeff();
    out.row(r) = (scores.row(r).array() - peak).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace {

constexpr double kLayerNormEps = 1e-6;

template <typename S>
void layer_norm(const Matrix<S>& x, const Matrix<S>& gamma, const Matrix<S>& beta, Matrix<S>& hat,
                Matrix<S>& rstd, Matrix<S>& out) {
  const auto rows = x.rows();
  hat.resize(rows, x.cols());
  rstd.resize(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    auto centered = (x.row(r).array() - mean).eval();
    const S var = centered.square().mean();
    const S rs = S(1) / std::sqrt(var + S(kLayerNormEps));
    rstd(r, 0) = rs;
    hat.row(r) = centered * rs;
  }
  out = (hat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& d_out, const Matrix<S>& hat, const Matrix<S>& rstd,
                              const Matrix<S>& gamma, Matrix<S>& d_gamma, Matrix<S>& d_beta) {
  d_gamma += (d_out.array() * hat.array()).colwise().sum().matrix();
  d_beta += d_out.colwise().sum();
  const Matrix<S> d_hat = d_out.array().rowwise() * gamma.row(0).array();
  const S inv_n = S(1) / static_cast<S>(hat.cols());
  Matrix<S> dx(d_out.rows(), d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    const S mean_dhat = d_hat.row(r).sum() * inv_n;
    const S mean_dhat_hat = d_hat.row(r).dot(hat.row(r)) * inv_n;
    dx.row(r) = rstd(r, 0) * (d_hat.row(r).array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
  return dx;
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(M_SQRT1_2)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

}  // namespace

template <typename S>
ParameterSet<S> VisionTransformer<S>::layout(const NetworkConfig& c) {
  c.validate();
  const int d = c.embed_dim;
  const int hidden = c.hidden_dim();
  ParameterSet<S> p;
  p.add("patch_embed.weight", c.patch_dim(), d);
  p.add("patch_embed.bias", 1, d);
  p.add("cls_token", 1, d);
  p.add("pos_embed", c.num_tokens(), d);
  for (int j = 1; j <= c.num_blocks; ++j) {
    const std::string b = "block." + std::to_string(j) + ".";
    p.add(b + "norm1.weight", 1, d);
    p.add(b + "norm1.bias", 1, d);
    p.add(b + "attn.qkv.weight", d, 3 * d);
    p.add(b + "attn.qkv.bias", 1, 3 * d);
    p.add(b + "attn.proj.weight", d, d);
    p.add(b + "attn.proj.bias", 1, d);
    p.add(b + "norm2.weight", 1, d);
    p.add(b + "norm2.bias", 1, d);
    p.add(b + "mlp.fc1.weight", d, hidden);
    p.add(b + "mlp.fc1.bias", 1, hidden);
    p.add(b + "mlp.fc2.weight", hidden, d);
    p.add(b + "mlp.fc2.bias", 1, d);
  }
  p.add("norm.weight", 1, d);
  p.add("norm.bias", 1, d);
  p.add("head.weight", d, c.num_classes);
  p.add("head.bias", 1, c.num_classes);
  return p;
}

template <typename S>
VisionTransformer<S>::VisionTransformer(const NetworkConfig& config, std::uint64_t seed)
    : config_(config), params_(layout(config)) {
  bind_indices();
  initialize(seed);
}

template <typename S>
VisionTransformer<S>::VisionTransformer(const NetworkConfig& config, ParameterSet<S> params)
    : config_(config), params_(std::move(params)) {
  const auto expected = layout(config);
  if (expected.size() != params_.size())
    fail(ErrorKind::Shape, "parameter count does not match network config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.name(i) != params_.name(i) || expected[i].rows() != params_[i].rows() ||
        expected[i].cols() != params_[i].cols())
      fail(ErrorKind::Shape, "parameter " + params_.name(i) + " does not match network config");
  }
  bind_indices();
}

template <typename S>
void VisionTransformer<S>::bind_indices() {
  patch_w_ = params_.index_of("patch_embed.weight");
  patch_b_ = params_.index_of("patch_embed.bias");
  cls_ = params_.index_of("cls_token");
  pos_ = params_.index_of("pos_embed");
  norm_w_ = params_.index_of("norm.weight");
  norm_b_ = params_.index_of("norm.bias");
  head_w_ = params_.index_of("head.weight");
  head_b_ = params_.index_of("head.bias");
  blocks_.clear();
  for (int j = 1; j <= config_.num_blocks; ++j) {
    const std::string b = "block." + std::to_string(j) + ".";
    blocks_.push_back(BlockIndex{
        params_.index_of(b + "norm1.weight"), params_.index_of(b + "norm1.bias"),
        params_.index_of(b + "attn.qkv.weight"), params_.index_of(b + "attn.qkv.bias"),
        params_.index_of(b + "attn.proj.weight"), params_.index_of(b + "attn.proj.bias"),
        params_.index_of(b + "norm2.weight"), params_.index_of(b + "norm2.bias"),
        params_.index_of(b + "mlp.fc1.weight"), params_.index_of(b + "mlp.fc1.bias"),
        params_.index_of(b + "mlp.fc2.weight"), params_.index_of(b + "mlp.fc2.bias")});
  }
}

template <typename S>
void VisionTransformer<S>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kStd = 0.02;
  // Truncated at two standard deviations.
  auto trunc_normal = [&](Matrix<S>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double v;
      do {
        v = normal(rng);
      } while (std::abs(v) > 2.0);
      m.data()[i] = static_cast<S>(v * kStd);
    }
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_.name(i);
    const bool is_norm_weight = name.ends_with("norm.weight") || name.ends_with("norm1.weight") ||
                                name.ends_with("norm2.weight");
    if (is_norm_weight) {
      params_[i].setOnes();
    } else if (name.ends_with(".bias")) {
      params_[i].setZero();
    } else {
      trunc_normal(params_[i]);
    }
  }
}

template <typename S>
void VisionTransformer<S>::check_routes(const std::set<int>& routes) const {
  for (int r : routes) {
    if (r < 1 || r > config_.num_blocks)
      fail(ErrorKind::InvalidRoute, "route " + std::to_string(r) + " outside 1.." +
                                        std::to_string(config_.num_blocks));
  }
}

template <typename S>
Matrix<S> VisionTransformer<S>::embed(std::span<const Image> images, Matrix<S>& patches) const {
  const int batch = static_cast<int>(images.size());
  const int p = config_.patch_size;
  const int grid = config_.grid();
  const int np = config_.num_patches();
  const int m = config_.num_tokens();
  const int d = config_.embed_dim;

  patches.resize(static_cast<Eigen::Index>(batch) * np, config_.patch_dim());
  for (int b = 0; b < batch; ++b) {
    const Image& img = images[b];
    if (img.height != config_.image_size || img.width != config_.image_size)
      fail(ErrorKind::Shape, "image " + std::to_string(b) + " is " + std::to_string(img.height) +
                                 "x" + std::to_string(img.width) + ", network expects " +
                                 std::to_string(config_.image_size));
    for (int gy = 0; gy < grid; ++gy) {
      for (int gx = 0; gx < grid; ++gx) {
        auto row = patches.row(static_cast<Eigen::Index>(b) * np + gy * grid + gx);
        int k = 0;
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            for (int c = 0; c < 3; ++c) row(k++) = static_cast<S>(img.at(gy * p + dy, gx * p + dx, c));
      }
    }
  }

  Matrix<S> projected = patches * params_[patch_w_];
  projected.rowwise() += params_[patch_b_].row(0);

  const Matrix<S>& pos = params_[pos_];
  Matrix<S> x(static_cast<Eigen::Index>(batch) * m, d);
  for (int b = 0; b < batch; ++b) {
    x.row(static_cast<Eigen::Index>(b) * m) = params_[cls_].row(0) + pos.row(0);
    x.block(static_cast<Eigen::Index>(b) * m + 1, 0, np, d) =
        projected.block(static_cast<Eigen::Index>(b) * np, 0, np, d) + pos.bottomRows(np);
  }
  return x;
}

template <typename S>
void VisionTransformer<S>::block_forward(int j, const Matrix<S>& x, int batch, BlockCache<S>& c) const {
  const BlockIndex& ix = blocks_[j - 1];
  const int m = config_.num_tokens();
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  layer_norm(x, params_[ix.ln1_w], params_[ix.ln1_b], c.ln1_hat, c.ln1_rstd, c.ln1_out);
  c.qkv.noalias() = c.ln1_out * params_[ix.qkv_w];
  c.qkv.rowwise() += params_[ix.qkv_b].row(0);

  c.attn.resize(static_cast<std::size_t>(batch) * heads);
  c.attn_out.resize(x.rows(), d);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * m;
    for (int h = 0; h < heads; ++h) {
      auto q = c.qkv.block(r0, h * dh, m, dh);
      auto k = c.qkv.block(r0, d + h * dh, m, dh);
      auto v = c.qkv.block(r0, 2 * d + h * dh, m, dh);
      Matrix<S> scores = (q * k.transpose()) * scale;
      Matrix<S>& a = c.attn[static_cast<std::size_t>(b) * heads + h];
      a = softmax_rows(scores);
      c.attn_out.block(r0, h * dh, m, dh).noalias() = a * v;
    }
  }

  c.mid.noalias() = c.attn_out * params_[ix.proj_w];
  c.mid.rowwise() += params_[ix.proj_b].row(0);
  c.mid += x;

  layer_norm(c.mid, params_[ix.ln2_w], params_[ix.ln2_b], c.ln2_hat, c.ln2_rstd, c.ln2_out);
  c.hidden_pre.noalias() = c.ln2_out * params_[ix.fc1_w];
  c.hidden_pre.rowwise() += params_[ix.fc1_b].row(0);
  c.hidden_act = c.hidden_pre.unaryExpr([](S v) { return gelu(v); });

  c.output.noalias() = c.hidden_act * params_[ix.fc2_w];
  c.output.rowwise() += params_[ix.fc2_b].row(0);
  c.output += c.mid;
}

template <typename S>
Matrix<S> VisionTransformer<S>::block_backward(int j, const BlockCache<S>& c, const Matrix<S>& d_out,
                                               int batch, ParameterSet<S>& grads) const {
  const BlockIndex& ix = blocks_[j - 1];
  const int m = config_.num_tokens();
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  // MLP branch.
  grads[ix.fc2_w].noalias() += c.hidden_act.transpose() * d_out;
  grads[ix.fc2_b] += d_out.colwise().sum();
  Matrix<S> d_hidden = d_out * params_[ix.fc2_w].transpose();
  d_hidden.array() *= c.hidden_pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
  grads[ix.fc1_w].noalias() += c.ln2_out.transpose() * d_hidden;
  grads[ix.fc1_b] += d_hidden.colwise().sum();
  const Matrix<S> d_ln2 = d_hidden * params_[ix.fc1_w].transpose();
  Matrix<S> d_mid = d_out + layer_norm_backward(d_ln2, c.ln2_hat, c.ln2_rstd, params_[ix.ln2_w],
                                                grads[ix.ln2_w], grads[ix.ln2_b]);

  // Attention branch.
  grads[ix.proj_w].noalias() += c.attn_out.transpose() * d_mid;
  grads[ix.proj_b] += d_mid.colwise().sum();
  const Matrix<S> d_attn_out = d_mid * params_[ix.proj_w].transpose();

  Matrix<S> d_qkv(c.qkv.rows(), c.qkv.cols());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * m;
    for (int h = 0; h < heads; ++h) {
      const Matrix<S>& a = c.attn[static_cast<std::size_t>(b) * heads + h];
      auto q = c.qkv.block(r0, h * dh, m, dh);
      auto k = c.qkv.block(r0, d + h * dh, m, dh);
      auto v = c.qkv.block(r0, 2 * d + h * dh, m, dh);
      auto d_o = d_attn_out.block(r0, h * dh, m, dh);

      const Matrix<S> d_a = d_o * v.transpose();
      d_qkv.block(r0, 2 * d + h * dh, m, dh).noalias() = a.transpose() * d_o;
      const auto row_dot = (d_a.array() * a.array()).rowwise().sum().eval();
      const Matrix<S> d_scores = (a.array() * (d_a.array().colwise() - row_dot)) * scale;
      d_qkv.block(r0, h * dh, m, dh).noalias() = d_scores * k;
      d_qkv.block(r0, d + h * dh, m, dh).noalias() = d_scores.transpose() * q;
    }
  }
  grads[ix.qkv_w].noalias() += c.ln1_out.transpose() * d_qkv;
  grads[ix.qkv_b] += d_qkv.colwise().sum();
  const Matrix<S> d_ln1 = d_qkv * params_[ix.qkv_w].transpose();
  return d_mid + layer_norm_backward(d_ln1, c.ln1_hat, c.ln1_rstd, params_[ix.ln1_w],
                                     grads[ix.ln1_w], grads[ix.ln1_b]);
}

template <typename S>
Matrix<S> VisionTransformer<S>::head_forward(const Matrix<S>& block_out, int batch,
                                             HeadCache<S>& hc) const {
  const int m = config_.num_tokens();
  Matrix<S> cls(batch, config_.embed_dim);
  for (int b = 0; b < batch; ++b) cls.row(b) = block_out.row(static_cast<Eigen::Index>(b) * m);
  layer_norm(cls, params_[norm_w_], params_[norm_b_], hc.hat, hc.rstd, hc.normed);
  Matrix<S> logits = hc.normed * params_[head_w_];
  logits.rowwise() += params_[head_b_].row(0);
  return logits;
}

template <typename S>
Matrix<S> VisionTransformer<S>::head_backward(const HeadCache<S>& hc, const Matrix<S>& d_logits,
                                              ParameterSet<S>& grads) const {
  grads[head_w_].noalias() += hc.normed.transpose() * d_logits;
  grads[head_b_] += d_logits.colwise().sum();
  const Matrix<S> d_normed = d_logits * params_[head_w_].transpose();
  return layer_norm_backward(d_normed, hc.hat, hc.rstd, params_[norm_w_], grads[norm_w_],
                             grads[norm_b_]);
}

template <typename S>
LogitBundle<S> VisionTransformer<S>::forward(std::span<const Image> images, const std::set<int>& routes,
                                             ForwardCache<S>* cache) const {
  check_routes(routes);
  const int batch = static_cast<int>(images.size());
  const int J = config_.num_blocks;

  ForwardCache<S> local;
  ForwardCache<S>& c = cache ? *cache : local;
  c.batch = batch;
  c.blocks.resize(J);
  c.heads.clear();

  const Matrix<S> x0 = embed(images, c.patches);
  const Matrix<S>* x = &x0;
  for (int j = 1; j <= J; ++j) {
    block_forward(j, *x, batch, c.blocks[j - 1]);
    x = &c.blocks[j - 1].output;
  }

  LogitBundle<S> bundle;
  bundle.full = head_forward(*x, batch, c.heads[J]);
  for (int r : routes) {
    if (r == J)
      bundle.routes[r] = bundle.full;
    else
      bundle.routes[r] = head_forward(c.blocks[r - 1].output, batch, c.heads[r]);
  }
  return bundle;
}

template <typename S>
void VisionTransformer<S>::backward(const ForwardCache<S>& cache, const Matrix<S>& d_full,
                                    const std::map<int, Matrix<S>>& d_routes,
                                    ParameterSet<S>& grads) const {
  const int batch = cache.batch;
  const int J = config_.num_blocks;
  const int m = config_.num_tokens();
  const int d = config_.embed_dim;
  if (static_cast<int>(cache.blocks.size()) != J)
    fail(ErrorKind::InvalidState, "backward called without a forward cache");
  if (d_full.rows() != batch || d_full.cols() != config_.num_classes)
    fail(ErrorKind::Shape, "full-logit gradient has wrong shape");

  auto inject = [&](int j, const Matrix<S>& d_logits, Matrix<S>& d_x) {
    auto it = cache.heads.find(j);
    if (it == cache.heads.end())
      fail(ErrorKind::InvalidState, "route " + std::to_string(j) + " was not computed in forward");
    if (d_logits.rows() != batch || d_logits.cols() != config_.num_classes)
      fail(ErrorKind::Shape, "route gradient has wrong shape");
    const Matrix<S> d_cls = head_backward(it->second, d_logits, grads);
    for (int b = 0; b < batch; ++b) d_x.row(static_cast<Eigen::Index>(b) * m) += d_cls.row(b);
  };

  for (const auto& [r, _] : d_routes) {
    if (r < 1 || r > J) fail(ErrorKind::InvalidRoute, "route " + std::to_string(r) + " out of range");
  }

  Matrix<S> d_x = Matrix<S>::Zero(static_cast<Eigen::Index>(batch) * m, d);
  inject(J, d_full, d_x);
  if (auto it = d_routes.find(J); it != d_routes.end()) inject(J, it->second, d_x);
  for (int j = J; j >= 1; --j) {
    d_x = block_backward(j, cache.blocks[j - 1], d_x, batch, grads);
    if (j > 1) {
      if (auto it = d_routes.find(j - 1); it != d_routes.end()) inject(j - 1, it->second, d_x);
    }
  }

  // Embedding.
  const int np = config_.num_patches();
  Matrix<S> d_proj(static_cast<Eigen::Index>(batch) * np, d);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * m;
    grads[pos_] += d_x.block(r0, 0, m, d);
    grads[cls_] += d_x.row(r0);
    d_proj.block(static_cast<Eigen::Index>(b) * np, 0, np, d) = d_x.block(r0 + 1, 0, np, d);
  }
  grads[patch_w_].noalias() += cache.patches.transpose() * d_proj;
  grads[patch_b_] += d_proj.colwise().sum();
}

template <typename S>
AttentionMaps<S> VisionTransformer<S>::attention_of_final_block(std::span<const Image> images) const {
  ForwardCache<S> cache;
  forward(images, {}, &cache);
  AttentionMaps<S> out;
  out.batch = cache.batch;
  out.heads = config_.num_heads;
  out.tokens = config_.num_tokens();
  out.maps = std::move(cache.blocks.back().attn);
  return out;
}

template <typename S>
BlockActivations<S> VisionTransformer<S>::activations(std::span<const Image> images) const {
  ForwardCache<S> cache;
  forward(images, {}, &cache);
  BlockActivations<S> out;
  for (auto& block : cache.blocks) {
    out.per_block_tokens.push_back(std::move(block.output));
    AttentionMaps<S> maps;
    maps.batch = cache.batch;
    maps.heads = config_.num_heads;
    maps.tokens = config_.num_tokens();
    maps.maps = std::move(block.attn);
    out.attention_maps.push_back(std::move(maps));
  }
  return out;
}

template Matrix<float> softmax_rows(const Matrix<float>&);
template Matrix<double> softmax_rows(const Matrix<double>&);
template class ParameterSet<float>;
template class ParameterSet<double>;
template class VisionTransformer<float>;
template class VisionTransformer<double>;

}  // namespace spsd
