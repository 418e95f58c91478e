#pragma once

// Layer types around the attention: detail-specific feed-forward, pre-norm
// transformer block, convolutional patch-embedding stem, and the stride-2
// linear embedding between stages.

#include <string>
#include <utility>
#include <vector>

#include "shunted/ssa.hpp"

namespace shunted {

enum class FFNKind { Plain, ConvFFN, DetailSpecific };

inline const char* to_string(FFNKind k) {
  switch (k) {
    case FFNKind::Plain: return "plain";
    case FFNKind::ConvFFN: return "convffn";
    case FFNKind::DetailSpecific: return "detail";
  }
  return "?";
}

struct FFNConfig {
  long dim = 0;
  long hidden = 0;
  FFNKind kind = FFNKind::DetailSpecific;

  void validate() const {
    if (dim <= 0 || hidden < dim)
      throw ConfigError("ffn: hidden " + std::to_string(hidden) +
                        " must be >= dim " + std::to_string(dim));
  }
};

/// Feed-forward with an optional 3x3 depthwise detail branch on the hidden
/// activation laid out over the token grid:
///   DetailSpecific: fc2(gelu(x' + DS(x'))), x' = fc1(x)
///   ConvFFN:        fc2(gelu(DS(x')))
///   Plain:          fc2(gelu(x'))
template <class S>
struct FFNLayer {
  FFNConfig cfg;
  int fc1_w = -1, fc1_b = -1;
  int fc2_w = -1, fc2_b = -1;
  int ds_w = -1, ds_b = -1;

  FFNLayer() = default;

  FFNLayer(const FFNConfig& config, const std::string& prefix, ParamStore<S>& store,
           Rng& rng)
      : cfg(config) {
    cfg.validate();
    fc1_w = store.add(prefix + ".fc1.w", trunc_normal<S>({cfg.dim, cfg.hidden}, rng));
    fc1_b = store.add(prefix + ".fc1.b", TensorT<S>({cfg.hidden}), false);
    if (cfg.kind != FFNKind::Plain) {
      ds_w = store.add(prefix + ".ds.w", trunc_normal<S>({cfg.hidden, 1, 3, 3}, rng));
      ds_b = store.add(prefix + ".ds.b", TensorT<S>({cfg.hidden}), false);
    }
    fc2_w = store.add(prefix + ".fc2.w", trunc_normal<S>({cfg.hidden, cfg.dim}, rng));
    fc2_b = store.add(prefix + ".fc2.b", TensorT<S>({cfg.dim}), false);
  }

  VarT<S> forward(VarT<S> x, long h, long w) const {
    GraphT<S>& g = *x.g;
    if (x.dim(1) != h * w)
      throw ShapeError("ffn: N=" + std::to_string(x.dim(1)) + " != " +
                       std::to_string(h) + "x" + std::to_string(w));
    auto hidden = linear(x, g.param(fc1_w), g.param(fc1_b));
    if (cfg.kind != FFNKind::Plain) {
      auto ds = depthwise_tokens(hidden, g.param(ds_w), g.param(ds_b), h, w, 1);
      hidden = cfg.kind == FFNKind::DetailSpecific ? hidden + ds : ds;
    }
    return linear(gelu(hidden), g.param(fc2_w), g.param(fc2_b));
  }
};

struct BlockConfig {
  SSAConfig attn;
  FFNConfig ffn;
  double norm_eps = 1e-5;

  void validate() const {
    attn.validate();
    ffn.validate();
    if (attn.dim != ffn.dim)
      throw ConfigError("block: attn dim " + std::to_string(attn.dim) +
                        " != ffn dim " + std::to_string(ffn.dim));
  }
};

/// Pre-norm residual transformer block:
///   x + attn(norm1(x)); then + ffn(norm2(.)).
template <class S>
struct Block {
  BlockConfig cfg;
  int norm1_g = -1, norm1_b = -1;
  int norm2_g = -1, norm2_b = -1;
  SSALayer<S> attn;
  FFNLayer<S> ffn;

  Block() = default;

  Block(const BlockConfig& config, const std::string& prefix, ParamStore<S>& store,
        Rng& rng)
      : cfg(config) {
    cfg.validate();
    const long C = cfg.attn.dim;
    norm1_g = store.add(prefix + ".norm1.gamma", TensorT<S>::full({C}, S(1)), false);
    norm1_b = store.add(prefix + ".norm1.beta", TensorT<S>({C}), false);
    attn = SSALayer<S>(cfg.attn, prefix + ".attn", store, rng);
    norm2_g = store.add(prefix + ".norm2.gamma", TensorT<S>::full({C}, S(1)), false);
    norm2_b = store.add(prefix + ".norm2.beta", TensorT<S>({C}), false);
    ffn = FFNLayer<S>(cfg.ffn, prefix + ".ffn", store, rng);
  }

  VarT<S> forward(VarT<S> x, long h, long w, AttnCapture<S>* capture = nullptr) const {
    GraphT<S>& g = *x.g;
    const S eps = S(cfg.norm_eps);
    auto a = attn.forward(layer_norm(x, g.param(norm1_g), g.param(norm1_b), eps), h, w,
                          capture);
    x = x + a;
    auto f = ffn.forward(layer_norm(x, g.param(norm2_g), g.param(norm2_b), eps), h, w);
    return x + f;
  }
};

enum class PatchEmbedKind { NonOverlap, Overlap, Shunted };

inline const char* to_string(PatchEmbedKind k) {
  switch (k) {
    case PatchEmbedKind::NonOverlap: return "nonoverlap";
    case PatchEmbedKind::Overlap: return "overlap";
    case PatchEmbedKind::Shunted: return "shunted";
  }
  return "?";
}

struct PatchEmbedConfig {
  PatchEmbedKind kind = PatchEmbedKind::Shunted;
  long in_channels = 3;
  long out_dim = 0;
  int mid_convs = 1;  // extra 3x3 stride-1 convs in the Shunted stem
  double norm_eps = 1e-5;

  void validate() const {
    if (out_dim <= 0) throw ConfigError("patch_embed: out_dim must be positive");
    if (mid_convs < 0 || mid_convs > 3)
      throw ConfigError("patch_embed: mid_convs " + std::to_string(mid_convs) +
                        " outside 0..3");
  }
};

/// Convolutional stem mapping [B,3,H,W] to a 4x-downsampled token sequence.
///   Shunted:    7x7/s2/p3 + GELU, mid_convs x (3x3/s1/p1 + GELU), 2x2/s2 proj
///   NonOverlap: single 4x4/s4 projection
///   Overlap:    single 7x7/s4/p3 conv
/// All kinds end with a layer norm over the token sequence.
template <class S>
struct PatchEmbed {
  PatchEmbedConfig cfg;
  std::vector<std::pair<int, int>> convs;  // (w,b) for pre-projection convs
  int proj_w = -1, proj_b = -1;
  int norm_g = -1, norm_b = -1;

  PatchEmbed() = default;

  PatchEmbed(const PatchEmbedConfig& config, const std::string& prefix,
             ParamStore<S>& store, Rng& rng)
      : cfg(config) {
    cfg.validate();
    const long C = cfg.out_dim;
    if (cfg.kind == PatchEmbedKind::Shunted) {
      convs.emplace_back(
          store.add(prefix + ".conv0.w", trunc_normal<S>({C, cfg.in_channels, 7, 7}, rng)),
          store.add(prefix + ".conv0.b", TensorT<S>({C}), false));
      for (int i = 0; i < cfg.mid_convs; ++i) {
        const std::string name = prefix + ".conv" + std::to_string(i + 1);
        convs.emplace_back(store.add(name + ".w", trunc_normal<S>({C, C, 3, 3}, rng)),
                           store.add(name + ".b", TensorT<S>({C}), false));
      }
      proj_w = store.add(prefix + ".proj.w", trunc_normal<S>({C, C, 2, 2}, rng));
      proj_b = store.add(prefix + ".proj.b", TensorT<S>({C}), false);
    } else {
      const long k = cfg.kind == PatchEmbedKind::NonOverlap ? 4 : 7;
      proj_w =
          store.add(prefix + ".proj.w", trunc_normal<S>({C, cfg.in_channels, k, k}, rng));
      proj_b = store.add(prefix + ".proj.b", TensorT<S>({C}), false);
    }
    norm_g = store.add(prefix + ".norm.gamma", TensorT<S>::full({C}, S(1)), false);
    norm_b = store.add(prefix + ".norm.beta", TensorT<S>({C}), false);
  }

  /// Returns tokens [B, (H/4)*(W/4), out_dim]; new spatial dims are (H/4, W/4).
  VarT<S> forward(VarT<S> img, long* h_out, long* w_out) const {
    GraphT<S>& g = *img.g;
    const long H = img.dim(2), W = img.dim(3);
    if (H % 4 != 0 || W % 4 != 0)
      throw ShapeError("patch_embed: input " + std::to_string(H) + "x" +
                       std::to_string(W) + " not divisible by 4");
    VarT<S> y = img;
    if (cfg.kind == PatchEmbedKind::Shunted) {
      y = gelu(conv2d(y, g.param(convs[0].first), g.param(convs[0].second), 2, 3));
      for (std::size_t i = 1; i < convs.size(); ++i)
        y = gelu(conv2d(y, g.param(convs[i].first), g.param(convs[i].second), 1, 1));
      y = conv2d(y, g.param(proj_w), g.param(proj_b), 2, 0);
    } else if (cfg.kind == PatchEmbedKind::NonOverlap) {
      y = conv2d(y, g.param(proj_w), g.param(proj_b), 4, 0);
    } else {
      y = conv2d(y, g.param(proj_w), g.param(proj_b), 4, 3);
    }
    auto tokens = spatial_to_tokens(y);
    tokens = layer_norm(tokens, g.param(norm_g), g.param(norm_b), S(cfg.norm_eps));
    if (h_out) *h_out = H / 4;
    if (w_out) *w_out = W / 4;
    return tokens;
  }
};

/// Stage transition (linear embedding): 2x2 stride-2 conv C -> 2C over the
/// spatial arrangement, then layer norm. Token count drops 4x.
template <class S>
struct Transition {
  long in_dim = 0;
  int conv_w = -1, conv_b = -1;
  int norm_g = -1, norm_b = -1;
  double norm_eps = 1e-5;

  Transition() = default;

  Transition(long dim, const std::string& prefix, ParamStore<S>& store, Rng& rng)
      : in_dim(dim) {
    conv_w = store.add(prefix + ".conv.w", trunc_normal<S>({2 * dim, dim, 2, 2}, rng));
    conv_b = store.add(prefix + ".conv.b", TensorT<S>({2 * dim}), false);
    norm_g = store.add(prefix + ".norm.gamma", TensorT<S>::full({2 * dim}, S(1)), false);
    norm_b = store.add(prefix + ".norm.beta", TensorT<S>({2 * dim}), false);
  }

  VarT<S> forward(VarT<S> x, long h, long w, long* h_out, long* w_out) const {
    GraphT<S>& g = *x.g;
    if (h % 2 != 0 || w % 2 != 0)
      throw ShapeError("stage_transition: odd spatial dims (" + std::to_string(h) +
                       "," + std::to_string(w) + ")");
    auto sp = tokens_to_spatial(x, h, w);
    auto y = conv2d(sp, g.param(conv_w), g.param(conv_b), 2, 0);
    auto tokens = spatial_to_tokens(y);
    tokens = layer_norm(tokens, g.param(norm_g), g.param(norm_b), S(norm_eps));
    if (h_out) *h_out = h / 2;
    if (w_out) *w_out = w / 2;
    return tokens;
  }
};

}  // namespace shunted
