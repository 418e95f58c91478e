#pragma once

// Shunted self-attention: queries at full resolution, keys/values aggregated
// per head group at group-specific downsampling rates (multi-scale token
// aggregation), with a residual depthwise local-enhancement on values.

#include <cmath>
#include <string>
#include <vector>

#include "shunted/ops.hpp"

namespace shunted {

enum class Aggregation { ConvStride, LinearPool, AvgPool };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::ConvStride: return "conv";
    case Aggregation::LinearPool: return "linear";
    case Aggregation::AvgPool: return "avgpool";
  }
  return "?";
}

/// Per-layer attention description.
struct SSAConfig {
  long dim = 0;
  long heads = 1;
  std::vector<long> rates;  // one per head, sorted non-decreasing
  Aggregation aggregation = Aggregation::ConvStride;
  bool use_local_enhance = true;
  double norm_eps = 1e-5;

  long head_dim() const { return dim / heads; }

  void validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
      throw ConfigError("ssa: dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
    if (static_cast<long>(rates.size()) != heads)
      throw ConfigError("ssa: " + std::to_string(rates.size()) + " rates for " +
                        std::to_string(heads) + " heads");
    for (std::size_t i = 0; i < rates.size(); ++i) {
      if (rates[i] < 1)
        throw ConfigError("ssa: rate " + std::to_string(rates[i]) + " < 1");
      if (i > 0 && rates[i] < rates[i - 1])
        throw ConfigError("ssa: rates must be sorted non-decreasing");
    }
  }
};

/// Contiguous run of heads sharing one aggregation rate.
struct HeadGroup {
  long rate = 1;
  long first_head = 0;
  long num_heads = 0;
};

inline std::vector<HeadGroup> head_groups(const SSAConfig& cfg) {
  cfg.validate();
  std::vector<HeadGroup> groups;
  for (long h = 0; h < cfg.heads; ++h) {
    if (groups.empty() || groups.back().rate != cfg.rates[h])
      groups.push_back({cfg.rates[h], h, 1});
    else
      groups.back().num_heads++;
  }
  return groups;
}

/// Per-head downsampling rates for the four backbone stages: the first half
/// of the heads takes the finer rate, the second half the coarser one.
/// Stage 1 -> 4/8, stage 2 -> 2/4, stage 3 -> 1/2, stage 4 -> all 1.
inline std::vector<long> assign_rates(int stage_index, long heads) {
  if (stage_index < 1 || stage_index > 4)
    throw ConfigError("assign_rates: stage " + std::to_string(stage_index) +
                      " outside 1..4");
  if (heads < 1) throw ConfigError("assign_rates: heads must be positive");
  if (stage_index == 4) return std::vector<long>(heads, 1);
  if (heads % 2 != 0)
    throw ConfigError("assign_rates: stage " + std::to_string(stage_index) +
                      " needs an even head count, got " + std::to_string(heads));
  const long fine = stage_index == 1 ? 4 : (stage_index == 2 ? 2 : 1);
  const long coarse = fine * 2;
  std::vector<long> rates(heads);
  for (long i = 0; i < heads; ++i) rates[i] = i < heads / 2 ? fine : coarse;
  return rates;
}

/// Parameter handles for one aggregation rate (shared across its heads).
struct MTAParams {
  int w = -1, b = -1;          // conv kernel or pool projection
  int gamma = -1, beta = -1;   // channel norm after the strided conv
};

inline void check_rate_divides(long h, long w, long rate) {
  if (rate < 1 || h % rate != 0 || w % rate != 0)
    throw ShapeError("mta: rate " + std::to_string(rate) +
                     " does not divide spatial dims (" + std::to_string(h) + "," +
                     std::to_string(w) + ")");
}

/// Multi-scale token aggregation: [B,C,h,w] -> [B,C,h/rate,w/rate].
/// rate 1 is the identity (no parameters, no norm).
template <class S>
VarT<S> mta(VarT<S> x, long rate, Aggregation kind, const MTAParams& p,
            double norm_eps = 1e-5) {
  const long B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_rate_divides(h, w, rate);
  if (rate == 1) return x;
  GraphT<S>& g = *x.g;
  const long hr = h / rate, wr = w / rate;
  switch (kind) {
    case Aggregation::ConvStride: {
      auto y = conv2d(x, g.param(p.w), g.param(p.b), rate, 0);
      auto tokens = spatial_to_tokens(y);
      tokens = layer_norm(tokens, g.param(p.gamma), g.param(p.beta), S(norm_eps));
      return tokens_to_spatial(tokens, hr, wr);
    }
    case Aggregation::LinearPool: {
      // Non-overlapping rate x rate patches, flattened (C, py, px) and
      // projected back to C.
      auto patches = transpose(reshape(x, {B, C, hr, rate, wr, rate}),
                               {0, 2, 4, 1, 3, 5});
      auto flat = reshape(patches, {B, hr * wr, C * rate * rate});
      auto tokens = linear(flat, g.param(p.w), g.param(p.b));
      return tokens_to_spatial(tokens, hr, wr);
    }
    case Aggregation::AvgPool: {
      auto cells = transpose(reshape(x, {B, C, hr, rate, wr, rate}), {0, 1, 2, 4, 3, 5});
      return mean_last(reshape(cells, {B, C, hr, wr, rate * rate}));
    }
  }
  throw ConfigError("mta: unknown aggregation kind");
}

/// Residual local enhancement on values: V + depthwise3x3(V), stride 1, pad 1.
template <class S>
VarT<S> local_enhance(VarT<S> v, int le_w, int le_b) {
  GraphT<S>& g = *v.g;
  return v + depthwise_conv2d(v, g.param(le_w), g.param(le_b), 1, 1);
}

/// Captured softmax matrices, one [B, N, N/r^2] tensor per head.
template <class S>
struct AttnCapture {
  std::vector<TensorT<S>> maps;
};

/// One shunted self-attention layer: parameters plus forward wiring.
template <class S>
struct SSALayer {
  struct GroupParams {
    MTAParams mta;
    int wk = -1, bk = -1;
    int wv = -1, bv = -1;
    int le_w = -1, le_b = -1;
  };

  SSAConfig cfg;
  int wq = -1, bq = -1;
  int wo = -1, bo = -1;
  std::vector<GroupParams> groups;

  SSALayer() = default;

  SSALayer(const SSAConfig& config, const std::string& prefix, ParamStore<S>& store,
           Rng& rng)
      : cfg(config) {
    cfg.validate();
    const long C = cfg.dim;
    const long dh = cfg.head_dim();
    wq = store.add(prefix + ".wq", trunc_normal<S>({C, C}, rng));
    bq = store.add(prefix + ".bq", TensorT<S>({C}), false);
    for (const HeadGroup& hg : head_groups(cfg)) {
      GroupParams gp;
      const std::string gp_prefix = prefix + ".g" + std::to_string(groups.size());
      const long gd = hg.num_heads * dh;
      if (hg.rate > 1) {
        if (cfg.aggregation == Aggregation::ConvStride) {
          gp.mta.w = store.add(gp_prefix + ".mta.w",
                               trunc_normal<S>({C, C, hg.rate, hg.rate}, rng));
          gp.mta.b = store.add(gp_prefix + ".mta.b", TensorT<S>({C}), false);
          gp.mta.gamma =
              store.add(gp_prefix + ".mta.norm.gamma", TensorT<S>::full({C}, S(1)), false);
          gp.mta.beta = store.add(gp_prefix + ".mta.norm.beta", TensorT<S>({C}), false);
        } else if (cfg.aggregation == Aggregation::LinearPool) {
          gp.mta.w = store.add(gp_prefix + ".mta.w",
                               trunc_normal<S>({C * hg.rate * hg.rate, C}, rng));
          gp.mta.b = store.add(gp_prefix + ".mta.b", TensorT<S>({C}), false);
        }
        // AvgPool: parameter-free.
      }
      gp.wk = store.add(gp_prefix + ".wk", trunc_normal<S>({C, gd}, rng));
      gp.bk = store.add(gp_prefix + ".bk", TensorT<S>({gd}), false);
      gp.wv = store.add(gp_prefix + ".wv", trunc_normal<S>({C, gd}, rng));
      gp.bv = store.add(gp_prefix + ".bv", TensorT<S>({gd}), false);
      if (cfg.use_local_enhance) {
        gp.le_w = store.add(gp_prefix + ".le.w", trunc_normal<S>({gd, 1, 3, 3}, rng));
        gp.le_b = store.add(gp_prefix + ".le.b", TensorT<S>({gd}), false);
      }
      groups.push_back(gp);
    }
    wo = store.add(prefix + ".wo", trunc_normal<S>({C, C}, rng));
    bo = store.add(prefix + ".bo", TensorT<S>({C}), false);
  }

  /// x: [B, N=h*w, C] -> [B, N, C].
  VarT<S> forward(VarT<S> x, long h, long w, AttnCapture<S>* capture = nullptr) const {
    GraphT<S>& g = *x.g;
    const long B = x.dim(0), N = x.dim(1), C = x.dim(2);
    if (C != cfg.dim)
      throw ShapeError("ssa_forward: channel dim " + std::to_string(C) +
                       " != configured " + std::to_string(cfg.dim));
    if (N != h * w)
      throw ShapeError("ssa_forward: N=" + std::to_string(N) + " != " +
                       std::to_string(h) + "x" + std::to_string(w));
    for (long r : cfg.rates) check_rate_divides(h, w, r);

    const long dh = cfg.head_dim();
    const S qk_scale = S(1) / S(std::sqrt(static_cast<double>(dh)));
    auto q_full = linear(x, g.param(wq), g.param(bq));

    VarT<S> x_spatial{};
    bool have_spatial = false;
    const auto hgroups = head_groups(cfg);
    std::vector<VarT<S>> head_outputs;
    head_outputs.reserve(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const HeadGroup& hg = hgroups[gi];
      const GroupParams& gp = groups[gi];
      const long gh = hg.num_heads;
      const long gd = gh * dh;
      const long hr = h / hg.rate, wr = w / hg.rate;
      const long Ng = hr * wr;

      VarT<S> tokens;
      if (hg.rate == 1) {
        tokens = x;
      } else {
        if (!have_spatial) {
          x_spatial = tokens_to_spatial(x, h, w);
          have_spatial = true;
        }
        tokens = spatial_to_tokens(mta(x_spatial, hg.rate, cfg.aggregation, gp.mta,
                                       cfg.norm_eps));
      }
      auto k = linear(tokens, g.param(gp.wk), g.param(gp.bk));
      auto v = linear(tokens, g.param(gp.wv), g.param(gp.bv));
      if (cfg.use_local_enhance)
        v = v + depthwise_tokens(v, g.param(gp.le_w), g.param(gp.le_b), hr, wr, 1);

      auto q_g = slice_last(q_full, hg.first_head * dh, gd);
      auto qh = reshape(transpose(reshape(q_g, {B, N, gh, dh}), {0, 2, 1, 3}),
                        {B * gh, N, dh});
      auto kh = reshape(transpose(reshape(k, {B, Ng, gh, dh}), {0, 2, 1, 3}),
                        {B * gh, Ng, dh});
      auto vh = reshape(transpose(reshape(v, {B, Ng, gh, dh}), {0, 2, 1, 3}),
                        {B * gh, Ng, dh});

      auto attn = softmax_rows(scale(bmm(qh, kh, /*transpose_b=*/true), qk_scale));
      if (capture) {
        const TensorT<S>& a = attn.val();  // [B*gh, N, Ng]
        for (long hd = 0; hd < gh; ++hd) {
          TensorT<S> m({B, N, Ng});
          for (long b = 0; b < B; ++b)
            std::copy(a.data() + ((b * gh + hd) * N) * Ng,
                      a.data() + ((b * gh + hd) * N + N) * Ng,
                      m.data() + b * N * Ng);
          capture->maps.push_back(std::move(m));
        }
      }
      auto ctx = bmm(attn, vh);  // [B*gh, N, dh]
      head_outputs.push_back(
          reshape(transpose(reshape(ctx, {B, gh, N, dh}), {0, 2, 1, 3}), {B, N, gd}));
    }
    auto merged = head_outputs.size() == 1 ? head_outputs[0] : concat_last(head_outputs);
    return linear(merged, g.param(wo), g.param(bo));
  }

  /// Softmax matrices of a forward pass (forward output is discarded).
  std::vector<TensorT<S>> attention_maps(VarT<S> x, long h, long w) const {
    AttnCapture<S> cap;
    forward(x, h, w, &cap);
    return std::move(cap.maps);
  }
};

}  // namespace shunted
