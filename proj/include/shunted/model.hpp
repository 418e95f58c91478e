#pragma once

// Four-stage backbone assembly: patch embed -> stages of blocks joined by
// stride-2 transitions -> final norm -> token average pool -> classifier.

#include <string>
#include <utility>
#include <vector>

#include "shunted/blocks.hpp"
#include "shunted/tensor_io.hpp"

namespace shunted {

struct StageConfig {
  long dim = 0;
  long heads = 1;
  long depth = 1;
  std::vector<long> rates;  // per head
  long ffn_ratio = 4;
  FFNKind ffn_kind = FFNKind::DetailSpecific;
  Aggregation aggregation = Aggregation::ConvStride;
  bool use_local_enhance = true;
};

struct ModelConfig {
  std::string name = "custom";
  PatchEmbedConfig patch_embed;
  std::vector<StageConfig> stages;
  long num_classes = 1000;
  long input_h = 224;
  long input_w = 224;
  double norm_eps = 1e-5;

  /// Spatial side lengths after the stem and each stage, for this input.
  void validate() const {
    if (stages.empty()) throw ConfigError("model: no stages");
    patch_embed.validate();
    if (patch_embed.out_dim != stages[0].dim)
      throw ConfigError("model: patch embed dim " + std::to_string(patch_embed.out_dim) +
                        " != stage 1 dim " + std::to_string(stages[0].dim));
    if (num_classes <= 0) throw ConfigError("model: num_classes must be positive");
    if (input_h % 4 != 0 || input_w % 4 != 0)
      throw ConfigError("model: input " + std::to_string(input_h) + "x" +
                        std::to_string(input_w) + " not divisible by 4");
    long h = input_h / 4, w = input_w / 4;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const StageConfig& st = stages[s];
      if (s > 0 && st.dim != 2 * stages[s - 1].dim)
        throw ConfigError("model: stage " + std::to_string(s + 1) + " dim " +
                          std::to_string(st.dim) + " must double the previous stage");
      if (st.dim % st.heads != 0)
        throw ConfigError("model: stage " + std::to_string(s + 1) + " dim " +
                          std::to_string(st.dim) + " not divisible by heads " +

                          std::to_string(st.heads));
      if (static_cast<long>(st.rates.size()) != st.heads)
        throw ConfigError("model: stage " + std::to_string(s + 1) + " has " +
                          std::to_string(st.rates.size()) + " rates for " +
                          std::to_string(st.heads) + " heads");
      for (long r : st.rates)
        if (r < 1 || h % r != 0 || w % r != 0)
          throw ConfigError("model: stage " + std::to_string(s + 1) + " rate " +
                            std::to_string(r) + " does not divide spatial (" +
                            std::to_string(h) + "," + std::to_string(w) + ")");
      if (s + 1 < stages.size()) {
        if (h % 2 != 0 || w % 2 != 0)
          throw ConfigError("model: stage " + std::to_string(s + 1) + " spatial (" +
                            std::to_string(h) + "," + std::to_string(w) +
                            ") not divisible for transition");
        h /= 2;
        w /= 2;
      }
    }
  }

  SSAConfig ssa_config(std::size_t stage) const {
    const StageConfig& st = stages[stage];
    SSAConfig c;
    c.dim = st.dim;
    c.heads = st.heads;
    c.rates = st.rates;
    c.aggregation = st.aggregation;
    c.use_local_enhance = st.use_local_enhance;
    c.norm_eps = norm_eps;
    return c;
  }

  FFNConfig ffn_config(std::size_t stage) const {
    const StageConfig& st = stages[stage];
    return {st.dim, st.dim * st.ffn_ratio, st.ffn_kind};
  }
};

enum class Variant { Tiny, Small, Base, Desk };

inline Variant parse_variant(const std::string& name) {
  if (name == "tiny") return Variant::Tiny;
  if (name == "small") return Variant::Small;
  if (name == "base") return Variant::Base;
  if (name == "desk") return Variant::Desk;
  throw ConfigError("unknown variant '" + name + "' (tiny|small|base|desk)");
}

/// Table-style presets. Tiny/Small/Base share dims (64,128,256,512), heads
/// (2,4,8,16), per-stage FFN ratios (8,8,4,4) and differ in depth and stem
/// width; desk is a miniature two-stage preset for fast tests.
inline ModelConfig variant(Variant v) {
  ModelConfig cfg;
  if (v == Variant::Desk) {
    cfg.name = "desk";
    cfg.patch_embed = {PatchEmbedKind::Shunted, 3, 32, 2};
    cfg.stages.push_back({32, 2, 1, {4, 8}, 8});
    cfg.stages.push_back({64, 2, 1, {1, 2}, 2});
    cfg.num_classes = 4;
    cfg.input_h = cfg.input_w = 64;
    return cfg;
  }
  const long dims[4] = {64, 128, 256, 512};
  const long heads[4] = {2, 4, 8, 16};
  const long ratios[4] = {8, 8, 4, 4};
  long depths[4];
  int mid_convs;
  switch (v) {
    case Variant::Tiny:
      cfg.name = "tiny";
      depths[0] = 1; depths[1] = 2; depths[2] = 4; depths[3] = 1;
      mid_convs = 1;
      break;
    case Variant::Small:
      cfg.name = "small";
      depths[0] = 2; depths[1] = 4; depths[2] = 12; depths[3] = 1;
      mid_convs = 2;
      break;
    default:
      cfg.name = "base";
      depths[0] = 3; depths[1] = 4; depths[2] = 24; depths[3] = 2;
      mid_convs = 3;
      break;
  }
  cfg.patch_embed = {PatchEmbedKind::Shunted, 3, dims[0], mid_convs};
  for (int s = 0; s < 4; ++s)
    cfg.stages.push_back(
        {dims[s], heads[s], depths[s], assign_rates(s + 1, heads[s]), ratios[s]});
  cfg.num_classes = 1000;
  cfg.input_h = cfg.input_w = 224;
  return cfg;
}

inline ModelConfig variant(const std::string& name) { return variant(parse_variant(name)); }

enum class RatesMode { Mixed, UniformCoarse, UniformFine };

inline RatesMode parse_rates_mode(const std::string& name) {
  if (name == "mixed") return RatesMode::Mixed;
  if (name == "uniform-coarse") return RatesMode::UniformCoarse;
  if (name == "uniform-fine") return RatesMode::UniformFine;
  throw ConfigError("unknown rates mode '" + name +
                    "' (mixed|uniform-coarse|uniform-fine)");
}

/// Mixed keeps the preset's split rates; uniform-coarse sets every head to
/// the stage's max rate; uniform-fine sets every head to rate 1.
inline ModelConfig with_rates_mode(ModelConfig cfg, RatesMode mode) {
  if (mode == RatesMode::Mixed) return cfg;
  for (auto& st : cfg.stages) {
    long r = 1;
    if (mode == RatesMode::UniformCoarse)
      for (long x : st.rates) r = std::max(r, x);
    st.rates.assign(st.rates.size(), r);
  }
  return cfg;
}

/// Audit record of one stage output.
struct StageShape {
  int stage = 0;  // 1-based
  long h = 0, w = 0;
  long dim = 0;
  long tokens = 0;
};

/// Analytic F_i trail: stage i outputs H/2^(i+1) x W/2^(i+1) x C*2^(i-1).
inline std::vector<StageShape> shape_trail(const ModelConfig& cfg, long H, long W) {
  std::vector<StageShape> trail;
  long h = H / 4, w = W / 4;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    trail.push_back({static_cast<int>(s + 1), h, w, cfg.stages[s].dim, h * w});
    if (s + 1 < cfg.stages.size()) {
      h /= 2;
      w /= 2;
    }
  }
  return trail;
}

/// Per-block attention maps captured during a forward pass.
template <class S>
struct ModelAttnCapture {
  std::vector<std::pair<std::string, std::vector<TensorT<S>>>> blocks;
};

template <class S>
struct Model {
  ModelConfig cfg;
  ParamStore<S> params;
  PatchEmbed<S> stem;
  std::vector<std::vector<Block<S>>> stages;
  std::vector<Transition<S>> transitions;
  int final_norm_g = -1, final_norm_b = -1;
  int head_w = -1, head_b = -1;

  /// Deterministic construction: same config and seed give bitwise-identical
  /// parameters.
  static Model build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.cfg = config;
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));
    m.stem = PatchEmbed<S>(config.patch_embed, "patch_embed", m.params, rng);
    for (std::size_t s = 0; s < config.stages.size(); ++s) {
      const std::string stage_prefix = "stage" + std::to_string(s + 1);
      BlockConfig bc{config.ssa_config(s), config.ffn_config(s), config.norm_eps};
      std::vector<Block<S>> blocks;
      for (long b = 0; b < config.stages[s].depth; ++b)
        blocks.emplace_back(bc, stage_prefix + ".block" + std::to_string(b), m.params,
                            rng);
      m.stages.push_back(std::move(blocks));
      if (s + 1 < config.stages.size())
        m.transitions.emplace_back(config.stages[s].dim,
                                   "transition" + std::to_string(s + 1), m.params, rng);
    }
    const long Cl = config.stages.back().dim;
    m.final_norm_g = m.params.add("head.norm.gamma", TensorT<S>::full({Cl}, S(1)), false);
    m.final_norm_b = m.params.add("head.norm.beta", TensorT<S>({Cl}), false);
    m.head_w = m.params.add("head.fc.w", trunc_normal<S>({Cl, config.num_classes}, rng));
    m.head_b = m.params.add("head.fc.b", TensorT<S>({config.num_classes}), false);
    return m;
  }

  /// Taped forward: images [B,3,H,W] -> logits [B,num_classes].
  VarT<S> forward(GraphT<S>& g, const TensorT<S>& images,
                  ModelAttnCapture<S>* capture = nullptr,
                  std::vector<StageShape>* trail = nullptr) const {
    if (images.ndim() != 4 || images.dim(1) != cfg.patch_embed.in_channels)
      throw ShapeError("model forward: expected [B," +
                       std::to_string(cfg.patch_embed.in_channels) + ",H,W], got " +
                       shape_to_string(images.shape()));
    VarT<S> x = g.leaf(images);
    long h = 0, w = 0;
    x = stem.forward(x, &h, &w);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        AttnCapture<S> cap;
        x = stages[s][b].forward(x, h, w, capture ? &cap : nullptr);
        if (capture)
          capture->blocks.emplace_back(
              "stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
              std::move(cap.maps));
      }
      if (trail)
        trail->push_back(
            {static_cast<int>(s + 1), h, w, cfg.stages[s].dim, x.dim(1)});
      if (s + 1 < stages.size()) x = transitions[s].forward(x, h, w, &h, &w);
    }
    x = layer_norm(x, g.param(final_norm_g), g.param(final_norm_b), S(cfg.norm_eps));
    auto pooled = mean_last(transpose(x, {0, 2, 1}));  // [B,N,C] -> [B,C]
    return linear(pooled, g.param(head_w), g.param(head_b));
  }

  /// Inference convenience: forward without keeping the graph.
  TensorT<S> logits(const TensorT<S>& images) const {
    GraphT<S> g(const_cast<ParamStore<S>*>(&params));
    return forward(g, images).val();
  }
};

/// Writes model parameters (plus optional extra named tensors, e.g.
/// optimizer state) as one SCKP file. Entries appear in registration order.
template <class S>
void save_checkpoint(const Model<S>& m, const std::string& path,
                     const std::vector<std::pair<std::string, const TensorT<S>*>>& extra =
                         {}) {
  std::vector<std::pair<std::string, const TensorT<S>*>> entries;
  entries.reserve(m.params.size() + extra.size());
  for (const auto& p : m.params.all()) entries.emplace_back(p.name, &p.value);
  for (const auto& e : extra) entries.push_back(e);
  save_sckp(entries, path);
}

/// Loads parameters by name. Entries prefixed "opt." are ignored here (the
/// trainer consumes them); every model parameter must be present with a
/// matching shape.
template <class S>
void load_checkpoint(Model<S>& m, const std::string& path) {
  auto entries = load_sckp<S>(path);
  std::size_t used = 0;
  for (auto& [name, tensor] : entries) {
    if (name.rfind("opt.", 0) == 0) continue;
    const int id = m.params.find(name);
    if (id < 0) throw ConfigError("checkpoint: unknown parameter '" + name + "'");
    Parameter<S>& p = m.params[id];
    if (p.value.shape() != tensor.shape())
      throw ShapeError("checkpoint: parameter '" + name + "' has shape " +
                       shape_to_string(tensor.shape()) + ", model expects " +
                       shape_to_string(p.value.shape()));
    p.value = std::move(tensor);
    ++used;
  }
  if (used != m.params.size())
    throw ConfigError("checkpoint: file provides " + std::to_string(used) +
                      " of " + std::to_string(m.params.size()) + " model parameters");
}

}  // namespace shunted
