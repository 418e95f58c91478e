#include "shunted/cost.hpp"

namespace shunted {

namespace {

// Per-element costs for the "full" FLOP total.
constexpr long long kNormCost = 8;
constexpr long long kSoftmaxCost = 5;
constexpr long long kGeluCost = 10;
constexpr long long kAddCost = 1;

struct Acc {
  CostReport& r;
  void params(const std::string& path, long long n) {
    r.params_by_path.emplace_back(path, n);
    r.total_params += n;
  }
  void macs(const std::string& path, long long m, long long elementwise) {
    r.macs_by_path.emplace_back(path, m);
    r.total_macs += m;
    r.flops_by_path.emplace_back(path, 2 * m + elementwise);
    r.total_flops += 2 * m + elementwise;
  }
};

long long norm_params(long c) { return 2 * c; }

long long attn_params(const StageConfig& st, const ModelConfig& cfg) {
  const long C = st.dim;
  const long dh = C / st.heads;
  SSAConfig ssa = {C, st.heads, st.rates, st.aggregation, st.use_local_enhance,
                   cfg.norm_eps};
  long long n = 0;
  n += static_cast<long long>(C) * C + C;  // wq + bq
  for (const HeadGroup& hg : head_groups(ssa)) {
    const long gd = hg.num_heads * dh;
    if (hg.rate > 1) {
      if (st.aggregation == Aggregation::ConvStride)
        n += static_cast<long long>(C) * C * hg.rate * hg.rate + C + norm_params(C);
      else if (st.aggregation == Aggregation::LinearPool)
        n += static_cast<long long>(C) * hg.rate * hg.rate * C + C;
    }
    n += 2 * (static_cast<long long>(C) * gd + gd);  // wk/bk + wv/bv
    if (st.use_local_enhance) n += static_cast<long long>(gd) * 9 + gd;
  }
  n += static_cast<long long>(C) * C + C;  // wo + bo
  return n;
}

long long ffn_params(const StageConfig& st) {
  const long C = st.dim, hid = C * st.ffn_ratio;
  long long n = static_cast<long long>(C) * hid + hid;  // fc1
  if (st.ffn_kind != FFNKind::Plain) n += static_cast<long long>(hid) * 9 + hid;
  n += static_cast<long long>(hid) * C + C;  // fc2
  return n;
}

}  // namespace

long long attention_core_macs(long n_tokens, const std::vector<long>& rates, long dim,
                              long heads) {
  const long dh = dim / heads;
  long long total = 0;
  for (long r : rates) {
    const long long ng = static_cast<long long>(n_tokens) / (r * r);
    total += 2LL * n_tokens * ng * dh;
  }
  return total;
}

std::string param_path(const std::string& name) {
  if (name.rfind("stage", 0) == 0) {
    // stageS.blockB.<layer>.<leaf...> -> first three components
    std::size_t a = name.find('.');
    std::size_t b = name.find('.', a + 1);
    std::size_t c = name.find('.', b + 1);
    return c == std::string::npos ? name : name.substr(0, c);
  }
  const std::size_t dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

CostReport count_params(const ModelConfig& cfg) {
  cfg.validate();
  CostReport r;
  Acc acc{r};
  const PatchEmbedConfig& pe = cfg.patch_embed;
  {
    long long n = 0;
    const long C = pe.out_dim;
    if (pe.kind == PatchEmbedKind::Shunted) {
      n += static_cast<long long>(C) * pe.in_channels * 49 + C;
      n += pe.mid_convs * (static_cast<long long>(C) * C * 9 + C);
      n += static_cast<long long>(C) * C * 4 + C;
    } else {
      const long k = pe.kind == PatchEmbedKind::NonOverlap ? 4 : 7;
      n += static_cast<long long>(C) * pe.in_channels * k * k + C;
    }
    n += norm_params(C);
    acc.params("patch_embed", n);
  }
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageConfig& st = cfg.stages[s];
    const std::string prefix = "stage" + std::to_string(s + 1) + ".block";
    for (long b = 0; b < st.depth; ++b) {
      const std::string bp = prefix + std::to_string(b);
      acc.params(bp + ".norm1", norm_params(st.dim));
      acc.params(bp + ".attn", attn_params(st, cfg));
      acc.params(bp + ".norm2", norm_params(st.dim));
      acc.params(bp + ".ffn", ffn_params(st));
    }
    if (s + 1 < cfg.stages.size()) {
      const long C = st.dim;
      acc.params("transition" + std::to_string(s + 1),
                 static_cast<long long>(2 * C) * C * 4 + 2 * C + norm_params(2 * C));
    }
  }
  const long Cl = cfg.stages.back().dim;
  acc.params("head",
             norm_params(Cl) + static_cast<long long>(Cl) * cfg.num_classes +
                 cfg.num_classes);
  return r;
}

void estimate_flops(const ModelConfig& cfg, long input_h, long input_w,
                    CostReport& report) {
  ModelConfig at_size = cfg;
  at_size.input_h = input_h;
  at_size.input_w = input_w;
  at_size.validate();
  Acc acc{report};
  const PatchEmbedConfig& pe = cfg.patch_embed;
  const long H = input_h, W = input_w;
  {
    const long C = pe.out_dim;
    const long long half = static_cast<long long>(H / 2) * (W / 2);
    const long long quarter = static_cast<long long>(H / 4) * (W / 4);
    long long m = 0, e = 0;
    if (pe.kind == PatchEmbedKind::Shunted) {
      m += conv_macs(C, pe.in_channels, 7, 7, H / 2, W / 2);
      e += C * half * (kAddCost + kGeluCost);
      for (int i = 0; i < pe.mid_convs; ++i) {
        m += conv_macs(C, C, 3, 3, H / 2, W / 2);
        e += C * half * (kAddCost + kGeluCost);
      }
      m += conv_macs(C, C, 2, 2, H / 4, W / 4);
      e += C * quarter * kAddCost;
    } else {
      const long k = pe.kind == PatchEmbedKind::NonOverlap ? 4 : 7;
      m += conv_macs(C, pe.in_channels, k, k, H / 4, W / 4);
      e += C * quarter * kAddCost;
    }
    e += kNormCost * quarter * C;
    acc.macs("patch_embed", m, e);
  }
  long h = H / 4, w = W / 4;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageConfig& st = cfg.stages[s];
    const long C = st.dim;
    const long dh = C / st.heads;
    const long long N = static_cast<long long>(h) * w;
    SSAConfig ssa = {C, st.heads, st.rates, st.aggregation, st.use_local_enhance,
                     cfg.norm_eps};
    const auto groups = head_groups(ssa);
    const std::string prefix = "stage" + std::to_string(s + 1) + ".block";
    for (long b = 0; b < st.depth; ++b) {
      const std::string bp = prefix + std::to_string(b);
      long long proj_m = 0, proj_e = 0, core_m = 0, core_e = 0;
      proj_m += linear_macs(N, C, C);  // wq
      proj_e += N * C * kAddCost;
      for (const HeadGroup& hg : groups) {
        const long gd = hg.num_heads * dh;
        const long long ng = N / (hg.rate * hg.rate);
        if (hg.rate > 1) {
          if (st.aggregation == Aggregation::ConvStride) {
            proj_m += conv_macs(C, C, hg.rate, hg.rate, h / hg.rate, w / hg.rate);
            proj_e += ng * C * kAddCost + kNormCost * ng * C;
          } else if (st.aggregation == Aggregation::LinearPool) {
            proj_m += linear_macs(ng, C * hg.rate * hg.rate, C);
            proj_e += ng * C * kAddCost;
          } else {
            proj_e += ng * C * hg.rate * hg.rate;  // pooled-cell adds
          }
        }
        proj_m += 2 * linear_macs(ng, C, gd);
        proj_e += 2 * ng * gd * kAddCost;
        if (st.use_local_enhance) {
          proj_m += conv_macs(gd, 1, 3, 3, h / hg.rate, w / hg.rate);
          proj_e += 2 * ng * gd * kAddCost;  // bias + residual
        }
        // scale + softmax on the attention logits of this group
        core_e += hg.num_heads * N * ng * (kAddCost + kSoftmaxCost);
      }
      core_m += attention_core_macs(h * w, st.rates, C, st.heads);
      proj_m += linear_macs(N, C, C);  // wo
      proj_e += N * C * kAddCost;
      acc.macs(bp + ".attn.proj", proj_m, proj_e);
      acc.macs(bp + ".attn.core", core_m, core_e);

      const long hid = C * st.ffn_ratio;
      long long ffn_m = linear_macs(N, C, hid) + linear_macs(N, hid, C);
      long long ffn_e = N * hid * kAddCost + N * C * kAddCost;  // biases
      if (st.ffn_kind != FFNKind::Plain) {
        ffn_m += conv_macs(hid, 1, 3, 3, h, w);
        ffn_e += N * hid * kAddCost;  // ds bias
        if (st.ffn_kind == FFNKind::DetailSpecific) ffn_e += N * hid * kAddCost;
      }
      ffn_e += N * hid * kGeluCost;
      acc.macs(bp + ".ffn", ffn_m, ffn_e);

      // norms and the two residual adds
      acc.macs(bp + ".norms", 0, 2 * kNormCost * N * C + 2 * N * C * kAddCost);
    }
    if (s + 1 < cfg.stages.size()) {
      const long long n4 = N / 4;
      acc.macs("transition" + std::to_string(s + 1),
               conv_macs(2 * C, C, 2, 2, h / 2, w / 2),
               n4 * 2 * C * kAddCost + kNormCost * n4 * 2 * C);
      h /= 2;
      w /= 2;
    }
  }
  const long Cl = cfg.stages.back().dim;
  const long long Nl = static_cast<long long>(h) * w;
  acc.macs("head", linear_macs(1, Cl, cfg.num_classes),
           kNormCost * Nl * Cl + Nl * Cl * kAddCost + cfg.num_classes * kAddCost);
}

CostReport cost_report(const ModelConfig& cfg) {
  CostReport r = count_params(cfg);
  estimate_flops(cfg, cfg.input_h, cfg.input_w, r);
  return r;
}

PaperReference paper_reference(const std::string& variant_name) {
  if (variant_name == "tiny") return {11.5, 2.1};
  if (variant_name == "small") return {22.4, 4.9};
  if (variant_name == "base") return {39.6, 8.1};
  return {0, 0};
}

}  // namespace shunted
