#pragma once

// Analytic parameter and FLOP accounting, computed from the configuration
// alone. Parameter counts must match an exact enumeration of a built model;
// FLOPs are per image. Conventions:
//   - total_macs counts one multiply-accumulate once (the convention of the
//     published backbone tables);
//   - total_flops counts 1 MAC = 2 FLOPs plus documented per-element costs:
//     layer_norm 8, softmax 5, gelu 10, add/bias/scale 1, avg-pool r^2
//     per pooled cell.

#include <string>
#include <utility>
#include <vector>

#include "shunted/model.hpp"

namespace shunted {

struct CostReport {
  long long total_params = 0;
  std::vector<std::pair<std::string, long long>> params_by_path;

  long long total_macs = 0;
  long long total_flops = 0;  // 2*MAC + elementwise
  std::vector<std::pair<std::string, long long>> macs_by_path;
  std::vector<std::pair<std::string, long long>> flops_by_path;
};

inline long long conv_macs(long cout, long cin, long kh, long kw, long ho, long wo) {
  return static_cast<long long>(cout) * cin * kh * kw * ho * wo;
}
inline long long conv_flops(long cout, long cin, long kh, long kw, long ho, long wo) {
  return 2 * conv_macs(cout, cin, kh, kw, ho, wo);
}
inline long long linear_macs(long tokens, long din, long dout) {
  return static_cast<long long>(tokens) * din * dout;
}

/// QK^T plus attn.V multiply-accumulates over all heads:
/// sum_i 2 * N * (N / r_i^2) * (dim/heads).
long long attention_core_macs(long n_tokens, const std::vector<long>& rates, long dim,
                              long heads);

/// Layer path a parameter name aggregates under ("stage2.block1.attn",
/// "patch_embed", "head", ...).
std::string param_path(const std::string& name);

/// Analytic per-layer parameter counts (fills the params part only).
CostReport count_params(const ModelConfig& cfg);

/// Analytic per-layer FLOPs for one image at the given input size (fills the
/// flops part of the report in place).
void estimate_flops(const ModelConfig& cfg, long input_h, long input_w,
                    CostReport& report);

/// Both parts at the configured input size.
CostReport cost_report(const ModelConfig& cfg);

/// Published reference figures for the table variants (millions of
/// parameters / GMACs at 224x224); used for labeled report columns, never
/// asserted as equalities.
struct PaperReference {
  double params_m = 0;
  double flops_g = 0;
};
PaperReference paper_reference(const std::string& variant_name);

}  // namespace shunted
