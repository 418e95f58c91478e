#pragma once

// Finite-difference verification of reverse-mode gradients, in float64.
// Central differences (f(t+e) - f(t-e)) / 2e per checked element; relative
// error normalized as |a-n| / (|a|+|n|+1e-8).

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "shunted/graph.hpp"
#include "shunted/ops.hpp"

namespace shunted {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  long elements_checked = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::vector<GradCheckEntry> per_param;

  bool pass(double threshold) const { return max_rel_err < threshold; }
};

/// build_loss constructs a fresh scalar loss over the store's current
/// parameter values. max_samples_per_param == 0 checks every element;
/// otherwise that many elements per parameter are sampled (seeded).
template <class Builder>
GradCheckReport grad_check(ParamStore<double>& store, Builder&& build_loss,
                           double eps = 1e-5, long max_samples_per_param = 0,
                           std::uint64_t sample_seed = 0x9c0ffee) {
  auto eval = [&]() -> double {
    GraphT<double> g(&store);
    VarT<double> loss = build_loss(g);
    if (loss.val().numel() != 1)
      throw ShapeError("grad_check: loss must be scalar");
    return loss.val()[0];
  };

  store.zero_grads();
  {
    GraphT<double> g(&store);
    VarT<double> loss = build_loss(g);
    g.backward(loss);
  }
  std::vector<TensorT<double>> analytic;
  analytic.reserve(store.size());
  for (const auto& p : store.all()) analytic.push_back(p.grad);

  GradCheckReport report;
  Rng rng(sample_seed);
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    Parameter<double>& p = store[static_cast<int>(pi)];
    std::vector<long> indices;
    if (max_samples_per_param <= 0 || p.value.numel() <= max_samples_per_param) {
      indices.resize(static_cast<std::size_t>(p.value.numel()));
      for (long i = 0; i < p.value.numel(); ++i) indices[i] = i;
    } else {
      for (long i = 0; i < max_samples_per_param; ++i)
        indices.push_back(rng.uniform_int(0, p.value.numel() - 1));
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    }
    GradCheckEntry entry{p.name, 0.0, static_cast<long>(indices.size())};
    for (long idx : indices) {
      const double saved = p.value[idx];
      p.value[idx] = saved + eps;
      const double fp = eval();
      p.value[idx] = saved - eps;
      const double fm = eval();
      p.value[idx] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[pi][idx];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

/// Named configurations for the gradcheck CLI and the acceptance suite:
/// "ssa" (one attention layer), "ffn" (detail-specific feed-forward),
/// "block" (full transformer block), "desk" (whole desk model with a
/// cross-entropy loss). Elements per parameter are sampled to keep runtime
/// in seconds; every parameter is covered.
GradCheckReport run_gradcheck_preset(const std::string& preset, double eps,
                                     std::uint64_t seed,
                                     long samples_per_param = 4);

}  // namespace shunted
