#include "shunted/gradcheck.hpp"
#include "shunted/model.hpp"

namespace shunted {

namespace {

/// Scalar summary of a non-scalar output: sum of squares. Smooth, so finite
/// differences stay well conditioned.
VarT<double> sumsq(VarT<double> y) { return sum_all(mul(y, y)); }

}  // namespace

GradCheckReport run_gradcheck_preset(const std::string& preset, double eps,
                                     std::uint64_t seed, long samples_per_param) {
  Rng rng(derive_seed(seed, 0x6763ULL));
  if (preset == "ssa") {
    SSAConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.rates = {2, 4};
    ParamStore<double> store;
    SSALayer<double> layer(cfg, "attn", store, rng);
    TensorT<double> x = random_normal<double>({2, 64, 16}, rng);
    return grad_check(
        store,
        [&](GraphT<double>& g) { return sumsq(layer.forward(g.leaf(x), 8, 8)); }, eps,
        samples_per_param, derive_seed(seed, 1));
  }
  if (preset == "ffn") {
    FFNConfig cfg{12, 24, FFNKind::DetailSpecific};
    ParamStore<double> store;
    FFNLayer<double> layer(cfg, "ffn", store, rng);
    TensorT<double> x = random_normal<double>({2, 16, 12}, rng);
    return grad_check(
        store, [&](GraphT<double>& g) { return sumsq(layer.forward(g.leaf(x), 4, 4)); },
        eps, samples_per_param, derive_seed(seed, 1));
  }
  if (preset == "block") {
    BlockConfig cfg;
    cfg.attn.dim = 16;
    cfg.attn.heads = 2;
    cfg.attn.rates = {1, 2};
    cfg.ffn = {16, 32, FFNKind::DetailSpecific};
    ParamStore<double> store;
    Block<double> block(cfg, "stage1.block0", store, rng);
    TensorT<double> x = random_normal<double>({2, 64, 16}, rng);
    return grad_check(
        store, [&](GraphT<double>& g) { return sumsq(block.forward(g.leaf(x), 8, 8)); },
        eps, samples_per_param, derive_seed(seed, 1));
  }
  if (preset == "desk") {
    ModelConfig cfg = variant(Variant::Desk);
    cfg.input_h = cfg.input_w = 32;
    Model<double> model = Model<double>::build(cfg, seed);
    TensorT<double> img = random_normal<double>({2, 3, 32, 32}, rng, 0.5);
    const std::vector<int> labels = {0, 2};
    return grad_check(
        model.params,
        [&](GraphT<double>& g) {
          return cross_entropy(model.forward(g, img), labels, 0.1);
        },
        eps, samples_per_param, derive_seed(seed, 1));
  }
  throw ConfigError("unknown gradcheck preset '" + preset +
                    "' (ssa|ffn|block|desk)");
}

}  // namespace shunted
