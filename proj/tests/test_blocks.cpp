#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "shunted/blocks.hpp"
#include "shunted/gradcheck.hpp"

using namespace shunted;

namespace {

TensorT<double> randn(std::vector<long> shape, std::uint64_t seed, double std = 1.0) {
  Rng rng(seed);
  return random_normal<double>(std::move(shape), rng, std);
}

template <class S>
double max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0;
  for (long i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

}  // namespace

TEST_CASE("detail-specific FFN with zero DS branch collapses to plain") {
  Rng rng(81);
  const long C = 6, hidden = 12, h = 3, w = 4;
  ParamStore<double> sd;
  FFNLayer<double> detail({C, hidden, FFNKind::DetailSpecific}, "ffn", sd, rng);
  sd[detail.ds_w].value.set_zero();
  sd[detail.ds_b].value.set_zero();

  ParamStore<double> sp;
  Rng rng2(82);
  FFNLayer<double> plain({C, hidden, FFNKind::Plain}, "ffn", sp, rng2);
  // copy the shared parameters so theta1/theta2 agree
  sp[plain.fc1_w].value = sd[detail.fc1_w].value;
  sp[plain.fc1_b].value = sd[detail.fc1_b].value;
  sp[plain.fc2_w].value = sd[detail.fc2_w].value;
  sp[plain.fc2_b].value = sd[detail.fc2_b].value;

  auto x = randn({2, h * w, C}, 83);
  GraphT<double> gd(&sd);
  GraphT<double> gp(&sp);
  auto yd = detail.forward(gd.leaf(x), h, w);
  auto yp = plain.forward(gp.leaf(x), h, w);
  CHECK(max_abs_diff(yd.val(), yp.val()) == 0.0);
}

TEST_CASE("plain FFN with identity weights is gelu") {
  const long C = 5, h = 2, w = 2;
  ParamStore<double> store;
  Rng rng(84);
  FFNLayer<double> ffn({C, C, FFNKind::Plain}, "ffn", store, rng);
  store[ffn.fc1_w].value = TensorT<double>::eye(C);
  store[ffn.fc1_b].value.set_zero();
  store[ffn.fc2_w].value = TensorT<double>::eye(C);
  store[ffn.fc2_b].value.set_zero();
  auto x = randn({1, h * w, C}, 85);
  GraphT<double> g(&store);
  auto y = ffn.forward(g.leaf(x), h, w);
  auto expect = kernels::gelu(x);
  CHECK(max_abs_diff(y.val(), expect) < 1e-15);
}

TEST_CASE("detail-specific FFN matches composed kernel oracle") {
  Rng rng(86);
  const long C = 4, hidden = 8, h = 3, w = 3;
  ParamStore<double> store;
  FFNLayer<double> ffn({C, hidden, FFNKind::DetailSpecific}, "ffn", store, rng);
  auto x = randn({2, h * w, C}, 87);
  GraphT<double> g(&store);
  auto y = ffn.forward(g.leaf(x), h, w);

  auto x1 = kernels::linear(x, store[ffn.fc1_w].value, store[ffn.fc1_b].value);
  auto sp = kernels::permute(x1.reshaped({2, h, w, hidden}), {0, 3, 1, 2});
  auto ds = oracle::depthwise_conv2d(sp, store[ffn.ds_w].value, store[ffn.ds_b].value, 1, 1);
  TensorT<double> sum(sp.shape());
  for (long i = 0; i < sum.numel(); ++i) sum[i] = sp[i] + ds[i];
  auto back = kernels::permute(sum, {0, 2, 3, 1}).reshaped({2, h * w, hidden});
  auto act = kernels::gelu(back);
  auto expect = kernels::linear(act, store[ffn.fc2_w].value, store[ffn.fc2_b].value);
  CHECK(max_abs_diff(y.val(), expect) < 1e-12);
}

TEST_CASE("conv-FFN replaces the residual with an in-line depthwise") {
  Rng rng(88);
  const long C = 4, hidden = 8, h = 2, w = 4;
  ParamStore<double> store;
  FFNLayer<double> ffn({C, hidden, FFNKind::ConvFFN}, "ffn", store, rng);
  auto x = randn({1, h * w, C}, 89);
  GraphT<double> g(&store);
  auto y = ffn.forward(g.leaf(x), h, w);

  auto x1 = kernels::linear(x, store[ffn.fc1_w].value, store[ffn.fc1_b].value);
  auto sp = kernels::permute(x1.reshaped({1, h, w, hidden}), {0, 3, 1, 2});
  auto ds = oracle::depthwise_conv2d(sp, store[ffn.ds_w].value, store[ffn.ds_b].value, 1, 1);
  auto back = kernels::permute(ds, {0, 2, 3, 1}).reshaped({1, h * w, hidden});
  auto expect =
      kernels::linear(kernels::gelu(back), store[ffn.fc2_w].value, store[ffn.fc2_b].value);
  CHECK(max_abs_diff(y.val(), expect) < 1e-12);
}

TEST_CASE("ffn validates hidden >= dim and token count") {
  CHECK_THROWS_AS(FFNConfig({8, 4, FFNKind::Plain}).validate(), ConfigError);
  Rng rng(90);
  ParamStore<double> store;
  FFNLayer<double> ffn({4, 8, FFNKind::Plain}, "ffn", store, rng);
  GraphT<double> g(&store);
  auto x = g.leaf(randn({1, 9, 4}, 91));
  CHECK_THROWS_AS(ffn.forward(x, 2, 4), ShapeError);
}

TEST_CASE("block with zeroed weights is the identity map") {
  Rng rng(92);
  BlockConfig cfg;
  cfg.attn = {8, 2, {1, 2}};
  cfg.ffn = {8, 16, FFNKind::DetailSpecific};
  ParamStore<double> store;
  Block<double> block(cfg, "stage1.block0", store, rng);
  // zero everything except norm gammas: both residual branches then emit 0
  for (auto& p : store.all())
    if (p.name.find(".gamma") == std::string::npos) p.value.set_zero();
  auto x = randn({2, 16, 8}, 93);
  GraphT<double> g(&store);
  auto y = block.forward(g.leaf(x), 4, 4);
  CHECK(max_abs_diff(y.val(), x) == 0.0);
}

TEST_CASE("block output shape equals input shape") {
  Rng rng(94);
  BlockConfig cfg;
  cfg.attn = {8, 2, {2, 2}};
  cfg.ffn = {8, 16, FFNKind::ConvFFN};
  ParamStore<double> store;
  Block<double> block(cfg, "stage1.block0", store, rng);
  auto x = randn({3, 16, 8}, 95);
  GraphT<double> g(&store);
  auto y = block.forward(g.leaf(x), 4, 4);
  CHECK(y.shape() == x.shape());
}

TEST_CASE("block gradient check stays under 1e-4") {
  auto report = run_gradcheck_preset("block", 1e-5, 3, 3);
  CHECK(report.pass(1e-4));
}

TEST_CASE("ffn gradient check stays under 1e-4") {
  auto report = run_gradcheck_preset("ffn", 1e-5, 3, 0);  // every element
  CHECK(report.pass(1e-4));
}

TEST_CASE("patch embed shapes for all kinds") {
  for (auto kind :
       {PatchEmbedKind::Shunted, PatchEmbedKind::NonOverlap, PatchEmbedKind::Overlap}) {
    Rng rng(96);
    PatchEmbedConfig cfg{kind, 3, 8, 1};
    ParamStore<double> store;
    PatchEmbed<double> stem(cfg, "patch_embed", store, rng);
    GraphT<double> g(&store);
    auto img = g.leaf(randn({2, 3, 64, 64}, 97, 0.5));
    long h = 0, w = 0;
    auto tokens = stem.forward(img, &h, &w);
    CHECK(tokens.shape() == std::vector<long>{2, 256, 8});
    CHECK(h == 16);
    CHECK(w == 16);
  }
}

TEST_CASE("patch embed rejects sizes not divisible by 4") {
  Rng rng(98);
  PatchEmbedConfig cfg{PatchEmbedKind::Shunted, 3, 8, 0};
  ParamStore<double> store;
  PatchEmbed<double> stem(cfg, "patch_embed", store, rng);
  GraphT<double> g(&store);
  auto img = g.leaf(randn({1, 3, 66, 64}, 99, 0.5));
  CHECK_THROWS_AS(stem.forward(img, nullptr, nullptr), ShapeError);
}

TEST_CASE("patch embed 224 input gives the stage-1 grid of the table") {
  Rng rng(100);
  PatchEmbedConfig cfg{PatchEmbedKind::Shunted, 3, 64, 2};
  ParamStore<float> store;
  PatchEmbed<float> stem(cfg, "patch_embed", store, rng);
  GraphT<float> g(&store);
  Rng rng2(101);
  auto img = g.leaf(random_normal<float>({1, 3, 224, 224}, rng2, 0.5));
  long h = 0, w = 0;
  auto tokens = stem.forward(img, &h, &w);
  CHECK(tokens.shape() == std::vector<long>{1, 3136, 64});
  CHECK(h == 56);
  CHECK(w == 56);
}

TEST_CASE("stage transition halves space and doubles width") {
  Rng rng(102);
  ParamStore<double> store;
  Transition<double> tr(4, "transition1", store, rng);
  auto x = randn({2, 36, 4}, 103);
  GraphT<double> g(&store);
  long h = 0, w = 0;
  auto y = tr.forward(g.leaf(x), 6, 6, &h, &w);
  CHECK(y.shape() == std::vector<long>{2, 9, 8});
  CHECK(h == 3);
  CHECK(w == 3);

  // token count drops exactly 4x
  CHECK(x.dim(1) / y.dim(1) == 4);

  auto odd = g.leaf(randn({2, 15, 4}, 104));
  CHECK_THROWS_AS(tr.forward(odd, 3, 5, nullptr, nullptr), ShapeError);
}

TEST_CASE("stage transition matches the conv oracle") {
  Rng rng(105);
  ParamStore<double> store;
  Transition<double> tr(3, "transition1", store, rng);
  auto x = randn({1, 16, 3}, 106);
  GraphT<double> g(&store);
  auto y = tr.forward(g.leaf(x), 4, 4, nullptr, nullptr);
  auto sp = kernels::permute(x.reshaped({1, 4, 4, 3}), {0, 3, 1, 2});
  auto conv = oracle::conv2d(sp, store[tr.conv_w].value, store[tr.conv_b].value, 2, 0);
  auto tokens = kernels::permute(conv, {0, 2, 3, 1}).reshaped({1, 4, 6});
  auto expect = oracle::layer_norm(tokens, store[tr.norm_g].value, store[tr.norm_b].value,
                                   1e-5);
  CHECK(max_abs_diff(y.val(), expect) < 1e-12);
}

TEST_CASE("all FFN and patch-embed kinds pass gradient checks") {
  for (auto kind : {FFNKind::Plain, FFNKind::ConvFFN, FFNKind::DetailSpecific}) {
    Rng rng(107 + static_cast<int>(kind));
    ParamStore<double> store;
    FFNLayer<double> ffn({6, 12, kind}, "ffn", store, rng);
    TensorT<double> x = randn({2, 12, 6}, 108);
    auto report = grad_check(
        store,
        [&](GraphT<double>& g) {
          auto y = ffn.forward(g.leaf(x), 3, 4);
          return sum_all(mul(y, y));
        },
        1e-5);
    CHECK(report.max_rel_err < 1e-4);
  }
  for (auto kind :
       {PatchEmbedKind::Shunted, PatchEmbedKind::NonOverlap, PatchEmbedKind::Overlap}) {
    Rng rng(110 + static_cast<int>(kind));
    ParamStore<double> store;
    PatchEmbed<double> stem({kind, 3, 6, 1}, "patch_embed", store, rng);
    TensorT<double> img = randn({1, 3, 8, 8}, 111, 0.5);
    auto report = grad_check(
        store,
        [&](GraphT<double>& g) {
          auto y = stem.forward(g.leaf(img), nullptr, nullptr);
          return sum_all(mul(y, y));
        },
        1e-5, 4, 13);
    CHECK(report.max_rel_err < 1e-4);
  }
}
