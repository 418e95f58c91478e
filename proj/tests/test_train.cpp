#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "shunted/train.hpp"

using namespace shunted;

namespace {

std::string tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

Dataset tiny_dataset(long count, std::uint64_t seed) {
  DatasetSpec spec;
  spec.train_count = count;
  spec.test_count = 0;
  spec.seed = seed;
  auto [train, test] = generate(spec);
  return std::move(train);
}

}  // namespace

TEST_CASE("lr schedule: warmup endpoints and cosine tail") {
  OptimConfig cfg;
  cfg.lr = 2e-3;
  cfg.warmup_steps = 10;
  cfg.total_steps = 110;
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(5, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(10, cfg) == doctest::Approx(2e-3).epsilon(1e-15));  // exactly lr at warmup
  CHECK(lr_at(60, cfg) == doctest::Approx(1e-3).epsilon(1e-12));  // cosine midpoint
  CHECK(lr_at(110, cfg) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(200, cfg) == 0.0);

  cfg.warmup_steps = 0;
  CHECK(lr_at(0, cfg) == doctest::Approx(2e-3));

  cfg.warmup_steps = 200;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("adamw: zero gradients and zero decay leave parameters unchanged") {
  ParamStore<double> params;
  Rng rng(1);
  params.add("w", random_normal<double>({4, 4}, rng));
  AdamState<double> state;
  state.init(params);
  OptimConfig cfg;
  cfg.weight_decay = 0.0;
  auto before = params[0].value;
  adamw_step(params, state, cfg, 1e-3);
  CHECK(params[0].value.bitwise_equal(before));
}

TEST_CASE("adamw matches the literal formula transcription per step") {
  Rng rng(2);
  ParamStore<double> params;
  params.add("w", random_normal<double>({6}, rng));
  AdamState<double> state;
  state.init(params);
  OptimConfig cfg;
  cfg.lr = 3e-3;
  cfg.weight_decay = 0.05;

  std::vector<double> theta(params[0].value.vec().begin(), params[0].value.vec().end());
  std::vector<double> m(6, 0.0), v(6, 0.0);
  for (long t = 1; t <= 7; ++t) {
    auto grad = random_normal<double>({6}, rng);
    params[0].grad = grad;
    adamw_step(params, state, cfg, cfg.lr);
    params.zero_grads();
    std::vector<double> gref(grad.vec().begin(), grad.vec().end());
    oracle::adamw_reference(theta, gref, m, v, t, cfg.lr, 0.9, 0.999, 1e-8, 0.05);
    for (long i = 0; i < 6; ++i)
      CHECK(params[0].value[i] == doctest::Approx(theta[i]).epsilon(1e-12));
  }
}

TEST_CASE("adamw excludes no-decay parameters from weight decay") {
  ParamStore<double> params;
  params.add("w", TensorT<double>::full({1}, 1.0), true);
  params.add("b", TensorT<double>::full({1}, 1.0), false);
  AdamState<double> state;
  state.init(params);
  OptimConfig cfg;
  cfg.weight_decay = 0.5;
  adamw_step(params, state, cfg, 0.1);  // zero grads: only decay acts
  CHECK(params[0].value[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  CHECK(params[1].value[0] == 1.0);
}

TEST_CASE("adamw drives a scalar quadratic to its minimum within 1e-3") {
  ParamStore<double> params;
  params.add("theta", TensorT<double>::scalar(0.0));
  AdamState<double> state;
  state.init(params);
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 0;
  cfg.total_steps = 200;
  for (long step = 0; step < 200; ++step) {
    // loss = (theta - 3)^2, gradient = 2*(theta - 3)
    params[0].grad[0] = 2.0 * (params[0].value[0] - 3.0);
    adamw_step(params, state, cfg, lr_at(step, cfg));
    params.zero_grads();
  }
  CHECK(params[0].value[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("evaluate: perfect and uniform logit models") {
  // a fake model is impractical here; instead check the contract through a
  // real desk model against itself on argmax-consistent data is expensive.
  // Use a crafted two-image set with a model whose head bias forces the
  // answer.
  auto cfg = variant(Variant::Desk);
  auto model = Model<float>::build(cfg, 1);
  // zero the head weight, steer with bias: logits constant per class
  model.params[model.head_w].value.set_zero();
  auto& bias = model.params[model.head_b].value;
  Dataset data = tiny_dataset(16, 42);

  bias.set_zero();
  bias[2] = 10.f;  // always predict class 2
  auto [acc_c2, loss_c2] = evaluate(model, data, 5);
  CHECK(acc_c2 == doctest::Approx(0.25).epsilon(1e-12));  // balanced labels

  bias.set_zero();  // uniform logits: argmax ties resolve to class 0
  auto [acc_u, loss_u] = evaluate(model, data, 5);
  CHECK(acc_u == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(loss_u == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("evaluate accuracy is invariant under batch size") {
  auto cfg = variant(Variant::Desk);
  auto model = Model<float>::build(cfg, 7);
  Dataset data = tiny_dataset(33, 43);
  auto [acc1, loss1] = evaluate(model, data, 1);
  auto [acc7, loss7] = evaluate(model, data, 7);
  auto [acc64, loss64] = evaluate(model, data, 64);
  CHECK(acc1 == acc7);
  CHECK(acc7 == acc64);
  CHECK(loss1 == doctest::Approx(loss7).epsilon(1e-6));
}

TEST_CASE("train loop: deterministic per seed, loss trace reproducible") {
  DatasetSpec spec;
  spec.train_count = 96;
  spec.test_count = 16;
  spec.seed = 11;
  auto [train, test] = generate(spec);
  auto cfg = variant(Variant::Desk);

  TrainOptions opts;
  opts.epochs = 2;
  opts.optim.batch_size = 32;
  opts.optim.seed = 5;
  opts.optim.warmup_steps = 2;

  auto m1 = Model<float>::build(cfg, 1);
  auto m2 = Model<float>::build(cfg, 1);
  auto r1 = train_loop(m1, train, test, opts);
  auto r2 = train_loop(m2, train, test, opts);
  REQUIRE(r1.steps.size() == r2.steps.size());
  for (std::size_t i = 0; i < r1.steps.size(); ++i) {
    CHECK(r1.steps[i].loss == r2.steps[i].loss);  // bitwise
    CHECK(r1.steps[i].lr == lr_at(static_cast<long>(i), [&] {
            OptimConfig oc = opts.optim;
            oc.total_steps = static_cast<long>(r1.steps.size());
            return oc;
          }()));
  }
  for (std::size_t i = 0; i < m1.params.size(); ++i)
    CHECK(m1.params[static_cast<int>(i)].value.bitwise_equal(
        m2.params[static_cast<int>(i)].value));
}

TEST_CASE("checkpoint resume continues bitwise identically") {
  DatasetSpec spec;
  spec.train_count = 96;
  spec.test_count = 16;
  spec.seed = 12;
  auto [train, test] = generate(spec);
  auto cfg = variant(Variant::Desk);

  const std::string dir_full = tmp_dir("train_full");
  const std::string dir_part = tmp_dir("train_part");

  TrainOptions opts;
  opts.epochs = 4;
  opts.optim.batch_size = 32;
  opts.optim.seed = 9;
  opts.optim.warmup_steps = 2;
  opts.optim.total_steps = 12;  // 3 steps/epoch * 4 epochs

  auto full = Model<float>::build(cfg, 2);
  opts.out_dir = dir_full;
  auto rfull = train_loop(full, train, test, opts);

  auto part = Model<float>::build(cfg, 2);
  TrainOptions opts2 = opts;
  opts2.epochs = 2;
  opts2.out_dir = dir_part;
  train_loop(part, train, test, opts2);

  // resume from the 2-epoch checkpoint and run the remaining epochs
  auto resumed = Model<float>::build(cfg, 3);  // different init, overwritten by load
  AdamState<float> state;
  const long done = load_train_checkpoint(resumed, state, dir_part + "/checkpoint.sckp");
  CHECK(done == 2);
  TrainOptions opts3 = opts;
  opts3.start_epoch = done;
  opts3.out_dir = dir_part;
  auto rrest = train_loop(resumed, train, test, opts3, &state);

  // the tail of the full run equals the resumed run, bitwise
  REQUIRE(rfull.steps.size() == 12);
  REQUIRE(rrest.steps.size() == 6);
  for (std::size_t i = 0; i < rrest.steps.size(); ++i)
    CHECK(rrest.steps[i].loss == rfull.steps[i + 6].loss);
  for (std::size_t i = 0; i < full.params.size(); ++i)
    CHECK(full.params[static_cast<int>(i)].value.bitwise_equal(
        resumed.params[static_cast<int>(i)].value));

  // final checkpoint files agree byte-for-byte
  std::ifstream a(dir_full + "/checkpoint.sckp", std::ios::binary);
  std::ifstream b(dir_part + "/checkpoint.sckp", std::ios::binary);
  std::string abytes((std::istreambuf_iterator<char>(a)), {});
  std::string bbytes((std::istreambuf_iterator<char>(b)), {});
  CHECK(abytes == bbytes);
}

TEST_CASE("checkpoint round-trip preserves moments bitwise") {
  DatasetSpec spec;
  spec.train_count = 32;
  spec.test_count = 8;
  spec.seed = 13;
  auto [train, test] = generate(spec);
  auto cfg = variant(Variant::Desk);
  auto model = Model<float>::build(cfg, 4);
  TrainOptions opts;
  opts.epochs = 1;
  opts.optim.batch_size = 32;
  opts.optim.seed = 1;
  const std::string dir = tmp_dir("train_ckpt");
  opts.out_dir = dir;
  AdamState<float> state;
  state.init(model.params);
  train_loop(model, train, test, opts, &state);

  auto loaded = Model<float>::build(cfg, 5);
  AdamState<float> state2;
  load_train_checkpoint(loaded, state2, dir + "/checkpoint.sckp");
  CHECK(state2.step == state.step);
  REQUIRE(state2.m.size() == state.m.size());
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    CHECK(state2.m[i].bitwise_equal(state.m[i]));
    CHECK(state2.v[i].bitwise_equal(state.v[i]));
  }
}

TEST_CASE("train loop rejects labels outside the model's classes") {
  Dataset bad = tiny_dataset(8, 3);
  bad.labels[3] = 9;
  auto cfg = variant(Variant::Desk);
  auto model = Model<float>::build(cfg, 1);
  TrainOptions opts;
  opts.epochs = 1;
  CHECK_THROWS_AS(train_loop(model, bad, bad, opts), ConfigError);
}

TEST_CASE("training reduces the loss on a small overfit set") {
  DatasetSpec spec;
  spec.train_count = 64;
  spec.test_count = 16;
  spec.seed = 21;
  auto [train, test] = generate(spec);
  auto cfg = variant(Variant::Desk);
  auto model = Model<float>::build(cfg, 6);
  TrainOptions opts;
  opts.epochs = 6;
  opts.optim.batch_size = 32;
  opts.optim.seed = 2;
  opts.optim.warmup_steps = 2;
  auto result = train_loop(model, train, test, opts);
  const float first = result.steps.front().loss;
  const float last = result.steps.back().loss;
  CHECK(last < first);
  CHECK(last < std::log(4.0f));
}
