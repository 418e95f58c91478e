#include "shunted/train.hpp"

#include <filesystem>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "shunted/config_json.hpp"
#include "shunted/ops.hpp"

namespace shunted {

void save_train_checkpoint(const Model<float>& model, const AdamState<float>& state,
                           long completed_epochs, const std::string& path) {
  std::vector<std::pair<std::string, const TensorT<float>*>> extra;
  extra.reserve(2 * state.m.size());
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    extra.emplace_back("opt.m." + model.params[static_cast<int>(i)].name, &state.m[i]);
    extra.emplace_back("opt.v." + model.params[static_cast<int>(i)].name, &state.v[i]);
  }
  save_checkpoint(model, path, extra);
  nlohmann::json meta = {{"completed_epochs", completed_epochs},
                         {"step", state.step},
                         {"params", model.params.size()},
                         {"model_config", to_json(model.cfg)}};
  std::ofstream out(path + ".meta.json");
  out << meta.dump(2) << "\n";
}

long load_train_checkpoint(Model<float>& model, AdamState<float>& state,
                           const std::string& path) {
  load_checkpoint(model, path);
  state.init(model.params);
  auto entries = load_sckp<float>(path);
  std::size_t moments = 0;
  for (auto& [name, tensor] : entries) {
    const bool is_m = name.rfind("opt.m.", 0) == 0;
    const bool is_v = name.rfind("opt.v.", 0) == 0;
    if (!is_m && !is_v) continue;
    const int id = model.params.find(name.substr(6));
    if (id < 0) throw ConfigError("checkpoint: optimizer entry for unknown parameter '" +
                                  name + "'");
    if (tensor.shape() != model.params[id].value.shape())
      throw ShapeError("checkpoint: moment shape mismatch for '" + name + "'");
    (is_m ? state.m : state.v)[static_cast<std::size_t>(id)] = std::move(tensor);
    ++moments;
  }
  if (moments != 2 * model.params.size())
    throw ConfigError("checkpoint: incomplete optimizer state in " + path);
  std::ifstream meta_in(path + ".meta.json");
  if (!meta_in) throw IOError("checkpoint: missing meta sidecar for " + path, 0);
  nlohmann::json meta;
  meta_in >> meta;
  state.step = meta.at("step").get<long>();
  return meta.at("completed_epochs").get<long>();
}

TrainResult train_loop(Model<float>& model, const Dataset& train, const Dataset& test,
                       TrainOptions opts, AdamState<float>* resume_state) {
  if (train.size() == 0) throw ConfigError("train_loop: empty training set");
  for (int label : train.labels)
    if (label < 0 || label >= model.cfg.num_classes)
      throw ConfigError("train_loop: dataset label " + std::to_string(label) +
                        " outside model's " + std::to_string(model.cfg.num_classes) +
                        " classes");
  OptimConfig optim = opts.optim;
  const long steps_per_epoch =
      (train.size() + optim.batch_size - 1) / optim.batch_size;
  if (optim.total_steps == 0) optim.total_steps = steps_per_epoch * opts.epochs;
  optim.validate();

  AdamState<float> local_state;
  AdamState<float>& state = resume_state ? *resume_state : local_state;
  if (!resume_state) state.init(model.params);

  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    metrics.open(opts.out_dir + "/metrics.jsonl",
                 opts.start_epoch > 0 ? std::ios::app : std::ios::trunc);
  }

  TrainResult result;
  const long S = train.image_size();
  std::vector<long> order(static_cast<std::size_t>(train.size()));
  model.params.zero_grads();
  for (long epoch = opts.start_epoch; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(optim.seed, 0xe70c0 + static_cast<std::uint64_t>(epoch)));
    for (long i = train.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    for (long at = 0; at < train.size(); at += optim.batch_size) {
      const long bs = std::min(optim.batch_size, train.size() - at);
      Tensor batch({bs, 3, S, S});
      std::vector<int> labels(static_cast<std::size_t>(bs));
      for (long b = 0; b < bs; ++b) {
        const long src = order[static_cast<std::size_t>(at + b)];
        std::copy(train.images.data() + src * 3 * S * S,
                  train.images.data() + (src + 1) * 3 * S * S,
                  batch.data() + b * 3 * S * S);
        labels[static_cast<std::size_t>(b)] = train.labels[static_cast<std::size_t>(src)];
      }
      normalize_images_inplace(batch);
      Graph g(&model.params);
      Var logits = model.forward(g, batch);
      Var loss = cross_entropy(logits, labels, static_cast<float>(optim.label_smoothing));
      g.backward(loss);
      const double lr = lr_at(state.step, optim);
      adamw_step(model.params, state, optim, lr);
      model.params.zero_grads();
      result.steps.push_back({state.step - 1, lr, loss.val()[0]});
      detail::write_metrics_line(metrics, result.steps.back());
    }

    auto [acc, test_loss] = evaluate(model, test, optim.batch_size);
    result.epochs.push_back({epoch + 1, acc, test_loss});
    detail::write_metrics_line(metrics, result.epochs.back());
    if (opts.log_stderr)
      std::cerr << "epoch " << (epoch + 1) << "/" << opts.epochs
                << " test_acc=" << acc << " test_loss=" << test_loss << "\n";
    if (!opts.out_dir.empty())
      save_train_checkpoint(model, state, epoch + 1, opts.out_dir + "/checkpoint.sckp");
  }
  if (!result.epochs.empty()) {
    result.final_accuracy = result.epochs.back().test_accuracy;
    result.final_test_loss = result.epochs.back().test_loss;
  }
  return result;
}

}  // namespace shunted
