// Command-line front end: dataset generation, training, evaluation, gradient
// checks, cost reports, shape audits and attention-map export. Outputs are
// files and tables; every run echoes its resolved configuration as JSON to
// stderr. Exit codes: 0 success, 1 assertion failure, 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "shunted/config_json.hpp"
#include "shunted/cost.hpp"
#include "shunted/data.hpp"
#include "shunted/gradcheck.hpp"
#include "shunted/train.hpp"

using namespace shunted;
using nlohmann::json;

namespace {

void echo_config(const json& j) { std::cerr << j.dump() << "\n"; }

json load_meta(const std::string& checkpoint_path) {
  std::ifstream in(checkpoint_path + ".meta.json");
  if (!in)
    throw ConfigError("missing meta sidecar " + checkpoint_path +
                      ".meta.json (needed to reconstruct the model)");
  json j;
  in >> j;
  return j;
}

Model<float> open_checkpoint(const std::string& path) {
  const json meta = load_meta(path);
  ModelConfig cfg = model_config_from_json(meta.at("model_config"));
  Model<float> model = Model<float>::build(cfg, 0);
  load_checkpoint(model, path);
  return model;
}

int run_gradcheck(const std::string& preset, double eps, std::uint64_t seed,
                  long samples) {
  echo_config({{"command", "gradcheck"},
               {"preset", preset},
               {"eps", eps},
               {"seed", seed},
               {"samples_per_param", samples},
               {"threshold", 1e-4}});
  GradCheckReport report = run_gradcheck_preset(preset, eps, seed, samples);
  std::cout << "gradcheck preset=" << preset << " eps=" << eps << "\n";
  std::cout << std::left << std::setw(40) << "parameter" << std::setw(16)
            << "max_rel_err" << "checked\n";
  for (const auto& e : report.per_param)
    std::cout << std::left << std::setw(40) << e.name << std::setw(16)
              << e.max_rel_err << e.elements_checked << "\n";
  std::cout << "worst " << report.max_rel_err << " threshold 0.0001 -> "
            << (report.pass(1e-4) ? "PASS" : "FAIL") << "\n";
  return report.pass(1e-4) ? 0 : 1;
}

int run_report(const std::string& variant_name, long input_size,
               const std::string& format) {
  ModelConfig cfg = variant(variant_name);
  cfg.input_h = cfg.input_w = input_size;
  echo_config({{"command", "report"},
               {"variant", variant_name},
               {"input_size", input_size},
               {"format", format},
               {"model_config", to_json(cfg)}});
  CostReport r = count_params(cfg);
  estimate_flops(cfg, input_size, input_size, r);

  // analytic count must equal exact enumeration
  Model<float> model = Model<float>::build(cfg, 0);
  const long long enumerated = model.params.total_elements();
  const bool match = enumerated == r.total_params;

  const PaperReference ref = paper_reference(cfg.name);
  if (format == "json") {
    json by_params = json::object(), by_macs = json::object(), by_flops = json::object();
    for (auto& [p, n] : r.params_by_path) by_params[p] = n;
    for (auto& [p, n] : r.macs_by_path) by_macs[p] = n;
    for (auto& [p, n] : r.flops_by_path) by_flops[p] = n;
    json out = {{"variant", cfg.name},
                {"input_size", input_size},
                {"total_params", r.total_params},
                {"enumerated_params", enumerated},
                {"analytic_matches_enumeration", match},
                {"total_macs", r.total_macs},
                {"total_flops_mac_only", 2 * r.total_macs},
                {"total_flops_full", r.total_flops},
                {"params_by_path", by_params},
                {"macs_by_path", by_macs},
                {"flops_by_path", by_flops}};
    if (ref.params_m > 0)
      out["paper"] = {{"params_m", ref.params_m}, {"flops_g", ref.flops_g}};
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "variant " << cfg.name << " at " << input_size << "x" << input_size
              << "\n\n";
    std::cout << std::left << std::setw(28) << "layer" << std::right << std::setw(14)
              << "params" << std::setw(16) << "macs" << "\n";
    for (std::size_t i = 0; i < r.macs_by_path.size(); ++i) {
      const auto& [path, macs] = r.macs_by_path[i];
      long long params = 0;
      for (auto& [pp, n] : r.params_by_path)
        if (pp == path || path.rfind(pp + ".", 0) == 0) params = n;
      std::cout << std::left << std::setw(28) << path << std::right << std::setw(14)
                << params << std::setw(16) << macs << "\n";
    }
    std::cout << "\n";
    std::cout << "total params      " << r.total_params << " ("
              << std::setprecision(4) << r.total_params / 1e6 << "M)\n";
    std::cout << "total macs        " << r.total_macs << " (" << r.total_macs / 1e9
              << "G, paper convention)\n";
    std::cout << "total flops full  " << r.total_flops << " (" << r.total_flops / 1e9
              << "G; 1 MAC = 2 FLOPs plus per-element costs)\n";
    std::cout << "analytic vs enumerated params: " << r.total_params << " vs "
              << enumerated << (match ? " (equal)" : " (MISMATCH)") << "\n";
    if (ref.params_m > 0) {
      std::cout << "\n" << std::left << std::setw(12) << "" << std::setw(14)
                << "computed" << std::setw(14) << "paper" << "diff\n";
      const double pm = r.total_params / 1e6;
      const double fg = r.total_macs / 1e9;
      std::cout << std::left << std::setw(12) << "params (M)" << std::setw(14) << pm
                << std::setw(14) << ref.params_m
                << 100.0 * (pm - ref.params_m) / ref.params_m << "%\n";
      std::cout << std::left << std::setw(12) << "flops (G)" << std::setw(14) << fg
                << std::setw(14) << ref.flops_g
                << 100.0 * (fg - ref.flops_g) / ref.flops_g << "%\n";
    }
  }
  return match ? 0 : 1;
}

int run_gen_data(const std::string& out_dir, long size, long train_count, long test_count,
                 std::uint64_t seed, double noise_std) {
  DatasetSpec spec;
  spec.image_size = size;
  spec.train_count = train_count;
  spec.test_count = test_count;
  spec.seed = seed;
  spec.noise_std = noise_std;
  echo_config({{"command", "gen-data"},
               {"out", out_dir},
               {"size", size},
               {"train", train_count},
               {"test", test_count},
               {"seed", seed},
               {"noise_std", noise_std}});
  spec.validate();
  auto [train, test] = generate(spec);
  save_dataset(spec, train, test, out_dir, 8);
  std::cout << "wrote " << train.size() << " train / " << test.size() << " test images to "
            << out_dir << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& variant_name,
              const std::string& rates_name, long epochs, long batch, std::uint64_t seed,
              const std::string& out_dir, double lr) {
  const DatasetSpec manifest = load_manifest(data_dir);
  ModelConfig cfg = with_rates_mode(variant(variant_name), parse_rates_mode(rates_name));
  cfg.num_classes = manifest.num_classes;
  cfg.input_h = cfg.input_w = manifest.image_size;
  TrainOptions opts;
  opts.epochs = epochs;
  opts.optim.batch_size = batch;
  opts.optim.seed = seed;
  opts.optim.lr = lr;
  opts.out_dir = out_dir;
  opts.log_stderr = true;
  const long steps_per_epoch = (manifest.train_count + batch - 1) / batch;
  opts.optim.total_steps = steps_per_epoch * epochs;
  opts.optim.warmup_steps = std::max(1L, opts.optim.total_steps / 20);
  echo_config({{"command", "train"},
               {"data", data_dir},
               {"rates", rates_name},
               {"epochs", epochs},
               {"batch", batch},
               {"seed", seed},
               {"lr", lr},
               {"out", out_dir},
               {"warmup_steps", opts.optim.warmup_steps},
               {"total_steps", opts.optim.total_steps},
               {"model_config", to_json(cfg)}});
  Dataset train = load_set(data_dir, "train");
  Dataset test = load_set(data_dir, "test");
  Model<float> model = Model<float>::build(cfg, seed);
  TrainResult result = train_loop(model, train, test, opts);
  std::cout << "final test accuracy " << result.final_accuracy << " loss "
            << result.final_test_loss << "\n";
  std::cout << "checkpoint " << out_dir << "/checkpoint.sckp\n";
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& checkpoint, long batch) {
  echo_config(
      {{"command", "eval"}, {"data", data_dir}, {"checkpoint", checkpoint}, {"batch", batch}});
  Model<float> model = open_checkpoint(checkpoint);
  Dataset test = load_set(data_dir, "test");
  auto [acc, loss] = evaluate(model, test, batch);
  std::cout << "test accuracy " << acc << " mean loss " << loss << "\n";
  return 0;
}

int run_attnmap(const std::string& checkpoint, const std::string& image_path,
                const std::string& out_dir) {
  echo_config({{"command", "attnmap"},
               {"checkpoint", checkpoint},
               {"image", image_path},
               {"out", out_dir}});
  Model<float> model = open_checkpoint(checkpoint);
  Tensor image = load_sten<float>(image_path);
  if (image.ndim() == 3) image = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.ndim() != 4 || image.dim(0) != 1)
    throw ConfigError("attnmap: expected one [3,S,S] image, got " +
                      shape_to_string(image.shape()));
  std::filesystem::create_directories(out_dir);
  normalize_images_inplace(image);
  Graph g(&model.params);
  ModelAttnCapture<float> capture;
  model.forward(g, image, &capture);
  bool all_stochastic = true;
  long files = 0;
  for (const auto& [block_path, maps] : capture.blocks) {
    for (std::size_t h = 0; h < maps.size(); ++h) {
      const auto& m = maps[h];  // [1, N, Ng]
      const long N = m.dim(1), Ng = m.dim(2);
      Tensor flat({N, Ng});
      std::copy(m.data(), m.data() + N * Ng, flat.data());
      for (long r = 0; r < N; ++r) {
        double sum = 0;
        for (long c = 0; c < Ng; ++c) sum += flat(r, c);
        if (std::abs(sum - 1.0) > 1e-4) all_stochastic = false;
      }
      const std::string stem = out_dir + "/" + block_path + ".head" + std::to_string(h);
      write_pgm_row_scaled(flat, stem + ".pgm");
      write_csv(flat, stem + ".csv");
      files += 2;
    }
  }
  std::cout << "wrote " << files << " files for " << capture.blocks.size()
            << " blocks; row-stochastic check "
            << (all_stochastic ? "PASS" : "FAIL") << "\n";
  return all_stochastic ? 0 : 1;
}

int run_shapes(const std::string& variant_name, long input_size) {
  ModelConfig cfg = variant(variant_name);
  cfg.input_h = cfg.input_w = input_size;
  echo_config(
      {{"command", "shapes"}, {"variant", variant_name}, {"input_size", input_size}});
  cfg.validate();
  auto analytic = shape_trail(cfg, input_size, input_size);

  // audit with a real forward pass
  Model<float> model = Model<float>::build(cfg, 0);
  Rng rng(1);
  auto img = random_uniform<float>({1, 3, input_size, input_size}, rng, 0, 1);
  Graph g(&model.params);
  std::vector<StageShape> actual;
  model.forward(g, img, nullptr, &actual);

  std::cout << "input " << input_size << "x" << input_size << "x3\n";
  bool ok = actual.size() == analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const auto& a = analytic[i];
    std::cout << "stage " << a.stage << ": " << a.h << "x" << a.w << "x" << a.dim << " ("
              << a.tokens << " tokens)";
    if (ok && (actual[i].h != a.h || actual[i].w != a.w || actual[i].dim != a.dim ||
               actual[i].tokens != a.tokens))
      ok = false;
    std::cout << (ok ? "" : "  [AUDIT MISMATCH]") << "\n";
  }
  std::cout << "forward audit " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator_for_training();
  CLI::App app{"Shunted Transformer library CLI"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (1 = deterministic)");

  std::string preset = "desk", variant_name = "desk", format = "text";
  double eps = 1e-5, noise_std = 0.05, lr = 1e-3;
  std::uint64_t seed = 1;
  long samples = 4, input_size = 224, size = 64, train_count = 2000, test_count = 500;
  long epochs = 12, batch = 64;
  std::string out_dir, data_dir, checkpoint, image_path, rates_name = "mixed";

  auto* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  cmd_gradcheck->add_option("--preset", preset, "desk|block|ssa|ffn")->required();
  cmd_gradcheck->add_option("--eps", eps, "finite-difference step");
  cmd_gradcheck->add_option("--seed", seed, "rng seed");
  cmd_gradcheck->add_option("--samples", samples, "elements checked per parameter");

  auto* cmd_report = app.add_subcommand("report", "parameter/FLOP cost report");
  cmd_report->add_option("--variant", variant_name, "tiny|small|base|desk")->required();
  cmd_report->add_option("--input-size", input_size, "square input resolution");
  cmd_report->add_option("--format", format, "json|text");

  auto* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic shapes corpus");
  cmd_gen->add_option("--out", out_dir, "output directory")->required();
  cmd_gen->add_option("--size", size, "image side length");
  cmd_gen->add_option("--train", train_count, "training images");
  cmd_gen->add_option("--test", test_count, "test images");
  cmd_gen->add_option("--seed", seed, "rng seed");
  cmd_gen->add_option("--noise-std", noise_std, "gaussian pixel noise");

  auto* cmd_train = app.add_subcommand("train", "train a model on a generated corpus");
  cmd_train->add_option("--data", data_dir, "dataset directory")->required();
  cmd_train->add_option("--variant", variant_name, "model variant");
  cmd_train->add_option("--rates", rates_name, "mixed|uniform-coarse|uniform-fine");
  cmd_train->add_option("--epochs", epochs, "training epochs");
  cmd_train->add_option("--batch", batch, "batch size");
  cmd_train->add_option("--seed", seed, "seed for init, shuffling");
  cmd_train->add_option("--out", out_dir, "output directory")->required();
  cmd_train->add_option("--lr", lr, "peak learning rate");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  cmd_eval->add_option("--data", data_dir, "dataset directory")->required();
  cmd_eval->add_option("--checkpoint", checkpoint, "SCKP checkpoint")->required();
  cmd_eval->add_option("--batch", batch, "batch size");

  auto* cmd_attn = app.add_subcommand("attnmap", "export attention maps as PGM/CSV");
  cmd_attn->add_option("--checkpoint", checkpoint, "SCKP checkpoint")->required();
  cmd_attn->add_option("--image", image_path, "input image STEN [3,S,S]")->required();
  cmd_attn->add_option("--out", out_dir, "output directory")->required();

  auto* cmd_shapes = app.add_subcommand("shapes", "print and audit the stage shape trail");
  cmd_shapes->add_option("--variant", variant_name, "tiny|small|base|desk")->required();
  cmd_shapes->add_option("--input-size", input_size, "square input resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  set_num_threads(threads);

  try {
    if (cmd_gradcheck->parsed()) return run_gradcheck(preset, eps, seed, samples);
    if (cmd_report->parsed()) return run_report(variant_name, input_size, format);
    if (cmd_gen->parsed())
      return run_gen_data(out_dir, size, train_count, test_count, seed, noise_std);
    if (cmd_train->parsed())
      return run_train(data_dir, variant_name, rates_name, epochs, batch, seed, out_dir,
                       lr);
    if (cmd_eval->parsed()) return run_eval(data_dir, checkpoint, batch);
    if (cmd_attn->parsed()) return run_attnmap(checkpoint, image_path, out_dir);
    if (cmd_shapes->parsed()) return run_shapes(variant_name, input_size);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IOError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
