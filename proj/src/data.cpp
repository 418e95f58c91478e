#include "shunted/data.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "shunted/tensor_io.hpp"

namespace shunted {

namespace {

// Distractor color palette. The labeled small shape always renders white;
// both schemes are class-independent, so the global mean color carries no
// label signal.
constexpr std::array<std::array<float, 3>, 6> kPalette = {{
    {0.90f, 0.10f, 0.10f},
    {0.10f, 0.80f, 0.10f},
    {0.15f, 0.25f, 0.90f},
    {0.90f, 0.85f, 0.10f},
    {0.85f, 0.15f, 0.80f},
    {0.10f, 0.80f, 0.85f},
}};

constexpr std::array<float, 3> kSmallColor = {1.0f, 1.0f, 1.0f};

constexpr float kBackground = 0.5f;

struct Box {
  long y0 = 0, x0 = 0, size = 0;
  bool intersects(const Box& o) const {
    return y0 < o.y0 + o.size && o.y0 < y0 + size && x0 < o.x0 + o.size &&
           o.x0 < x0 + size;
  }
  long overlap_area(const Box& o) const {
    const long dy = std::min(y0 + size, o.y0 + o.size) - std::max(y0, o.y0);
    const long dx = std::min(x0 + size, o.x0 + o.size) - std::max(x0, o.x0);
    return dy > 0 && dx > 0 ? dy * dx : 0;
  }
};

// kinds: 0 square, 1 circle (disc), 2 cross (diagonal X), 3 triangle (apex up)
bool shape_covers(int kind, long size, long py, long px) {
  const double c = (size - 1) / 2.0;
  const double dy = py - c, dx = px - c;
  switch (kind) {
    case 0:
      return true;
    case 1: {
      const double r = size / 2.0 - 0.15;
      return dy * dy + dx * dx <= r * r;
    }
    case 2: {
      const double t = size / 6.0;
      return std::abs(dx - dy) <= t || std::abs(dx + dy) <= t;
    }
    default: {
      const double halfw = (py + 1) / 2.0;
      return std::abs(dx) <= halfw;
    }
  }
}

void draw_shape(float* img, long S, int kind, const Box& box,
                const std::array<float, 3>& color) {
  for (long py = 0; py < box.size; ++py)
    for (long px = 0; px < box.size; ++px) {
      if (!shape_covers(kind, box.size, py, px)) continue;
      const long y = box.y0 + py, x = box.x0 + px;
      for (long ch = 0; ch < 3; ++ch) img[(ch * S + y) * S + x] = color[ch];
    }
}

// Fixed draw recipe; the RNG consumption order below is part of the format.
void render_image(const DatasetSpec& spec, int label, Rng& rng, float* img) {
  const long S = spec.image_size;
  std::fill(img, img + 3 * S * S, kBackground);
  if (spec.noise_std > 0) {
    for (long i = 0; i < 3 * S * S; ++i) {
      float v = img[i] + static_cast<float>(rng.normal(0.0, spec.noise_std));
      img[i] = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    }
  }
  if (!spec.draw_shapes) return;

  const int large_kind = static_cast<int>(rng.uniform_int(0, 3));
  const auto& large_color = kPalette[static_cast<std::size_t>(rng.uniform_int(0, 5))];
  Box large;
  large.size = rng.uniform_int(spec.large_min, spec.large_max);
  large.y0 = rng.uniform_int(0, S - large.size);
  large.x0 = rng.uniform_int(0, S - large.size);
  draw_shape(img, S, large_kind, large, large_color);

  Box small;
  small.size = rng.uniform_int(spec.small_min, spec.small_max);
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    small.y0 = rng.uniform_int(0, S - small.size);
    small.x0 = rng.uniform_int(0, S - small.size);
    placed = !small.intersects(large);
  }
  if (!placed) {
    // Fall back to the corner least covered by the distractor. The small
    // shape is drawn last either way, so it is never occluded.
    const long m = small.size;
    const Box corners[4] = {{0, 0, m},
                            {0, S - m, m},
                            {S - m, 0, m},
                            {S - m, S - m, m}};
    long best = 0;
    for (int i = 1; i < 4; ++i)
      if (corners[i].overlap_area(large) < corners[best].overlap_area(large)) best = i;
    small = corners[best];
  }
  draw_shape(img, S, label, small, kSmallColor);
}

Dataset generate_split(const DatasetSpec& spec, long count, std::uint64_t stream) {
  Dataset set;
  const long S = spec.image_size;
  set.images = Tensor({count, 3, S, S});
  set.labels.resize(static_cast<std::size_t>(count));
  const std::uint64_t split_seed = derive_seed(spec.seed, stream);
  for (long i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % spec.num_classes);
    set.labels[static_cast<std::size_t>(i)] = label;
    Rng rng(derive_seed(split_seed, static_cast<std::uint64_t>(i)));
    render_image(spec, label, rng, set.images.data() + i * 3 * S * S);
  }
  return set;
}

}  // namespace

Tensor Dataset::image(long i) const {
  const long S = image_size();
  Tensor out({3, S, S});
  std::copy(images.data() + i * 3 * S * S, images.data() + (i + 1) * 3 * S * S,
            out.data());
  return out;
}

std::pair<Dataset, Dataset> generate(const DatasetSpec& spec) {
  spec.validate();
  return {generate_split(spec, spec.train_count, 1), generate_split(spec, spec.test_count, 2)};
}

void save_set(const Dataset& set, const std::string& dir, const std::string& split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_sten(set.images, dir + "/" + split + "_images.sten");
  Tensor labels({set.size()});
  for (long i = 0; i < set.size(); ++i) labels[i] = static_cast<float>(set.labels[i]);
  save_sten(labels, dir + "/" + split + "_labels.sten");
}

Dataset load_set(const std::string& dir, const std::string& split) {
  Dataset set;
  set.images = load_sten<float>(dir + "/" + split + "_images.sten");
  if (set.images.ndim() != 4 || set.images.dim(1) != 3)
    throw IOError("dataset: expected [count,3,S,S] images in " + dir, 0);
  Tensor labels = load_sten<float>(dir + "/" + split + "_labels.sten");
  if (labels.ndim() != 1 || labels.dim(0) != set.images.dim(0))
    throw IOError("dataset: label count does not match image count in " + dir, 0);
  set.labels.resize(static_cast<std::size_t>(labels.numel()));
  for (long i = 0; i < labels.numel(); ++i)
    set.labels[static_cast<std::size_t>(i)] = static_cast<int>(labels[i]);
  return set;
}

void save_dataset(const DatasetSpec& spec, const Dataset& train, const Dataset& test,
                  const std::string& dir, int preview_count) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_set(train, dir, "train");
  save_set(test, dir, "test");
  nlohmann::json manifest = {
      {"format", "shapes-v1"},
      {"image_size", spec.image_size},
      {"num_classes", spec.num_classes},
      {"train_count", spec.train_count},
      {"test_count", spec.test_count},
      {"large_min", spec.large_min},
      {"large_max", spec.large_max},
      {"small_min", spec.small_min},
      {"small_max", spec.small_max},
      {"noise_std", spec.noise_std},
      {"seed", spec.seed},
      {"draw_shapes", spec.draw_shapes},
  };
  std::ofstream out(dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
  for (int i = 0; i < preview_count && i < train.size(); ++i)
    export_ppm(train.image(i), dir + "/preview_" + std::to_string(i) + "_class" +
                                   std::to_string(train.labels[static_cast<std::size_t>(i)]) +
                                   ".ppm");
}

DatasetSpec load_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IOError("dataset: missing manifest.json in " + dir, 0);
  nlohmann::json j;
  in >> j;
  DatasetSpec spec;
  spec.image_size = j.at("image_size").get<long>();
  spec.num_classes = j.at("num_classes").get<long>();
  spec.train_count = j.at("train_count").get<long>();
  spec.test_count = j.at("test_count").get<long>();
  spec.large_min = j.at("large_min").get<long>();
  spec.large_max = j.at("large_max").get<long>();
  spec.small_min = j.at("small_min").get<long>();
  spec.small_max = j.at("small_max").get<long>();
  spec.noise_std = j.at("noise_std").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.draw_shapes = j.value("draw_shapes", true);
  return spec;
}

void export_ppm(const Tensor& image, const std::string& path) { write_ppm(image, path); }

}  // namespace shunted
