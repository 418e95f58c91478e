#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "shunted/tensor_io.hpp"

using namespace shunted;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class S>
TensorT<S> random_bits_tensor(std::vector<long> shape, Rng& rng) {
  TensorT<S> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) {
    // arbitrary bit patterns, including NaN payloads: round-trip must be
    // bitwise lossless regardless of value semantics
    if constexpr (sizeof(S) == 4) {
      auto bits = static_cast<std::uint32_t>(rng.next_u64());
      std::memcpy(&t[i], &bits, 4);
    } else {
      std::uint64_t bits = rng.next_u64();
      std::memcpy(&t[i], &bits, 8);
    }
  }
  return t;
}

}  // namespace

TEST_CASE("STEN round-trip is bitwise lossless over random shapes") {
  Rng rng(901);
  for (int trial = 0; trial < 40; ++trial) {
    const long nd = rng.uniform_int(0, 4);
    std::vector<long> shape;
    for (long d = 0; d < nd; ++d) shape.push_back(rng.uniform_int(0, 5));
    const std::string path = tmp_path("t.sten");
    if (trial % 2 == 0) {
      auto t = random_bits_tensor<float>(shape, rng);
      save_sten(t, path);
      CHECK(sten_dtype(path) == 0);
      CHECK(load_sten<float>(path).bitwise_equal(t));
    } else {
      auto t = random_bits_tensor<double>(shape, rng);
      save_sten(t, path);
      CHECK(sten_dtype(path) == 1);
      CHECK(load_sten<double>(path).bitwise_equal(t));
    }
  }
}

TEST_CASE("STEN header layout is exactly as specified") {
  const std::string path = tmp_path("hdr.sten");
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  save_sten(t, path);
  const std::string bytes = read_bytes(path);
  REQUIRE(bytes.size() == 8 + 16 + 24);
  CHECK(bytes.substr(0, 4) == "STEN");
  CHECK(bytes[4] == 1);   // version
  CHECK(bytes[5] == 0);   // float32
  CHECK(bytes[6] == 2);   // ndim
  CHECK(bytes[7] == 0);   // reserved
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);  // dim0 little-endian
  CHECK(static_cast<unsigned char>(bytes[16]) == 3);  // dim1
  float first;
  std::memcpy(&first, bytes.data() + 24, 4);
  CHECK(first == 1.0f);
}

TEST_CASE("STEN truncation reports the byte offset") {
  const std::string path = tmp_path("trunc.sten");
  auto t = Tensor::from({4}, {1, 2, 3, 4});
  save_sten(t, path);
  std::string bytes = read_bytes(path);

  write_bytes(path, bytes.substr(0, 6));  // cut inside the header
  try {
    load_sten<float>(path);
    FAIL("expected IOError");
  } catch (const IOError& e) {
    CHECK(e.byte_offset() == 6);
  }

  write_bytes(path, bytes.substr(0, bytes.size() - 5));  // cut inside payload
  try {
    load_sten<float>(path);
    FAIL("expected IOError");
  } catch (const IOError& e) {
    CHECK(e.byte_offset() == 16);  // payload start: dims promise more than remains
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

TEST_CASE("STEN header/payload mismatch and trailing bytes are errors") {
  const std::string path = tmp_path("mismatch.sten");
  auto t = Tensor::from({4}, {1, 2, 3, 4});
  save_sten(t, path);
  std::string bytes = read_bytes(path);
  bytes[8] = 5;  // claim dim0=5 with a 4-element payload
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_sten<float>(path), IOError);

  save_sten(t, path);
  write_bytes(path, read_bytes(path) + "xx");
  CHECK_THROWS_AS(load_sten<float>(path), IOError);
}

TEST_CASE("STEN dtype and magic validation") {
  const std::string path = tmp_path("dtype.sten");
  auto t = Tensor::from({2}, {1, 2});
  save_sten(t, path);
  CHECK_THROWS_AS(load_sten<double>(path), IOError);  // explicit conversions only

  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_sten<float>(path), IOError);

  CHECK_THROWS_AS(load_sten<float>(tmp_path("missing_file.sten")), IOError);
}

TEST_CASE("SCKP round-trip preserves names and payloads bitwise") {
  Rng rng(903);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::pair<std::string, TensorT<float>>> entries;
    const long count = rng.uniform_int(0, 6);
    for (long i = 0; i < count; ++i) {
      std::string name = "layer" + std::to_string(i) + ".w" +
                         std::string(static_cast<std::size_t>(rng.uniform_int(0, 8)), 'x');
      std::vector<long> shape;
      for (long d = 0, nd = rng.uniform_int(0, 3); d < nd; ++d)
        shape.push_back(rng.uniform_int(1, 4));
      entries.emplace_back(std::move(name), random_bits_tensor<float>(shape, rng));
    }
    std::vector<std::pair<std::string, const TensorT<float>*>> refs;
    for (auto& [n, t] : entries) refs.emplace_back(n, &t);
    const std::string path = tmp_path("t.sckp");
    save_sckp(refs, path);
    auto loaded = load_sckp<float>(path);
    REQUIRE(loaded.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      CHECK(loaded[i].first == entries[i].first);
      CHECK(loaded[i].second.bitwise_equal(entries[i].second));
    }
  }
}

TEST_CASE("SCKP truncation reports offset; bad magic rejected") {
  const std::string path = tmp_path("bad.sckp");
  auto t = Tensor::from({2}, {7, 8});
  save_sckp<float>({{"p", &t}}, path);
  std::string bytes = read_bytes(path);
  write_bytes(path, bytes.substr(0, 10));
  CHECK_THROWS_AS(load_sckp<float>(path), IOError);
  bytes[0] = 'Z';
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_sckp<float>(path), IOError);
}

TEST_CASE("PPM P6 layout and rounding") {
  Tensor img({3, 1, 2});
  img(0, 0, 0) = 0.0f;   // R of pixel 0
  img(1, 0, 0) = 0.5f;   // G
  img(2, 0, 0) = 1.0f;   // B
  img(0, 0, 1) = 2.0f;   // clamps to 255
  img(1, 0, 1) = -1.0f;  // clamps to 0
  img(2, 0, 1) = 0.25f;
  const std::string path = tmp_path("img.ppm");
  write_ppm(img, path);
  const std::string bytes = read_bytes(path);
  const std::string header = "P6\n2 1\n255\n";
  REQUIRE(bytes.substr(0, header.size()) == header);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  CHECK(px[0] == 0);
  CHECK(px[1] == 128);  // round(0.5*255)
  CHECK(px[2] == 255);
  CHECK(px[3] == 255);
  CHECK(px[4] == 0);
  CHECK(px[5] == 64);
}

TEST_CASE("PGM rows scale by their own max") {
  Tensor64 map({2, 3});
  map(0, 0) = 0.2; map(0, 1) = 0.4; map(0, 2) = 0.1;
  // second row all zeros stays zero
  const std::string path = tmp_path("map.pgm");
  write_pgm_row_scaled(map, path);
  const std::string bytes = read_bytes(path);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.substr(0, header.size()) == header);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  CHECK(px[1] == 255);  // row max
  CHECK(px[0] == 128);  // 0.2/0.4 scaled
  CHECK(px[3] == 0);
  CHECK(px[4] == 0);
}

TEST_CASE("CSV export") {
  Tensor64 map({2, 2});
  map(0, 0) = 1.5; map(0, 1) = -2.0; map(1, 0) = 0.0; map(1, 1) = 42.0;
  const std::string path = tmp_path("map.csv");
  write_csv(map, path);
  CHECK(read_bytes(path) == "1.5,-2\n0,42\n");
}
