#include "shunted/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace shunted {

namespace {

constexpr char kStenMagic[4] = {'S', 'T', 'E', 'N'};
constexpr char kSckpMagic[4] = {'S', 'C', 'K', 'P'};

template <class S>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<S, float> ? 0 : 1;
}

template <class T>
void append_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& path, const char* what) : path_(path), what_(what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError(std::string(what_) + ": cannot open " + path, 0);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::size_t offset() const { return at_; }
  std::size_t remaining() const { return buf_.size() - at_; }

  void need(std::size_t n, const char* field) {
    if (remaining() < n)
      throw IOError(std::string(what_) + ": truncated file " + path_ + " while reading " +
                        field + " (need " + std::to_string(n) + " bytes, have " +
                        std::to_string(remaining()) + ")",
                    at_);
  }

  void raw(void* dst, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(dst, buf_.data() + at_, n);
    at_ += n;
  }

  std::uint8_t u8(const char* field) {
    need(1, field);
    return static_cast<std::uint8_t>(buf_[at_++]);
  }

  template <class T>
  T le(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(buf_[at_ + i])) << (8 * i);
    at_ += sizeof(T);
    return v;
  }

  void expect_magic(const char (&magic)[4]) {
    need(4, "magic");
    if (std::memcmp(buf_.data() + at_, magic, 4) != 0)
      throw IOError(std::string(what_) + ": bad magic in " + path_, at_);
    at_ += 4;
  }

  void expect_end() {
    if (remaining() != 0)
      throw IOError(std::string(what_) + ": " + std::to_string(remaining()) +
                        " trailing bytes in " + path_,
                    at_);
  }

 private:
  std::string path_;
  const char* what_;
  std::string buf_;
  std::size_t at_ = 0;
};

template <class S>
void append_payload(std::string& out, const TensorT<S>& t) {
  static_assert(std::endian::native == std::endian::little ||
                std::endian::native == std::endian::big);
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(S));
  } else {
    for (long i = 0; i < t.numel(); ++i) {
      std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t> bits;
      std::memcpy(&bits, &t.data()[i], sizeof(S));
      append_le(out, bits);
    }
  }
}

template <class S>
void encode_sten(std::string& out, const TensorT<S>& t) {
  out.append(kStenMagic, 4);
  out.push_back(1);  // version
  out.push_back(static_cast<char>(dtype_code<S>()));
  if (t.ndim() > 255) throw IOError("STEN: rank above 255 unsupported", 0);
  out.push_back(static_cast<char>(t.ndim()));
  out.push_back(0);  // reserved
  for (long d : t.shape()) append_le(out, static_cast<std::uint64_t>(d));
  append_payload(out, t);
}

template <class S>
TensorT<S> decode_sten(Reader& r) {
  r.expect_magic(kStenMagic);
  const std::uint8_t version = r.u8("version");
  if (version != 1)
    throw IOError("STEN: unsupported version " + std::to_string(version), r.offset() - 1);
  const std::uint8_t dtype = r.u8("dtype");
  if (dtype > 1)
    throw IOError("STEN: unknown dtype code " + std::to_string(dtype), r.offset() - 1);
  if (dtype != dtype_code<S>())
    throw IOError(std::string("STEN: dtype is ") + (dtype ? "float64" : "float32") +
                      " but " + (dtype_code<S>() ? "float64" : "float32") +
                      " was requested",
                  r.offset() - 1);
  const std::uint8_t ndim = r.u8("ndim");
  const std::uint8_t reserved = r.u8("reserved");
  if (reserved != 0) throw IOError("STEN: reserved byte is nonzero", r.offset() - 1);
  std::vector<long> shape(ndim);
  for (int d = 0; d < ndim; ++d) {
    const std::uint64_t v = r.le<std::uint64_t>("dims");
    if (v > static_cast<std::uint64_t>(1) << 40)
      throw IOError("STEN: implausible dimension " + std::to_string(v),
                    r.offset() - sizeof(std::uint64_t));
    shape[d] = static_cast<long>(v);
  }
  const long numel = TensorT<S>::checked_numel(shape);
  const std::size_t need = static_cast<std::size_t>(numel) * sizeof(S);
  if (r.remaining() < need)
    throw IOError("STEN: header dims " + shape_to_string(shape) + " need " +
                      std::to_string(need) + " payload bytes, have " +
                      std::to_string(r.remaining()),
                  r.offset());
  TensorT<S> t(shape);
  r.raw(t.data(), need, "payload");
  if constexpr (std::endian::native == std::endian::big) {
    for (long i = 0; i < t.numel(); ++i) {
      auto* p = reinterpret_cast<unsigned char*>(&t.data()[i]);
      for (std::size_t a = 0, b = sizeof(S) - 1; a < b; ++a, --b) std::swap(p[a], p[b]);
    }
  }
  return t;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot open for writing: " + path, 0);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IOError("short write to " + path, bytes.size());
}

}  // namespace

template <class S>
void save_sten(const TensorT<S>& t, const std::string& path) {
  std::string out;
  out.reserve(16 + t.shape().size() * 8 + static_cast<std::size_t>(t.numel()) * sizeof(S));
  encode_sten(out, t);
  write_file(path, out);
}

template <class S>
TensorT<S> load_sten(const std::string& path) {
  Reader r(path, "STEN");
  TensorT<S> t = decode_sten<S>(r);
  r.expect_end();
  return t;
}

int sten_dtype(const std::string& path) {
  Reader r(path, "STEN");
  r.expect_magic(kStenMagic);
  r.u8("version");
  return r.u8("dtype");
}

template <class S>
void save_sckp(const std::vector<std::pair<std::string, const TensorT<S>*>>& entries,
               const std::string& path) {
  std::string out;
  out.append(kSckpMagic, 4);
  out.push_back(1);  // version
  append_le(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (name.size() > 0xffff) throw IOError("SCKP: name longer than 65535 bytes", 0);
    append_le(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    encode_sten(out, *tensor);
  }
  write_file(path, out);
}

template <class S>
std::vector<std::pair<std::string, TensorT<S>>> load_sckp(const std::string& path) {
  Reader r(path, "SCKP");
  r.expect_magic(kSckpMagic);
  const std::uint8_t version = r.u8("version");
  if (version != 1)
    throw IOError("SCKP: unsupported version " + std::to_string(version), r.offset() - 1);
  const std::uint32_t count = r.le<std::uint32_t>("count");
  std::vector<std::pair<std::string, TensorT<S>>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.le<std::uint16_t>("name length");
    std::string name(len, '\0');
    r.raw(name.data(), len, "name");
    out.emplace_back(std::move(name), decode_sten<S>(r));
  }
  r.expect_end();
  return out;
}

void write_ppm(const TensorT<float>& image, const std::string& path) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("write_ppm: expected [3,H,W], got " + shape_to_string(image.shape()));
  const long H = image.dim(1), W = image.dim(2);
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(3 * H * W));
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (long c = 0; c < 3; ++c) {
        float v = image(c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        out.push_back(static_cast<char>(static_cast<int>(std::lround(v * 255.0f))));
      }
  write_file(path, out);
}

template <class S>
void write_pgm_row_scaled(const TensorT<S>& map, const std::string& path) {
  if (map.ndim() != 2)
    throw ShapeError("write_pgm_row_scaled: expected [rows,cols], got " +
                     shape_to_string(map.shape()));
  const long R = map.dim(0), C = map.dim(1);
  std::string out = "P5\n" + std::to_string(C) + " " + std::to_string(R) + "\n255\n";
  for (long r = 0; r < R; ++r) {
    S rowmax = 0;
    for (long c = 0; c < C; ++c) rowmax = std::max(rowmax, map(r, c));
    for (long c = 0; c < C; ++c) {
      const double v = rowmax > 0 ? static_cast<double>(map(r, c)) / rowmax : 0.0;
      out.push_back(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
    }
  }
  write_file(path, out);
}

template <class S>
void write_csv(const TensorT<S>& map, const std::string& path) {
  if (map.ndim() != 2)
    throw ShapeError("write_csv: expected [rows,cols], got " +
                     shape_to_string(map.shape()));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IOError("cannot open for writing: " + path, 0);
  out.precision(9);
  for (long r = 0; r < map.dim(0); ++r) {
    for (long c = 0; c < map.dim(1); ++c) {
      if (c) out << ',';
      out << map(r, c);
    }
    out << '\n';
  }
}

template void save_sten<float>(const TensorT<float>&, const std::string&);
template void save_sten<double>(const TensorT<double>&, const std::string&);
template TensorT<float> load_sten<float>(const std::string&);
template TensorT<double> load_sten<double>(const std::string&);
template void save_sckp<float>(
    const std::vector<std::pair<std::string, const TensorT<float>*>>&,
    const std::string&);
template void save_sckp<double>(
    const std::vector<std::pair<std::string, const TensorT<double>*>>&,
    const std::string&);
template std::vector<std::pair<std::string, TensorT<float>>> load_sckp<float>(
    const std::string&);
template std::vector<std::pair<std::string, TensorT<double>>> load_sckp<double>(
    const std::string&);
template void write_pgm_row_scaled<float>(const TensorT<float>&, const std::string&);
template void write_pgm_row_scaled<double>(const TensorT<double>&, const std::string&);
template void write_csv<float>(const TensorT<float>&, const std::string&);
template void write_csv<double>(const TensorT<double>&, const std::string&);

}  // namespace shunted
