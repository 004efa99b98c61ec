#include "dauhst/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dauhst/error.hpp"

namespace dauhst::io {

static_assert(std::endian::native == std::endian::little, "formats assume a little-endian host");

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_floats(std::string& out, const Tensor& t) {
  const std::size_t start = out.size();
  out.resize(start + 4 * t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t[i]);
    std::memcpy(out.data() + start + 4 * i, &f, 4);
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(const char* magic) {
    if (bytes_.size() < 4 || bytes_.compare(0, 4, magic) != 0) {
      throw FormatError(what_ + ": missing magic '" + magic + "'");
    }
    pos_ = 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(Tensor& t) {
    need(4 * t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f;
      std::memcpy(&f, bytes_.data() + pos_ + 4 * i, 4);
      t[i] = f;
    }
    pos_ += 4 * t.size();
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated data");
  }

  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_hsc(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 3) {
    throw ShapeError("HSC1 stores rank-2 or rank-3 arrays, got " + to_string(t.shape()));
  }
  std::string out = "HSC1";
  put_u32(out, static_cast<std::uint32_t>(t.dim(0)));
  put_u32(out, static_cast<std::uint32_t>(t.dim(1)));
  put_u32(out, static_cast<std::uint32_t>(t.rank() == 3 ? t.dim(2) : 1));
  put_floats(out, t);
  return out;
}

Tensor decode_hsc(const std::string& bytes) {
  Reader r(bytes, "HSC1");
  r.expect_magic("HSC1");
  const std::size_t h = r.u32(), w = r.u32(), c = r.u32();
  if (h == 0 || w == 0 || c == 0) throw FormatError("HSC1: zero dimension");
  if (bytes.size() != 16 + 4 * h * w * c) {
    throw FormatError("HSC1: payload size does not match header " + std::to_string(h) + "x" +
                      std::to_string(w) + "x" + std::to_string(c));
  }
  Tensor t({h, w, c});
  r.floats(t);
  return t;
}

Tensor read_hsc(const std::filesystem::path& path) {
  try {
    return decode_hsc(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_hsc(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_hsc(t)); }

std::string encode_archive(const ad::ParamStore& store) {
  std::string out = "DTA1";
  for (const auto& [name, t] : store) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    put_floats(out, t);
  }
  return out;
}

ad::ParamStore decode_archive(const std::string& bytes) {
  Reader r(bytes, "DTA1");
  r.expect_magic("DTA1");
  ad::ParamStore store;
  while (!r.done()) {
    const std::string name = r.text(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("DTA1: bad rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw FormatError("DTA1: zero dimension in '" + name + "'");
    }
    if (store.contains(name)) throw FormatError("DTA1: duplicate tensor '" + name + "'");
    Tensor t(shape);
    r.floats(t);
    store.set(name, std::move(t));
  }
  return store;
}

ad::ParamStore read_archive(const std::filesystem::path& path) {
  try {
    return decode_archive(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_archive(const std::filesystem::path& path, const ad::ParamStore& store) {
  write_file_atomic(path, encode_archive(store));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw FormatError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void round_to_float(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<float>(v);
}

}  // namespace dauhst::io
