#include "structssl/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace structssl {

namespace {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void read(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) throw std::runtime_error("weights: truncated file at byte " + std::to_string(pos_));
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint64_t u64() {
    std::uint64_t v;
    read(&v, 8);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_weights(const NamedArrays& arrays) {
  std::string out(kWeightsMagic, 4);
  out.push_back(static_cast<char>(kWeightsVersion));
  put_u64(out, arrays.size());
  for (const auto& [name, t] : arrays) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    auto v = t.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return out;
}

NamedArrays decode_weights(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) throw std::runtime_error("weights: bad magic");
  unsigned char version;
  r.read(&version, 1);
  if (version != kWeightsVersion) throw std::runtime_error("weights: unsupported version " + std::to_string(version));
  const auto count = r.u64();
  NamedArrays out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.u64();
    if (len > r.remaining()) throw std::runtime_error("weights: name length exceeds file");
    std::string name(len, '\0');
    r.read(name.data(), len);
    const auto rank = r.u64();
    if (rank > 16) throw std::runtime_error("weights: implausible rank for '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0 || d > r.remaining()) throw std::runtime_error("weights: bad dim for '" + name + "'");
      n *= d;
    }
    if (n > r.remaining() / sizeof(double)) throw std::runtime_error("weights: truncated data for '" + name + "'");
    std::vector<double> values(n);
    r.read(values.data(), n * sizeof(double));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw std::runtime_error("weights: trailing bytes after last array");
  return out;
}

void save_weights(const std::string& path, const NamedArrays& arrays) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  const auto bytes = encode_weights(arrays);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

NamedArrays load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_weights(ss.str());
}

}  // namespace structssl
