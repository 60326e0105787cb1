#pragma once

// Parameter container format (all integers little-endian):
//
//   bytes 0..7   magic "HMCTPARM"
//   u32          format version (currently 1)
//   u32          record count
//   per record:
//     u32        name length in bytes, followed by the UTF-8 name
//     u32        rank, followed by rank x u64 dimension sizes
//     f64 x n    values in row-major order, IEEE-754 little-endian
//
// Loading reproduces every value bit for bit.

#include "hmctc/numeric/tensor.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace hmctc {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace binio {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("unexpected end of binary stream");
  return to_little(v);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::size_t limit = 1 << 20) {
  const auto n = get<std::uint32_t>(is);
  if (n > limit) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError("unexpected end of binary stream");
  return s;
}

inline void put_doubles(std::ostream& os, std::span<const double> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
  } else {
    for (double x : xs) put(os, x);
  }
}

inline void get_doubles(std::istream& is, std::span<double> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
    if (!is) throw FormatError("unexpected end of binary stream");
  } else {
    for (double& x : xs) x = get<double>(is);
  }
}

}  // namespace binio

inline constexpr char kParamMagic[8] = {'H', 'M', 'C', 'T', 'P', 'A', 'R', 'M'};
inline constexpr std::uint32_t kParamVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline void write_tensors(std::ostream& os, const std::vector<NamedTensor>& records) {
  os.write(kParamMagic, sizeof kParamMagic);
  binio::put<std::uint32_t>(os, kParamVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    binio::put_string(os, r.name);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) binio::put<std::uint64_t>(os, d);
    binio::put_doubles(os, r.value.values());
  }
}

inline std::vector<NamedTensor> read_tensors(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kParamMagic, sizeof magic) != 0) throw FormatError("not a parameter container");
  const auto version = binio::get<std::uint32_t>(is);
  if (version != kParamVersion) throw FormatError("unsupported parameter container version " + std::to_string(version));
  const auto count = binio::get<std::uint32_t>(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor r;
    r.name = binio::get_string(is);
    const auto rank = binio::get<std::uint32_t>(is);
    if (rank > 8) throw FormatError("implausible rank for " + r.name);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(binio::get<std::uint64_t>(is));
    r.value = Tensor(std::move(shape));
    binio::get_doubles(is, r.value.values());
    out.push_back(std::move(r));
  }
  return out;
}

inline void save_parameters(const std::string& path, const ParameterRefs& params) {
  std::vector<NamedTensor> recs;
  recs.reserve(params.size());
  for (const auto* p : params) recs.push_back({p->name, p->value});
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensors(os, recs);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::map<std::string, Tensor> load_parameter_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::map<std::string, Tensor> out;
  for (auto& r : read_tensors(is)) out.emplace(std::move(r.name), std::move(r.value));
  return out;
}

// Fills every parameter from the container; each must be present with a
// matching shape.
inline void load_parameters(const std::string& path, const ParameterRefs& params) {
  auto m = load_parameter_map(path);
  for (auto* p : params) {
    auto it = m.find(p->name);
    if (it == m.end()) throw FormatError("parameter " + p->name + " missing from " + path);
    if (!it->second.same_shape(p->value)) {
      throw ShapeError("parameter " + p->name + " has shape " + shape_string(it->second.shape()) + " in " + path +
                       ", expected " + shape_string(p->value.shape()));
    }
    p->value = it->second;
    p->grad = Tensor(p->value.shape());
  }
}

}  // namespace hmctc
