#pragma once

// Parameter checkpoint file:
//
//   magic   4 bytes  "UDAC"
//   version 1 byte   0x01
//   count   u32
//   count x record:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 x rank
//     data     f64 x prod(dims)
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "uda/error.hpp"
#include "uda/networks.hpp"
#include "uda/tensor.hpp"

namespace uda {

inline constexpr std::array<char, 4> kCheckpointMagic = {'U', 'D', 'A', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Record {
  std::string name;
  Tensor value;
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_records(std::ostream& os, const std::vector<Record>& records) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint8_t>(os, kCheckpointVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const Record& r : records) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.value.rank()));
    for (std::size_t d : r.value.shape()) detail::put_le<std::uint64_t>(os, d);
    for (double v : r.value.data()) detail::put_le<double>(os, v);
  }
  if (!os) throw FormatError("checkpoint write failed");
}

inline std::vector<Record> read_records(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw FormatError("bad checkpoint magic");
  }
  const auto version = detail::get_le<std::uint8_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<Record> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated");
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = detail::get_le<double>(is);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

inline void save_records(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_records(os, records);
}

inline std::vector<Record> load_records(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_records(is);
}

/// Records for every parameter of the given named tensors.
inline std::vector<Record> to_records(
    const std::vector<std::pair<std::string, const Tensor*>>& named) {
  std::vector<Record> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back({name, *t});
  return out;
}

/// Copies record values into an Mlp's parameters, matching by name.
inline void load_into(Mlp& net, const std::string& prefix, const std::vector<Record>& records) {
  auto named = net.named_parameters(prefix);
  auto params = net.parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const Record& r) { return r.name == named[i].first; });
    if (it == records.end()) throw FormatError("checkpoint lacks record " + named[i].first);
    if (it->value.shape() != params[i]->shape()) {
      throw FormatError("checkpoint record " + named[i].first + " has shape " +
                        shape_string(it->value.shape()) + ", expected " +
                        shape_string(params[i]->shape()));
    }
    *params[i] = it->value;
  }
}

}  // namespace uda
