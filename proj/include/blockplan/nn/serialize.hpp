#pragma once

// Tensor archive:
//   magic (4 bytes, "BPW1" weights / "BPO1" optimizer state)
//   u32 tensor count
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//               f32 values[prod(dims)]
// All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blockplan/nn/optim.hpp"
#include "blockplan/nn/tensor.hpp"

namespace blockplan::nn {

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

inline constexpr std::string_view kWeightsMagic = "BPW1";
inline constexpr std::string_view kOptimizerMagic = "BPO1";

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArchiveEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw ArchiveError("tensor archive truncated");
  return v;
}

}  // namespace detail

inline void write_archive(std::ostream& out, std::string_view magic, const std::vector<ArchiveEntry>& entries) {
  out.write(magic.data(), 4);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 4));
  }
  if (!out) throw ArchiveError("failed writing tensor archive");
}

inline std::vector<ArchiveEntry> read_archive(std::istream& in, std::string_view magic) {
  std::array<char, 4> head{};
  in.read(head.data(), 4);
  if (!in || std::string_view(head.data(), 4) != magic)
    throw ArchiveError("bad magic: expected " + std::string(magic));
  const std::uint32_t count = detail::get_u32(in);
  std::vector<ArchiveEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    e.name.resize(detail::get_u32(in));
    in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const std::uint32_t rank = detail::get_u32(in);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<int>(detail::get_u32(in)));
    e.values.resize(numel(e.shape));
    in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 4));
    if (!in) throw ArchiveError("tensor archive truncated in '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<ArchiveEntry> to_entries(const ParameterList<float>& params) {
  std::vector<ArchiveEntry> out;
  for (const auto& p : params)
    out.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  return out;
}

/// Copies archive values into same-named parameters; names, order and shapes
/// must match exactly.
inline void assign_entries(const std::vector<ArchiveEntry>& entries, ParameterList<float>& params) {
  if (entries.size() != params.size())
    throw ArchiveError("archive holds " + std::to_string(entries.size()) + " tensors, model expects " +
                       std::to_string(params.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = params[i];
    if (entries[i].name != p.name) throw ArchiveError("archive tensor '" + entries[i].name + "' where '" + p.name + "' expected");
    if (entries[i].shape != p.tensor.shape())
      throw ArchiveError("tensor '" + p.name + "' has shape " + to_string(entries[i].shape) + ", expected " +
                         to_string(p.tensor.shape()));
    std::copy(entries[i].values.begin(), entries[i].values.end(), p.tensor.values().begin());
  }
}

inline void save_weights(const std::filesystem::path& path, const ParameterList<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArchiveError("cannot write " + path.string());
  write_archive(out, kWeightsMagic, to_entries(params));
}

inline void load_weights(const std::filesystem::path& path, ParameterList<float>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot read " + path.string());
  assign_entries(read_archive(in, kWeightsMagic), params);
}

inline void save_optimizer(const std::filesystem::path& path, const RMSProp& opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArchiveError("cannot write " + path.string());
  write_archive(out, kOptimizerMagic, to_entries(opt.state_tensors()));
}

inline void load_optimizer(const std::filesystem::path& path, RMSProp& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot read " + path.string());
  auto state = opt.state_tensors();
  assign_entries(read_archive(in, kOptimizerMagic), state);
  for (std::size_t i = 0; i < state.size(); ++i)
    std::copy(state[i].tensor.values().begin(), state[i].tensor.values().end(), opt.accumulators()[i].begin());
}

}  // namespace blockplan::nn
