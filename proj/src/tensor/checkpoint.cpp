#include "mfsc/tensor/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mfsc::tensor {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'S', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw CheckpointError("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
      if (numel(e.shape) != e.values.size()) {
        throw CheckpointError("entry " + e.name + " has inconsistent shape");
      }
      put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put<std::uint8_t>(os, static_cast<std::uint8_t>(e.dtype_bytes));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) put<std::uint64_t>(os, d);
      for (auto v : e.values) {
        if (e.dtype_bytes == 8) {
          put<double>(os, v);
        } else {
          put<float>(os, static_cast<float>(v));
        }
      }
    }
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(get<std::uint32_t>(is));
    if (!is.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) {
      throw CheckpointError("checkpoint truncated");
    }
    e.dtype_bytes = get<std::uint8_t>(is);
    if (e.dtype_bytes != 4 && e.dtype_bytes != 8) {
      throw CheckpointError("entry " + e.name + " has unknown dtype");
    }
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get<std::uint64_t>(is));
    e.values.resize(numel(e.shape));
    for (auto& v : e.values) v = e.dtype_bytes == 8 ? get<double>(is) : double(get<float>(is));
    entries.push_back(std::move(e));
  }
  return entries;
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw CheckpointError("checkpoint has no entry " + name);
}

template <typename T>
void append_entries(std::vector<CheckpointEntry>& out, const ParameterStore<T>& store,
                    const std::string& prefix) {
  for (const auto& p : store.parameters()) {
    out.push_back({prefix + p.name, p.value.shape(),
                   std::vector<double>(p.value.data().begin(), p.value.data().end()),
                   static_cast<unsigned>(sizeof(T))});
  }
}

template <typename T>
void load_entries(ParameterStore<T>& store, const std::vector<CheckpointEntry>& entries,
                  const std::string& prefix) {
  for (const auto& p : store.parameters()) {
    const auto& e = find_entry(entries, prefix + p.name);
    if (e.shape != p.value.shape()) {
      throw CheckpointError("entry " + e.name + " has shape " + to_string(e.shape) + ", expected " +
                            to_string(p.value.shape()));
    }
    auto handle = p.value;
    auto dst = handle.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e.values[i]);
  }
}

template void append_entries(std::vector<CheckpointEntry>&, const ParameterStore<float>&, const std::string&);
template void append_entries(std::vector<CheckpointEntry>&, const ParameterStore<double>&, const std::string&);
template void load_entries(ParameterStore<float>&, const std::vector<CheckpointEntry>&, const std::string&);
template void load_entries(ParameterStore<double>&, const std::vector<CheckpointEntry>&, const std::string&);

}  // namespace mfsc::tensor
