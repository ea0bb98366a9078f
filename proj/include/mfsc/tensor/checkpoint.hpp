#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsc/tensor/parameters.hpp"

// Checkpoint container, all integers little-endian:
//
//   magic    8 bytes  "MFSCCKPT"
//   version  u32      1
//   count    u32      number of entries
//   entry    repeated `count` times:
//     name_len u32, name (UTF-8, no terminator)
//     dtype    u8     4 = float32, 8 = float64
//     rank     u32, dims u64[rank]
//     values   product(dims) little-endian IEEE-754 values of dtype
//
// Entries are independent; readers look them up by name.
namespace mfsc::tensor {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
  unsigned dtype_bytes = 4;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);

template <typename T>
void append_entries(std::vector<CheckpointEntry>& out, const ParameterStore<T>& store,
                    const std::string& prefix);

/// Loads every parameter of `store` from `prefix + name`; missing names and
/// shape mismatches are errors.
template <typename T>
void load_entries(ParameterStore<T>& store, const std::vector<CheckpointEntry>& entries,
                  const std::string& prefix);

}  // namespace mfsc::tensor
