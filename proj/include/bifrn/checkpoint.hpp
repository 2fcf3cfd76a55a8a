#pragma once

// Binary parameter container.
//
// Layout (all integers little-endian, floats IEEE-754 little-endian):
//
//   magic    8 bytes   "BIFRNCKP"
//   version  u8        currently 1
//   count    u32       number of records
//   record * count:
//     name_len u32, name  UTF-8 bytes (no terminator)
//     dtype    u8         1 = float32, 2 = float64
//     rank     u32, extents u64 * rank
//     payload  numel * sizeof(dtype) bytes, row-major
//
// Records keep their payload as raw bytes, so parse() followed by
// serialize() reproduces the input exactly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bifrn/tensor.hpp"

namespace bifrn {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> payload;

  template <typename T>
  static CheckpointRecord from_tensor(std::string name, const Tensor<T>& t);

  /// Converts the payload to T (float32 <-> float64 as needed).
  template <typename T>
  Tensor<T> to_tensor() const;
};

class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'B', 'I', 'F', 'R', 'N', 'C', 'K', 'P'};
  static constexpr std::uint8_t kVersion = 1;

  void add(CheckpointRecord record);
  const std::vector<CheckpointRecord>& records() const { return records_; }
  const CheckpointRecord* find(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint parse(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointRecord> records_;
};

}  // namespace bifrn
