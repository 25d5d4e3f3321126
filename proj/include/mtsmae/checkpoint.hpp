#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtsmae/model.hpp"

namespace mtsmae {

// File layout (all integers little-endian):
//   "MTSMAECK"  u32 version  u8 dtype  u64 epoch
//   u32 len + config text   u32 len + rng state text   u32 record count
//   per record: u32 name len, name, u32 rank, u64 dims[rank], element buffer
struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian elements of the checkpoint dtype
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  DType dtype = DType::Float32;
  std::uint64_t epoch = 0;
  std::string config_text;
  std::string rng_state;
  std::vector<TensorRecord> tensors;

  template <typename T>
  static Checkpoint capture(const MtsmaeModel<T>& model, std::uint64_t epoch, std::string config_text,
                            std::string rng_state = {});

  /// Copies every tensor whose name starts with one of `prefixes` into the
  /// model. Missing or shape-incompatible tensors raise a transfer error that
  /// lists each offending name.
  template <typename T>
  void restore(MtsmaeModel<T>& model, const std::vector<std::string>& prefixes = {""}) const;

  const TensorRecord* find(const std::string& name) const;
  /// Values of one record converted to double.
  std::vector<double> values(const TensorRecord& record) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Initializes embedding and encoder weights from a pretraining checkpoint.
template <typename T>
void transfer_encoder(MtsmaeModel<T>& model, const Checkpoint& pretrained);

}  // namespace mtsmae
