#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "partyvec/tensor.hpp"

namespace partyvec {

struct TensorInfo {
  std::vector<std::size_t> shape;
  std::uint64_t begin = 0;  // relative to payload start
  std::uint64_t end = 0;
};

/// Named f32 tensors with a byte-exact container encoding:
///
///   u64 little-endian header length H
///   H bytes of UTF-8 JSON: {name: {"dtype":"F32","shape":[..],"data_offsets":[b,e]}}
///   payload of little-endian row-major f32 data
///
/// Tensors are laid out in lexicographic name order so that two stores with
/// the same contents serialize to the same bytes regardless of insertion order.
class TensorStore {
 public:
  void insert(const std::string& name, Tensor tensor);
  void insert(Tensor tensor) { insert(tensor.name(), std::move(tensor)); }
  void insert_or_assign(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return entries_.contains(name); }
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// Metadata mirroring what serialize() writes into the header.
  std::map<std::string, TensorInfo> manifest() const;

  std::vector<std::uint8_t> serialize() const;
  static TensorStore parse(std::span<const std::uint8_t> bytes);

  friend bool operator==(const TensorStore& a, const TensorStore& b) { return a.entries_ == b.entries_; }

 private:
  std::map<std::string, Tensor> entries_;
};

void store_write(const TensorStore& store, const std::filesystem::path& path);
TensorStore store_read(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace partyvec
