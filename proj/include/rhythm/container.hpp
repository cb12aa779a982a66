#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rhythm/tensor.hpp"

// "RMTC" container: the on-disk format for checkpoints, clips and fixtures.
//
//   magic    4 bytes  "RMTC"
//   version  u32      kContainerVersion
//   count    u32      number of entries
//   entry*   name_len u32, name (UTF-8), dtype u8, rank u8,
//            dims u64 x rank, values (little-endian)
//
// dtype codes: 1 = f32, 2 = f64, 16 = UTF-8 text (rank 1, dims = byte count).
namespace rhythm::io {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::uint8_t kTextDtype = 16;

class Container {
 public:
  using Payload = std::variant<Tensor, std::string>;
  struct Entry {
    std::string name;
    Payload payload;
  };

  void put(std::string name, Tensor value);
  void put_text(std::string name, std::string text);

  bool contains(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  Entry* find(const std::string& name);
  const Entry* find(const std::string& name) const;
  std::vector<Entry> entries_;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace rhythm::io
