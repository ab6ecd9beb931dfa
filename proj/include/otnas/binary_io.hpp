#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

namespace otnas::binary {

// Little-endian encoding of integers and IEEE floats, independent of host order.
template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_arithmetic_v<T>);
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                     std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  const auto bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

template <typename T>
T get_le(std::string_view in, std::size_t offset) {
  static_assert(std::is_arithmetic_v<T>);
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                     std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<Bits>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::string read_file(const std::string& path);
// Writes to `path` via a sibling temp file and rename.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace otnas::binary
