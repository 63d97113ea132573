#pragma once

// Little-endian scalar I/O shared by the binary file formats.

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

namespace almd::binio {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

/// Reads one value; throws Err(prefix + what) on a short read.
template <typename T, typename Err>
T get_le(std::istream& is, const std::string& prefix, const char* what) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw Err(prefix + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace almd::binio
