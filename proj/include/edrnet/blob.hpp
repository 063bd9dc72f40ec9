#pragma once

// TensorBlob: "AVET" magic, u32 rank, rank x u32 dims, row-major f32 payload.
// Every integer and float is little-endian on disk.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "edrnet/tensor.hpp"

namespace edr {

class BlobError : public std::runtime_error {
 public:
  BlobError(const std::filesystem::path& file, const std::string& what)
      : std::runtime_error(file.string() + ": " + what), file_(file) {}
  const std::filesystem::path& file() const noexcept { return file_; }

 private:
  std::filesystem::path file_;
};

namespace detail {

inline constexpr std::array<char, 4> kBlobMagic{'A', 'V', 'E', 'T'};

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

inline void put_u32(char* p, std::uint32_t v) {
  v = to_le(v);
  std::memcpy(p, &v, 4);
}

inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_le(v);
}

}  // namespace detail

/// Serializes a float tensor into the blob byte layout.
inline std::vector<char> encode_blob(const Tensor<float>& t) {
  std::vector<char> out(8 + 4 * t.rank() + 4 * t.size());
  std::copy(detail::kBlobMagic.begin(), detail::kBlobMagic.end(), out.begin());
  char* p = out.data() + 4;
  detail::put_u32(p, static_cast<std::uint32_t>(t.rank()));
  p += 4;
  for (std::size_t d : t.shape()) {
    detail::put_u32(p, static_cast<std::uint32_t>(d));
    p += 4;
  }
  for (float f : t.values()) {
    detail::put_u32(p, std::bit_cast<std::uint32_t>(f));
    p += 4;
  }
  return out;
}

inline Tensor<float> decode_blob(const std::vector<char>& bytes,
                                 const std::filesystem::path& file = "<memory>") {
  if (bytes.size() < 8) throw BlobError(file, "truncated blob header");
  if (!std::equal(detail::kBlobMagic.begin(), detail::kBlobMagic.end(), bytes.begin()))
    throw BlobError(file, "bad magic (expected AVET)");
  const std::uint32_t rank = detail::get_u32(bytes.data() + 4);
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (rank == 0 || rank > 8) throw BlobError(file, "unsupported rank " + std::to_string(rank));
  if (bytes.size() < header) throw BlobError(file, "header lists fewer dims than rank");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = detail::get_u32(bytes.data() + 8 + 4 * i);
  const std::size_t count = shape_size(shape);
  if (bytes.size() - header != 4 * count)
    throw BlobError(file, "header/payload mismatch: dims " + shape_string(shape) + " need " +
                              std::to_string(4 * count) + " payload bytes, found " +
                              std::to_string(bytes.size() - header));
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i)
    data[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + header + 4 * i));
  return Tensor<float>(std::move(shape), std::move(data));
}

inline void write_blob(const std::filesystem::path& file, const Tensor<float>& t) {
  const auto bytes = encode_blob(t);
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw BlobError(file, "cannot open for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw BlobError(file, "write failed");
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw BlobError(file, "cannot open for reading");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline Tensor<float> read_blob(const std::filesystem::path& file) {
  return decode_blob(read_file_bytes(file), file);
}

}  // namespace edr
