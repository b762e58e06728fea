#include "oblique/io.hpp"

#include <zlib.h>

#include <charconv>
#include <cstring>
#include <fstream>

namespace oblique {

namespace fs = std::filesystem;

void write_f32(const fs::path& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_error, "cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  if (!out) raise(ErrorCode::io_error, "write failed: " + path.string());
}

void write_f32(const fs::path& path, const RowMatrixF& m) {
  write_f32(path, m.data(), static_cast<std::size_t>(m.size()));
}

std::vector<float> read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) raise(ErrorCode::io_error, "cannot open: " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0)
    raise(ErrorCode::dimension_mismatch, path.string() + ": size is not a multiple of 4 bytes");
  std::vector<float> data(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) raise(ErrorCode::io_error, "read failed: " + path.string());
  return data;
}

RowMatrixF read_f32_matrix(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  const auto data = read_f32(path);
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    raise(ErrorCode::dimension_mismatch,
          path.string() + ": expected " + std::to_string(rows * cols) + " float32 values, found " +
              std::to_string(data.size()));
  RowMatrixF m(rows, cols);
  std::memcpy(m.data(), data.data(), data.size() * sizeof(float));
  return m;
}

std::uint32_t crc32_of(const void* data, std::size_t size) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

std::uint32_t crc32_of_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_error, "cannot open: " + path.string());
  uLong crc = ::crc32(0L, Z_NULL, 0);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto got = in.gcount();
    if (got > 0) crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(got));
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_error, "cannot open: " + path.string());
  nlohmann::json value;
  try {
    in >> value;
  } catch (const nlohmann::json::parse_error& e) {
    raise(ErrorCode::io_error, path.string() + ": " + e.what());
  }
  return value;
}

void write_json(const fs::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io_error, "cannot open for write: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(ErrorCode::io_error, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) raise(ErrorCode::io_error, "cannot open: " + path.string());
  std::string text(static_cast<std::size_t>(in.tellg()), '\0');
  in.seekg(0);
  in.read(text.data(), static_cast<std::streamsize>(text.size()));
  return text;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace oblique
