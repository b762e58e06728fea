#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oblique/common.hpp"

namespace oblique {

// Raw little-endian binary32 blobs, no header. Row-major when 2-D.
void write_f32(const std::filesystem::path& path, const float* data, std::size_t count);
void write_f32(const std::filesystem::path& path, const RowMatrixF& m);
std::vector<float> read_f32(const std::filesystem::path& path);
RowMatrixF read_f32_matrix(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

std::uint32_t crc32_of(const void* data, std::size_t size);
std::uint32_t crc32_of_file(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
// dump(2) + trailing newline; keys sort deterministically.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Shortest round-trip decimal form, locale independent.
std::string format_double(double v);

}  // namespace oblique
