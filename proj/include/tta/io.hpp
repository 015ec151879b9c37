#pragma once

#include "tta/autodiff/params.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tta::io {

// Shortest-safe round-trip text: 17 significant digits, '.' decimal point.
std::string format_g17(double v);

// Comma-joined fields terminated by '\n'.
std::string csv_line(const std::vector<std::string>& fields);

// Writes to a sibling temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
// Throws IoError naming the path when it cannot be read.
std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

inline constexpr std::uint32_t checkpoint_version = 1;

// "TTA1", version, entry table, little-endian f64 payload, CRC32 trailer.
std::string encode_checkpoint(const ParamVector& params);
// `source` names the origin in error messages.
ParamVector decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace tta::io
