#pragma once

// Binary 8-bit PGM (P5) files.

#include <cstdint>
#include <filesystem>

#include "silcarve/image.hpp"

namespace silcarve {

using Gray8 = Image<std::uint8_t>;

void write_pgm(const std::filesystem::path& path, const Gray8& img);
Gray8 read_pgm(const std::filesystem::path& path);

/// [0, 1] -> 0..255 with rounding; values outside are clamped.
Gray8 to_gray8(const GrayImage& img);
GrayImage from_gray8(const Gray8& img);

/// Silhouettes are stored as 0 (object) and 255 (background).
Gray8 silhouette_to_gray8(const Silhouette& s);
Silhouette silhouette_from_gray8(const Gray8& img);

}  // namespace silcarve
