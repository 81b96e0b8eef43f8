#pragma once

#include <filesystem>
#include <string>

#include "dpdd/common.hpp"

namespace dpdd {

// Writes bytes to a temp file in the destination directory, then renames it
// over the target, so readers never observe a partial file.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Renders per-class image rows into one 8-bit grayscale-or-RGB PNG grid,
// one row per class. Pixel values are clamped to [0, 1] before quantizing.
// Channel counts other than 1 or 3 are rejected.
void write_png_grid(const std::filesystem::path& path,
                    const std::vector<Matrix>& class_images, const ImageShape& shape,
                    Index max_per_row);

}  // namespace dpdd
