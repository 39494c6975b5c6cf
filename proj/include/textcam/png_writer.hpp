#pragma once

#include <filesystem>
#include <string>

#include "textcam/cam.hpp"

namespace textcam {

// Encodes an 8-bit grayscale or RGB image. Output carries no timestamp or
// text chunks, so identical images encode to identical bytes.
std::string encode_png(const cam::Image& image);

void write_png(const cam::Image& image, const std::filesystem::path& path);

}  // namespace textcam
