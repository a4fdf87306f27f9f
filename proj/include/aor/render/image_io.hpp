#pragma once

#include "aor/render/render.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace aor::render {

class ImageIoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Binary PPM (P6) of the rgb raster, rows in stored order.
std::vector<std::uint8_t> encode_ppm(const RgbdImage& img);
/// Fills width/height/rgb; depth is left empty.
RgbdImage decode_ppm(const std::vector<std::uint8_t>& bytes,
                     ImageConvention convention = ImageConvention::GlBottomUp);

/// 8-bit RGB PNG, rows top-down whatever the source convention.
std::vector<std::uint8_t> encode_png(const RgbdImage& img);

/// Little-endian float32 raster.
std::vector<std::uint8_t> encode_depth(const RgbdImage& img);
std::vector<float> decode_depth(const std::vector<std::uint8_t>& bytes, int width, int height);

void write_ppm(const std::filesystem::path& path, const RgbdImage& img);
/// Files on disk are top-down; pass GlBottomUp only for rasters written unflipped.
RgbdImage read_ppm(const std::filesystem::path& path, ImageConvention convention = ImageConvention::CvTopDown);

/// Writes `<path>` (raw depth) and `<path>.json` (width, height, convention).
void write_depth(const std::filesystem::path& path, const RgbdImage& img);
/// Reads a depth raster and its sidecar back into an image with empty rgb.
RgbdImage read_depth(const std::filesystem::path& path);

/// Plain binary PBM (P4) of a row-major mask.
void write_pbm(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, int width,
               int height);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace aor::render
