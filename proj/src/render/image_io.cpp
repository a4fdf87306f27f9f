#include "aor/render/image_io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <png.h>

namespace aor::render {

static_assert(std::endian::native == std::endian::little, "depth codec assumes little-endian host");

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

std::vector<std::uint8_t> encode_ppm(const RgbdImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

namespace {

/// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
  return tok;
}

int parse_dim(const std::string& tok) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0 || v > 16384) throw ImageIoError("bad PPM dimension");
    return v;
  } catch (const std::logic_error&) {
    throw ImageIoError("bad PPM dimension '" + tok + "'");
  }
}

}  // namespace

RgbdImage decode_ppm(const std::vector<std::uint8_t>& bytes, ImageConvention convention) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw ImageIoError("not a P6 PPM");
  RgbdImage img;
  img.width = parse_dim(header_token(bytes, pos));
  img.height = parse_dim(header_token(bytes, pos));
  if (header_token(bytes, pos) != "255") throw ImageIoError("unsupported PPM maxval");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = 3 * static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() < pos + n) throw ImageIoError("truncated PPM raster");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  img.convention = convention;
  return img;
}

std::vector<std::uint8_t> encode_png(const RgbdImage& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw ImageIoError("png: raster size does not match dimensions");
  }
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = PNG_FORMAT_RGB;
  // A negative stride walks the buffer bottom-up.
  const int stride = (img.convention == ImageConvention::GlBottomUp ? -1 : 1) * img.width * 3;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.rgb.data(), stride, nullptr)) {
    throw ImageIoError(std::string("png: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.rgb.data(), stride, nullptr)) {
    throw ImageIoError(std::string("png: ") + desc.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_depth(const RgbdImage& img) {
  std::vector<std::uint8_t> out(img.depth.size() * sizeof(float));
  std::memcpy(out.data(), img.depth.data(), out.size());
  return out;
}

std::vector<float> decode_depth(const std::vector<std::uint8_t>& bytes, int width, int height) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (width <= 0 || height <= 0 || bytes.size() != n * sizeof(float)) {
    throw ImageIoError("depth raster size does not match declared dimensions");
  }
  std::vector<float> out(n);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbdImage& img) {
  write_file(path, encode_ppm(img));
}

RgbdImage read_ppm(const std::filesystem::path& path, ImageConvention convention) {
  return decode_ppm(read_file(path), convention);
}

void write_depth(const std::filesystem::path& path, const RgbdImage& img) {
  write_file(path, encode_depth(img));
  nlohmann::json side{{"width", img.width},
                      {"height", img.height},
                      {"convention", std::string(to_string(img.convention))},
                      {"format", "float32le"}};
  const std::string text = side.dump(2) + "\n";
  write_file(path.string() + ".json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

RgbdImage read_depth(const std::filesystem::path& path) {
  const auto side_bytes = read_file(path.string() + ".json");
  const auto side = nlohmann::json::parse(side_bytes.begin(), side_bytes.end());
  RgbdImage img;
  img.width = side.at("width").get<int>();
  img.height = side.at("height").get<int>();
  img.convention = parse_convention(side.at("convention").get<std::string>());
  img.depth = decode_depth(read_file(path), img.width, img.height);
  return img;
}

void write_pbm(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, int width,
               int height) {
  const std::string header = "P4\n" + std::to_string(width) + " " + std::to_string(height) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const int row_bytes = (width + 7) / 8;
  for (int r = 0; r < height; ++r) {
    for (int b = 0; b < row_bytes; ++b) {
      std::uint8_t byte = 0;
      for (int k = 0; k < 8; ++k) {
        const int u = 8 * b + k;
        if (u < width && mask[static_cast<std::size_t>(r) * width + u]) byte |= (0x80 >> k);
      }
      out.push_back(byte);
    }
  }
  write_file(path, out);
}

}  // namespace aor::render
