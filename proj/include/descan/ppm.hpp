#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "descan/error.hpp"
#include "descan/image.hpp"

namespace descan {

inline std::uint8_t to_byte(double v) noexcept {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

inline std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.data().size());
  for (double v : image.data()) out.push_back(to_byte(v));
  return out;
}

inline Image decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) { fail(ErrorKind::io, origin + ": malformed PPM: " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* field) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) bad(std::string("expected ") + field);
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      if (value > (1L << 24)) bad(std::string(field) + " too large");
    }
    return value;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') bad("missing P6 magic");
  pos = 2;
  const long width = read_uint("width");
  const long height = read_uint("height");
  const long maxval = read_uint("maxval");
  if (width < 1 || height < 1) bad("zero dimension");
  if (maxval != 255) fail(ErrorKind::io, origin + ": unsupported PPM maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) bad("missing separator after maxval");
  ++pos;

  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - pos < need)
    fail(ErrorKind::io, origin + ": truncated PPM payload (" + std::to_string(bytes.size() - pos) + " of " +
                            std::to_string(need) + " bytes)");
  std::vector<double> px(need);
  for (std::size_t i = 0; i < need; ++i) px[i] = bytes[pos + i] / 255.0;
  return Image(static_cast<int>(height), static_cast<int>(width), std::move(px));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

inline Image load_image(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path), path.string()); }

inline void save_image(const Image& image, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ppm(image));
}

}  // namespace descan
