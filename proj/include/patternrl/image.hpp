#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patternrl {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved pixels, 1 (gray) or 3 (RGB) channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

// JPEG (baseline, 4:2:0 chroma subsampling for RGB) and binary PNM (P5/P6).
std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality);
std::vector<std::uint8_t> encode_pnm(const Image& img);
// Detects the format from the leading bytes.
Image decode_image(std::span<const std::uint8_t> bytes);

Image read_image(const std::filesystem::path& path);
// Format from the extension: .jpg/.jpeg or .ppm/.pgm/.pnm.
void write_image(const std::filesystem::path& path, const Image& img, int jpeg_quality = 95);

// Separable Gaussian, radius ceil(3 sigma), clamped borders. sigma = 0 is
// the identity.
Image gaussian_blur(const Image& img, double sigma);

// Bilinear resampling with pixel-centre alignment.
Image resize_bilinear(const Image& img, int width, int height);

}  // namespace patternrl
