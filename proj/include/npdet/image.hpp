#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "npdet/box.hpp"
#include "npdet/tensor.hpp"

namespace npdet {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// 8-bit interleaved RGB.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, Rgb fill = {});

  Rgb get(std::size_t x, std::size_t y) const;
  void set(std::size_t x, std::size_t y, Rgb c);
  // Clipped to the image.
  void fill_rect(long x0, long y0, long x1, long y1, Rgb c);

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary PPM (P6, maxval 255).
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);
// Width/height from the header only.
std::pair<std::size_t, std::size_t> read_ppm_size(const std::filesystem::path& path);

struct LetterboxTransform {
  double scale_x = 1.0;
  double scale_y = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;

  Box to_network(const Box& b) const;
  Box to_original(const Box& b) const;
};

// Aspect-preserving bilinear resize into a target x target canvas, centered,
// padded with neutral gray. Throws ConfigError for empty images.
std::pair<Image, LetterboxTransform> letterbox(const Image& image, std::size_t target);

// Sub-image clipped to bounds; at least 1x1.
Image crop(const Image& image, const Box& region);

// (3, H, W) in [0, 1], appended to `out` starting at `offset`.
void image_to_tensor(const Image& image, Tensor& out, std::size_t offset);

}  // namespace npdet
