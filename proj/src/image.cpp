#include "npdet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "npdet/error.hpp"

namespace npdet {

Image::Image(std::size_t w, std::size_t h, Rgb fill) : width(w), height(h), pixels(w * h * 3) {
  for (std::size_t i = 0; i < w * h; ++i) {
    pixels[3 * i] = fill.r;
    pixels[3 * i + 1] = fill.g;
    pixels[3 * i + 2] = fill.b;
  }
}

Rgb Image::get(std::size_t x, std::size_t y) const {
  const std::size_t i = 3 * (y * width + x);
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(std::size_t x, std::size_t y, Rgb c) {
  const std::size_t i = 3 * (y * width + x);
  pixels[i] = c.r;
  pixels[i + 1] = c.g;
  pixels[i + 2] = c.b;
}

void Image::fill_rect(long x0, long y0, long x1, long y1, Rgb c) {
  x0 = std::max(x0, 0L);
  y0 = std::max(y0, 0L);
  x1 = std::min(x1, static_cast<long>(width));
  y1 = std::min(y1, static_cast<long>(height));
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c);
  }
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

struct PpmHeader {
  std::size_t width;
  std::size_t height;
};

PpmHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  if (header_token(in) != "P6") throw IoError(path.string() + " is not a binary PPM (P6) image");
  try {
    const auto w = std::stoul(header_token(in));
    const auto h = std::stoul(header_token(in));
    const auto maxval = std::stoul(header_token(in));
    if (w == 0 || h == 0 || maxval != 255) throw IoError(path.string() + ": unsupported PPM geometry or depth");
    return {w, h};
  } catch (const std::logic_error&) {
    throw IoError(path.string() + ": malformed PPM header");
  }
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  const PpmHeader h = parse_header(in, path);
  Image image(h.width, h.height);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  return image;
}

std::pair<std::size_t, std::size_t> read_ppm_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  const PpmHeader h = parse_header(in, path);
  return {h.width, h.height};
}

Box LetterboxTransform::to_network(const Box& b) const {
  return {b.x0 * scale_x + pad_x, b.y0 * scale_y + pad_y, b.x1 * scale_x + pad_x, b.y1 * scale_y + pad_y};
}

Box LetterboxTransform::to_original(const Box& b) const {
  return {(b.x0 - pad_x) / scale_x, (b.y0 - pad_y) / scale_y, (b.x1 - pad_x) / scale_x, (b.y1 - pad_y) / scale_y};
}

namespace {

// Bilinear sample at continuous pixel-center coordinates.
Image resize_bilinear(const Image& src, std::size_t w, std::size_t h) {
  if (w == src.width && h == src.height) return src;
  Image dst(w, h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx =
          std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        auto px = [&](std::size_t xx, std::size_t yy) {
          return static_cast<double>(src.pixels[3 * (yy * src.width + xx) + c]);
        };
        const double top = px(x0, y0) * (1.0 - wx) + px(x1, y0) * wx;
        const double bottom = px(x0, y1) * (1.0 - wx) + px(x1, y1) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        dst.pixels[3 * (y * w + x) + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return dst;
}

}  // namespace

std::pair<Image, LetterboxTransform> letterbox(const Image& image, std::size_t target) {
  if (image.width == 0 || image.height == 0 || target == 0) throw ConfigError("letterbox of an empty image");
  const double scale = std::min(static_cast<double>(target) / static_cast<double>(image.width),
                                static_cast<double>(target) / static_cast<double>(image.height));
  const auto new_w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(image.width * scale)), 1, target);
  const auto new_h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(image.height * scale)), 1, target);
  const std::size_t pad_x = (target - new_w) / 2;
  const std::size_t pad_y = (target - new_h) / 2;

  Image canvas(target, target, {128, 128, 128});
  const Image resized = resize_bilinear(image, new_w, new_h);
  for (std::size_t y = 0; y < new_h; ++y) {
    std::copy_n(resized.pixels.begin() + static_cast<long>(3 * y * new_w), 3 * new_w,
                canvas.pixels.begin() + static_cast<long>(3 * ((y + pad_y) * target + pad_x)));
  }
  LetterboxTransform t;
  t.scale_x = static_cast<double>(new_w) / static_cast<double>(image.width);
  t.scale_y = static_cast<double>(new_h) / static_cast<double>(image.height);
  t.pad_x = static_cast<double>(pad_x);
  t.pad_y = static_cast<double>(pad_y);
  return {std::move(canvas), t};
}

Image crop(const Image& image, const Box& region) {
  const auto clampi = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(std::floor(v), 0.0, static_cast<double>(hi)));
  };
  std::size_t x0 = clampi(region.x0, image.width - 1);
  std::size_t y0 = clampi(region.y0, image.height - 1);
  std::size_t x1 = std::max(x0 + 1, clampi(std::ceil(region.x1), image.width));
  std::size_t y1 = std::max(y0 + 1, clampi(std::ceil(region.y1), image.height));
  Image out(x1 - x0, y1 - y0);
  for (std::size_t y = y0; y < y1; ++y) {
    std::copy_n(image.pixels.begin() + static_cast<long>(3 * (y * image.width + x0)), 3 * (x1 - x0),
                out.pixels.begin() + static_cast<long>(3 * (y - y0) * out.width));
  }
  return out;
}

void image_to_tensor(const Image& image, Tensor& out, std::size_t offset) {
  const std::size_t plane = image.width * image.height;
  if (offset + 3 * plane > out.size()) throw ShapeError("image_to_tensor: destination too small");
  double* dst = out.data() + offset;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) dst[c * plane + i] = image.pixels[3 * i + c] / 255.0;
  }
}

}  // namespace npdet
