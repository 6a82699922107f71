#include "npdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "npdet/error.hpp"
#include "npdet/hash.hpp"
#include "npdet/rng.hpp"

namespace npdet {

const std::vector<PlateStyle>& default_styles() {
  static const std::vector<PlateStyle> styles = {
      {"IND-1line", {240, 240, 235}, {20, 20, 20}, {15, 15, 15}, std::nullopt, 1},
      {"IND-2line", {235, 200, 40}, {20, 20, 20}, {15, 15, 15}, std::nullopt, 2},
      {"EU-1line", {205, 205, 215}, {20, 50, 170}, {10, 10, 10}, Rgb{20, 50, 170}, 1},
      {"USA-1line", {170, 205, 250}, {150, 20, 30}, {150, 20, 30}, std::nullopt, 1},
      {"UAE-2line", {245, 245, 245}, {190, 25, 30}, {20, 20, 20}, Rgb{190, 25, 30}, 2},
      {"KSA-1line", {200, 235, 200}, {20, 90, 40}, {20, 20, 20}, Rgb{20, 90, 40}, 1},
      {"TR-1line", {238, 238, 238}, {10, 10, 10}, {10, 10, 10}, Rgb{30, 60, 160}, 1},
      {"EU-2line", {205, 205, 215}, {20, 50, 170}, {10, 10, 10}, Rgb{20, 50, 170}, 2},
      {"USA-2line", {170, 205, 250}, {150, 20, 30}, {150, 20, 30}, std::nullopt, 2},
      {"KSA-2line", {200, 235, 200}, {20, 90, 40}, {20, 20, 20}, Rgb{20, 90, 40}, 2},
      {"UAE-1line", {245, 245, 245}, {190, 25, 30}, {20, 20, 20}, Rgb{190, 25, 30}, 1},
  };
  return styles;
}

void SynthConfig::validate() const {
  if (image_size == 0) throw ConfigError("synth: image_size must be positive");
  if (num_classes == 0 || num_classes > default_styles().size()) {
    throw ConfigError("synth: num_classes must be in [1, " + std::to_string(default_styles().size()) + "]");
  }
  if (!(size_min >= 1.0) || !(size_max >= size_min)) throw ConfigError("synth: need 1 <= size_min <= size_max");
  if (!(min_short_side >= 1.0) || min_short_side > size_min) {
    throw ConfigError("synth: need 1 <= min_short_side <= size_min");
  }
  if (plates_max < plates_min) throw ConfigError("synth: plates_max < plates_min");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("synth: test_fraction outside [0, 1]");
}

std::vector<PlateStyle> SynthConfig::styles() const {
  const auto& all = default_styles();
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(num_classes, all.size()))};
}

namespace {

constexpr std::uint64_t kRenderStream = 0x5eed0f5ce4e5ULL;

bool overlaps(const PixelBox& a, const PixelBox& b, double margin) {
  return a.x < b.x + b.w + margin && b.x < a.x + a.w + margin && a.y < b.y + b.h + margin &&
         b.y < a.y + a.h + margin;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Rgb jitter(Rgb c, Rng& rng, double amount) {
  return {clamp_byte(c.r + rng.uniform(-amount, amount)), clamp_byte(c.g + rng.uniform(-amount, amount)),
          clamp_byte(c.b + rng.uniform(-amount, amount))};
}

void draw_glyph_row(Image& img, long x0, long y0, long x1, long y1, Rgb color, Rng& rng) {
  const long h = y1 - y0;
  if (h <= 0 || x1 <= x0) return;
  const long max_bar = std::max(1L, h / 3);
  long x = x0 + rng.integer(0, std::max(0L, max_bar / 2));
  while (x < x1) {
    const long bar = rng.integer(1, max_bar);
    // Some bars are shortened to look a little less like a barcode.
    const long top = rng.uniform() < 0.25 ? y0 + h / 2 : y0;
    img.fill_rect(x, top, std::min(x + bar, x1), y1, color);
    x += bar + rng.integer(1, max_bar);
  }
}

void draw_plate(Image& img, const PixelBox& box, const PlateStyle& style, Rng& rng) {
  const long x0 = std::lround(box.x);
  const long y0 = std::lround(box.y);
  const long x1 = x0 + std::lround(box.w);
  const long y1 = y0 + std::lround(box.h);
  const long w = x1 - x0;
  const long h = y1 - y0;
  const long border = std::max(2L, std::min(w, h) / 10);
  img.fill_rect(x0, y0, x1, y1, jitter(style.border, rng, 8.0));
  const Rgb bg = jitter(style.background, rng, 10.0);
  img.fill_rect(x0 + border, y0 + border, x1 - border, y1 - border, bg);
  long inner_x0 = x0 + border;
  if (style.band) {
    const long band = std::max(2L, w / 6);
    img.fill_rect(inner_x0, y0 + border, inner_x0 + band, y1 - border, jitter(*style.band, rng, 8.0));
    inner_x0 += band;
  }
  const long inner_x1 = x1 - border;
  const long inner_y0 = y0 + border;
  const long inner_h = (y1 - border) - inner_y0;
  const long pad_x = std::max(1L, (inner_x1 - inner_x0) / 16);
  const long rows = static_cast<long>(style.rows);
  for (long r = 0; r < rows; ++r) {
    const long slot0 = inner_y0 + inner_h * r / rows;
    const long slot1 = inner_y0 + inner_h * (r + 1) / rows;
    const long margin = (slot1 - slot0) / 6;
    draw_glyph_row(img, inner_x0 + pad_x, slot0 + margin, inner_x1 - pad_x, slot1 - margin, style.glyph, rng);
  }
}

}  // namespace

ScenePlan plan_scene(const SynthConfig& config, std::size_t index) {
  config.validate();
  ScenePlan plan;
  plan.index = index;
  plan.class_index = index % config.num_classes;
  const auto num_test = static_cast<std::size_t>(std::llround(config.test_fraction * config.num_scenes));
  plan.split = index + num_test >= config.num_scenes ? Split::test : Split::train;

  const PlateStyle& style = default_styles()[plan.class_index];
  const double side = static_cast<double>(config.image_size);
  Rng rng = Rng::derive(config.seed, index);
  const auto count = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(config.plates_min), static_cast<std::int64_t>(config.plates_max)));
  for (std::size_t p = 0; p < count; ++p) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt <= config.max_retries && !placed; ++attempt) {
      const double aspect = style.rows == 1 ? rng.uniform(2.0, 4.5) : rng.uniform(1.2, 2.0);
      const double long_side = std::round(rng.log_uniform(config.size_min, config.size_max));
      const double short_side =
          std::clamp(std::round(long_side / aspect), std::ceil(config.min_short_side), long_side);
      if (long_side > side || short_side > side) continue;
      PixelBox box;
      box.w = long_side;
      box.h = short_side;
      box.x = static_cast<double>(rng.integer(0, static_cast<std::int64_t>(side - box.w)));
      box.y = static_cast<double>(rng.integer(0, static_cast<std::int64_t>(side - box.h)));
      const bool clash = std::any_of(plan.boxes.begin(), plan.boxes.end(),
                                     [&](const PixelBox& other) { return overlaps(box, other, 2.0); });
      if (clash) continue;
      plan.boxes.push_back(box);
      placed = true;
    }
    if (!placed) {
      plan.warnings.push_back("scene " + std::to_string(index) + ": plate " + std::to_string(p) +
                              " skipped after " + std::to_string(config.max_retries) + " retries");
    }
  }
  return plan;
}

Image render_scene(const SynthConfig& config, const ScenePlan& plan) {
  const std::size_t n = config.image_size;
  Rng rng = Rng::derive(config.seed ^ kRenderStream, plan.index);
  const Rgb base = {clamp_byte(rng.uniform(60, 180)), clamp_byte(rng.uniform(60, 180)),
                    clamp_byte(rng.uniform(60, 180))};
  Image img(n, n, base);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = clamp_byte(img.pixels[i] + rng.uniform(-18.0, 18.0));
  }
  // Background clutter, drawn first so plates stay intact.
  const auto clutter = rng.integer(2, 6);
  for (std::int64_t c = 0; c < clutter; ++c) {
    const auto x0 = rng.integer(0, static_cast<std::int64_t>(n) - 1);
    const auto y0 = rng.integer(0, static_cast<std::int64_t>(n) - 1);
    const auto w = rng.integer(1, std::max<std::int64_t>(1, static_cast<std::int64_t>(n) / 3));
    const auto h = rng.integer(1, std::max<std::int64_t>(1, static_cast<std::int64_t>(n) / 3));
    const Rgb color = {clamp_byte(rng.uniform(0, 255)), clamp_byte(rng.uniform(0, 255)),
                       clamp_byte(rng.uniform(0, 255))};
    img.fill_rect(x0, y0, x0 + w, y0 + h, color);
  }
  const PlateStyle& style = default_styles()[plan.class_index];
  for (const PixelBox& box : plan.boxes) draw_plate(img, box, style, rng);
  return img;
}

std::string scene_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.ppm", index);
  return buf;
}

SynthResult synthesize(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "scenes", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "scenes").string() + ": " + ec.message());

  const std::size_t n = config.num_scenes;
  std::vector<ScenePlan> plans(n);
  std::vector<std::uint64_t> digests(n, 0);
  std::vector<std::string> failures(n);
  const auto scenes_dir = out_dir / "scenes";

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    plans[i] = plan_scene(config, i);
    const Image img = render_scene(config, plans[i]);
    try {
      write_ppm(img, scenes_dir / scene_file_name(i));
    } catch (const IoError& e) {
      failures[i] = e.what();
    }
    Fnv1a64 h;
    h.update(img.pixels);
    digests[i] = h.digest();
  }
  for (const std::string& f : failures) {
    if (!f.empty()) throw IoError(f);
  }

  const auto styles = config.styles();
  std::vector<std::string> classes;
  for (const PlateStyle& s : styles) classes.push_back(s.name);
  std::ostringstream text;
  text << manifest_header_line(classes) << '\n';
  SynthResult result;
  for (const ScenePlan& plan : plans) {
    SampleAnnotation sample;
    sample.image = "scenes/" + scene_file_name(plan.index);
    sample.boxes = plan.boxes;
    sample.class_label = styles[plan.class_index].name;
    sample.split = plan.split;
    text << manifest_line(sample) << '\n';
    result.plates += plan.boxes.size();
    result.warnings.insert(result.warnings.end(), plan.warnings.begin(), plan.warnings.end());
  }
  const std::string manifest = text.str();
  result.manifest = out_dir / "manifest.jsonl";
  {
    std::ofstream out(result.manifest, std::ios::binary);
    out << manifest;
    if (!out) throw IoError("cannot write " + result.manifest.string());
  }
  Fnv1a64 h;
  h.update(manifest);
  for (std::uint64_t d : digests) {
    std::uint8_t bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<std::uint8_t>(d >> (8 * b));
    h.update(bytes);
  }
  result.hash = h.digest();
  return result;
}

}  // namespace npdet
