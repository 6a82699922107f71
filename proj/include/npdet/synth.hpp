#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "npdet/image.hpp"
#include "npdet/manifest.hpp"

namespace npdet {

struct PlateStyle {
  std::string name;
  Rgb background;
  Rgb border;
  Rgb glyph;
  std::optional<Rgb> band;  // vertical strip at the left edge
  std::size_t rows = 1;     // 1 or 2 rows of glyphs
};

// Eleven layouts; the first six are the default class set.
const std::vector<PlateStyle>& default_styles();

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t num_scenes = 100;
  std::size_t image_size = 704;
  std::size_t num_classes = 6;
  double size_min = 10.0;  // plate long side, pixels, sampled log-uniform
  double size_max = 670.0;
  double min_short_side = 10.0;  // floor for the plate's short side
  std::size_t plates_min = 1;
  std::size_t plates_max = 3;
  double test_fraction = 0.25;
  std::size_t max_retries = 20;

  void validate() const;  // throws ConfigError
  std::vector<PlateStyle> styles() const;
};

struct ScenePlan {
  std::size_t index = 0;
  std::size_t class_index = 0;
  Split split = Split::train;
  std::vector<PixelBox> boxes;
  std::vector<std::string> warnings;
};

// Layout only; cheap and independent of rendering.
ScenePlan plan_scene(const SynthConfig& config, std::size_t index);
Image render_scene(const SynthConfig& config, const ScenePlan& plan);

std::string scene_file_name(std::size_t index);

struct SynthResult {
  std::filesystem::path manifest;
  std::uint64_t hash = 0;  // over the manifest text and every image in order
  std::size_t plates = 0;
  std::vector<std::string> warnings;
};

// Writes <out>/manifest.jsonl and <out>/scenes/NNNNNN.ppm. Throws IoError.
SynthResult synthesize(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace npdet
