#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace npdet {

enum class Split { train, test };

std::string to_string(Split split);

// Top-left origin, pixels.
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

struct SampleAnnotation {
  std::string image;  // relative to the manifest directory
  std::vector<PixelBox> boxes;
  std::string class_label;
  Split split = Split::train;
  std::size_t width = 0;  // from the image header
  std::size_t height = 0;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<SampleAnnotation> samples;

  std::size_t class_index(const std::string& label) const;  // throws ConfigError
  std::filesystem::path image_path(const SampleAnnotation& sample) const { return root / sample.image; }
  std::vector<const SampleAnnotation*> split(Split which) const;
};

// JSON lines. An optional first line `{"classes": [...]}` declares the class
// list; otherwise classes are collected in first-appearance order. Each sample
// line is checked against its image header. Throws ManifestError naming the
// line, or IoError when the manifest itself cannot be read.
Dataset load_manifest(const std::filesystem::path& path);

std::string manifest_header_line(const std::vector<std::string>& classes);
std::string manifest_line(const SampleAnnotation& sample);

}  // namespace npdet
