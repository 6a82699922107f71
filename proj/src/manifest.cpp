#include "npdet/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "npdet/error.hpp"
#include "npdet/image.hpp"

namespace npdet {

using json = nlohmann::ordered_json;

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::size_t Dataset::class_index(const std::string& label) const {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw ConfigError("unknown class '" + label + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

std::vector<const SampleAnnotation*> Dataset::split(Split which) const {
  std::vector<const SampleAnnotation*> out;
  for (const SampleAnnotation& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

namespace {

double number_field(const json& obj, const char* key, std::size_t line) {
  if (!obj.contains(key) || !obj[key].is_number()) {
    throw ManifestError(line, std::string("box field '") + key + "' missing or not a number");
  }
  return obj[key].get<double>();
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  Dataset dataset;
  dataset.root = path.parent_path();
  bool declared = false;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ManifestError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ManifestError(line, "expected a JSON object");
    if (obj.contains("classes")) {
      if (declared || !dataset.samples.empty()) throw ManifestError(line, "class header must be the first line");
      if (!obj["classes"].is_array()) throw ManifestError(line, "'classes' must be an array");
      for (const auto& c : obj["classes"]) {
        if (!c.is_string()) throw ManifestError(line, "class names must be strings");
        dataset.classes.push_back(c.get<std::string>());
      }
      declared = true;
      continue;
    }
    for (const char* key : {"image", "boxes", "class", "split"}) {
      if (!obj.contains(key)) throw ManifestError(line, std::string("missing field '") + key + "'");
    }
    if (!obj["image"].is_string() || !obj["class"].is_string() || !obj["split"].is_string() ||
        !obj["boxes"].is_array()) {
      throw ManifestError(line, "field of the wrong type");
    }
    SampleAnnotation sample;
    sample.image = obj["image"].get<std::string>();
    sample.class_label = obj["class"].get<std::string>();
    const std::string split = obj["split"].get<std::string>();
    if (split == "train") {
      sample.split = Split::train;
    } else if (split == "test") {
      sample.split = Split::test;
    } else {
      throw ManifestError(line, "split must be 'train' or 'test', got '" + split + "'");
    }
    if (std::find(dataset.classes.begin(), dataset.classes.end(), sample.class_label) == dataset.classes.end()) {
      if (declared) throw ManifestError(line, "unknown class '" + sample.class_label + "'");
      dataset.classes.push_back(sample.class_label);
    }
    try {
      const auto [w, h] = read_ppm_size(dataset.root / sample.image);
      sample.width = w;
      sample.height = h;
    } catch (const IoError& e) {
      throw ManifestError(line, e.what());
    }
    for (const auto& b : obj["boxes"]) {
      if (!b.is_object()) throw ManifestError(line, "box must be an object");
      PixelBox box{number_field(b, "x", line), number_field(b, "y", line), number_field(b, "w", line),
                   number_field(b, "h", line)};
      if (!(box.w > 0.0 && box.h > 0.0)) throw ManifestError(line, "box size must be positive");
      if (box.x < 0.0 || box.y < 0.0 || box.x + box.w > static_cast<double>(sample.width) ||
          box.y + box.h > static_cast<double>(sample.height)) {
        throw ManifestError(line, "box exceeds image bounds " + std::to_string(sample.width) + "x" +
                                      std::to_string(sample.height));
      }
      sample.boxes.push_back(box);
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

std::string manifest_header_line(const std::vector<std::string>& classes) {
  json obj;
  obj["classes"] = classes;
  return obj.dump();
}

std::string manifest_line(const SampleAnnotation& sample) {
  json obj;
  obj["image"] = sample.image;
  json boxes = json::array();
  for (const PixelBox& b : sample.boxes) {
    json jb;
    auto put = [&](const char* key, double v) {
      if (v == static_cast<double>(static_cast<long long>(v))) {
        jb[key] = static_cast<long long>(v);
      } else {
        jb[key] = v;
      }
    };
    put("x", b.x);
    put("y", b.y);
    put("w", b.w);
    put("h", b.h);
    boxes.push_back(std::move(jb));
  }
  obj["boxes"] = std::move(boxes);
  obj["class"] = sample.class_label;
  obj["split"] = to_string(sample.split);
  return obj.dump();
}

}  // namespace npdet
