#include "npdet/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "npdet/anchors.hpp"
#include "npdet/config.hpp"
#include "npdet/error.hpp"
#include "npdet/evaluation.hpp"
#include "npdet/manifest.hpp"
#include "npdet/model.hpp"
#include "npdet/synth.hpp"
#include "npdet/training.hpp"

namespace npdet {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  int verbosity = 0;
};

// Flag values keyed by the config key they override.
using Overrides = std::map<std::string, std::optional<std::string>>;

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config, "key = value settings file");
  app->add_option("--seed", common.seed, "random seed");
  app->add_option("--out", common.out, "output directory");
  app->add_option("--threads", common.threads, "OpenMP threads")->check(CLI::PositiveNumber);
  app->add_flag("-v,--verbose", common.verbosity, "progress output");
}

void add_override(CLI::App* app, Overrides& overrides, const std::string& flag, const std::string& key,
                  const std::string& help) {
  app->add_option(flag, overrides[key], help);
}

KeyValueConfig settings(const Common& common, const Overrides& overrides) {
  KeyValueConfig cfg = common.config ? KeyValueConfig::load(*common.config) : KeyValueConfig{};
  for (const auto& [key, value] : overrides) {
    if (value) cfg.set(key, *value);
  }
  if (common.seed) cfg.set("seed", std::to_string(*common.seed));
  return cfg;
}

std::uint64_t seed_of(const KeyValueConfig& cfg) {
  const auto text = cfg.get_string("seed", "7");
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("seed must be a non-negative integer, got '" + text + "'");
  }
}

fs::path out_dir(const Common& common, const KeyValueConfig& cfg, const char* fallback) {
  fs::path dir = common.out ? *common.out : cfg.get_string("out", fallback);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string required(const KeyValueConfig& cfg, const std::string& key, const std::string& flag) {
  auto value = cfg.get(key);
  if (!value || value->empty()) throw ConfigError("missing " + flag + " (config key '" + key + "')");
  return *value;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::vector<const SampleAnnotation*> select_split(const Dataset& dataset, const std::string& split) {
  if (split == "train") return dataset.split(Split::train);
  if (split == "test") return dataset.split(Split::test);
  if (split == "all") {
    std::vector<const SampleAnnotation*> out;
    for (const auto& s : dataset.samples) out.push_back(&s);
    return out;
  }
  throw ConfigError("split must be train, test or all, got '" + split + "'");
}

// ---- synth

int cmd_synth(const Common& common, const Overrides& overrides, std::ostream& out, std::ostream& err) {
  const KeyValueConfig cfg = settings(common, overrides);
  SynthConfig sc;
  sc.seed = seed_of(cfg);
  sc.num_scenes = cfg.get_size("scenes", sc.num_scenes);
  sc.image_size = cfg.get_size("image_size", sc.image_size);
  sc.num_classes = cfg.get_size("num_classes", sc.num_classes);
  sc.size_min = cfg.get_double("size_min", sc.size_min);
  sc.size_max = cfg.get_double("size_max", sc.size_max);
  sc.min_short_side = cfg.get_double("min_short_side", std::min(sc.min_short_side, sc.size_min));
  sc.plates_min = cfg.get_size("plates_min", sc.plates_min);
  sc.plates_max = cfg.get_size("plates_max", sc.plates_max);
  sc.test_fraction = cfg.get_double("test_fraction", sc.test_fraction);
  sc.max_retries = cfg.get_size("max_retries", sc.max_retries);
  sc.validate();
  const fs::path dir = out_dir(common, cfg, "data");
  const SynthResult result = synthesize(sc, dir);
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
  out << "scenes: " << sc.num_scenes << "\nplates: " << result.plates << "\nmanifest: " << result.manifest.string()
      << "\nmanifest hash: " << hex64(result.hash) << '\n';
  return kExitOk;
}

// ---- train

TrainSchedule schedule_from(const KeyValueConfig& cfg, ModelKind kind) {
  TrainSchedule s;
  if (kind == ModelKind::detector) {
    s.minibatch_size = 6;
    s.initial_lr = 1e-5;
  }
  const long epochs = cfg.get_int("epochs", static_cast<long>(s.epochs));
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  s.epochs = static_cast<std::size_t>(epochs);
  s.minibatch_size = cfg.get_size("minibatch", s.minibatch_size);
  s.initial_lr = cfg.get_double("lr", s.initial_lr);
  s.lr_drop_factor = cfg.get_double("lr_drop", s.lr_drop_factor);
  s.lr_drop_period_epochs = cfg.get_size("lr_period", s.lr_drop_period_epochs);
  s.shuffle_each_epoch = cfg.get_bool("shuffle", s.shuffle_each_epoch);
  const std::size_t fine = cfg.get_size("finetune_epochs", 0);
  if (fine > 0) {
    FinetuneSchedule f;
    f.epochs = fine;
    f.start_lr = cfg.get_double("finetune_lr", f.start_lr);
    f.stop_when_no_improvement = cfg.get_bool("finetune_early_stop", f.stop_when_no_improvement);
    s.finetune = f;
  }
  s.validate();
  return s;
}

OptimizerKind optimizer_from(const KeyValueConfig& cfg) {
  const std::string name = cfg.get_string("optimizer", "sgdm");
  if (name == "sgdm") return OptimizerKind::sgdm;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer must be sgdm or adam, got '" + name + "'");
}

int cmd_train(const Common& common, const Overrides& overrides, std::ostream& out, std::ostream& err) {
  KeyValueConfig cfg = settings(common, overrides);
  const ModelKind kind = parse_model_kind(cfg.get_string("model", "classifier"));
  TrainOptions options;
  options.schedule = schedule_from(cfg, kind);
  options.optimizer = optimizer_from(cfg);
  options.seed = seed_of(cfg);
  options.eval_period_epochs = cfg.get_size("eval_period", 1);
  if (cfg.has("max_iterations")) options.max_iterations = cfg.get_size("max_iterations", 0);
  const fs::path manifest = required(cfg, "manifest", "--manifest");
  const fs::path dir = out_dir(common, cfg, "run");

  const Dataset dataset = load_manifest(manifest);
  if (kind == ModelKind::classifier && !cfg.has("class_names") && !cfg.has("num_classes")) {
    std::string names;
    for (const auto& c : dataset.classes) names += (names.empty() ? "" : ",") + c;
    cfg.set("class_names", names);
  }
  Model model(ModelConfig::from_config(cfg));
  Rng rng(options.seed);
  model.network.initialize(rng);

  std::ofstream log = open_output(dir / "train_log.csv");
  write_training_log_header(log);
  options.on_epoch = [&](const EpochLog& row) {
    write_training_log_row(log, row);
    log.flush();
    if (common.verbosity > 0) write_training_log_row(err, row);
  };

  TrainResult result;
  if (kind == ModelKind::classifier) {
    const std::size_t size = model.config.input_size();
    const ClassificationSet train = make_classification_set(dataset, Split::train, size);
    const ClassificationSet test = make_classification_set(dataset, Split::test, size);
    if (train.size() == 0) throw ConfigError("training split is empty");
    result = train_classifier(model, train, test, options);
  } else {
    const DetectionSet train = make_detection_set(dataset, Split::train, model);
    const DetectionSet test = make_detection_set(dataset, Split::test, model);
    if (train.size() == 0) throw ConfigError("training split is empty");
    if (train.collisions > 0) err << "note: " << train.collisions << " ground-truth boxes lost to grid collisions\n";
    result = train_detector(model, train, test, options);
  }
  const fs::path checkpoint = dir / "model.ckpt";
  save_model(model, checkpoint);
  out << "iterations: " << result.iterations << "\nbest epoch: " << result.best_epoch
      << "\nbest test metric: " << fixed4(result.best_metric) << "\ncheckpoint: " << checkpoint.string() << '\n';
  return kExitOk;
}

// ---- eval

std::map<std::string, std::vector<ScoredBox>> read_detection_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read detections " + path.string());
  std::map<std::string, std::vector<ScoredBox>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (number == 1 || trim(line).empty()) continue;
    const auto fields = split_list(line);
    if (fields.size() != 7) throw IoError(path.string() + ":" + std::to_string(number) + ": expected 7 fields");
    try {
      const double cx = std::stod(fields[1]);
      const double cy = std::stod(fields[2]);
      const double w = std::stod(fields[3]);
      const double h = std::stod(fields[4]);
      out[fields[0]].push_back({Box::from_center(cx, cy, w, h), std::stod(fields[5])});
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(number) + ": malformed number");
    }
  }
  return out;
}

void write_report_files(const EvalReport& report, const fs::path& dir, bool svg) {
  {
    std::ofstream f = open_output(dir / "report.csv");
    write_report_csv(report, f);
  }
  {
    std::ofstream f = open_output(dir / "report.txt");
    write_report_table(report, f);
  }
  {
    std::ofstream f = open_output(dir / "pr_curve.csv");
    write_pr_curve_csv(report.pooled_curve, f);
  }
  if (svg) {
    std::ofstream f = open_output(dir / "pr_curve.svg");
    write_pr_curve_svg(report.pooled_curve, f);
  }
}

int eval_classifier(Model& model, const Dataset& dataset, const std::vector<const SampleAnnotation*>& samples,
                    const fs::path& dir, std::ostream& out) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_class;  // correct, total
  std::vector<std::string> order;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> truth;
  for (const SampleAnnotation* s : samples) {
    const Image image = read_ppm(dataset.image_path(*s));
    for (const PixelBox& b : s->boxes) {
      const auto probs = classify(model, image, Box::from_corner(b.x, b.y, b.w, b.h));
      const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      const std::size_t label = dataset.class_index(s->class_label);
      predicted.push_back(best);
      truth.push_back(label);
      if (!per_class.count(s->class_label)) order.push_back(s->class_label);
      auto& [correct, total] = per_class[s->class_label];
      correct += best == label ? 1 : 0;
      ++total;
    }
  }
  if (truth.empty()) throw UndefinedMetricError("accuracy undefined: no labelled plates in the evaluated split");
  const double accuracy = classification_accuracy(predicted, truth);
  std::ofstream f = open_output(dir / "report.csv");
  f << "group,accuracy,samples\n";
  for (const auto& name : order) {
    const auto& [correct, total] = per_class[name];
    f << name << ',' << fixed4(static_cast<double>(correct) / static_cast<double>(total)) << ',' << total << '\n';
  }
  f << "pooled," << fixed4(accuracy) << ',' << truth.size() << '\n';
  out << "accuracy: " << fixed4(accuracy) << '\n';
  return kExitOk;
}

int cmd_eval(const Common& common, const Overrides& overrides, bool svg, std::ostream& out, std::ostream&) {
  const KeyValueConfig cfg = settings(common, overrides);
  const Dataset dataset = load_manifest(required(cfg, "manifest", "--manifest"));
  const auto samples = select_split(dataset, cfg.get_string("split", "test"));
  const double iou_thr = cfg.get_double("iou", 0.5);
  const double score_thr = cfg.get_double("score_threshold", 0.5);

  std::optional<std::map<std::string, std::vector<ScoredBox>>> given;
  std::optional<Model> model;
  if (cfg.has("detections")) {
    given = read_detection_csv(cfg.get_string("detections", ""));
  } else {
    const fs::path checkpoint = required(cfg, "checkpoint", "--checkpoint or --detections");
    if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
    model.emplace(load_model(checkpoint));
  }
  const fs::path dir = out_dir(common, cfg, "eval");
  if (model && model->config.kind == ModelKind::classifier) return eval_classifier(*model, dataset, samples, dir, out);

  const double conf = cfg.get_double("conf", 0.005);
  const double nms_thr = cfg.get_double("nms", 0.45);
  std::vector<GroupedImage> images;
  for (const SampleAnnotation* s : samples) {
    GroupedImage g;
    g.group = s->class_label;
    for (const PixelBox& b : s->boxes) g.result.ground_truth.push_back(Box::from_corner(b.x, b.y, b.w, b.h));
    if (given) {
      if (auto it = given->find(s->image); it != given->end()) g.result.detections = it->second;
    } else {
      for (const Detection& d : detect(*model, read_ppm(dataset.image_path(*s)), conf, nms_thr)) {
        g.result.detections.push_back({d.box(), d.score});
      }
    }
    images.push_back(std::move(g));
  }
  EvalReport report;
  try {
    report = per_group_report(images, score_thr, iou_thr);
  } catch (const UndefinedMetricError&) {
    throw UndefinedMetricError("AP undefined: the evaluated split has no ground-truth boxes");
  }
  write_report_files(report, dir, svg);
  for (const auto& g : report.groups) {
    out << "AP[" << g.group << "]: " << (g.ap ? fixed4(*g.ap) : std::string("undefined")) << '\n';
  }
  out << "AP: " << fixed4(report.pooled.ap.value_or(0.0)) << '\n';
  return kExitOk;
}

// ---- anchors

int cmd_anchors(const Common& common, const Overrides& overrides, std::optional<std::size_t> synthetic,
                std::ostream& out, std::ostream&) {
  const KeyValueConfig cfg = settings(common, overrides);
  const AnchorSet anchors = generate_pyramid(pyramid_from_config(cfg));
  std::vector<BoxSize> boxes;
  if (cfg.has("sizes")) {
    boxes = parse_box_sizes(cfg.get_list("sizes", {}));
  } else if (cfg.has("manifest")) {
    const Dataset dataset = load_manifest(cfg.get_string("manifest", ""));
    for (const auto& s : dataset.samples) {
      for (const PixelBox& b : s.boxes) boxes.push_back({b.h, b.w});
    }
  } else if (synthetic) {
    SynthConfig sc;
    sc.seed = seed_of(cfg);
    sc.num_scenes = *synthetic;
    for (std::size_t i = 0; i < sc.num_scenes; ++i) {
      for (const PixelBox& b : plan_scene(sc, i).boxes) boxes.push_back({b.h, b.w});
    }
  }
  if (boxes.empty()) throw ConfigError("no box sizes: give --sizes, --manifest or --synthetic with boxes");
  const CoverageReport report = coverage_stats(boxes, anchors);
  const fs::path dir = out_dir(common, cfg, "anchors");
  {
    std::ofstream f = open_output(dir / "anchors.csv");
    write_anchor_csv(anchors, f);
  }
  {
    std::ofstream f = open_output(dir / "coverage.csv");
    write_coverage_csv(report, f);
  }
  out << "anchors: " << anchors.size() << "\nboxes: " << boxes.size() << "\nmin best IOU: "
      << fixed4(report.min_best_iou) << "\nmean best IOU: " << fixed4(report.mean_best_iou) << '\n';
  return kExitOk;
}

// ---- predict

int cmd_predict(const Common& common, const Overrides& overrides, const std::vector<std::string>& images,
                std::ostream& out, std::ostream& err) {
  const KeyValueConfig cfg = settings(common, overrides);
  const fs::path checkpoint = required(cfg, "checkpoint", "--checkpoint");
  if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
  Model model = load_model(checkpoint);
  if (model.config.kind != ModelKind::detector) throw ConfigError("predict needs a detector checkpoint");
  const double conf = cfg.get_double("conf", 0.25);
  const double nms_thr = cfg.get_double("nms", 0.45);
  const fs::path dir = out_dir(common, cfg, "predict");
  std::ofstream csv = open_output(dir / "detections.csv");
  write_detection_csv_header(csv);
  int status = kExitOk;
  for (const std::string& path : images) {
    Image image;
    try {
      image = read_ppm(path);
    } catch (const IoError& e) {
      err << path << ": error: " << e.what() << '\n';
      status = kExitIo;
      continue;
    }
    const auto detections = detect(model, image, conf, nms_thr);
    write_detection_csv_rows(csv, path, detections);
    err << path << ": " << detections.size() << " detections\n";
  }
  out << "detections: " << (dir / "detections.csv").string() << '\n';
  return status;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Number plate detection toolkit"};
  app.require_subcommand(1);
  // One copy per subcommand: CLI11 does not share a bound variable well.
  Common synth_c, train_c, eval_c, anchors_c, predict_c;
  Overrides synth_o, train_o, eval_o, anchors_o, predict_o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic plate dataset");
  add_common(synth, synth_c);
  add_override(synth, synth_o, "--scenes", "scenes", "number of scenes");
  add_override(synth, synth_o, "--image-size", "image_size", "scene side in pixels");
  add_override(synth, synth_o, "--classes", "num_classes", "number of plate styles");
  add_override(synth, synth_o, "--size-min", "size_min", "smallest plate long side");
  add_override(synth, synth_o, "--size-max", "size_max", "largest plate long side");
  add_override(synth, synth_o, "--min-short", "min_short_side", "smallest plate short side");
  add_override(synth, synth_o, "--plates-min", "plates_min", "fewest plates per scene");
  add_override(synth, synth_o, "--plates-max", "plates_max", "most plates per scene");
  add_override(synth, synth_o, "--test-fraction", "test_fraction", "fraction of scenes in the test split");

  auto* train = app.add_subcommand("train", "train a classifier or detector");
  add_common(train, train_c);
  add_override(train, train_o, "--manifest", "manifest", "dataset manifest");
  add_override(train, train_o, "--model", "model", "classifier or detector");
  add_override(train, train_o, "--epochs", "epochs", "main-phase epochs");
  add_override(train, train_o, "--batch", "minibatch", "minibatch size");
  add_override(train, train_o, "--lr", "lr", "initial learning rate");
  add_override(train, train_o, "--optimizer", "optimizer", "sgdm or adam");
  add_override(train, train_o, "--finetune-epochs", "finetune_epochs", "Adam fine-tuning epochs");
  add_override(train, train_o, "--max-iterations", "max_iterations", "stop after this many minibatches");
  add_override(train, train_o, "--input-size", "input_size", "network input side");

  bool svg = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a detection CSV");
  add_common(eval, eval_c);
  add_override(eval, eval_o, "--checkpoint", "checkpoint", "model checkpoint");
  add_override(eval, eval_o, "--manifest", "manifest", "dataset manifest");
  add_override(eval, eval_o, "--split", "split", "train, test or all");
  add_override(eval, eval_o, "--detections", "detections", "detection CSV instead of a checkpoint");
  add_override(eval, eval_o, "--iou", "iou", "IOU threshold for a match");
  eval->add_flag("--svg", svg, "also write pr_curve.svg");

  std::optional<std::size_t> synthetic;
  auto* anchors = app.add_subcommand("anchors", "anchor pyramid and coverage report");
  add_common(anchors, anchors_c);
  add_override(anchors, anchors_o, "--manifest", "manifest", "take box sizes from a manifest");
  add_override(anchors, anchors_o, "--sizes", "sizes", "explicit HxW list");
  add_override(anchors, anchors_o, "--bases", "anchor_bases", "pyramid base sizes, HxW list");
  add_override(anchors, anchors_o, "--levels", "anchor_levels", "pyramid levels");
  add_override(anchors, anchors_o, "--scale", "anchor_scale", "pyramid scale step");
  anchors->add_option("--synthetic", synthetic, "sample plate sizes from this many synthetic scene layouts");

  std::vector<std::string> images;
  auto* predict = app.add_subcommand("predict", "detect plates in PPM images");
  add_common(predict, predict_c);
  add_override(predict, predict_o, "--checkpoint", "checkpoint", "detector checkpoint");
  add_override(predict, predict_o, "--conf", "conf", "minimum detection score");
  predict->add_option("images", images, "input images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    for (const Common* c : {&synth_c, &train_c, &eval_c, &anchors_c, &predict_c}) {
      if (c->threads) omp_set_num_threads(*c->threads);
    }
    if (synth->parsed()) return cmd_synth(synth_c, synth_o, out, err);
    if (train->parsed()) return cmd_train(train_c, train_o, out, err);
    if (eval->parsed()) return cmd_eval(eval_c, eval_o, svg, out, err);
    if (anchors->parsed()) return cmd_anchors(anchors_c, anchors_o, synthetic, out, err);
    if (predict->parsed()) return cmd_predict(predict_c, predict_o, images, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UndefinedMetricError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    // Io, manifest and checkpoint problems.
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace npdet
