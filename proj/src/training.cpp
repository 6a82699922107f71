#include "npdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "npdet/error.hpp"
#include "npdet/rng.hpp"

namespace npdet {

void write_training_log_header(std::ostream& out) { out << "epoch,phase,lr,batch_size,train_loss,test_metric\n"; }

void write_training_log_row(std::ostream& out, const EpochLog& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.6g,%zu,%.6f,", row.epoch,
                row.phase == SchedulePhase::main ? "main" : "finetune", row.lr, row.batch_size, row.train_loss);
  out << buf;
  if (row.test_metric) {
    std::snprintf(buf, sizeof buf, "%.6f", *row.test_metric);
    out << buf;
  }
  out << '\n';
}

namespace {

std::size_t sample_size(const Tensor& inputs) { return inputs.size() / inputs.dim(0); }

Tensor gather(const Tensor& inputs, std::span<const std::size_t> indices) {
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t per = sample_size(inputs);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(inputs.data() + indices[i] * per, per, out.data() + i * per);
  }
  return out;
}

Tensor slice(const Tensor& inputs, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(inputs, idx);
}

std::vector<Tensor> snapshot(const Network& network) {
  std::vector<Tensor> out;
  for (const Tensor* t : network.state_tensors()) out.push_back(*t);
  return out;
}

void restore(Network& network, const std::vector<Tensor>& state) {
  auto tensors = network.state_tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) *tensors[i] = state[i];
}

Image load_scene(const Dataset& dataset, const SampleAnnotation& sample) {
  return read_ppm(dataset.image_path(sample));
}

// Shared epoch/phase driver. `step` runs one minibatch and returns its loss;
// `evaluate` returns the test metric (higher is better).
template <class Step, class Evaluate>
TrainResult run_schedule(Model& model, std::size_t train_size, const TrainOptions& options, Step step,
                         Evaluate evaluate) {
  const TrainSchedule& schedule = options.schedule;
  schedule.validate();
  if (train_size == 0) throw ConfigError("training split is empty");
  if (options.eval_period_epochs == 0) throw ConfigError("eval period must be positive");

  TrainResult result;
  std::optional<double> best;
  std::vector<Tensor> best_state = snapshot(model.network);
  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), 0);

  const std::size_t main_epochs = schedule.epochs;
  const std::size_t fine_epochs = schedule.finetune ? schedule.finetune->epochs : 0;
  OptimizerState main_state(OptimizerConfig{options.optimizer, schedule.initial_lr});
  OptimizerState fine_state(OptimizerConfig{OptimizerKind::adam, schedule.finetune ? schedule.finetune->start_lr : 0.0});
  std::optional<double> period_start_best;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < main_epochs + fine_epochs && !stop; ++epoch) {
    const bool fine = epoch >= main_epochs;
    const std::size_t local = fine ? epoch - main_epochs : epoch;
    const SchedulePhase phase = fine ? SchedulePhase::finetune : SchedulePhase::main;
    OptimizerState& opt = fine ? fine_state : main_state;
    opt.config.lr = schedule_lr(schedule, local, phase);
    const std::size_t batch =
        fine ? schedule_batch_size(schedule, schedule.minibatch_size, local) : schedule.minibatch_size;

    if (schedule.shuffle_each_epoch) {
      Rng rng = Rng::derive(options.seed, epoch);
      rng.shuffle(order.begin(), order.end());
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < train_size; begin += batch) {
      if (options.max_iterations && result.iterations >= *options.max_iterations) {
        stop = true;
        break;
      }
      const std::size_t end = std::min(train_size, begin + batch);
      const std::span<const std::size_t> indices(order.data() + begin, end - begin);
      model.network.zero_grad();
      const double loss = step(indices);
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", iteration " +
                             std::to_string(result.iterations));
      }
      auto params = model.network.parameters();
      auto grads = model.network.gradients();
      optimizer_step(opt, params, grads);
      loss_sum += loss;
      ++batches;
      ++result.iterations;
    }
    if (batches == 0) break;

    EpochLog row{epoch, phase, opt.config.lr, batch, loss_sum / static_cast<double>(batches), std::nullopt};
    const bool last = stop || epoch + 1 == main_epochs + fine_epochs ||
                      (options.max_iterations && result.iterations >= *options.max_iterations);
    if ((epoch + 1) % options.eval_period_epochs == 0 || last) {
      row.test_metric = evaluate();
      if (!best || *row.test_metric > *best) {
        best = row.test_metric;
        best_state = snapshot(model.network);
        result.best_epoch = epoch;
      }
    }
    if (last) stop = true;
    result.log.push_back(row);
    if (options.on_epoch) options.on_epoch(row);

    // At the end of each fine-tuning period, stop unless the metric improved.
    if (fine && schedule.finetune->stop_when_no_improvement) {
      const std::size_t period = schedule.finetune->lr_halving_period_epochs;
      if (local % period == 0) period_start_best = best;
      if ((local + 1) % period == 0) {
        if (period_start_best && best && *best <= *period_start_best) stop = true;
      }
    }
  }
  restore(model.network, best_state);
  result.best_metric = best.value_or(0.0);
  return result;
}

std::string penultimate_layer(const Network& network) {
  const auto& layers = network.spec().layers;
  if (layers.size() < 2 || !std::holds_alternative<SoftmaxSpec>(layers.back())) {
    throw ConfigError("classifier network must end in a softmax layer");
  }
  return layer_name(layers[layers.size() - 2]);
}

}  // namespace

ClassificationSet make_classification_set(const Dataset& dataset, Split split, std::size_t input_size) {
  std::vector<std::pair<const SampleAnnotation*, PixelBox>> crops;
  for (const SampleAnnotation* s : dataset.split(split)) {
    for (const PixelBox& b : s->boxes) crops.emplace_back(s, b);
  }
  ClassificationSet set;
  set.inputs = Tensor({std::max<std::size_t>(crops.size(), 1), 3, input_size, input_size});
  const std::size_t per = 3 * input_size * input_size;
  const SampleAnnotation* loaded = nullptr;
  Image image;
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& [sample, box] = crops[i];
    if (sample != loaded) {
      image = load_scene(dataset, *sample);
      loaded = sample;
    }
    const Image patch = crop(image, Box::from_corner(box.x, box.y, box.w, box.h));
    image_to_tensor(letterbox(patch, input_size).first, set.inputs, i * per);
    set.labels.push_back(dataset.class_index(sample->class_label));
  }
  if (crops.empty()) set.inputs = Tensor();
  return set;
}

DetectionSet make_detection_set(const Dataset& dataset, Split split, const Model& model) {
  if (model.config.kind != ModelKind::detector) throw ConfigError("detection set needs a detector model");
  const auto samples = dataset.split(split);
  const std::size_t size = model.config.input_size();
  const std::size_t per = 3 * size * size;
  DetectionSet set;
  if (samples.empty()) return set;
  set.inputs = Tensor({samples.size(), 3, size, size});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleAnnotation& s = *samples[i];
    auto [boxed, transform] = letterbox(load_scene(dataset, s), size);
    image_to_tensor(boxed, set.inputs, i * per);
    const std::size_t class_id = model.config.detector_classes > 1 ? dataset.class_index(s.class_label) : 0;
    if (class_id >= model.config.detector_classes) {
      throw ConfigError("class '" + s.class_label + "' outside the detector's " +
                        std::to_string(model.config.detector_classes) + " classes");
    }
    std::vector<GroundTruthBox> boxes;
    for (const PixelBox& p : s.boxes) {
      const Box b = transform.to_network(Box::from_corner(p.x, p.y, p.w, p.h));
      boxes.push_back({b.center_x(), b.center_y(), b.width(), b.height(), class_id});
    }
    TargetGrid grid = encode_targets(boxes, model.head.grid_size, model.anchors, model.head.num_classes,
                                     static_cast<double>(size));
    set.collisions += grid.collisions;
    set.targets.push_back(std::move(grid));
    set.boxes.push_back(std::move(boxes));
    set.groups.push_back(s.class_label);
  }
  return set;
}

double evaluate_classifier(Model& model, const ClassificationSet& set) {
  if (set.size() == 0) throw ConfigError("classification set is empty");
  std::vector<std::size_t> predicted;
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < set.size(); begin += kChunk) {
    const std::size_t end = std::min(set.size(), begin + kChunk);
    const Tensor probs = model.network.forward(slice(set.inputs, begin, end), Mode::infer);
    const std::size_t classes = probs.size() / (end - begin);
    for (std::size_t n = 0; n < end - begin; ++n) {
      const double* p = probs.data() + n * classes;
      predicted.push_back(static_cast<std::size_t>(std::max_element(p, p + classes) - p));
    }
  }
  return classification_accuracy(predicted, set.labels);
}

std::vector<GroupedImage> detector_results(Model& model, const DetectionSet& set,
                                           const DetectorEvalOptions& options) {
  std::vector<GroupedImage> out;
  const double size = static_cast<double>(model.config.input_size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor raw = model.network.forward(slice(set.inputs, i, i + 1), Mode::infer);
    auto kept = nms(decode_predictions(raw, model.head, model.anchors, size, options.conf_threshold),
                    options.nms_threshold);
    if (kept.size() > options.max_detections) kept.resize(options.max_detections);
    GroupedImage g;
    g.group = set.groups[i];
    for (const Detection& d : kept) g.result.detections.push_back({d.box(), d.score});
    for (const GroundTruthBox& b : set.boxes[i]) g.result.ground_truth.push_back(b.box());
    out.push_back(std::move(g));
  }
  return out;
}

double evaluate_detector(Model& model, const DetectionSet& set, const DetectorEvalOptions& options) {
  std::vector<ImageResult> images;
  for (auto& g : detector_results(model, set, options)) images.push_back(std::move(g.result));
  return average_precision(images, options.iou_threshold).ap;
}

TrainResult train_classifier(Model& model, const ClassificationSet& train, const ClassificationSet& test,
                             const TrainOptions& options) {
  if (model.config.kind != ModelKind::classifier) throw ConfigError("train_classifier needs a classifier model");
  const std::string logits_layer = penultimate_layer(model.network);
  const ClassificationSet& eval_set = test.size() > 0 ? test : train;
  auto step = [&](std::span<const std::size_t> indices) {
    std::vector<std::size_t> labels;
    for (std::size_t i : indices) labels.push_back(train.labels[i]);
    const Tensor logits = model.network.forward(gather(train.inputs, indices), Mode::train, logits_layer);
    SoftmaxLoss loss = softmax_cross_entropy(logits, labels);
    loss.grad_logits.reshape(logits.shape());
    model.network.backward(loss.grad_logits);
    return loss.loss;
  };
  return run_schedule(model, train.size(), options, step, [&] { return evaluate_classifier(model, eval_set); });
}

TrainResult train_detector(Model& model, const DetectionSet& train, const DetectionSet& test,
                           const TrainOptions& options, const YoloLossConfig& loss_config) {
  if (model.config.kind != ModelKind::detector) throw ConfigError("train_detector needs a detector model");
  const DetectionSet& eval_set = test.size() > 0 ? test : train;
  auto step = [&](std::span<const std::size_t> indices) {
    std::vector<TargetGrid> targets;
    for (std::size_t i : indices) targets.push_back(train.targets[i]);
    const Tensor raw = model.network.forward(gather(train.inputs, indices), Mode::train);
    YoloLoss loss = yolo_loss_batch(raw, targets, loss_config);
    model.network.backward(loss.grad_raw);
    return loss.loss / static_cast<double>(indices.size());
  };
  return run_schedule(model, train.size(), options, step, [&] { return evaluate_detector(model, eval_set); });
}

}  // namespace npdet
