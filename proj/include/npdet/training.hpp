#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "npdet/detection.hpp"
#include "npdet/evaluation.hpp"
#include "npdet/manifest.hpp"
#include "npdet/model.hpp"
#include "npdet/optimizer.hpp"

namespace npdet {

struct EpochLog {
  std::size_t epoch = 0;  // global, 0-based
  SchedulePhase phase = SchedulePhase::main;
  double lr = 0.0;
  std::size_t batch_size = 0;
  double train_loss = 0.0;  // mean over minibatches
  std::optional<double> test_metric;
};

// `epoch,phase,lr,batch_size,train_loss,test_metric`
void write_training_log_header(std::ostream& out);
void write_training_log_row(std::ostream& out, const EpochLog& row);

// Plate crops, letterboxed to the classifier input.
struct ClassificationSet {
  Tensor inputs;  // (N, 3, S, S)
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

// Whole scenes, letterboxed to the detector input; boxes in network pixels.
struct DetectionSet {
  Tensor inputs;  // (N, 3, S, S)
  std::vector<std::vector<GroundTruthBox>> boxes;
  std::vector<TargetGrid> targets;
  std::vector<std::string> groups;  // class label of each scene
  std::size_t collisions = 0;
  std::size_t size() const { return boxes.size(); }
};

ClassificationSet make_classification_set(const Dataset& dataset, Split split, std::size_t input_size);
DetectionSet make_detection_set(const Dataset& dataset, Split split, const Model& model);

struct TrainOptions {
  TrainSchedule schedule;
  OptimizerKind optimizer = OptimizerKind::sgdm;  // main phase; fine-tuning always uses Adam
  std::uint64_t seed = 7;
  std::optional<std::size_t> max_iterations;
  std::size_t eval_period_epochs = 1;  // the last epoch is always evaluated
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::size_t iterations = 0;
};

// Both leave the model holding the parameters of the best evaluated epoch.
// Throws NumericalError as soon as a loss is not finite, ConfigError for an
// empty training set.
TrainResult train_classifier(Model& model, const ClassificationSet& train, const ClassificationSet& test,
                             const TrainOptions& options);
TrainResult train_detector(Model& model, const DetectionSet& train, const DetectionSet& test,
                           const TrainOptions& options, const YoloLossConfig& loss = {});

double evaluate_classifier(Model& model, const ClassificationSet& set);

struct DetectorEvalOptions {
  double conf_threshold = 0.005;
  double nms_threshold = 0.45;
  std::size_t max_detections = 100;
  double iou_threshold = 0.5;
};

// Per-scene results in network coordinates, grouped by scene class.
std::vector<GroupedImage> detector_results(Model& model, const DetectionSet& set,
                                           const DetectorEvalOptions& options = {});
// AP over the pooled set; UndefinedMetricError when the set has no boxes.
double evaluate_detector(Model& model, const DetectionSet& set, const DetectorEvalOptions& options = {});

}  // namespace npdet
