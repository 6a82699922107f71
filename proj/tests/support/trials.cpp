#include "trials.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gradcheck.hpp"
#include "npdet/anchors.hpp"
#include "npdet/box.hpp"
#include "npdet/detection.hpp"
#include "npdet/layers.hpp"
#include "npdet/network.hpp"

namespace npdet::testing {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

void randomize_conv(ConvLayer& layer, Rng& rng) {
  for (double& v : layer.kernel.values()) v = rng.uniform(-1, 1);
  for (double& v : layer.bias.values()) v = rng.uniform(-0.5, 0.5);
  if (layer.has_bn) {
    for (double& v : layer.bn_scale.values()) v = rng.uniform(0.5, 1.5);
    for (double& v : layer.bn_shift.values()) v = rng.uniform(-0.5, 0.5);
    for (double& v : layer.bn_running_mean.values()) v = rng.uniform(-0.5, 0.5);
    for (double& v : layer.bn_running_var.values()) v = rng.uniform(0.5, 2.0);
  }
}

}  // namespace

double conv_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = pick(rng, 1, 3);
  const std::size_t stride = pick(rng, 1, 2);
  const std::size_t pad = pick(rng, 0, 1);
  const std::size_t cin = pick(rng, 1, 3);
  const std::size_t cout = pick(rng, 1, 3);
  const std::size_t h = pick(rng, std::max<std::size_t>(1, k > 2 * pad ? k - 2 * pad : 1), 6);
  const std::size_t w = pick(rng, std::max<std::size_t>(1, k > 2 * pad ? k - 2 * pad : 1), 6);
  const bool bn = rng.uniform() < 0.7;
  const Activation act = rng.uniform() < 0.6 ? Activation::relu : Activation::none;
  const Mode mode = rng.uniform() < 0.75 ? Mode::train : Mode::infer;
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  std::size_t n = pick(rng, 1, 3);
  // Batch statistics need a few values per channel.
  while (bn && mode == Mode::train && n * ho * wo < 4) ++n;

  ConvLayer layer = ConvLayer::create(cin, cout, k, stride, pad, bn, act);
  randomize_conv(layer, rng);
  Tensor x = random_tensor({n, cin, h, w}, rng);
  auto [y, cache] = conv_forward(layer, x, mode);
  const Tensor r = random_tensor(y.shape(), rng);
  const ConvBackward back = conv_backward(layer, cache, r);

  auto loss = [&] {
    ConvLayer copy = layer;
    Probe p;
    const Tensor out = conv_forward(copy, x, mode).first;
    p.value = dot(out, r);
    if (act == Activation::relu) append_relu_mask(p.branch, out);
    return p;
  };
  double worst = max_gradient_error(x, back.grad_input, loss);
  if (bn && mode == Mode::train && k == 1 && cin == 1)
    worst = std::max(worst, scale_invariant_gradient_error(layer.kernel, back.grads.kernel, loss));
  else
    worst = std::max(worst, max_gradient_error(layer.kernel, back.grads.kernel, loss));
  if (bn && mode == Mode::train) {
    worst = std::max(worst, zero_gradient_error(layer.bias, back.grads.bias, loss));
  } else {
    worst = std::max(worst, max_gradient_error(layer.bias, back.grads.bias, loss));
  }
  if (bn) {
    worst = std::max(worst, max_gradient_error(layer.bn_scale, back.grads.bn_scale, loss));
    worst = std::max(worst, max_gradient_error(layer.bn_shift, back.grads.bn_shift, loss));
  }
  return worst;
}

double maxpool_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t h = pick(rng, 2, 7);
  const std::size_t w = pick(rng, 2, 7);
  const std::size_t size = pick(rng, 1, std::min<std::size_t>(3, std::min(h, w)));
  const std::size_t stride = pick(rng, 1, 3);
  Tensor x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), h, w}, rng);
  auto [y, cache] = maxpool_forward(x, size, stride);
  const Tensor r = random_tensor(y.shape(), rng);
  const Tensor grad = maxpool_backward(cache, r);
  return max_gradient_error(x, grad, [&] {
    auto [out, c] = maxpool_forward(x, size, stride);
    return Probe{dot(out, r), c.argmax};
  });
}

double fc_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t c = pick(rng, 1, 3);
  const std::size_t h = pick(rng, 1, 2);
  const std::size_t w = pick(rng, 1, 2);
  FcLayer layer = FcLayer::create(c * h * w, pick(rng, 1, 5));
  for (double& v : layer.weights.values()) v = rng.uniform(-1, 1);
  for (double& v : layer.bias.values()) v = rng.uniform(-1, 1);
  Tensor x = random_tensor({pick(rng, 1, 3), c, h, w}, rng);
  auto [y, cache] = fc_forward(layer, x);
  const Tensor r = random_tensor(y.shape(), rng);
  const FcBackward back = fc_backward(layer, cache, r);
  auto loss = [&] { return dot(fc_forward(layer, x).first, r); };
  double worst = max_gradient_error(x, back.grad_input, loss);
  worst = std::max(worst, max_gradient_error(layer.weights, back.grad_weights, loss));
  return std::max(worst, max_gradient_error(layer.bias, back.grad_bias, loss));
}

double softmax_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  Tensor logits = random_tensor({pick(rng, 1, 3), pick(rng, 2, 6)}, rng, -3.0, 3.0);
  const Tensor y = softmax(logits);
  const Tensor r = random_tensor(y.shape(), rng);
  const Tensor grad = softmax_backward(y, r);
  return max_gradient_error(logits, grad, [&] { return dot(softmax(logits), r); });
}

double cross_entropy_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = pick(rng, 1, 4);
  const std::size_t k = pick(rng, 2, 6);
  Tensor logits = random_tensor({n, k}, rng, -3.0, 3.0);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = pick(rng, 0, k - 1);
  const SoftmaxLoss result = softmax_cross_entropy(logits, labels);
  return max_gradient_error(logits, result.grad_logits, [&] { return softmax_cross_entropy(logits, labels).loss; });
}

double residual_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t cin = pick(rng, 1, 3);
  const std::size_t cout = pick(rng, 1, 3);
  const std::size_t stride = pick(rng, 1, 2);
  const std::size_t h = pick(rng, 2, 5);
  const std::size_t w = pick(rng, 2, 5);
  const Mode mode = rng.uniform() < 0.75 ? Mode::train : Mode::infer;
  const std::size_t ho = (h + 2 - 3) / stride + 1;
  const std::size_t wo = (w + 2 - 3) / stride + 1;
  std::size_t n = pick(rng, 1, 2);
  while (n * ho * wo < 4) ++n;

  ResidualBlock block = ResidualBlock::create(cin, cout, stride);
  randomize_conv(block.conv1, rng);
  randomize_conv(block.conv2, rng);
  if (block.projection) randomize_conv(*block.projection, rng);
  Tensor x = random_tensor({n, cin, h, w}, rng);
  auto [y, cache] = residual_forward(block, x, mode);
  const Tensor r = random_tensor(y.shape(), rng);
  const ResidualBackward back = residual_backward(block, cache, r);
  auto loss = [&] {
    ResidualBlock copy = block;
    auto [out, c] = residual_forward(copy, x, mode);
    Probe p{dot(out, r), {}};
    append_relu_mask(p.branch, c.conv1.activated);
    append_relu_mask(p.branch, out);
    return p;
  };
  double worst = max_gradient_error(x, back.grad_input, loss);
  worst = std::max(worst, max_gradient_error(block.conv1.kernel, back.grads.conv1.kernel, loss));
  worst = std::max(worst, max_gradient_error(block.conv1.bn_scale, back.grads.conv1.bn_scale, loss));
  worst = std::max(worst, max_gradient_error(block.conv2.kernel, back.grads.conv2.kernel, loss));
  worst = std::max(worst, max_gradient_error(block.conv2.bn_shift, back.grads.conv2.bn_shift, loss));
  if (block.projection) {
    if (cin == 1 && mode == Mode::train)
      worst = std::max(worst, scale_invariant_gradient_error(block.projection->kernel, back.grads.projection->kernel, loss));
    else
      worst = std::max(worst, max_gradient_error(block.projection->kernel, back.grads.projection->kernel, loss));
    worst = std::max(worst, max_gradient_error(block.projection->bn_scale, back.grads.projection->bn_scale, loss));
  }
  return worst;
}

double yolo_loss_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t s = pick(rng, 1, 3);
  const std::size_t a = pick(rng, 1, 3);
  const std::size_t c = pick(rng, 1, 3);
  const double image = 8.0 * static_cast<double>(s);
  AnchorSet anchors;
  for (std::size_t i = 0; i < a; ++i) anchors.anchors.push_back({rng.uniform(2, 10), rng.uniform(2, 10)});
  std::vector<GroundTruthBox> boxes(pick(rng, 0, 3));
  for (auto& b : boxes) {
    b = {rng.uniform(0, image), rng.uniform(0, image), rng.uniform(1, 12), rng.uniform(1, 12), pick(rng, 0, c - 1)};
  }
  const TargetGrid target = encode_targets(boxes, s, anchors, c, image);
  Tensor raw = random_tensor({1, a * (c + 5), s, s}, rng, -2.0, 2.0);
  YoloLossConfig cfg{rng.uniform(0.5, 5), rng.uniform(0.1, 1), rng.uniform(0.5, 2), rng.uniform(0.5, 2)};
  const YoloLoss result = yolo_loss(raw, target, cfg);
  return max_gradient_error(raw, result.grad_raw, [&] { return yolo_loss(raw, target, cfg).loss; });
}

double network_gradient_trial(std::uint64_t seed) {
  Rng rng(seed);
  NetworkSpec spec{"tiny", {2, 6, 6}, {}};
  spec.layers.push_back(ConvSpec{"conv1", 3, 3, 1, 1});
  spec.layers.push_back(MaxPoolSpec{"pool1", 2, 2});
  spec.layers.push_back(ResidualBlockSpec{"block", 4, 2});
  spec.layers.push_back(ConvSpec{"conv2", 3, 2, 1, 0, true, Activation::relu});
  spec.layers.push_back(FullyConnectedSpec{"fc", 3});
  spec.layers.push_back(SoftmaxSpec{"softmax"});
  Network net(spec);
  net.initialize(rng);
  Tensor x = random_tensor({3, 2, 6, 6}, rng);
  const Tensor y = net.forward(x, Mode::train);
  const Tensor r = random_tensor(y.shape(), rng);
  net.zero_grad();
  const Tensor grad_x = net.backward(r);
  std::vector<Tensor> grads;
  for (const Tensor* g : net.gradients()) grads.push_back(*g);
  auto loss = [&] {
    Probe p{dot(net.forward(x, Mode::train), r), {}};
    append_relu_mask(p.branch, net.activation("conv1"));
    p.branch.push_back(0);
    const auto pooled = maxpool_forward(net.activation("conv1"), 2, 2).second.argmax;
    p.branch.insert(p.branch.end(), pooled.begin(), pooled.end());
    ResidualBlock copy = net.residual("block");
    append_relu_mask(p.branch, residual_forward(copy, net.activation("pool1"), Mode::train).second.conv1.activated);
    append_relu_mask(p.branch, net.activation("block"));
    append_relu_mask(p.branch, net.activation("conv2"));
    return p;
  };
  double worst = max_gradient_error(x, grad_x, loss);
  // Every conv here is batch-normalized in train mode, so its bias has zero gradient.
  std::vector<const Tensor*> cancelled = {&net.conv("conv1").bias, &net.conv("conv2").bias};
  ResidualBlock& block = net.residual("block");
  cancelled.push_back(&block.conv1.bias);
  cancelled.push_back(&block.conv2.bias);
  if (block.projection) cancelled.push_back(&block.projection->bias);
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool zero = std::find(cancelled.begin(), cancelled.end(), params[i]) != cancelled.end();
    worst = std::max(worst, zero ? zero_gradient_error(*params[i], grads[i], loss)
                                 : max_gradient_error(*params[i], grads[i], loss));
  }
  return worst;
}

const std::vector<NamedTrial>& gradient_trials() {
  static const std::vector<NamedTrial> trials = {
      {"conv", conv_gradient_trial},
      {"maxpool", maxpool_gradient_trial},
      {"fc", fc_gradient_trial},
      {"softmax", softmax_gradient_trial},
      {"cross_entropy", cross_entropy_gradient_trial},
      {"residual", residual_gradient_trial},
      {"yolo_loss", yolo_loss_gradient_trial},
      {"network", network_gradient_trial},
  };
  return trials;
}

double brute_force_ap(const std::vector<ImageResult>& images, double iou_threshold) {
  std::vector<double> scores;
  std::size_t total_gt = 0;
  for (const auto& img : images) {
    total_gt += img.ground_truth.size();
    for (const auto& d : img.detections) scores.push_back(d.score);
  }
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  std::vector<double> recalls;
  std::vector<double> precisions;
  for (double threshold : scores) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (const auto& img : images) {
      std::vector<std::size_t> kept;
      for (std::size_t i = 0; i < img.detections.size(); ++i) {
        if (img.detections[i].score >= threshold) kept.push_back(i);
      }
      std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        return img.detections[a].score > img.detections[b].score;
      });
      std::vector<bool> used(img.ground_truth.size(), false);
      for (std::size_t i : kept) {
        double best = -1.0;
        std::size_t best_gt = 0;
        for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
          if (used[g]) continue;
          const double v = iou(img.detections[i].box, img.ground_truth[g]);
          if (v > best) {
            best = v;
            best_gt = g;
          }
        }
        if (best >= iou_threshold) {
          used[best_gt] = true;
          ++tp;
        } else {
          ++fp;
        }
      }
    }
    recalls.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    precisions.push_back(tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  if (recalls.empty()) return 0.0;
  std::vector<double> envelope(precisions.size());
  for (std::size_t i = 0; i < precisions.size(); ++i) {
    envelope[i] = *std::max_element(precisions.begin() + static_cast<std::ptrdiff_t>(i), precisions.end());
  }
  double area = 0.0;
  double r0 = 0.0;
  double p0 = envelope[0];
  for (std::size_t i = 0; i < recalls.size(); ++i) {
    area += (recalls[i] - r0) * 0.5 * (envelope[i] + p0);
    r0 = recalls[i];
    p0 = envelope[i];
  }
  return area;
}

ImageResult random_scene(std::uint64_t seed, std::size_t max_dets, std::size_t max_gts) {
  Rng rng(seed);
  ImageResult img;
  // Integer coordinates and a coarse score set make IOU and score ties common.
  auto random_box = [&] {
    const double x = static_cast<double>(rng.integer(0, 10));
    const double y = static_cast<double>(rng.integer(0, 10));
    return Box::from_corner(x, y, static_cast<double>(rng.integer(1, 5)), static_cast<double>(rng.integer(1, 5)));
  };
  const std::size_t gts = pick(rng, 1, max_gts);
  for (std::size_t i = 0; i < gts; ++i) img.ground_truth.push_back(random_box());
  const std::size_t dets = pick(rng, 0, max_dets);
  for (std::size_t i = 0; i < dets; ++i) {
    Box b;
    if (rng.uniform() < 0.6) {
      const Box& g = img.ground_truth[pick(rng, 0, gts - 1)];
      const double dx = static_cast<double>(rng.integer(-1, 1));
      const double dy = static_cast<double>(rng.integer(-1, 1));
      b = {g.x0 + dx, g.y0 + dy, g.x1 + dx, g.y1 + dy};
    } else {
      b = random_box();
    }
    img.detections.push_back({b, static_cast<double>(rng.integer(1, 9)) / 10.0});
  }
  return img;
}

double encode_decode_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t s = pick(rng, 2, 8);
  const double cell = rng.uniform(4.0, 32.0);
  const double image = cell * static_cast<double>(s);
  const std::size_t c = pick(rng, 1, 4);
  AnchorSet anchors;
  const std::size_t a = pick(rng, 1, 6);
  for (std::size_t i = 0; i < a; ++i) anchors.anchors.push_back({rng.uniform(2, image), rng.uniform(2, image)});

  // Collision-free: keep a box only if its (cell, anchor) slot is still free.
  std::vector<GroundTruthBox> boxes;
  std::vector<bool> taken(a * s * s, false);
  const std::size_t wanted = pick(rng, 1, 8);
  for (std::size_t i = 0; i < wanted; ++i) {
    GroundTruthBox b{rng.uniform(0, image), rng.uniform(0, image), rng.uniform(1, image), rng.uniform(1, image),
                     pick(rng, 0, c - 1)};
    const auto col = std::min(s - 1, static_cast<std::size_t>(b.cx / cell));
    const auto row = std::min(s - 1, static_cast<std::size_t>(b.cy / cell));
    const std::size_t slot = (best_anchor({b.h, b.w}, anchors).index * s + row) * s + col;
    if (taken[slot]) continue;
    taken[slot] = true;
    boxes.push_back(b);
  }
  const TargetGrid target = encode_targets(boxes, s, anchors, c, image);
  if (target.collisions != 0) return std::numeric_limits<double>::infinity();

  auto logit = [](double p) { return std::clamp(std::log(p / (1.0 - p)), -50.0, 50.0); };
  Tensor raw({a * (c + 5), s, s});
  for (std::size_t k = 0; k < a; ++k) {
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t q = 0; q < s; ++q) {
        auto out = [&](std::size_t ch) -> double& { return raw[((k * (c + 5) + ch) * s + r) * s + q]; };
        if (!target.responsible(k, r, q)) {
          out(kObjectness) = -50.0;
          continue;
        }
        out(kObjectness) = 50.0;
        out(kTx) = logit(target.value(k, kTx, r, q));
        out(kTy) = logit(target.value(k, kTy, r, q));
        out(kTw) = target.value(k, kTw, r, q);
        out(kTh) = target.value(k, kTh, r, q);
        for (std::size_t j = 0; j < c; ++j) out(kFirstClass + j) = target.value(k, kFirstClass + j, r, q) > 0.5 ? 40 : 0;
      }
    }
  }
  const DetectionHeadSpec head{c, a, s, (c + 5) * a};
  const auto dets = decode_predictions(raw, head, anchors, image, 0.5);
  if (dets.size() != boxes.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (const GroundTruthBox& b : boxes) {
    double best = std::numeric_limits<double>::infinity();
    for (const Detection& d : dets) {
      if (d.class_id != b.class_id) continue;
      const double err = std::max({std::abs(d.cx - b.cx), std::abs(d.cy - b.cy), std::abs(d.w - b.w),
                                   std::abs(d.h - b.h)});
      best = std::min(best, err);
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace npdet::testing
