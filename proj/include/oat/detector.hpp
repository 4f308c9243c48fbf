#pragma once

#include <optional>
#include <vector>

#include "oat/encoder.hpp"
#include "oat/nn.hpp"

namespace oat {

/// "No detection" is a value, not an error: the point is present iff
/// confidence cleared the threshold, and present points are always in-frame.
struct KeypointPrediction {
  std::optional<PixelPoint> point;
  double confidence = 0.0;
};

enum class DetectorMode : uint8_t { Heuristic = 0, Learned = 1 };

/// Learned variant: a small conv trunk shared with the feature-encoder layout,
/// a spatial-softmax keypoint head with per-patch offsets, and a pooled
/// confidence head.
struct DetectorParams {
  DetectorMode mode = DetectorMode::Heuristic;
  double threshold = 0.5;  // tau

  EncoderParams trunk;  // conv-trained, small widths
  Vec score_w;          // F
  Mat offset_w;         // 2 x F
  Vec offset_b;         // 2
  Vec conf_w;           // F
  double conf_b = 0.0;
  double score_b = 0.0;

  static DetectorParams heuristic(double threshold = 0.5);
  static DetectorParams learned_init(int image_size, int patch_size, uint64_t seed, double threshold = 0.5);
};

KeypointPrediction detect(const Image& img, const DetectorParams& params);

/// One labeled frame; keypoint absent for negative (gripper-free) frames.
/// Images stay PNG-encoded so large training sets fit in memory.
struct DetectorSample {
  std::vector<uint8_t> png;
  std::optional<PixelPoint> keypoint;
};

struct DetectorMetrics {
  double median_px_error = 0.0;
  double hit_rate = 0.0;   // error < patch_size/2 among labeled-present frames
  double miss_rate = 0.0;  // labeled-present frames predicted absent
  int n_present = 0;
  int n_absent = 0;
};

struct DetectorTrainHyper {
  int steps = 1200;
  int batch = 32;
  double lr = 3e-3;
  double conf_loss_weight = 0.25;
  double holdout_fraction = 0.1;
  uint64_t seed = 0;
  int log_every = 100;
  bool verbose = false;
};

struct DetectorTrainResult {
  DetectorParams params;
  DetectorMetrics holdout;
  std::vector<double> loss_curve;  // one entry per log interval
};

/// Mini-batch Adam on L2 keypoint loss (normalized coordinates) plus binary
/// cross-entropy on the confidence head. Throws on an empty dataset.
DetectorTrainResult train_detector(const std::vector<DetectorSample>& samples, const DetectorTrainHyper& hyper,
                                   int image_size, int patch_size);

DetectorMetrics eval_detector(const DetectorParams& params, const std::vector<DetectorSample>& samples,
                              int patch_size);

/// Analytic-vs-finite-difference check of the learned detector's full gradient
/// (trunk and heads) on one labeled frame; returns max relative error.
double detector_grad_check(const DetectorParams& params, const DetectorSample& sample, uint64_t seed,
                           int n_coords);

void save_detector(const std::string& path, const DetectorParams& params);
DetectorParams load_detector(const std::string& path);

}  // namespace oat
