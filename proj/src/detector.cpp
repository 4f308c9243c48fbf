#include "oat/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "oat/png_io.hpp"
#include "oat/scene.hpp"

namespace oat {

namespace {

constexpr double kColorTol = 0.02;
constexpr double kNominalGlyphPixels = 64.0;  // scales matched-pixel count into confidence

bool is_gripper_pixel(const Image& img, int y, int x) {
  const auto& g = Palette::gripper_rgb;
  return std::abs(img.at(y, x, 0) - g[0]) < kColorTol && std::abs(img.at(y, x, 1) - g[1]) < kColorTol &&
         std::abs(img.at(y, x, 2) - g[2]) < kColorTol;
}

KeypointPrediction detect_heuristic(const Image& img, double threshold) {
  double su = 0, sv = 0;
  long count = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (is_gripper_pixel(img, y, x)) {
        su += x + 0.5;
        sv += y + 0.5;
        ++count;
      }
  KeypointPrediction out;
  out.confidence = std::min(1.0, count / kNominalGlyphPixels);
  if (out.confidence >= threshold && count > 0) {
    out.point = PixelPoint{clamp(su / count, 0.0, img.width - 1e-3), clamp(sv / count, 0.0, img.height - 1e-3)};
  }
  return out;
}

struct HeadForward {
  PatchFeatureGrid feats;
  EncoderTape trunk_tape;
  Vec scores;    // K
  Vec alpha;     // K  (softmax over scores)
  Mat offs_pre;  // K x 2 pre-tanh
  Mat offs;      // K x 2
  Vec pooled;    // F (mean feature)
  double conf_z = 0.0;
  double conf = 0.0;
  double px = 0.0, py = 0.0;  // predicted point
  double off_scale = 0.0;
};

HeadForward learned_forward(const Image& img, const DetectorParams& p, bool with_tape) {
  HeadForward f;
  f.feats = encode_forward(img, p.trunk, with_tape ? &f.trunk_tape : nullptr);
  const Mat& X = f.feats.features;  // K x F
  const int K = static_cast<int>(X.rows());

  f.scores = X * p.score_w;
  f.scores.array() += p.score_b;
  double mx = f.scores.maxCoeff();
  f.alpha = (f.scores.array() - mx).exp();
  f.alpha /= f.alpha.sum();

  f.offs_pre = X * p.offset_w.transpose();
  f.offs_pre.rowwise() += p.offset_b.transpose();
  f.offs = f.offs_pre.array().tanh();

  f.off_scale = 0.75 * p.trunk.patch_size;
  const PatchGeometry& g = f.feats.geom;
  double sx = 0, sy = 0;
  for (int k = 0; k < K; ++k) {
    double cx = (k % g.grid_w + 0.5) * g.patch_size + f.off_scale * f.offs(k, 0);
    double cy = (k / g.grid_w + 0.5) * g.patch_size + f.off_scale * f.offs(k, 1);
    sx += f.alpha(k) * cx;
    sy += f.alpha(k) * cy;
  }
  f.px = sx;
  f.py = sy;

  f.pooled = X.colwise().mean();
  f.conf_z = f.pooled.dot(p.conf_w) + p.conf_b;
  f.conf = 1.0 / (1.0 + std::exp(-f.conf_z));
  return f;
}

struct DetectorGrads {
  EncoderGrads trunk;
  Vec score_w;
  double score_b = 0.0;
  Mat offset_w;
  Vec offset_b;
  Vec conf_w;
  double conf_b = 0.0;

  void setZero(const DetectorParams& p) {
    trunk.setZero(p.trunk);
    score_w = Vec::Zero(p.score_w.size());
    score_b = 0.0;
    offset_w = Mat::Zero(p.offset_w.rows(), p.offset_w.cols());
    offset_b = Vec::Zero(p.offset_b.size());
    conf_w = Vec::Zero(p.conf_w.size());
    conf_b = 0.0;
  }
};

/// Loss on one frame. Present label: squared error of the point in normalized
/// image coordinates plus weighted BCE(conf, 1). Absent: weighted BCE(conf, 0).
double sample_loss_backward(const Image& img, const std::optional<PixelPoint>& label, const DetectorParams& p,
                            double conf_weight, DetectorGrads* grads) {
  HeadForward f = learned_forward(img, p, grads != nullptr);
  const Mat& X = f.feats.features;
  const int K = static_cast<int>(X.rows());
  const PatchGeometry& g = f.feats.geom;
  const double W = g.pixel_w(), H = g.pixel_h();

  double loss = 0.0;
  double target_conf = label ? 1.0 : 0.0;
  loss += conf_weight * -(target_conf * std::log(std::max(f.conf, 1e-12)) +
                          (1 - target_conf) * std::log(std::max(1 - f.conf, 1e-12)));
  double ex = 0, ey = 0;
  if (label) {
    ex = (f.px - label->u) / W;
    ey = (f.py - label->v) / H;
    loss += ex * ex + ey * ey;
  }
  if (!grads) return loss;

  Mat dX = Mat::Zero(X.rows(), X.cols());

  // confidence head
  double dz = conf_weight * (f.conf - target_conf);
  grads->conf_w += dz * f.pooled;
  grads->conf_b += dz;
  dX.rowwise() += (dz / K) * p.conf_w.transpose();

  if (label) {
    double gpx = 2 * ex / W, gpy = 2 * ey / H;

    Vec dalpha(K);
    Mat doffs = Mat::Zero(K, 2);
    for (int k = 0; k < K; ++k) {
      double cx = (k % g.grid_w + 0.5) * g.patch_size + f.off_scale * f.offs(k, 0);
      double cy = (k / g.grid_w + 0.5) * g.patch_size + f.off_scale * f.offs(k, 1);
      dalpha(k) = gpx * cx + gpy * cy;
      doffs(k, 0) = gpx * f.alpha(k) * f.off_scale;
      doffs(k, 1) = gpy * f.alpha(k) * f.off_scale;
    }
    // softmax backward
    double dot = f.alpha.dot(dalpha);
    Vec dscore = f.alpha.array() * (dalpha.array() - dot);
    grads->score_w += X.transpose() * dscore;
    grads->score_b += dscore.sum();
    dX += dscore * p.score_w.transpose();

    Mat dpre = doffs.array() * (1.0 - f.offs.array().square());
    grads->offset_w += dpre.transpose() * X;
    grads->offset_b += dpre.colwise().sum().transpose();
    dX += dpre * p.offset_w;
  }

  encode_backward(dX, p.trunk, f.trunk_tape, grads->trunk);
  return loss;
}

nn::ParamSet build_registry(DetectorParams& p, DetectorGrads& g, Vec& score_b_w, Vec& score_b_g, Vec& conf_b_w,
                            Vec& conf_b_g) {
  // scalar biases are exposed through 1-element vectors
  score_b_w.resize(1);
  score_b_w(0) = p.score_b;
  score_b_g.resize(1);
  score_b_g(0) = g.score_b;
  conf_b_w.resize(1);
  conf_b_w(0) = p.conf_b;
  conf_b_g.resize(1);
  conf_b_g(0) = g.conf_b;

  nn::ParamSet ps;
  ps.add("trunk.w0", p.trunk.w0, g.trunk.w0);
  ps.add("trunk.b0", p.trunk.b0, g.trunk.b0);
  ps.add("trunk.w1", p.trunk.w1, g.trunk.w1);
  ps.add("trunk.b1", p.trunk.b1, g.trunk.b1);
  ps.add("score_w", p.score_w, g.score_w);
  ps.add("score_b", score_b_w, score_b_g);
  ps.add("offset_w", p.offset_w, g.offset_w);
  ps.add("offset_b", p.offset_b, g.offset_b);
  ps.add("conf_w", p.conf_w, g.conf_w);
  ps.add("conf_b", conf_b_w, conf_b_g);
  return ps;
}

}  // namespace

DetectorParams DetectorParams::heuristic(double threshold) {
  DetectorParams p;
  p.mode = DetectorMode::Heuristic;
  p.threshold = threshold;
  return p;
}

DetectorParams DetectorParams::learned_init(int image_size, int patch_size, uint64_t seed, double threshold) {
  (void)image_size;
  DetectorParams p;
  p.mode = DetectorMode::Learned;
  p.threshold = threshold;
  p.trunk = EncoderParams::conv_trained(patch_size, 32, 16, seed);
  const int F = p.trunk.dim;
  Rng rng(seed + 1);
  p.score_w.resize(F);
  p.conf_w.resize(F);
  for (int i = 0; i < F; ++i) p.score_w(i) = rng.uniform(-1.0, 1.0) / std::sqrt(static_cast<double>(F));
  for (int i = 0; i < F; ++i) p.conf_w(i) = rng.uniform(-1.0, 1.0) / std::sqrt(static_cast<double>(F));
  p.offset_w = Mat::Zero(2, F);
  nn::init_uniform(p.offset_w, rng, F);
  p.offset_b = Vec::Zero(2);
  return p;
}

KeypointPrediction detect(const Image& img, const DetectorParams& params) {
  if (params.mode == DetectorMode::Heuristic) return detect_heuristic(img, params.threshold);

  HeadForward f = learned_forward(img, params, false);
  KeypointPrediction out;
  out.confidence = f.conf;
  if (f.conf >= params.threshold) {
    out.point = PixelPoint{clamp(f.px, 0.0, img.width - 1e-3), clamp(f.py, 0.0, img.height - 1e-3)};
  }
  return out;
}

DetectorTrainResult train_detector(const std::vector<DetectorSample>& samples, const DetectorTrainHyper& hyper,
                                   int image_size, int patch_size) {
  if (samples.empty()) throw DataError("train_detector: empty dataset");

  // deterministic holdout split
  std::vector<int> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(hyper.seed);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  int n_hold = std::max(1, static_cast<int>(samples.size() * hyper.holdout_fraction));
  if (static_cast<size_t>(n_hold) >= samples.size()) n_hold = 0;
  std::vector<int> hold(order.end() - n_hold, order.end());
  std::vector<int> train(order.begin(), order.end() - n_hold);

  DetectorTrainResult result;
  result.params = DetectorParams::learned_init(image_size, patch_size, hyper.seed);
  DetectorParams& p = result.params;

  DetectorGrads grads;
  grads.setZero(p);
  Vec sbw, sbg, cbw, cbg;
  nn::Adam adam(hyper.lr);

  size_t cursor = 0;
  auto next_index = [&] {
    if (cursor >= train.size()) {
      for (int i = static_cast<int>(train.size()) - 1; i > 0; --i) std::swap(train[i], train[rng.uniform_int(0, i)]);
      cursor = 0;
    }
    return train[cursor++];
  };

  double window_loss = 0.0;
  int window_n = 0;
  for (int step = 0; step < hyper.steps; ++step) {
    grads.setZero(p);
    double loss = 0.0;
    int batch = std::min<int>(hyper.batch, static_cast<int>(train.size()));
    for (int b = 0; b < batch; ++b) {
      const DetectorSample& s = samples[next_index()];
      Image img = decode_png(s.png);
      loss += sample_loss_backward(img, s.keypoint, p, hyper.conf_loss_weight, &grads);
    }
    double inv = 1.0 / batch;
    grads.trunk.w0 *= inv;
    grads.trunk.b0 *= inv;
    grads.trunk.w1 *= inv;
    grads.trunk.b1 *= inv;
    grads.score_w *= inv;
    grads.score_b *= inv;
    grads.offset_w *= inv;
    grads.offset_b *= inv;
    grads.conf_w *= inv;
    grads.conf_b *= inv;
    loss *= inv;

    if (!std::isfinite(loss)) throw NumericError("train_detector: non-finite loss at step " + std::to_string(step));

    nn::ParamSet ps = build_registry(p, grads, sbw, sbg, cbw, cbg);
    adam.step(ps);
    p.score_b = sbw(0);
    p.conf_b = cbw(0);

    window_loss += loss;
    ++window_n;
    if ((step + 1) % hyper.log_every == 0) {
      result.loss_curve.push_back(window_loss / window_n);
      if (hyper.verbose) std::printf("detector step %d loss %.5f\n", step + 1, window_loss / window_n);
      window_loss = 0.0;
      window_n = 0;
    }
  }

  if (!hold.empty()) {
    std::vector<DetectorSample> hold_samples;
    hold_samples.reserve(hold.size());
    for (int i : hold) hold_samples.push_back(samples[i]);
    result.holdout = eval_detector(p, hold_samples, patch_size);
  }
  return result;
}

DetectorMetrics eval_detector(const DetectorParams& params, const std::vector<DetectorSample>& samples,
                              int patch_size) {
  DetectorMetrics m;
  std::vector<double> errors;
  int misses = 0;
  for (const DetectorSample& s : samples) {
    Image img = decode_png(s.png);
    KeypointPrediction pred = detect(img, params);
    if (s.keypoint) {
      ++m.n_present;
      if (!pred.point) {
        ++misses;
        continue;
      }
      errors.push_back(std::hypot(pred.point->u - s.keypoint->u, pred.point->v - s.keypoint->v));
    } else {
      ++m.n_absent;
    }
  }
  if (m.n_present > 0) {
    m.miss_rate = static_cast<double>(misses) / m.n_present;
    int hits = 0;
    for (double e : errors)
      if (e < patch_size / 2.0) ++hits;
    m.hit_rate = static_cast<double>(hits) / m.n_present;
    if (!errors.empty()) {
      std::sort(errors.begin(), errors.end());
      size_t mid = errors.size() / 2;
      m.median_px_error =
          errors.size() % 2 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
    }
  }
  return m;
}

double detector_grad_check(const DetectorParams& params, const DetectorSample& sample, uint64_t seed,
                           int n_coords) {
  DetectorParams p = params;
  if (p.mode != DetectorMode::Learned) throw std::logic_error("detector_grad_check: learned mode only");
  Image img = decode_png(sample.png);

  DetectorGrads grads;
  grads.setZero(p);
  sample_loss_backward(img, sample.keypoint, p, 0.25, &grads);

  Vec sbw, sbg, cbw, cbg;
  nn::ParamSet ps = build_registry(p, grads, sbw, sbg, cbw, cbg);
  auto loss_fn = [&] {
    p.score_b = sbw(0);
    p.conf_b = cbw(0);
    return sample_loss_backward(img, sample.keypoint, p, 0.25, nullptr);
  };
  Rng rng(seed);
  return nn::grad_check(ps, loss_fn, rng, n_coords);
}

namespace {

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void put_mat(std::string& out, const Mat& m) {
  uint32_t r = static_cast<uint32_t>(m.rows()), c = static_cast<uint32_t>(m.cols());
  put_bytes(out, &r, 4);
  put_bytes(out, &c, 4);
  put_bytes(out, m.data(), sizeof(double) * m.size());
}

void put_vec(std::string& out, const Vec& v) {
  uint32_t n = static_cast<uint32_t>(v.size());
  put_bytes(out, &n, 4);
  put_bytes(out, v.data(), sizeof(double) * v.size());
}

struct In {
  std::ifstream f;
  std::string where;
  explicit In(const std::string& path) : f(path, std::ios::binary), where(path) {
    if (!f) throw DataError("cannot open: " + path);
  }
  void get(void* p, size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f) throw DataError("truncated file: " + where);
  }
  uint32_t u32() {
    uint32_t v;
    get(&v, 4);
    return v;
  }
  double f64() {
    double v;
    get(&v, 8);
    return v;
  }
  Mat mat() {
    uint32_t r = u32(), c = u32();
    Mat m(r, c);
    get(m.data(), sizeof(double) * m.size());
    return m;
  }
  Vec vec() {
    uint32_t n = u32();
    Vec v(n);
    get(v.data(), sizeof(double) * v.size());
    return v;
  }
};

constexpr char kDetMagic[8] = {'O', 'A', 'T', 'D', 'E', 'T', '0', '1'};

}  // namespace

void save_detector(const std::string& path, const DetectorParams& p) {
  std::string buf;
  buf.append(kDetMagic, sizeof(kDetMagic));
  uint32_t version = 1;
  put_bytes(buf, &version, 4);
  uint8_t mode = static_cast<uint8_t>(p.mode);
  put_bytes(buf, &mode, 1);
  put_bytes(buf, &p.threshold, 8);
  if (p.mode == DetectorMode::Learned) {
    uint32_t ps = static_cast<uint32_t>(p.trunk.patch_size), dim = static_cast<uint32_t>(p.trunk.dim),
             hidden = static_cast<uint32_t>(p.trunk.hidden);
    put_bytes(buf, &ps, 4);
    put_bytes(buf, &dim, 4);
    put_bytes(buf, &hidden, 4);
    put_mat(buf, p.trunk.w0);
    put_vec(buf, p.trunk.b0);
    put_mat(buf, p.trunk.w1);
    put_vec(buf, p.trunk.b1);
    put_vec(buf, p.score_w);
    put_bytes(buf, &p.score_b, 8);
    put_mat(buf, p.offset_w);
    put_vec(buf, p.offset_b);
    put_vec(buf, p.conf_w);
    put_bytes(buf, &p.conf_b, 8);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write detector checkpoint: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("short write: " + path);
}

DetectorParams load_detector(const std::string& path) {
  In in(path);
  char magic[8];
  in.get(magic, 8);
  if (std::memcmp(magic, kDetMagic, 8) != 0) throw DataError("not a detector checkpoint: " + path);
  uint32_t version = in.u32();
  if (version != 1) throw DataError("unsupported detector checkpoint version: " + path);

  DetectorParams p;
  uint8_t mode;
  in.get(&mode, 1);
  p.mode = static_cast<DetectorMode>(mode);
  p.threshold = in.f64();
  if (p.mode == DetectorMode::Learned) {
    p.trunk.mode = EncoderMode::ConvTrained;
    p.trunk.patch_size = static_cast<int>(in.u32());
    p.trunk.dim = static_cast<int>(in.u32());
    p.trunk.hidden = static_cast<int>(in.u32());
    p.trunk.w0 = in.mat();
    p.trunk.b0 = in.vec();
    p.trunk.w1 = in.mat();
    p.trunk.b1 = in.vec();
    p.score_w = in.vec();
    p.score_b = in.f64();
    p.offset_w = in.mat();
    p.offset_b = in.vec();
    p.conf_w = in.vec();
    p.conf_b = in.f64();
  }
  return p;
}

}  // namespace oat
