#include "oat/encoder.hpp"

#include <cmath>

#include "oat/common.hpp"

namespace oat {

namespace {

void seeded_uniform(Mat& m, Rng& rng, double bound) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
}

// Gathers non-overlapping k x k blocks (stride = kernel) of a C-channel map
// into columns of size C*k*k, block row-major.
Mat im2col_block(const double* data, int channels, int height, int width, int k) {
  int oh = height / k, ow = width / k;
  Mat cols(static_cast<Eigen::Index>(channels) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int by = 0; by < oh; ++by) {
    for (int bx = 0; bx < ow; ++bx) {
      Eigen::Index col = static_cast<Eigen::Index>(by) * ow + bx;
      Eigen::Index row = 0;
      for (int c = 0; c < channels; ++c)
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            int y = by * k + dy, x = bx * k + dx;
            cols(row++, col) = data[(static_cast<size_t>(c) * height + y) * width + x];
          }
    }
  }
  return cols;
}

// Image is stored HWC; the conv path wants CHW planes.
std::vector<double> to_chw(const Image& img) {
  std::vector<double> chw(static_cast<size_t>(3) * img.height * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        chw[(static_cast<size_t>(c) * img.height + y) * img.width + x] = img.at(y, x, c);
  return chw;
}

}  // namespace

EncoderParams EncoderParams::linear_frozen(int patch_size, int dim, uint64_t seed) {
  EncoderParams p;
  p.mode = EncoderMode::LinearFrozen;
  p.patch_size = patch_size;
  p.dim = dim;
  int fan_in = 3 * patch_size * patch_size;
  Rng rng(seed);
  p.w0.resize(dim, fan_in);
  seeded_uniform(p.w0, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  p.b0 = Vec::Zero(dim);
  return p;
}

EncoderParams EncoderParams::conv_trained(int patch_size, int dim, int hidden, uint64_t seed) {
  if (patch_size % 2 != 0) throw GeometryError("conv encoder needs an even patch size");
  EncoderParams p;
  p.mode = EncoderMode::ConvTrained;
  p.patch_size = patch_size;
  p.dim = dim;
  p.hidden = hidden;
  Rng rng(seed);
  int s1 = p.stage1_kernel(), s2 = p.stage2_kernel();
  int fan1 = 3 * s1 * s1;
  int fan2 = hidden * s2 * s2;
  p.w0.resize(hidden, fan1);
  seeded_uniform(p.w0, rng, 1.0 / std::sqrt(static_cast<double>(fan1)));
  p.b0 = Vec::Zero(hidden);
  p.w1.resize(dim, fan2);
  seeded_uniform(p.w1, rng, 1.0 / std::sqrt(static_cast<double>(fan2)));
  p.b1 = Vec::Zero(dim);
  return p;
}

PatchFeatureGrid encode_forward(const Image& img, const EncoderParams& params, EncoderTape* tape) {
  PatchGeometry geom = patchify(img, params.patch_size);
  PatchFeatureGrid out;
  out.geom = geom;

  std::vector<double> chw = to_chw(img);

  if (params.mode == EncoderMode::LinearFrozen) {
    // One column per patch; kernel == patch size.
    Mat cols = im2col_block(chw.data(), 3, img.height, img.width, params.patch_size);
    if (params.w0.cols() != cols.rows()) throw GeometryError("encoder/image dimension mismatch");
    Mat feats = params.w0 * cols;
    feats.colwise() += params.b0;
    out.features = feats.transpose();
    return out;
  }

  int s1 = params.stage1_kernel(), s2 = params.stage2_kernel();
  Mat cols1 = im2col_block(chw.data(), 3, img.height, img.width, s1);
  if (params.w0.cols() != cols1.rows()) throw GeometryError("encoder/image dimension mismatch");
  Mat pre1 = params.w0 * cols1;
  pre1.colwise() += params.b0;
  Mat act1 = pre1.cwiseMax(0.0);  // ReLU

  int g1h = img.height / s1, g1w = img.width / s1;
  // act1 columns are laid out row-major over the stage-1 grid; regroup into
  // stage-2 blocks. act1(c, y*g1w+x) is channel c at stage-1 cell (y, x).
  std::vector<double> mid(static_cast<size_t>(params.hidden) * g1h * g1w);
  for (int c = 0; c < params.hidden; ++c)
    for (int y = 0; y < g1h; ++y)
      for (int x = 0; x < g1w; ++x)
        mid[(static_cast<size_t>(c) * g1h + y) * g1w + x] = act1(c, static_cast<Eigen::Index>(y) * g1w + x);

  Mat cols2 = im2col_block(mid.data(), params.hidden, g1h, g1w, s2);
  Mat feats = params.w1 * cols2;
  feats.colwise() += params.b1;
  out.features = feats.transpose();

  if (tape) {
    tape->cols1 = std::move(cols1);
    tape->pre1 = std::move(pre1);
    tape->cols2 = std::move(cols2);
    tape->grid1_h = g1h;
    tape->grid1_w = g1w;
  }
  return out;
}

PatchFeatureGrid encode(const Image& img, const EncoderParams& params) {
  return encode_forward(img, params, nullptr);
}

void EncoderGrads::setZero(const EncoderParams& p) {
  w0 = Mat::Zero(p.w0.rows(), p.w0.cols());
  b0 = Vec::Zero(p.b0.size());
  if (p.mode == EncoderMode::ConvTrained) {
    w1 = Mat::Zero(p.w1.rows(), p.w1.cols());
    b1 = Vec::Zero(p.b1.size());
  } else {
    w1.resize(0, 0);
    b1.resize(0);
  }
}

void EncoderGrads::accumulate_scaled(const EncoderGrads& other, double scale) {
  w0 += scale * other.w0;
  b0 += scale * other.b0;
  if (w1.size() > 0) {
    w1 += scale * other.w1;
    b1 += scale * other.b1;
  }
}

void encode_backward(const Mat& dfeatures, const EncoderParams& params, const EncoderTape& tape,
                     EncoderGrads& grads) {
  if (params.mode != EncoderMode::ConvTrained) {
    throw std::logic_error("encode_backward: only the conv mode is trainable");
  }
  // dfeatures is K x D; the forward produced feats = w1 * cols2 + b1 (D x K).
  Mat dfeats = dfeatures.transpose();
  grads.w1 += dfeats * tape.cols2.transpose();
  grads.b1 += dfeats.rowwise().sum();

  Mat dcols2 = params.w1.transpose() * dfeats;  // (hidden*s2*s2) x K

  // Scatter dcols2 back to the stage-1 activation grid, then through ReLU.
  int s2 = params.stage2_kernel();
  int g1h = tape.grid1_h, g1w = tape.grid1_w;
  int oh = g1h / s2, ow = g1w / s2;
  Mat dact1 = Mat::Zero(params.hidden, static_cast<Eigen::Index>(g1h) * g1w);
  for (int by = 0; by < oh; ++by)
    for (int bx = 0; bx < ow; ++bx) {
      Eigen::Index col = static_cast<Eigen::Index>(by) * ow + bx;
      Eigen::Index row = 0;
      for (int c = 0; c < params.hidden; ++c)
        for (int dy = 0; dy < s2; ++dy)
          for (int dx = 0; dx < s2; ++dx) {
            int y = by * s2 + dy, x = bx * s2 + dx;
            dact1(c, static_cast<Eigen::Index>(y) * g1w + x) += dcols2(row++, col);
          }
    }

  Mat dpre1 = (tape.pre1.array() > 0.0).select(dact1, 0.0);
  grads.w0 += dpre1 * tape.cols1.transpose();
  grads.b0 += dpre1.rowwise().sum();
}

double encoder_grad_check(const EncoderParams& params, const Image& img, uint64_t seed, int n_coords) {
  // Probe loss: 0.5 * || features - targets ||^2 with fixed random targets.
  Rng rng(seed);
  EncoderParams p = params;

  EncoderTape tape;
  PatchFeatureGrid out = encode_forward(img, p, &tape);
  Mat targets(out.features.rows(), out.features.cols());
  for (Eigen::Index j = 0; j < targets.cols(); ++j)
    for (Eigen::Index i = 0; i < targets.rows(); ++i) targets(i, j) = rng.uniform(-1.0, 1.0);

  auto loss_of = [&](const EncoderParams& q) {
    PatchFeatureGrid f = encode(img, q);
    return 0.5 * (f.features - targets).squaredNorm();
  };

  EncoderGrads grads;
  grads.setZero(p);
  encode_backward(out.features - targets, p, tape, grads);

  struct Slot {
    double* w;
    const double* g;
    Eigen::Index n;
  };
  std::vector<Slot> slots = {{p.w0.data(), grads.w0.data(), p.w0.size()},
                             {p.b0.data(), grads.b0.data(), p.b0.size()},
                             {p.w1.data(), grads.w1.data(), p.w1.size()},
                             {p.b1.data(), grads.b1.data(), p.b1.size()}};

  double max_rel = 0.0;
  const double h = 1e-6;
  for (int t = 0; t < n_coords; ++t) {
    const Slot& s = slots[rng.uniform_int(0, static_cast<int>(slots.size()) - 1)];
    Eigen::Index i = rng.uniform_int(0, static_cast<int>(s.n) - 1);
    double saved = s.w[i];
    s.w[i] = saved + h;
    double lp = loss_of(p);
    s.w[i] = saved - h;
    double lm = loss_of(p);
    s.w[i] = saved;
    double numeric = (lp - lm) / (2 * h);
    double analytic = s.g[i];
    double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace oat
