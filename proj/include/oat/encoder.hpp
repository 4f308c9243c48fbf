#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "oat/image.hpp"

namespace oat {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Per-patch feature vectors: row k holds the D-dim feature of patch k
/// (row-major patch order).
struct PatchFeatureGrid {
  PatchGeometry geom;
  Mat features;  // K x D

  int dim() const { return static_cast<int>(features.cols()); }
};

enum class EncoderMode : uint8_t { LinearFrozen = 0, ConvTrained = 1 };

/// Patch feature extractor. LinearFrozen projects each patch's flattened
/// pixels through a fixed seeded matrix (receptive field = exactly one patch).
/// ConvTrained is a two-stage strided conv stack whose stride product equals
/// the patch size; kernels equal strides, so stages are block-wise linear maps
/// and each patch still maps to its own pixels.
struct EncoderParams {
  EncoderMode mode = EncoderMode::LinearFrozen;
  int patch_size = 14;
  int dim = 64;      // output feature width D
  int hidden = 32;   // stage-1 channels (conv mode)

  // LinearFrozen: w0 is D x (3*ps*ps), b0 is D.
  // ConvTrained: w0 is hidden x (3*s1*s1) with s1 = 2, b0 hidden;
  //              w1 is D x (hidden*s2*s2) with s2 = ps/2, b1 D.
  Mat w0, w1;
  Vec b0, b1;

  static EncoderParams linear_frozen(int patch_size, int dim, uint64_t seed);
  static EncoderParams conv_trained(int patch_size, int dim, int hidden, uint64_t seed);

  int stage1_kernel() const { return 2; }
  int stage2_kernel() const { return patch_size / 2; }
};

PatchFeatureGrid encode(const Image& img, const EncoderParams& params);

/// Forward pass that retains the intermediates needed for the backward pass.
struct EncoderTape {
  Mat cols1;   // (3*s1*s1) x n1 stage-1 input columns
  Mat pre1;    // hidden x n1 pre-activation
  Mat cols2;   // (hidden*s2*s2) x K stage-2 input columns
  int grid1_h = 0, grid1_w = 0;
};

PatchFeatureGrid encode_forward(const Image& img, const EncoderParams& params, EncoderTape* tape);

/// Gradients of a scalar loss w.r.t. encoder parameters, given d(loss)/d(features).
struct EncoderGrads {
  Mat w0, w1;
  Vec b0, b1;

  void setZero(const EncoderParams& p);
  void accumulate_scaled(const EncoderGrads& other, double scale);
};

void encode_backward(const Mat& dfeatures, const EncoderParams& params, const EncoderTape& tape,
                     EncoderGrads& grads);

/// Max relative error between analytic gradients and central finite
/// differences of a quadratic probe loss, over `n_coords` randomly chosen
/// parameter coordinates. Trainable (conv) mode only.
double encoder_grad_check(const EncoderParams& params, const Image& img, uint64_t seed, int n_coords);

}  // namespace oat
