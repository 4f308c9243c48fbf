#include <doctest.h>

#include "oat/encoder.hpp"
#include "oat/scene.hpp"

using namespace oat;

namespace {

Image random_image(int size, uint64_t seed) {
  Image img(size, size);
  Rng rng(seed);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("linear-frozen maps the zero image to zero features") {
    EncoderParams p = EncoderParams::linear_frozen(14, 64, 0);
    PatchFeatureGrid f = encode(Image(112, 112, 0.0), p);
    CHECK(f.features.rows() == 64);
    CHECK(f.features.cols() == 64);
    CHECK(f.features.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("linear-frozen locality: a patch perturbation moves only its own row") {
    EncoderParams p = EncoderParams::linear_frozen(14, 32, 1);
    Image a = random_image(112, 5);
    Image b = a;
    const int target_patch = 27;  // row 3, col 3 on the 8x8 grid
    int pr = target_patch / 8, pc = target_patch % 8;
    for (int y = pr * 14; y < (pr + 1) * 14; ++y)
      for (int x = pc * 14; x < (pc + 1) * 14; ++x) b.at(y, x, 1) = 1.0 - b.at(y, x, 1);

    Mat fa = encode(a, p).features;
    Mat fb = encode(b, p).features;
    for (int k = 0; k < 64; ++k) {
      double diff = (fa.row(k) - fb.row(k)).cwiseAbs().maxCoeff();
      if (k == target_patch) {
        CHECK(diff > 0.0);
      } else {
        CHECK(diff == 0.0);
      }
    }
  }

  TEST_CASE("conv mode shares the same per-patch receptive field") {
    EncoderParams p = EncoderParams::conv_trained(14, 24, 8, 3);
    Image a = random_image(112, 6);
    Image b = a;
    b.at(3, 3, 0) = 1.0 - b.at(3, 3, 0);  // patch 0
    Mat fa = encode(a, p).features;
    Mat fb = encode(b, p).features;
    CHECK((fa.row(0) - fb.row(0)).cwiseAbs().maxCoeff() > 0.0);
    CHECK((fa.bottomRows(63) - fb.bottomRows(63)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("encode is deterministic") {
    EncoderParams p = EncoderParams::conv_trained(14, 64, 32, 0);
    Image img = random_image(112, 9);
    Mat f1 = encode(img, p).features;
    Mat f2 = encode(img, p).features;
    CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(f1.allFinite());
  }

  TEST_CASE("dimension mismatches are rejected") {
    EncoderParams p = EncoderParams::linear_frozen(14, 16, 0);
    CHECK_THROWS_AS(encode(Image(112, 113, 0.0), p), GeometryError);
    EncoderParams q = EncoderParams::linear_frozen(14, 16, 0);
    q.patch_size = 28;  // weights no longer match the patch fan-in
    CHECK_THROWS_AS(encode(Image(112, 112, 0.0), q), GeometryError);
    CHECK_THROWS_AS(EncoderParams::conv_trained(15, 16, 8, 0), GeometryError);
  }

  TEST_CASE("conv gradients match finite differences on random coordinates") {
    EncoderParams p = EncoderParams::conv_trained(14, 24, 12, 0);
    Image img = random_image(56, 11);
    double rel = encoder_grad_check(p, img, 0, 5);
    CHECK(rel < 1e-4);
  }

  TEST_CASE("zero upstream gradient yields zero parameter gradient") {
    EncoderParams p = EncoderParams::conv_trained(14, 16, 8, 2);
    Image img = random_image(56, 3);
    EncoderTape tape;
    PatchFeatureGrid f = encode_forward(img, p, &tape);
    EncoderGrads g;
    g.setZero(p);
    encode_backward(Mat::Zero(f.features.rows(), f.features.cols()), p, tape, g);
    CHECK(g.w0.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.w1.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.b0.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.b1.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("gradients are linear in the upstream signal") {
    EncoderParams p = EncoderParams::conv_trained(14, 16, 8, 4);
    Image img = random_image(56, 8);
    EncoderTape tape;
    PatchFeatureGrid f = encode_forward(img, p, &tape);
    Mat up(f.features.rows(), f.features.cols());
    Rng rng(12);
    for (Eigen::Index j = 0; j < up.cols(); ++j)
      for (Eigen::Index i = 0; i < up.rows(); ++i) up(i, j) = rng.uniform(-1, 1);

    EncoderGrads g1, g3;
    g1.setZero(p);
    g3.setZero(p);
    encode_backward(up, p, tape, g1);
    encode_backward(3.0 * up, p, tape, g3);
    CHECK((g3.w0 - 3.0 * g1.w0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g3.w1 - 3.0 * g1.w1).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("features stay finite on rendered scenes") {
    EncoderParams p = EncoderParams::conv_trained(14, 64, 32, 7);
    for (uint64_t s = 0; s < 5; ++s) {
      auto [state, instr] = sample_task(s);
      RenderResult r = render(state);
      CHECK(encode(r.image, p).features.allFinite());
    }
  }
}
