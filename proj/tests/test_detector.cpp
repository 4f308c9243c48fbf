#include <doctest.h>

#include <cmath>

#include "oat/detector.hpp"
#include "oat/png_io.hpp"
#include "oat/scene.hpp"

using namespace oat;

namespace {

DetectorSample sample_from_state(const SceneState& state, const SimParams& sim, bool with_gripper) {
  RenderResult r = with_gripper ? render(state, sim) : render_without_gripper(state, sim);
  DetectorSample s;
  s.png = encode_png(r.image);
  if (with_gripper) s.keypoint = r.gripper_px;
  return s;
}

}  // namespace

TEST_SUITE("detector") {
  TEST_CASE("heuristic localizes the glyph within 2 px") {
    SimParams sim;
    for (uint64_t i = 0; i < 30; ++i) {
      auto [state, instr] = sample_task(Rng::substream(55, i).next_u64(), sim);
      RenderResult r = render(state, sim);
      KeypointPrediction kp = detect(decode_png(encode_png(r.image)), DetectorParams::heuristic());
      REQUIRE(kp.point.has_value());
      CHECK(std::hypot(kp.point->u - r.gripper_px.u, kp.point->v - r.gripper_px.v) < 2.0);
    }
  }

  TEST_CASE("no gripper-colored pixels means no detection") {
    SceneState state;
    state.objects.push_back({Shape::Cube, 0, 0.4, 0.4, 0.07, false});
    state.gripper = GripperState{0.7, 0.7, 0.5, 0.0, 1.0};
    SimParams sim;
    RenderResult r = render_without_gripper(state, sim);
    KeypointPrediction kp = detect(r.image, DetectorParams::heuristic());
    CHECK(!kp.point.has_value());
    CHECK(kp.confidence == 0.0);
  }

  TEST_CASE("detection is deterministic") {
    auto [state, instr] = sample_task(8);
    RenderResult r = render(state);
    DetectorParams det = DetectorParams::learned_init(112, 14, 3);
    KeypointPrediction a = detect(r.image, det);
    KeypointPrediction b = detect(r.image, det);
    CHECK(a.confidence == b.confidence);
    CHECK(a.point.has_value() == b.point.has_value());
    if (a.point) {
      CHECK(a.point->u == b.point->u);
      CHECK(a.point->v == b.point->v);
    }
  }

  TEST_CASE("predictions are in-frame whenever present") {
    SimParams sim;
    DetectorParams det = DetectorParams::learned_init(sim.image_size, sim.patch_size, 1, /*threshold=*/0.0);
    det.threshold = 0.0;  // force the point through even untrained
    PatchGeometry geom = make_patch_geometry(sim.image_size, sim.image_size, sim.patch_size);
    for (uint64_t i = 0; i < 10; ++i) {
      auto [state, instr] = sample_task(i, sim);
      RenderResult r = render(state, sim);
      KeypointPrediction kp = detect(r.image, det);
      REQUIRE(kp.point.has_value());
      CHECK(kp.point->in_frame(geom));
    }
  }

  TEST_CASE("learned gradients match finite differences") {
    SimParams sim;
    auto [state, instr] = sample_task(4, sim);
    DetectorSample s = sample_from_state(state, sim, true);
    DetectorParams det = DetectorParams::learned_init(sim.image_size, sim.patch_size, 0);
    CHECK(detector_grad_check(det, s, 0, 5) < 1e-4);

    DetectorSample neg = sample_from_state(state, sim, false);  // confidence-only path
    CHECK(detector_grad_check(det, neg, 1, 5) < 1e-4);
  }

  TEST_CASE("single-frame overfit decreases the loss monotonically") {
    SimParams sim;
    auto [state, instr] = sample_task(21, sim);
    std::vector<DetectorSample> samples = {sample_from_state(state, sim, true)};
    DetectorTrainHyper hyper;
    hyper.steps = 100;
    hyper.batch = 1;
    hyper.lr = 1e-4;  // small enough that Adam descends smoothly
    hyper.holdout_fraction = 0.0;
    hyper.log_every = 10;
    DetectorTrainResult r = train_detector(samples, hyper, sim.image_size, sim.patch_size);
    REQUIRE(r.loss_curve.size() == 10);
    for (size_t i = 1; i < r.loss_curve.size(); ++i) CHECK(r.loss_curve[i] <= r.loss_curve[i - 1]);
  }

  TEST_CASE("train_detector rejects an empty dataset") {
    CHECK_THROWS_AS(train_detector({}, DetectorTrainHyper{}, 112, 14), DataError);
  }

  TEST_CASE("eval metrics: a perfect predictor scores zero error and full hit rate") {
    SimParams sim;
    DetectorParams det = DetectorParams::heuristic();
    std::vector<DetectorSample> samples;
    for (uint64_t i = 0; i < 10; ++i) {
      auto [state, instr] = sample_task(Rng::substream(77, i).next_u64(), sim);
      RenderResult r = render(state, sim);
      DetectorSample s;
      s.png = encode_png(r.image);
      // label with the detector's own output: evaluation must report a perfect score
      KeypointPrediction kp = detect(decode_png(s.png), det);
      REQUIRE(kp.point.has_value());
      s.keypoint = kp.point;
      samples.push_back(std::move(s));
    }
    DetectorMetrics m = eval_detector(det, samples, sim.patch_size);
    CHECK(m.median_px_error == 0.0);
    CHECK(m.hit_rate == 1.0);
    CHECK(m.miss_rate == 0.0);
  }

  TEST_CASE("eval metrics: centered-gripper subset with a center prediction hits everywhere") {
    SimParams sim;
    std::vector<DetectorSample> samples;
    for (uint64_t i = 0; i < 8; ++i) {
      auto [state, instr] = sample_task(Rng::substream(88, i).next_u64(), sim);
      state.gripper.x = 0.5;
      state.gripper.y = 0.5;
      samples.push_back(sample_from_state(state, sim, true));
    }
    // the heuristic recovers the glyph center, which is the frame center here
    DetectorMetrics m = eval_detector(DetectorParams::heuristic(), samples, sim.patch_size);
    CHECK(m.hit_rate == 1.0);
    CHECK(m.median_px_error < sim.patch_size / 2.0);
  }

  TEST_CASE("heuristic misses are rare across simulator frames") {
    SimParams sim;
    int present = 0, miss = 0;
    for (uint64_t i = 0; i < 40; ++i) {
      Episode ep = run_expert_episode(Rng::substream(99, i).next_u64(), sim);
      for (const EpisodeStep& st : ep.steps) {
        KeypointPrediction kp = detect(st.image, DetectorParams::heuristic());
        ++present;
        if (!kp.point) ++miss;
      }
    }
    REQUIRE(present >= 1000);
    CHECK(static_cast<double>(miss) / present < 0.01);
  }

  TEST_CASE("checkpoint round trip") {
    DetectorParams det = DetectorParams::learned_init(112, 14, 5, 0.4);
    std::string path = "/tmp/oat_test_detector.oat";
    save_detector(path, det);
    DetectorParams back = load_detector(path);
    CHECK(back.mode == DetectorMode::Learned);
    CHECK(back.threshold == det.threshold);
    CHECK((back.trunk.w0 - det.trunk.w0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.offset_w - det.offset_w).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.conf_b == det.conf_b);
  }
}
