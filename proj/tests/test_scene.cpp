#include <doctest.h>

#include <cmath>
#include <set>

#include "oat/png_io.hpp"
#include "oat/scene.hpp"
#include "oat/segment.hpp"

using namespace oat;

namespace {

bool states_equal(const SceneState& a, const SceneState& b) {
  if (a.objects.size() != b.objects.size()) return false;
  for (size_t i = 0; i < a.objects.size(); ++i) {
    const ObjectState &x = a.objects[i], &y = b.objects[i];
    if (x.shape != y.shape || x.color != y.color || x.x != y.x || x.y != y.y || x.radius != y.radius ||
        x.held != y.held)
      return false;
  }
  return a.gripper.x == b.gripper.x && a.gripper.y == b.gripper.y && a.gripper.z == b.gripper.z &&
         a.gripper.yaw == b.gripper.yaw && a.gripper.aperture == b.gripper.aperture;
}

}  // namespace

TEST_SUITE("scene") {
  TEST_CASE("sample_task is deterministic per seed") {
    auto [s1, i1] = sample_task(0);
    auto [s2, i2] = sample_task(0);
    CHECK(i1 == i2);
    CHECK(states_equal(s1, s2));
    auto [s3, i3] = sample_task(1);
    CHECK((i3 != i1 || !states_equal(s3, s1)));
  }

  TEST_CASE("'in' tasks target a container; all instructions parse") {
    for (uint64_t seed = 0; seed < 10000; ++seed) {
      auto [state, instr] = sample_task(seed);
      Task task = parse_instruction(instr, state);  // throws on grammar violation
      CHECK(state.objects.size() >= 2);
      CHECK(state.objects.size() <= 5);
      if (task.relation == Relation::In) {
        Shape s = state.objects[task.target_index].shape;
        CHECK((s == Shape::Bowl || s == Shape::Bag));
      }
      CHECK(!check_success(state, instr));  // goals never start satisfied
    }
  }

  TEST_CASE("parse_instruction rejects junk") {
    auto [state, instr] = sample_task(3);
    CHECK_THROWS_AS(parse_instruction("pick up everything", state), DataError);
    CHECK_THROWS_AS(parse_instruction("place the neon cube in the red bowl", state), DataError);
    CHECK_THROWS_AS(parse_instruction("", state), DataError);
  }

  TEST_CASE("render: empty table keeps the keypoint in frame, masks collapse") {
    SceneState state;
    state.gripper = GripperState{0.5, 0.5, 0.6, 0.0, 1.0};
    RenderResult r = render(state);
    PatchGeometry geom = patchify(r.image, 14);
    CHECK(r.gripper_px.in_frame(geom));
    // owners are only background (0) or gripper (1)
    std::set<int> owners(r.gt_masks.owner.begin(), r.gt_masks.owner.end());
    for (int o : owners) CHECK(o <= 1);
    CHECK(owners.count(0) == 1);
  }

  TEST_CASE("render determinism: identical state, identical PNG bytes") {
    auto [state, instr] = sample_task(11);
    RenderResult a = render(state);
    RenderResult b = render(state);
    CHECK(encode_png(a.image) == encode_png(b.image));
    CHECK(a.gt_masks.owner == b.gt_masks.owner);
    CHECK(a.gripper_px.u == b.gripper_px.u);
    CHECK(a.gripper_px.v == b.gripper_px.v);
  }

  TEST_CASE("ground-truth masks partition the patch grid") {
    for (uint64_t seed : {0, 5, 9}) {
      auto [state, instr] = sample_task(seed);
      RenderResult r = render(state);
      int n = static_cast<int>(state.objects.size());
      CHECK(static_cast<int>(r.gt_masks.owner.size()) == r.gt_masks.patches());
      for (uint8_t o : r.gt_masks.owner) CHECK(o <= n + 1);  // every patch owned exactly once
    }
  }

  TEST_CASE("an object with no owned patches is representable") {
    OwnerGrid g;
    g.grid_h = g.grid_w = 4;
    g.owner.assign(16, 0);
    g.owner[5] = 1;  // object 1 visible, object 2 fully occluded
    g.owner[6] = 3;  // gripper
    MaskSet m = segment_oracle(g, 7);
    auto counts = m.slot_counts();
    int total = 0, nonempty = 0;
    for (int c : counts) {
      total += c;
      nonempty += c > 0 ? 1 : 0;
    }
    CHECK(total == 16);
    CHECK(nonempty == 3);
  }

  TEST_CASE("expert descends when already above the pick object") {
    auto [state, instr] = sample_task(2);
    Task task = parse_instruction(instr, state);
    state.gripper.x = state.objects[task.pick_index].x;
    state.gripper.y = state.objects[task.pick_index].y;
    state.gripper.z = 0.6;
    state.gripper.yaw = 0.0;
    Action a = scripted_expert(state, instr);
    CHECK(a.dpos[2] < 0);
    CHECK(std::abs(a.dpos[0]) < 1e-12);
    CHECK(std::abs(a.dpos[1]) < 1e-12);
  }

  TEST_CASE("expert opens the grip above an 'in' target") {
    SceneState state;
    state.objects.push_back({Shape::Ball, 0, 0.3, 0.3, 0.06, true});
    state.objects.push_back({Shape::Bowl, 1, 0.3, 0.3, 0.10, false});
    state.gripper = GripperState{0.3, 0.3, 0.25, 0.0, 0.3};
    std::string instr = "place the red ball in the green bowl";
    Action a = scripted_expert(state, instr);
    CHECK(a.grip == 1.0);  // commanded open during the final descent
  }

  TEST_CASE("check_success clauses") {
    SceneState state;
    state.objects.push_back({Shape::Ball, 0, 0.5, 0.5, 0.06, false});
    state.objects.push_back({Shape::Bowl, 1, 0.5, 0.5, 0.10, false});
    state.gripper = GripperState{0.8, 0.8, 0.6, 0.0, 1.0};
    CHECK(check_success(state, "place the red ball in the green bowl"));

    // held objects never count
    state.objects[0].held = true;
    CHECK(!check_success(state, "place the red ball in the green bowl"));
    state.objects[0].held = false;

    // left-of requires proximity, not just the half-plane
    SimParams sim;
    state.objects[0].x = 0.5 - 10 * sim.r_close_factor * state.objects[1].radius;
    state.objects[0].y = 0.5;
    CHECK(!check_success(state, "place the red ball left of the green bowl"));
    state.objects[0].x = 0.5 - 1.2 * state.objects[1].radius;
    CHECK(check_success(state, "place the red ball left of the green bowl"));
    CHECK(!check_success(state, "place the red ball in front of the green bowl"));
  }

  TEST_CASE("expert closes the loop on 500 seeded tasks") {
    SimParams sim;
    int successes = 0;
    const int total = 500;
    for (int i = 0; i < total; ++i) {
      auto [state, instr] = sample_task(Rng::substream(42, i).next_u64(), sim);
      bool ok = false;
      for (int t = 0; t < sim.max_steps && !ok; ++t) {
        ok = check_success(state, instr, sim);
        if (!ok) state = step_sim(state, scripted_expert(state, instr, sim), sim);
      }
      successes += (ok || check_success(state, instr, sim)) ? 1 : 0;
    }
    CHECK(successes >= 490);  // >= 98%
  }

  TEST_CASE("episodes never contain no-motion steps and replay bit-exactly") {
    Episode ep = run_expert_episode(123);
    REQUIRE(ep.steps.size() >= 1);
    CHECK(ep.success);
    for (const EpisodeStep& s : ep.steps) {
      CHECK(!s.action.no_motion());
      RenderResult again = render(s.state);
      CHECK(encode_png(again.image) == encode_png(s.image));
    }
  }

  TEST_CASE("step_sim clips position deltas and rate-limits the aperture") {
    SceneState state;
    state.gripper = GripperState{0.5, 0.5, 0.5, 0.0, 1.0};
    Action a;
    a.dpos = {10.0, -10.0, 0.0};
    a.grip = 0.0;
    SimParams sim;
    SceneState next = step_sim(state, a, sim);
    CHECK(next.gripper.x == doctest::Approx(0.5 + sim.a_max));
    CHECK(next.gripper.y == doctest::Approx(0.5 - sim.a_max));
    CHECK(next.gripper.aperture == doctest::Approx(1.0 - sim.aperture_rate));
  }
}
