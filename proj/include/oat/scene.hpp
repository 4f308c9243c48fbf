#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oat/common.hpp"
#include "oat/image.hpp"

namespace oat {

enum class Shape : uint8_t { Cube = 0, Ball = 1, Bowl = 2, Bag = 3 };

enum class Relation : uint8_t { In = 0, LeftOf = 1, FrontOf = 2 };

const char* shape_name(Shape s);
const char* relation_phrase(Relation r);  // "in" | "left of" | "in front of"

/// The 8-name object palette plus reserved colors. Gripper magenta is kept out
/// of the object palette so a color-matching detector has a unique signature.
struct Palette {
  static constexpr int kColors = 8;
  static const std::array<const char*, kColors> names;
  static const std::array<std::array<double, 3>, kColors> rgb;
  static const std::array<double, 3> table_rgb;
  static const std::array<double, 3> gripper_rgb;
};

struct ObjectState {
  Shape shape = Shape::Cube;
  int color = 0;       // palette index
  double x = 0.5;      // table-plane coords in [0,1], x right, y toward viewer (down in image)
  double y = 0.5;
  double radius = 0.06;  // footprint radius in table units
  bool held = false;
};

struct GripperState {
  double x = 0.5;
  double y = 0.5;
  double z = 0.6;         // 0 = table, 1 = fully raised
  double yaw = 0.0;       // radians
  double aperture = 1.0;  // 0 closed .. 1 open
};

struct SceneState {
  std::vector<ObjectState> objects;
  GripperState gripper;
};

/// 7-D action: delta position (dx, dy, dz), delta orientation
/// (droll, dpitch, dyaw; only yaw is simulated), and commanded aperture.
struct Action {
  std::array<double, 3> dpos{0, 0, 0};
  std::array<double, 3> drot{0, 0, 0};
  double grip = 1.0;

  bool no_motion() const {
    return dpos[0] == 0 && dpos[1] == 0 && dpos[2] == 0 && drot[0] == 0 && drot[1] == 0 && drot[2] == 0;
  }
  std::array<double, 7> flat() const { return {dpos[0], dpos[1], dpos[2], drot[0], drot[1], drot[2], grip}; }
  static Action from_flat(const std::array<double, 7>& a) {
    Action out;
    out.dpos = {a[0], a[1], a[2]};
    out.drot = {a[3], a[4], a[5]};
    out.grip = a[6];
    return out;
  }
};

/// Simulator constants. Positions are in table units per step.
struct SimParams {
  int image_size = 112;
  int patch_size = 14;
  double a_max = 0.06;          // per-axis position delta clip
  double dyaw_max = 0.1;
  double aperture_rate = 0.25;  // max aperture change per step
  double z_travel = 0.6;
  double z_grasp = 0.05;
  double grab_z_max = 0.16;
  double grab_aperture = 0.35;
  double release_aperture = 0.6;
  double r_close_factor = 1.5;  // proximity radius = factor * target footprint radius
  int max_steps = 150;
};

/// Patch-resolution ground-truth ownership: 0 = background/table,
/// 1..n_objects = object index + 1, n_objects + 1 = gripper.
struct OwnerGrid {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<uint8_t> owner;  // row-major, length grid_h * grid_w

  int patches() const { return grid_h * grid_w; }
};

struct RenderResult {
  Image image;
  OwnerGrid gt_masks;
  PixelPoint gripper_px;
};

struct EpisodeStep {
  SceneState state;
  Image image;
  OwnerGrid gt_masks;
  PixelPoint gripper_px;
  Action action;
};

struct Episode {
  std::string instruction;
  std::vector<EpisodeStep> steps;
  bool success = false;
};

/// A parsed instruction resolved against a scene.
struct Task {
  int pick_index = -1;
  int target_index = -1;
  Relation relation = Relation::In;
};

// --- task and language ------------------------------------------------------

/// Places 2-5 mutually non-overlapping objects and returns the scene plus a
/// templated instruction naming one pick object and one target relation.
/// Deterministic per seed.
std::pair<SceneState, std::string> sample_task(uint64_t seed, const SimParams& sim = {});

/// As sample_task but with the relation pinned (used by per-relation evaluation).
std::pair<SceneState, std::string> sample_task_with_relation(uint64_t seed, Relation rel,
                                                             const SimParams& sim = {});

/// Resolves "place the <color> <shape> <relation> the <color> <shape>" against
/// the scene. Throws DataError if the instruction does not parse or names
/// objects that are not present.
Task parse_instruction(const std::string& instruction, const SceneState& state);

// --- rendering and dynamics -------------------------------------------------

/// Flat-shaded orthographic top-down render with patch-resolution ground truth
/// masks (majority pixel vote) and the gripper keypoint. Pure function.
RenderResult render(const SceneState& state, const SimParams& sim = {});

/// Render variant without the gripper glyph; supplies negative frames for
/// detector confidence training.
RenderResult render_without_gripper(const SceneState& state, const SimParams& sim = {});

/// Applies one action: integrates position/yaw with clipping, rate-limits the
/// aperture toward the commanded value, and resolves grab/release.
SceneState step_sim(const SceneState& state, const Action& action, const SimParams& sim = {});

/// True when the instruction's goal condition holds in this state.
bool check_success(const SceneState& state, const std::string& instruction, const SimParams& sim = {});

/// Proportional-controller demonstrator. Pure function of (state, instruction);
/// phases are derived from the state each call. Grip transitions overlap with
/// motion so that grasp/release frames survive the no-motion filter.
Action scripted_expert(const SceneState& state, const std::string& instruction, const SimParams& sim = {});

/// Runs the expert closed-loop from a sampled task. Steps record the action
/// taken in each state; no-motion steps are dropped.
Episode run_expert_episode(uint64_t seed, const SimParams& sim = {});

double object_distance(const ObjectState& a, const ObjectState& b);

}  // namespace oat
