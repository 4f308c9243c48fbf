#include "oat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <sstream>

namespace oat {

const std::array<const char*, Palette::kColors> Palette::names = {
    "red", "green", "blue", "yellow", "orange", "purple", "cyan", "brown"};

const std::array<std::array<double, 3>, Palette::kColors> Palette::rgb = {{
    {0.90, 0.10, 0.10},
    {0.10, 0.72, 0.12},
    {0.12, 0.25, 0.90},
    {0.95, 0.85, 0.10},
    {0.95, 0.52, 0.05},
    {0.55, 0.10, 0.75},
    {0.08, 0.78, 0.85},
    {0.50, 0.32, 0.10},
}};

const std::array<double, 3> Palette::table_rgb = {0.84, 0.84, 0.86};
const std::array<double, 3> Palette::gripper_rgb = {0.95, 0.02, 0.88};

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::Cube: return "cube";
    case Shape::Ball: return "ball";
    case Shape::Bowl: return "bowl";
    case Shape::Bag: return "bag";
  }
  return "?";
}

const char* relation_phrase(Relation r) {
  switch (r) {
    case Relation::In: return "in";
    case Relation::LeftOf: return "left of";
    case Relation::FrontOf: return "in front of";
  }
  return "?";
}

double object_distance(const ObjectState& a, const ObjectState& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

namespace {

constexpr double kAlignEps = 0.015;
constexpr double kPlaceEps = 0.012;
constexpr double kGain = 0.7;

bool is_container(Shape s) { return s == Shape::Bowl || s == Shape::Bag; }

double proximity_radius(const ObjectState& target, const SimParams& sim) {
  return sim.r_close_factor * target.radius;
}

std::array<double, 2> place_goal(const SceneState& state, const Task& task, const SimParams& sim) {
  const ObjectState& tgt = state.objects[task.target_index];
  double gx = tgt.x, gy = tgt.y;
  if (task.relation == Relation::LeftOf) gx -= 0.8 * proximity_radius(tgt, sim);
  if (task.relation == Relation::FrontOf) gy += 0.8 * proximity_radius(tgt, sim);
  return {clamp(gx, 0.08, 0.92), clamp(gy, 0.08, 0.92)};
}

struct SceneSpec {
  int n_objects;
  Relation relation;
};

std::string build_instruction(const SceneState& state, const Task& task) {
  const ObjectState& pick = state.objects[task.pick_index];
  const ObjectState& tgt = state.objects[task.target_index];
  std::ostringstream os;
  os << "place the " << Palette::names[pick.color] << " " << shape_name(pick.shape) << " "
     << relation_phrase(task.relation) << " the " << Palette::names[tgt.color] << " "
     << shape_name(tgt.shape);
  return os.str();
}

// Rejection-samples a scene: distinct (color, shape) pairs, non-overlapping
// footprints, relation-compatible target placement, goal not already met.
std::pair<SceneState, std::string> sample_scene(uint64_t seed, std::optional<Relation> pinned,
                                                const SimParams& sim) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Relation rel = pinned ? *pinned : static_cast<Relation>(rng.uniform_int(0, 2));
    int n_obj = rng.uniform_int(2, 5);

    std::vector<ObjectState> objects;
    std::vector<std::pair<int, int>> used;  // (color, shape)
    auto sample_object = [&](Shape shape) {
      ObjectState o;
      o.shape = shape;
      for (int tries = 0; tries < 100; ++tries) {
        o.color = rng.uniform_int(0, Palette::kColors - 1);
        if (std::find(used.begin(), used.end(),
                      std::make_pair(o.color, static_cast<int>(shape))) == used.end()) {
          break;
        }
      }
      used.emplace_back(o.color, static_cast<int>(shape));
      o.radius = is_container(shape) ? rng.uniform(0.095, 0.115) : rng.uniform(0.055, 0.075);
      return o;
    };

    ObjectState pick = sample_object(rng.uniform() < 0.5 ? Shape::Cube : Shape::Ball);
    Shape tgt_shape;
    if (rel == Relation::In) {
      tgt_shape = rng.uniform() < 0.5 ? Shape::Bowl : Shape::Bag;
    } else {
      tgt_shape = static_cast<Shape>(rng.uniform_int(0, 3));
    }
    ObjectState target = sample_object(tgt_shape);

    objects.push_back(pick);
    objects.push_back(target);
    for (int i = 2; i < n_obj; ++i) objects.push_back(sample_object(static_cast<Shape>(rng.uniform_int(0, 3))));

    // Positions: target first (relation constrains it), then the rest.
    auto overlaps = [&](const ObjectState& o, int upto) {
      for (int j = 0; j < upto; ++j) {
        if (j == 1) continue;  // target placed separately
        if (object_distance(o, objects[j]) < o.radius + objects[j].radius + 0.04) return true;
      }
      return false;
    };

    bool placed_all = true;
    {
      ObjectState& t = objects[1];
      double x_lo = 0.14, x_hi = 0.86, y_lo = 0.14, y_hi = 0.86;
      if (rel == Relation::LeftOf) x_lo = 0.34;
      if (rel == Relation::FrontOf) y_hi = 0.62;
      t.x = rng.uniform(x_lo, x_hi);
      t.y = rng.uniform(y_lo, y_hi);
    }
    for (int i = 0; i < n_obj && placed_all; ++i) {
      if (i == 1) continue;
      ObjectState& o = objects[i];
      bool ok = false;
      for (int tries = 0; tries < 300; ++tries) {
        o.x = rng.uniform(0.14, 0.86);
        o.y = rng.uniform(0.14, 0.86);
        if (object_distance(o, objects[1]) < o.radius + objects[1].radius + 0.04) continue;
        if (!overlaps(o, i)) {
          ok = true;
          break;
        }
      }
      placed_all = ok;
    }
    if (!placed_all) continue;

    // Shuffle list order so roles are not positional.
    std::vector<int> order(n_obj);
    for (int i = 0; i < n_obj; ++i) order[i] = i;
    for (int i = n_obj - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

    SceneState state;
    state.objects.resize(n_obj);
    Task task;
    for (int i = 0; i < n_obj; ++i) {
      state.objects[order[i]] = objects[i];
      if (i == 0) task.pick_index = order[i];
      if (i == 1) task.target_index = order[i];
    }
    task.relation = rel;

    state.gripper.x = rng.uniform(0.15, 0.85);
    state.gripper.y = rng.uniform(0.15, 0.85);
    state.gripper.z = sim.z_travel;
    state.gripper.yaw = rng.uniform(-0.3, 0.3);
    state.gripper.aperture = 1.0;

    std::string instruction = build_instruction(state, task);
    if (check_success(state, instruction, sim)) continue;  // goal met by accident; resample
    return {state, instruction};
  }
  throw std::runtime_error("sample_task: could not place scene (unexpected)");
}

// --- rasterization ----------------------------------------------------------

struct Canvas {
  Image img;
  std::vector<uint8_t> owner;  // per pixel
  int size;

  explicit Canvas(int s) : img(s, s), owner(static_cast<size_t>(s) * s, 0), size(s) {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = Palette::table_rgb[c];
  }

  void put(int y, int x, const std::array<double, 3>& rgb, uint8_t id) {
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    owner[static_cast<size_t>(y) * size + x] = id;
  }
};

std::array<double, 3> shade(const std::array<double, 3>& rgb, double f) {
  return {rgb[0] * f, rgb[1] * f, rgb[2] * f};
}

void draw_disk(Canvas& cv, double cx, double cy, double r, const std::array<double, 3>& rgb, uint8_t id) {
  int x0 = static_cast<int>(std::floor(cx - r)), x1 = static_cast<int>(std::ceil(cx + r));
  int y0 = static_cast<int>(std::floor(cy - r)), y1 = static_cast<int>(std::ceil(cy + r));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) cv.put(y, x, rgb, id);
    }
}

void draw_square(Canvas& cv, double cx, double cy, double half, const std::array<double, 3>& rgb, uint8_t id) {
  int x0 = static_cast<int>(std::floor(cx - half)), x1 = static_cast<int>(std::ceil(cx + half));
  int y0 = static_cast<int>(std::floor(cy - half)), y1 = static_cast<int>(std::ceil(cy + half));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (std::abs(x + 0.5 - cx) <= half && std::abs(y + 0.5 - cy) <= half) cv.put(y, x, rgb, id);
    }
}

void draw_object(Canvas& cv, const ObjectState& o, int size, uint8_t id) {
  double cx = o.x * size, cy = o.y * size, r = o.radius * size;
  const auto& rgb = Palette::rgb[o.color];
  switch (o.shape) {
    case Shape::Ball:
      draw_disk(cv, cx, cy, r, rgb, id);
      break;
    case Shape::Cube:
      draw_square(cv, cx, cy, 0.88 * r, rgb, id);
      break;
    case Shape::Bowl:
      draw_disk(cv, cx, cy, r, rgb, id);
      draw_disk(cv, cx, cy, 0.55 * r, shade(rgb, 0.72), id);
      break;
    case Shape::Bag:
      draw_square(cv, cx, cy, 0.92 * r, rgb, id);
      draw_square(cv, cx, cy, 0.55 * r, shade(rgb, 0.72), id);
      break;
  }
}

// H-shaped glyph: two fingers plus a central crossbar, rotated by yaw about
// the keypoint (the point midway between the fingers). The shape is symmetric
// about the keypoint, so its pixel centroid sits on the keypoint, and it
// dilates with height as a depth cue.
void draw_gripper(Canvas& cv, const GripperState& g, int size, uint8_t id) {
  double scale = (0.8 + 0.55 * g.z) * (size / 112.0);
  double kx = g.x * size, ky = g.y * size;
  double fw = 3.0 * scale;                          // finger width
  double fl = 14.0 * scale;                         // finger length
  double bh = 3.5 * scale;                          // crossbar height
  double gap = (6.0 + 10.0 * g.aperture) * scale;   // inner gap between fingers
  double cs = std::cos(g.yaw), sn = std::sin(g.yaw);

  double extent = fl + gap + fw + 2.0;
  int x0 = static_cast<int>(std::floor(kx - extent)), x1 = static_cast<int>(std::ceil(kx + extent));
  int y0 = static_cast<int>(std::floor(ky - extent)), y1 = static_cast<int>(std::ceil(ky + extent));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      // rotate pixel center into the glyph frame
      double px = x + 0.5 - kx, py = y + 0.5 - ky;
      double lx = cs * px + sn * py;
      double ly = -sn * px + cs * py;
      bool finger = std::abs(ly) <= fl / 2 && std::abs(lx) >= gap / 2 && std::abs(lx) <= gap / 2 + fw;
      bool bar = std::abs(ly) <= bh / 2 && std::abs(lx) < gap / 2;
      if (finger || bar) cv.put(y, x, Palette::gripper_rgb, id);
    }
  }
}

RenderResult render_impl(const SceneState& state, const SimParams& sim, bool with_gripper) {
  const int size = sim.image_size;
  Canvas cv(size);

  int n = static_cast<int>(state.objects.size());
  // containers first, then free objects, then the held object, gripper on top
  for (int i = 0; i < n; ++i)
    if (is_container(state.objects[i].shape)) draw_object(cv, state.objects[i], size, static_cast<uint8_t>(1 + i));
  for (int i = 0; i < n; ++i)
    if (!is_container(state.objects[i].shape) && !state.objects[i].held)
      draw_object(cv, state.objects[i], size, static_cast<uint8_t>(1 + i));
  for (int i = 0; i < n; ++i)
    if (state.objects[i].held) draw_object(cv, state.objects[i], size, static_cast<uint8_t>(1 + i));
  if (with_gripper) draw_gripper(cv, state.gripper, size, static_cast<uint8_t>(1 + n));

  RenderResult out;
  out.image = std::move(cv.img);

  PatchGeometry geom = make_patch_geometry(size, size, sim.patch_size);
  out.gt_masks.grid_h = geom.grid_h;
  out.gt_masks.grid_w = geom.grid_w;
  out.gt_masks.owner.assign(static_cast<size_t>(geom.patches()), 0);
  const int ps = sim.patch_size;
  std::vector<int> counts(static_cast<size_t>(n) + 2);
  for (int pr = 0; pr < geom.grid_h; ++pr) {
    for (int pc = 0; pc < geom.grid_w; ++pc) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int y = pr * ps; y < (pr + 1) * ps; ++y)
        for (int x = pc * ps; x < (pc + 1) * ps; ++x) ++counts[cv.owner[static_cast<size_t>(y) * size + x]];
      int best = 0;
      for (int k = 1; k < static_cast<int>(counts.size()); ++k)
        if (counts[k] > counts[best]) best = k;  // ties keep the lower id
      out.gt_masks.owner[static_cast<size_t>(pr) * geom.grid_w + pc] = static_cast<uint8_t>(best);
    }
  }

  double u = clamp(state.gripper.x * size, 0.0, size - 1e-3);
  double v = clamp(state.gripper.y * size, 0.0, size - 1e-3);
  out.gripper_px = PixelPoint{u, v};
  return out;
}

}  // namespace

std::pair<SceneState, std::string> sample_task(uint64_t seed, const SimParams& sim) {
  return sample_scene(seed, std::nullopt, sim);
}

std::pair<SceneState, std::string> sample_task_with_relation(uint64_t seed, Relation rel, const SimParams& sim) {
  return sample_scene(seed, rel, sim);
}

Task parse_instruction(const std::string& instruction, const SceneState& state) {
  std::istringstream is(instruction);
  std::vector<std::string> w{std::istream_iterator<std::string>(is), std::istream_iterator<std::string>()};
  auto fail = [&](const std::string& why) -> Task {
    throw DataError("cannot parse instruction '" + instruction + "': " + why);
  };

  if (w.size() < 8 || w[0] != "place" || w[1] != "the") return fail("expected 'place the ...'");

  auto find_object = [&](const std::string& color, const std::string& shape) {
    int found = -1;
    for (int i = 0; i < static_cast<int>(state.objects.size()); ++i) {
      const ObjectState& o = state.objects[i];
      if (color == Palette::names[o.color] && shape == shape_name(o.shape)) {
        if (found >= 0) fail("ambiguous object '" + color + " " + shape + "'");
        found = i;
      }
    }
    if (found < 0) fail("no object '" + color + " " + shape + "' in scene");
    return found;
  };

  Task task;
  task.pick_index = find_object(w[2], w[3]);

  size_t t;  // index of "the" before the target descriptor
  if (w[4] == "in" && w.size() > 5 && w[5] == "front") {
    if (w.size() != 10 || w[6] != "of" || w[7] != "the") return fail("bad 'in front of' form");
    task.relation = Relation::FrontOf;
    t = 7;
  } else if (w[4] == "in") {
    if (w.size() != 8 || w[5] != "the") return fail("bad 'in' form");
    task.relation = Relation::In;
    t = 5;
  } else if (w[4] == "left") {
    if (w.size() != 9 || w[5] != "of" || w[6] != "the") return fail("bad 'left of' form");
    task.relation = Relation::LeftOf;
    t = 6;
  } else {
    return fail("unknown relation '" + w[4] + "'");
  }
  task.target_index = find_object(w[t + 1], w[t + 2]);
  if (task.target_index == task.pick_index) fail("pick and target are the same object");
  return task;
}

RenderResult render(const SceneState& state, const SimParams& sim) { return render_impl(state, sim, true); }

RenderResult render_without_gripper(const SceneState& state, const SimParams& sim) {
  return render_impl(state, sim, false);
}

SceneState step_sim(const SceneState& state, const Action& action, const SimParams& sim) {
  SceneState s = state;
  GripperState& g = s.gripper;
  g.x = clamp(g.x + clamp(action.dpos[0], -sim.a_max, sim.a_max), 0.05, 0.95);
  g.y = clamp(g.y + clamp(action.dpos[1], -sim.a_max, sim.a_max), 0.05, 0.95);
  g.z = clamp(g.z + clamp(action.dpos[2], -sim.a_max, sim.a_max), 0.0, 1.0);
  g.yaw += clamp(action.drot[2], -sim.dyaw_max, sim.dyaw_max);  // roll/pitch carried but not simulated
  double cmd = clamp(action.grip, 0.0, 1.0);
  g.aperture = clamp(g.aperture + clamp(cmd - g.aperture, -sim.aperture_rate, sim.aperture_rate), 0.0, 1.0);

  int held = -1;
  for (int i = 0; i < static_cast<int>(s.objects.size()); ++i)
    if (s.objects[i].held) held = i;

  if (held >= 0) {
    s.objects[held].x = g.x;
    s.objects[held].y = g.y;
    if (g.aperture >= sim.release_aperture) s.objects[held].held = false;
  } else if (g.aperture <= sim.grab_aperture && g.z <= sim.grab_z_max) {
    int best = -1;
    double best_d = 1e9;
    for (int i = 0; i < static_cast<int>(s.objects.size()); ++i) {
      const ObjectState& o = s.objects[i];
      if (is_container(o.shape)) continue;
      double d = std::hypot(o.x - g.x, o.y - g.y);
      if (d <= 0.8 * o.radius && d < best_d) {
        best = i;
        best_d = d;
      }
    }
    if (best >= 0) s.objects[best].held = true;
  }
  return s;
}

bool check_success(const SceneState& state, const std::string& instruction, const SimParams& sim) {
  Task task = parse_instruction(instruction, state);
  const ObjectState& obj = state.objects[task.pick_index];
  const ObjectState& tgt = state.objects[task.target_index];
  if (obj.held) return false;  // must be released
  double d = object_distance(obj, tgt);
  switch (task.relation) {
    case Relation::In:
      return d <= 0.75 * tgt.radius;
    case Relation::LeftOf:
      return obj.x < tgt.x && d <= proximity_radius(tgt, sim);
    case Relation::FrontOf:
      return obj.y > tgt.y && d <= proximity_radius(tgt, sim);
  }
  return false;
}

Action scripted_expert(const SceneState& state, const std::string& instruction, const SimParams& sim) {
  Task task = parse_instruction(instruction, state);
  const ObjectState& obj = state.objects[task.pick_index];
  const GripperState& g = state.gripper;

  Action a;
  a.grip = g.aperture;  // hold by default
  auto P = [&](double e) { return clamp(kGain * e, -sim.a_max, sim.a_max); };
  if (std::abs(g.yaw) > 1e-9) a.drot[2] = clamp(-g.yaw, -sim.dyaw_max, sim.dyaw_max);

  if (check_success(state, instruction, sim)) return Action{{0, 0, 0}, {0, 0, 0}, g.aperture};

  if (!obj.held) {
    double ex = obj.x - g.x, ey = obj.y - g.y;
    double dist = std::hypot(ex, ey);
    if (dist > kAlignEps) {
      a.dpos[0] = P(ex);
      a.dpos[1] = P(ey);
      a.dpos[2] = dist > 0.1 ? P(sim.z_travel - g.z) : 0.0;
      a.grip = 1.0;
    } else {
      // Aligned above the object: descend; close the grip over the final
      // stretch so the grasp happens while still moving.
      a.grip = g.z <= 0.30 ? 0.0 : 1.0;
      if (g.z > sim.z_grasp + 0.005) {
        a.dpos[2] = P(sim.z_grasp - g.z);
      } else {
        a.dpos[2] = 0.01;  // nudge; keeps the frame out of the no-motion filter
      }
    }
    return a;
  }

  auto goal = place_goal(state, task, sim);
  double ex = goal[0] - g.x, ey = goal[1] - g.y;
  double dist = std::hypot(ex, ey);
  if (dist > kPlaceEps) {
    a.dpos[0] = P(ex);
    a.dpos[1] = P(ey);
    a.dpos[2] = dist > 0.1 ? P(sim.z_travel - g.z) : 0.0;
    a.grip = 0.0;
    return a;
  }
  double z_place = task.relation == Relation::In ? 0.10 : 0.08;
  if (g.z > z_place + 0.005) {
    a.dpos[2] = P(z_place - g.z);
    a.grip = g.z <= z_place + 0.28 ? 1.0 : 0.0;  // open during the final descent
  } else {
    a.dpos[2] = 0.01;
    a.grip = 1.0;
  }
  return a;
}

Episode run_expert_episode(uint64_t seed, const SimParams& sim) {
  auto [state, instruction] = sample_task(seed, sim);
  Episode ep;
  ep.instruction = instruction;
  for (int t = 0; t < sim.max_steps; ++t) {
    if (check_success(state, instruction, sim)) {
      ep.success = true;
      break;
    }
    Action a = scripted_expert(state, instruction, sim);
    if (!a.no_motion()) {
      RenderResult r = render(state, sim);
      ep.steps.push_back(EpisodeStep{state, std::move(r.image), std::move(r.gt_masks), r.gripper_px, a});
    }
    state = step_sim(state, a, sim);
  }
  if (!ep.success) ep.success = check_success(state, instruction, sim);
  return ep;
}

}  // namespace oat
