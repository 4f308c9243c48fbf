#include "oat/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "oat/config.hpp"
#include "oat/png_io.hpp"

namespace fs = std::filesystem;

namespace oat {

namespace {

constexpr char kRecordMagic[8] = {'O', 'A', 'T', 'E', 'P', 'R', 'E', 'C'};
constexpr uint32_t kRecordVersion = 1;

// Little-endian primitive IO; doubles round-trip bit-exactly via memcpy.
void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::string& out, uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }

struct Cursor {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;
  std::string where;

  void need(size_t k) const {
    if (pos + k > n) throw DataError("truncated episode record: " + where);
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, p + pos, 4);
    pos += 4;
    return v;
  }
  uint16_t u16() {
    need(2);
    uint16_t v;
    std::memcpy(&v, p + pos, 2);
    pos += 2;
    return v;
  }
  uint8_t u8() {
    need(1);
    return p[pos++];
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, p + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

void put_state(std::string& out, const SceneState& s) {
  put_u32(out, static_cast<uint32_t>(s.objects.size()));
  for (const ObjectState& o : s.objects) {
    put_u8(out, static_cast<uint8_t>(o.shape));
    put_u8(out, static_cast<uint8_t>(o.color));
    put_f64(out, o.x);
    put_f64(out, o.y);
    put_f64(out, o.radius);
    put_u8(out, o.held ? 1 : 0);
  }
  put_f64(out, s.gripper.x);
  put_f64(out, s.gripper.y);
  put_f64(out, s.gripper.z);
  put_f64(out, s.gripper.yaw);
  put_f64(out, s.gripper.aperture);
}

SceneState get_state(Cursor& c) {
  SceneState s;
  uint32_t n = c.u32();
  if (n > 64) throw DataError("episode record: implausible object count");
  s.objects.resize(n);
  for (ObjectState& o : s.objects) {
    o.shape = static_cast<Shape>(c.u8());
    o.color = c.u8();
    o.x = c.f64();
    o.y = c.f64();
    o.radius = c.f64();
    o.held = c.u8() != 0;
  }
  s.gripper.x = c.f64();
  s.gripper.y = c.f64();
  s.gripper.z = c.f64();
  s.gripper.yaw = c.f64();
  s.gripper.aperture = c.f64();
  return s;
}

std::string record_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ep_%06d.rec", index);
  return buf;
}

}  // namespace

Image StoredStep::decode_image() const { return decode_png(png); }

size_t Dataset::total_steps() const {
  size_t n = 0;
  for (const auto& ep : episodes) n += ep.steps.size();
  return n;
}

StoredEpisode to_stored(const Episode& ep) {
  StoredEpisode out;
  out.instruction = ep.instruction;
  out.success = ep.success;
  out.steps.reserve(ep.steps.size());
  for (const EpisodeStep& s : ep.steps) {
    StoredStep ss;
    ss.state = s.state;
    ss.png = encode_png(s.image);
    ss.gt_masks = s.gt_masks;
    ss.gripper_px = s.gripper_px;
    ss.action = s.action;
    out.steps.push_back(std::move(ss));
  }
  return out;
}

void write_episode_record(const std::string& path, const StoredEpisode& ep) {
  std::string buf;
  buf.append(kRecordMagic, sizeof(kRecordMagic));
  put_u32(buf, kRecordVersion);
  put_u32(buf, static_cast<uint32_t>(ep.instruction.size()));
  buf.append(ep.instruction);
  put_u8(buf, ep.success ? 1 : 0);
  put_u32(buf, static_cast<uint32_t>(ep.steps.size()));
  for (const StoredStep& s : ep.steps) {
    put_state(buf, s.state);
    put_u32(buf, static_cast<uint32_t>(s.png.size()));
    buf.append(reinterpret_cast<const char*>(s.png.data()), s.png.size());
    put_u16(buf, static_cast<uint16_t>(s.gt_masks.grid_h));
    put_u16(buf, static_cast<uint16_t>(s.gt_masks.grid_w));
    buf.append(reinterpret_cast<const char*>(s.gt_masks.owner.data()), s.gt_masks.owner.size());
    put_f64(buf, s.gripper_px.u);
    put_f64(buf, s.gripper_px.v);
    for (double v : s.action.flat()) put_f64(buf, v);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write episode record: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("short write: " + path);
}

StoredEpisode read_episode_record(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open episode record: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Cursor c{reinterpret_cast<const uint8_t*>(data.data()), data.size(), 0, path};
  if (data.size() < 12 || std::memcmp(data.data(), kRecordMagic, sizeof(kRecordMagic)) != 0) {
    throw DataError("not an episode record: " + path);
  }
  c.pos = 8;
  uint32_t version = c.u32();
  if (version != kRecordVersion) throw DataError("unsupported record version in " + path);

  StoredEpisode ep;
  uint32_t ilen = c.u32();
  ep.instruction = c.bytes(ilen);
  ep.success = c.u8() != 0;
  uint32_t n_steps = c.u32();
  ep.steps.resize(n_steps);
  for (StoredStep& s : ep.steps) {
    s.state = get_state(c);
    uint32_t png_len = c.u32();
    std::string png = c.bytes(png_len);
    s.png.assign(png.begin(), png.end());
    s.gt_masks.grid_h = c.u16();
    s.gt_masks.grid_w = c.u16();
    size_t k = static_cast<size_t>(s.gt_masks.grid_h) * s.gt_masks.grid_w;
    std::string owners = c.bytes(k);
    s.gt_masks.owner.assign(owners.begin(), owners.end());
    s.gripper_px.u = c.f64();
    s.gripper_px.v = c.f64();
    std::array<double, 7> a;
    for (double& v : a) v = c.f64();
    s.action = Action::from_flat(a);
  }
  if (c.pos != data.size()) throw DataError("trailing bytes in episode record: " + path);
  return ep;
}

void generate_dataset(int n_episodes, uint64_t seed, const std::string& out_path, const SimParams& sim) {
  if (n_episodes < 1) throw std::invalid_argument("generate_dataset: n_episodes must be >= 1");
  std::error_code ec;
  fs::create_directories(fs::path(out_path) / "episodes", ec);
  if (ec) throw DataError("cannot create dataset directory " + out_path + ": " + ec.message());

  for (int i = 0; i < n_episodes; ++i) {
    Rng sub = Rng::substream(seed, static_cast<uint64_t>(i));
    Episode ep = run_expert_episode(sub.next_u64(), sim);
    StoredEpisode stored = to_stored(ep);
    std::string file = (fs::path(out_path) / "episodes" / record_filename(i)).string();
    write_episode_record(file, stored);
  }

  KvConfig manifest;
  manifest.set_int("format_version", 1);
  manifest.set("seed", std::to_string(seed));
  manifest.set_int("episode_count", n_episodes);
  manifest.set_int("image_size", sim.image_size);
  manifest.set_int("patch_size", sim.patch_size);
  std::string palette;
  for (int i = 0; i < Palette::kColors; ++i) {
    if (i) palette += ",";
    palette += Palette::names[i];
  }
  manifest.set("palette", palette);
  manifest.write_file((fs::path(out_path) / "manifest.txt").string());
}

DatasetManifest load_manifest(const std::string& path) {
  fs::path root(path);
  if (!fs::exists(root / "manifest.txt")) throw DataError("no manifest.txt under " + path);
  KvConfig m = KvConfig::parse_file((root / "manifest.txt").string());

  DatasetManifest out;
  out.format_version = static_cast<int>(m.get_int("format_version"));
  out.seed = static_cast<uint64_t>(std::stoull(m.get("seed")));
  out.episode_count = static_cast<int>(m.get_int("episode_count"));
  out.image_size = static_cast<int>(m.get_int("image_size"));
  out.patch_size = static_cast<int>(m.get_int("patch_size"));
  out.palette = m.get_or("palette", "");
  return out;
}

Dataset load_dataset(const std::string& path) {
  fs::path root(path);
  Dataset ds;
  ds.manifest = load_manifest(path);
  ds.episodes.reserve(ds.manifest.episode_count);
  for (int i = 0; i < ds.manifest.episode_count; ++i) {
    std::string file = (root / "episodes" / record_filename(i)).string();
    ds.episodes.push_back(read_episode_record(file));
  }
  return ds;
}

}  // namespace oat
