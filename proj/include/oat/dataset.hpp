#pragma once

#include <string>
#include <vector>

#include "oat/scene.hpp"

namespace oat {

/// Default demonstration count for a full training dataset.
inline constexpr int kDefaultEpisodes = 320;

struct DatasetManifest {
  int format_version = 1;
  uint64_t seed = 0;
  int episode_count = 0;
  int image_size = 112;
  int patch_size = 14;
  std::string palette;  // comma-separated color names

  SimParams sim() const {
    SimParams s;
    s.image_size = image_size;
    s.patch_size = patch_size;
    return s;
  }
};

/// On-disk step: the image is kept as encoded PNG bytes and decoded on demand,
/// which keeps a full dataset resident in a few tens of MB.
struct StoredStep {
  SceneState state;
  std::vector<uint8_t> png;
  OwnerGrid gt_masks;
  PixelPoint gripper_px;
  Action action;

  Image decode_image() const;
};

struct StoredEpisode {
  std::string instruction;
  bool success = false;
  std::vector<StoredStep> steps;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<StoredEpisode> episodes;

  size_t total_steps() const;
};

/// Runs the scripted expert for n_episodes seeded tasks and serializes the
/// result: `manifest.txt` plus one record per episode under `episodes/`.
/// Deterministic per seed, byte-for-byte.
void generate_dataset(int n_episodes, uint64_t seed, const std::string& out_path, const SimParams& sim = {});

Dataset load_dataset(const std::string& path);

/// Parses only manifest.txt (cheap geometry/seed lookup without episode IO).
DatasetManifest load_manifest(const std::string& path);

// Single-record IO, exposed for tests and tools.
void write_episode_record(const std::string& path, const StoredEpisode& ep);
StoredEpisode read_episode_record(const std::string& path);

StoredEpisode to_stored(const Episode& ep);

}  // namespace oat
