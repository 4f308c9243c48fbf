#pragma once

#include <vector>

#include "oat/image.hpp"
#include "oat/scene.hpp"

namespace oat {

/// Hard partition of the K patches into exactly N slots. Slots may be empty;
/// order is canonical (descending patch count, ties broken by the smallest
/// contained patch index; empty slots last).
struct MaskSet {
  int n_slots = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> assignment;  // length K, values in [0, n_slots)

  int patches() const { return grid_h * grid_w; }
  std::vector<int> slot_counts() const;
};

/// Intermediate partition with an arbitrary number of parts. `label` holds a
/// part id per patch; `part_color` optionally tags each part with a quantized
/// color class (used to prefer same-color merges), -1 when untagged.
struct RawPartition {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> label;       // length K, part ids in [0, parts)
  std::vector<int> part_color;  // length parts

  int parts() const { return static_cast<int>(part_color.size()); }
};

/// Canonicalizes a partition to exactly N slots: merges the smallest parts
/// (preferring the largest 4-adjacent part of the same quantized color, else
/// the globally smallest pair) while M > N, pads with empty slots while M < N.
/// Never drops a patch and never splits a part.
MaskSet normalize_slots(const RawPartition& raw, int n_slots);

/// Ground-truth masks: wraps the simulator's patch-resolution ownership grid
/// and normalizes it to N slots.
MaskSet segment_oracle(const OwnerGrid& gt, int n_slots);

/// Deterministic mask extractor: quantizes each patch's mean color against a
/// fixed codebook (table, the 8 object colors and their shaded variants, the
/// gripper color), takes 4-connected components of the quantized grid, and
/// normalizes to N slots.
MaskSet segment_unsupervised(const Image& img, int n_slots, int patch_size);

/// Patch-level agreement between two partitions under the best one-to-one slot
/// matching, in [0, 1]. Exhaustive over matchings (slot counts here are tiny);
/// serves as the independent scoring oracle for segmentation quality.
double partition_agreement(const MaskSet& a, const MaskSet& b);

}  // namespace oat
