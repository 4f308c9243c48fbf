#pragma once

#include <cmath>
#include <vector>

#include "oat/common.hpp"

namespace oat {

/// Dense RGB image, row-major, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // (y * width + x) * 3 + channel

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }

  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

/// Tiling of an image into fixed-size square patches.
struct PatchGeometry {
  int patch_size = 0;
  int grid_h = 0;
  int grid_w = 0;

  int patches() const { return grid_h * grid_w; }
  int pixel_h() const { return grid_h * patch_size; }
  int pixel_w() const { return grid_w * patch_size; }
};

/// Pixel coordinate, (u, v) = (column, row), origin top-left. The negative
/// quadrant is reserved as the off-screen sentinel.
struct PixelPoint {
  double u = -1.0;
  double v = -1.0;

  static PixelPoint offscreen() { return PixelPoint{-1.0, -1.0}; }
  bool in_frame(const PatchGeometry& g) const {
    return u >= 0.0 && v >= 0.0 && u < g.pixel_w() && v < g.pixel_h();
  }
};

struct PatchIndex {
  int row = 0;
  int col = 0;
  bool operator==(const PatchIndex&) const = default;
};

inline int patch_flat(const PatchGeometry& g, PatchIndex p) { return p.row * g.grid_w + p.col; }

inline PatchGeometry make_patch_geometry(int height, int width, int patch_size) {
  if (patch_size < 1) throw GeometryError("patch_size must be >= 1");
  if (height <= 0 || width <= 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw GeometryError("image dimensions must be positive multiples of patch_size");
  }
  return PatchGeometry{patch_size, height / patch_size, width / patch_size};
}

inline PatchGeometry patchify(const Image& img, int patch_size) {
  return make_patch_geometry(img.height, img.width, patch_size);
}

/// Maps an in-frame pixel to the patch containing it. Off-screen points are a
/// caller error here, distinct from the detector's "no detection" value.
inline PatchIndex pixel_to_patch(const PatchGeometry& g, PixelPoint p) {
  if (!p.in_frame(g)) throw std::out_of_range("pixel_to_patch: point out of frame");
  return PatchIndex{static_cast<int>(std::floor(p.v / g.patch_size)),
                    static_cast<int>(std::floor(p.u / g.patch_size))};
}

/// G x G window of patch indices centered at `center`, row-major. At borders
/// the window shifts inward rather than shrinking, so exactly G*G distinct
/// in-bounds indices come back for any in-bounds center.
inline std::vector<PatchIndex> patch_window(const PatchGeometry& g, PatchIndex center, int grid) {
  if (grid < 1 || grid % 2 == 0) throw std::invalid_argument("patch_window: grid must be odd");
  if (grid > g.grid_h || grid > g.grid_w) throw std::invalid_argument("patch_window: grid exceeds patch grid");
  if (center.row < 0 || center.row >= g.grid_h || center.col < 0 || center.col >= g.grid_w) {
    throw std::out_of_range("patch_window: center out of bounds");
  }
  int half = grid / 2;
  int top = std::min(std::max(center.row - half, 0), g.grid_h - grid);
  int left = std::min(std::max(center.col - half, 0), g.grid_w - grid);
  std::vector<PatchIndex> out;
  out.reserve(static_cast<size_t>(grid) * grid);
  for (int r = top; r < top + grid; ++r)
    for (int c = left; c < left + grid; ++c) out.push_back(PatchIndex{r, c});
  return out;
}

}  // namespace oat
