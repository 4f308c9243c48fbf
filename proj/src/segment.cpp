#include "oat/segment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oat {

std::vector<int> MaskSet::slot_counts() const {
  std::vector<int> counts(n_slots, 0);
  for (int s : assignment) ++counts[s];
  return counts;
}

namespace {

struct PartInfo {
  int size = 0;
  int min_patch = 1 << 30;
  int color = -1;
  bool alive = false;
};

// (size asc, min_patch asc): the deterministic "smallest part" order.
bool smaller_part(const PartInfo& a, const PartInfo& b) {
  if (a.size != b.size) return a.size < b.size;
  return a.min_patch < b.min_patch;
}

}  // namespace

MaskSet normalize_slots(const RawPartition& raw, int n_slots) {
  if (n_slots < 1) throw std::invalid_argument("normalize_slots: n_slots must be >= 1");
  const int K = raw.grid_h * raw.grid_w;
  if (static_cast<int>(raw.label.size()) != K) throw GeometryError("normalize_slots: label/grid mismatch");

  std::vector<int> label = raw.label;
  int parts = raw.parts();
  std::vector<PartInfo> info(parts);
  for (int k = 0; k < K; ++k) {
    int p = label[k];
    if (p < 0 || p >= parts) throw GeometryError("normalize_slots: label out of range");
    info[p].size++;
    info[p].min_patch = std::min(info[p].min_patch, k);
    info[p].alive = true;
  }
  for (int p = 0; p < parts; ++p) info[p].color = raw.part_color[p];

  auto alive_count = [&] {
    int n = 0;
    for (const auto& pi : info)
      if (pi.alive && pi.size > 0) n++;
    return n;
  };

  auto merge_into = [&](int src, int dst) {
    for (int k = 0; k < K; ++k)
      if (label[k] == src) label[k] = dst;
    info[dst].size += info[src].size;
    info[dst].min_patch = std::min(info[dst].min_patch, info[src].min_patch);
    info[src].alive = false;
    info[src].size = 0;
  };

  while (alive_count() > n_slots) {
    // smallest live part
    int victim = -1;
    for (int p = 0; p < parts; ++p) {
      if (!info[p].alive || info[p].size == 0) continue;
      if (victim < 0 || smaller_part(info[p], info[victim])) victim = p;
    }

    // largest 4-adjacent part sharing the victim's quantized color
    int best_neighbor = -1;
    if (info[victim].color >= 0) {
      const int gw = raw.grid_w, gh = raw.grid_h;
      for (int k = 0; k < K; ++k) {
        if (label[k] != victim) continue;
        int r = k / gw, c = k % gw;
        const int nbr[4] = {r > 0 ? k - gw : -1, r < gh - 1 ? k + gw : -1, c > 0 ? k - 1 : -1,
                            c < gw - 1 ? k + 1 : -1};
        for (int nk : nbr) {
          if (nk < 0) continue;
          int q = label[nk];
          if (q == victim || info[q].color != info[victim].color) continue;
          if (best_neighbor < 0 || smaller_part(info[best_neighbor], info[q])) best_neighbor = q;
        }
      }
    }

    if (best_neighbor >= 0) {
      merge_into(victim, best_neighbor);
    } else {
      // fallback: merge the globally smallest pair (victim + next smallest)
      int second = -1;
      for (int p = 0; p < parts; ++p) {
        if (p == victim || !info[p].alive || info[p].size == 0) continue;
        if (second < 0 || smaller_part(info[p], info[second])) second = p;
      }
      merge_into(victim, second);
    }
  }

  // canonical slot order: descending size, ties by smallest contained patch
  std::vector<int> order;
  for (int p = 0; p < parts; ++p)
    if (info[p].alive && info[p].size > 0) order.push_back(p);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (info[a].size != info[b].size) return info[a].size > info[b].size;
    return info[a].min_patch < info[b].min_patch;
  });

  std::vector<int> remap(parts, -1);
  for (int s = 0; s < static_cast<int>(order.size()); ++s) remap[order[s]] = s;

  MaskSet out;
  out.n_slots = n_slots;
  out.grid_h = raw.grid_h;
  out.grid_w = raw.grid_w;
  out.assignment.resize(K);
  for (int k = 0; k < K; ++k) out.assignment[k] = remap[label[k]];
  return out;
}

MaskSet segment_oracle(const OwnerGrid& gt, int n_slots) {
  RawPartition raw;
  raw.grid_h = gt.grid_h;
  raw.grid_w = gt.grid_w;
  raw.label.resize(gt.owner.size());

  std::vector<int> owner_to_part(256, -1);
  int parts = 0;
  for (size_t k = 0; k < gt.owner.size(); ++k) {
    int o = gt.owner[k];
    if (owner_to_part[o] < 0) owner_to_part[o] = parts++;
    raw.label[k] = owner_to_part[o];
  }
  raw.part_color.assign(parts, -1);
  return normalize_slots(raw, n_slots);
}

namespace {

// Codebook classes: 0 = table, 1..8 = palette colors (shaded variants collapse
// to the base color), 9 = gripper.
int quantize_color(double r, double g, double b) {
  double best_d = 1e18;
  int best_class = 0;
  auto consider = [&](const std::array<double, 3>& rgb, int cls) {
    double dr = r - rgb[0], dg = g - rgb[1], db = b - rgb[2];
    double d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best_class = cls;
    }
  };
  consider(Palette::table_rgb, 0);
  for (int i = 0; i < Palette::kColors; ++i) {
    const auto& c = Palette::rgb[i];
    consider(c, 1 + i);
    consider({c[0] * 0.72, c[1] * 0.72, c[2] * 0.72}, 1 + i);
  }
  consider(Palette::gripper_rgb, 9);
  return best_class;
}

}  // namespace

MaskSet segment_unsupervised(const Image& img, int n_slots, int patch_size) {
  PatchGeometry geom = patchify(img, patch_size);
  const int K = geom.patches();

  std::vector<int> cls(K);
  for (int pr = 0; pr < geom.grid_h; ++pr) {
    for (int pc = 0; pc < geom.grid_w; ++pc) {
      double sum[3] = {0, 0, 0};
      for (int y = pr * patch_size; y < (pr + 1) * patch_size; ++y)
        for (int x = pc * patch_size; x < (pc + 1) * patch_size; ++x)
          for (int c = 0; c < 3; ++c) sum[c] += img.at(y, x, c);
      double inv = 1.0 / (patch_size * patch_size);
      cls[pr * geom.grid_w + pc] = quantize_color(sum[0] * inv, sum[1] * inv, sum[2] * inv);
    }
  }

  // 4-connected components of equal quantized class, labeled in scan order.
  RawPartition raw;
  raw.grid_h = geom.grid_h;
  raw.grid_w = geom.grid_w;
  raw.label.assign(K, -1);
  int parts = 0;
  std::vector<int> stack;
  for (int k0 = 0; k0 < K; ++k0) {
    if (raw.label[k0] >= 0) continue;
    int id = parts++;
    raw.part_color.push_back(cls[k0]);
    stack.assign(1, k0);
    raw.label[k0] = id;
    while (!stack.empty()) {
      int k = stack.back();
      stack.pop_back();
      int r = k / geom.grid_w, c = k % geom.grid_w;
      const int nbr[4] = {r > 0 ? k - geom.grid_w : -1, r < geom.grid_h - 1 ? k + geom.grid_w : -1,
                          c > 0 ? k - 1 : -1, c < geom.grid_w - 1 ? k + 1 : -1};
      for (int nk : nbr) {
        if (nk < 0 || raw.label[nk] >= 0 || cls[nk] != cls[k]) continue;
        raw.label[nk] = id;
        stack.push_back(nk);
      }
    }
  }
  return normalize_slots(raw, n_slots);
}

double partition_agreement(const MaskSet& a, const MaskSet& b) {
  if (a.grid_h != b.grid_h || a.grid_w != b.grid_w) throw GeometryError("partition_agreement: grid mismatch");
  const int K = a.patches();
  if (K == 0) return 1.0;

  auto nonempty = [](const MaskSet& m) {
    std::vector<int> idx;
    auto counts = m.slot_counts();
    for (int s = 0; s < m.n_slots; ++s)
      if (counts[s] > 0) idx.push_back(s);
    return idx;
  };
  std::vector<int> sa = nonempty(a), sb = nonempty(b);
  // rows = the smaller side so the DP mask ranges over the larger side
  bool swap_sides = sa.size() > sb.size();
  const MaskSet& ma = swap_sides ? b : a;
  const MaskSet& mb = swap_sides ? a : b;
  if (swap_sides) std::swap(sa, sb);

  const int nr = static_cast<int>(sa.size()), nc = static_cast<int>(sb.size());
  std::vector<int> row_of(ma.n_slots, -1), col_of(mb.n_slots, -1);
  for (int i = 0; i < nr; ++i) row_of[sa[i]] = i;
  for (int j = 0; j < nc; ++j) col_of[sb[j]] = j;

  std::vector<double> cnt(static_cast<size_t>(nr) * nc, 0.0);
  for (int k = 0; k < K; ++k) {
    int i = row_of[ma.assignment[k]];
    int j = col_of[mb.assignment[k]];
    cnt[static_cast<size_t>(i) * nc + j] += 1.0;
  }

  // exact max-weight assignment by subset DP over columns
  const int full = 1 << nc;
  std::vector<double> dp(full, -1.0);
  dp[0] = 0.0;
  double best = 0.0;
  for (int mask = 0; mask < full; ++mask) {
    if (dp[mask] < 0) continue;
    int i = __builtin_popcount(static_cast<unsigned>(mask));
    if (i >= nr) {
      best = std::max(best, dp[mask]);
      continue;
    }
    for (int j = 0; j < nc; ++j) {
      if (mask & (1 << j)) continue;
      int nm = mask | (1 << j);
      double v = dp[mask] + cnt[static_cast<size_t>(i) * nc + j];
      if (v > dp[nm]) dp[nm] = v;
    }
    best = std::max(best, dp[mask]);
  }
  return best / K;
}

}  // namespace oat
