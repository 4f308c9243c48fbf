#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oat/png_io.hpp"
#include "oat/segment.hpp"

using namespace oat;

namespace {

RawPartition random_partition(Rng& rng, int gh, int gw, int parts) {
  RawPartition raw;
  raw.grid_h = gh;
  raw.grid_w = gw;
  raw.label.resize(static_cast<size_t>(gh) * gw);
  // every part gets at least one patch, the rest land at random
  for (int p = 0; p < parts; ++p) raw.label[p] = p;
  for (size_t k = parts; k < raw.label.size(); ++k) raw.label[k] = rng.uniform_int(0, parts - 1);
  // scatter with a shuffle so parts are not contiguous
  for (int i = static_cast<int>(raw.label.size()) - 1; i > 0; --i)
    std::swap(raw.label[i], raw.label[rng.uniform_int(0, i)]);
  raw.part_color.assign(parts, -1);
  return raw;
}

/// Brute-force best-matching agreement: enumerates injective slot matchings
/// via permutations. Independent of the library's assignment solver.
double agreement_by_permutation(const MaskSet& a, const MaskSet& b) {
  auto counts_of = [](const MaskSet& m) {
    std::vector<int> nonempty;
    auto c = m.slot_counts();
    for (int s = 0; s < m.n_slots; ++s)
      if (c[s] > 0) nonempty.push_back(s);
    return nonempty;
  };
  std::vector<int> sa = counts_of(a), sb = counts_of(b);
  if (sa.size() > sb.size()) return agreement_by_permutation(b, a);

  const int K = a.patches();
  std::vector<std::vector<int>> conf(sa.size(), std::vector<int>(sb.size(), 0));
  std::vector<int> ra(a.n_slots, -1), rb(b.n_slots, -1);
  for (size_t i = 0; i < sa.size(); ++i) ra[sa[i]] = static_cast<int>(i);
  for (size_t j = 0; j < sb.size(); ++j) rb[sb[j]] = static_cast<int>(j);
  for (int k = 0; k < K; ++k) conf[ra[a.assignment[k]]][rb[b.assignment[k]]]++;

  std::vector<int> perm(sb.size());
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int sum = 0;
    for (size_t i = 0; i < sa.size(); ++i) sum += conf[i][perm[i]];
    best = std::max(best, sum);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / K;
}

}  // namespace

TEST_SUITE("segment") {
  TEST_CASE("normalize_slots: M == N is the identity partition") {
    Rng rng(1);
    RawPartition raw = random_partition(rng, 4, 4, 5);
    MaskSet m = normalize_slots(raw, 5);
    // same grouping: patches share a final slot iff they shared a raw part
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j)
        CHECK((raw.label[i] == raw.label[j]) == (m.assignment[i] == m.assignment[j]));
  }

  TEST_CASE("normalize_slots: single part pads with empties") {
    RawPartition raw;
    raw.grid_h = raw.grid_w = 8;
    raw.label.assign(64, 0);
    raw.part_color = {-1};
    MaskSet m = normalize_slots(raw, 7);
    auto counts = m.slot_counts();
    CHECK(counts[0] == 64);
    for (int s = 1; s < 7; ++s) CHECK(counts[s] == 0);
  }

  TEST_CASE("normalize_slots: merging preserves the partition") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
      int parts = rng.uniform_int(8, 12);
      RawPartition raw = random_partition(rng, 4, rng.uniform_int(4, 6), parts);
      MaskSet m = normalize_slots(raw, 7);
      CHECK(m.n_slots == 7);
      auto counts = m.slot_counts();
      CHECK(std::accumulate(counts.begin(), counts.end(), 0) == m.patches());
      int nonempty = 0;
      for (int c : counts) nonempty += c > 0 ? 1 : 0;
      CHECK(nonempty <= 7);
      // merges only: patches that shared a raw part still share a slot
      for (size_t i = 0; i < raw.label.size(); ++i)
        for (size_t j = i + 1; j < raw.label.size(); ++j)
          if (raw.label[i] == raw.label[j]) CHECK(m.assignment[i] == m.assignment[j]);
      for (int s : m.assignment) {
        CHECK(s >= 0);
        CHECK(s < 7);
      }
    }
  }

  TEST_CASE("slot order is canonical: descending size, ties by first patch") {
    Rng rng(3);
    RawPartition raw = random_partition(rng, 6, 6, 6);
    MaskSet m = normalize_slots(raw, 8);
    auto counts = m.slot_counts();
    std::vector<int> first(8, 1 << 30);
    for (int k = 0; k < 36; ++k) first[m.assignment[k]] = std::min(first[m.assignment[k]], k);
    for (int s = 0; s + 1 < 8; ++s) {
      if (counts[s + 1] == 0) continue;
      CHECK(counts[s] >= counts[s + 1]);
      if (counts[s] == counts[s + 1]) CHECK(first[s] < first[s + 1]);
    }
  }

  TEST_CASE("segment_oracle counts occupied slots") {
    auto [state, instr] = sample_task(17);
    // craft a 3-object scene-like owner grid: background, 3 objects, gripper
    OwnerGrid g;
    g.grid_h = g.grid_w = 8;
    g.owner.assign(64, 0);
    g.owner[9] = 1;
    g.owner[10] = 1;
    g.owner[20] = 2;
    g.owner[40] = 3;
    g.owner[50] = 4;  // gripper
    MaskSet m = segment_oracle(g, 7);
    auto counts = m.slot_counts();
    int nonempty = 0;
    for (int c : counts) nonempty += c > 0 ? 1 : 0;
    CHECK(nonempty == 5);
    CHECK(std::accumulate(counts.begin(), counts.end(), 0) == 64);
  }

  TEST_CASE("segment_oracle: empty scene gives one non-empty slot") {
    OwnerGrid g;
    g.grid_h = g.grid_w = 8;
    g.owner.assign(64, 0);
    MaskSet m = segment_oracle(g, 7);
    auto counts = m.slot_counts();
    CHECK(counts[0] == 64);
    for (int s = 1; s < 7; ++s) CHECK(counts[s] == 0);
  }

  TEST_CASE("segment_unsupervised: solid color collapses to one slot") {
    Image img(56, 56);
    for (int y = 0; y < 56; ++y)
      for (int x = 0; x < 56; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = Palette::rgb[2][c];
    MaskSet m = segment_unsupervised(img, 7, 14);
    auto counts = m.slot_counts();
    CHECK(counts[0] == 16);
    for (int s = 1; s < 7; ++s) CHECK(counts[s] == 0);
  }

  TEST_CASE("segment_unsupervised: disjoint same-color regions stay separate components") {
    Image img(112, 112);
    for (int y = 0; y < 112; ++y)
      for (int x = 0; x < 112; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = Palette::table_rgb[c];
    auto paint = [&](int py, int px) {
      for (int y = py * 14; y < (py + 1) * 14; ++y)
        for (int x = px * 14; x < (px + 1) * 14; ++x)
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = Palette::rgb[0][c];
    };
    paint(1, 1);
    paint(6, 6);  // same color, not 4-connected
    MaskSet m = segment_unsupervised(img, 7, 14);
    CHECK(m.assignment[1 * 8 + 1] != m.assignment[6 * 8 + 6]);
    auto counts = m.slot_counts();
    int nonempty = 0;
    for (int c : counts) nonempty += c > 0 ? 1 : 0;
    CHECK(nonempty == 3);  // background + two squares
  }

  TEST_CASE("segment_unsupervised is deterministic and always a partition") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      Image img(56, 56);
      for (double& v : img.data) v = rng.uniform();
      MaskSet a = segment_unsupervised(img, 7, 14);
      MaskSet b = segment_unsupervised(img, 7, 14);
      CHECK(a.assignment == b.assignment);
      auto counts = a.slot_counts();
      CHECK(std::accumulate(counts.begin(), counts.end(), 0) == 16);
    }
  }

  TEST_CASE("agreement solver matches the brute-force permutation oracle") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      RawPartition ra = random_partition(rng, 4, 5, rng.uniform_int(2, 6));
      RawPartition rb = random_partition(rng, 4, 5, rng.uniform_int(2, 6));
      MaskSet a = normalize_slots(ra, 6);
      MaskSet b = normalize_slots(rb, 6);
      CHECK(partition_agreement(a, b) == doctest::Approx(agreement_by_permutation(a, b)).epsilon(1e-12));
    }
  }

  TEST_CASE("color-quantized masks agree with ground truth on simulator scenes") {
    SimParams sim;
    double sum = 0;
    int n = 0;
    for (int i = 0; i < 100; ++i) {
      auto [state, instr] = sample_task(Rng::substream(100, i).next_u64(), sim);
      RenderResult r = render(state, sim);
      Image decoded = decode_png(encode_png(r.image));  // what the pipeline actually sees
      MaskSet gt = segment_oracle(r.gt_masks, 7);
      MaskSet pred = segment_unsupervised(decoded, 7, sim.patch_size);
      sum += agreement_by_permutation(gt, pred);
      ++n;
    }
    CHECK(sum / n >= 0.8);
  }
}
