#include <doctest.h>

#include <algorithm>

#include "oat/tokenizer.hpp"

using namespace oat;

namespace {

PatchFeatureGrid random_grid(Rng& rng, int gh, int gw, int dim) {
  PatchFeatureGrid f;
  f.geom = PatchGeometry{14, gh, gw};
  f.features.resize(gh * gw, dim);
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index i = 0; i < f.features.rows(); ++i) f.features(i, j) = rng.uniform(-2.0, 2.0);
  return f;
}

MaskSet random_masks(Rng& rng, int gh, int gw, int n_slots) {
  RawPartition raw;
  raw.grid_h = gh;
  raw.grid_w = gw;
  int parts = rng.uniform_int(1, n_slots);
  raw.label.resize(static_cast<size_t>(gh) * gw);
  for (int& l : raw.label) l = rng.uniform_int(0, parts - 1);
  raw.part_color.assign(parts, -1);
  return normalize_slots(raw, n_slots);
}

KeypointPrediction no_kp() { return KeypointPrediction{}; }

KeypointPrediction kp_at(double u, double v) {
  KeypointPrediction k;
  k.point = PixelPoint{u, v};
  k.confidence = 1.0;
  return k;
}

}  // namespace

TEST_SUITE("tokenizer") {
  TEST_CASE("average pooling is the slot mean") {
    PatchFeatureGrid f;
    f.geom = PatchGeometry{14, 1, 2};
    f.features.resize(2, 3);
    f.features << 2, 2, 2, 4, 4, 4;
    MaskSet m;
    m.n_slots = 3;
    m.grid_h = 1;
    m.grid_w = 2;
    m.assignment = {0, 0};
    VisualTokens t = object_tokens(f, m, PoolKind::Average, nullptr);
    CHECK(t.tokens(0, 0) == doctest::Approx(3.0));
    CHECK(t.tokens(0, 2) == doctest::Approx(3.0));
    CHECK(t.provenance[0].empty == false);
    CHECK(t.provenance[1].empty == true);
    CHECK(t.tokens.row(1).cwiseAbs().maxCoeff() == 0.0);  // empty slot is the zero token
  }

  TEST_CASE("one slot holding every patch equals the global mean") {
    Rng rng(0);
    PatchFeatureGrid f = random_grid(rng, 4, 4, 8);
    MaskSet m;
    m.n_slots = 7;
    m.grid_h = m.grid_w = 4;
    m.assignment.assign(16, 0);
    VisualTokens t = object_tokens(f, m, PoolKind::Average, nullptr);
    Eigen::RowVectorXd mean = f.features.colwise().mean();
    CHECK((t.tokens.row(0) - mean).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("attention pooling with equal keys reduces to average pooling") {
    Rng rng(1);
    PatchFeatureGrid f = random_grid(rng, 4, 4, 8);
    MaskSet m = random_masks(rng, 4, 4, 5);
    AttentionPoolParams pool = AttentionPoolParams::init(5, 8, 3);
    pool.key_w.setZero();  // all keys identical -> uniform softmax
    VisualTokens att = object_tokens(f, m, PoolKind::Attention, &pool);
    VisualTokens avg = object_tokens(f, m, PoolKind::Average, nullptr);
    CHECK((att.tokens - avg.tokens).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("count-weighted token mean equals the global feature mean") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      PatchFeatureGrid f = random_grid(rng, 4, 4, 6);
      MaskSet m = random_masks(rng, 4, 4, 7);
      VisualTokens t = object_tokens(f, m, PoolKind::Average, nullptr);

      // independent oracle: accumulate patch rows directly
      Eigen::RowVectorXd oracle = Eigen::RowVectorXd::Zero(6);
      for (int k = 0; k < 16; ++k) oracle += f.features.row(k);
      oracle /= 16.0;

      auto counts = m.slot_counts();
      Eigen::RowVectorXd weighted = Eigen::RowVectorXd::Zero(6);
      for (int s = 0; s < m.n_slots; ++s) weighted += counts[s] * t.tokens.row(s);
      weighted /= 16.0;
      CHECK((weighted - oracle).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("agent tokens are bit-exact copies of the window rows") {
    Rng rng(3);
    PatchFeatureGrid f = random_grid(rng, 16, 16, 8);
    // keypoint at the image center -> window rows (7..9) x (7..9)
    VisualTokens t = agent_tokens(f, kp_at(112.0, 112.0), 3);
    REQUIRE(t.count() == 9);
    int i = 0;
    for (int r = 7; r <= 9; ++r)
      for (int c = 7; c <= 9; ++c, ++i) {
        CHECK((t.tokens.row(i).array() == f.features.row(r * 16 + c).array()).all());
        CHECK(t.provenance[i].kind == TokenKind::Agent);
      }
  }

  TEST_CASE("corner keypoints clamp the window") {
    Rng rng(4);
    PatchFeatureGrid f = random_grid(rng, 16, 16, 4);
    VisualTokens t = agent_tokens(f, kp_at(0.0, 0.0), 3);
    int i = 0;
    for (int r = 0; r <= 2; ++r)
      for (int c = 0; c <= 2; ++c, ++i)
        CHECK((t.tokens.row(i).array() == f.features.row(r * 16 + c).array()).all());
  }

  TEST_CASE("missing keypoint falls back to identical global-mean tokens") {
    Rng rng(5);
    PatchFeatureGrid f = random_grid(rng, 8, 8, 16);
    VisualTokens t = agent_tokens(f, no_kp(), 3);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(16);
    for (int k = 0; k < 64; ++k) mean += f.features.row(k);
    mean /= 64.0;
    for (int i = 0; i < 9; ++i) {
      CHECK((t.tokens.row(i) - mean).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((t.tokens.row(i).array() == t.tokens.row(0).array()).all());
      CHECK(t.provenance[i].kind == TokenKind::Global);
    }
  }

  TEST_CASE("token counts follow the config law") {
    TokenizerConfig cfg;
    cfg.mode = TokenizerMode::Oat;
    cfg.n_slots = 7;
    cfg.agent_grid = 3;
    CHECK(cfg.token_count(256) == 16);

    PatchGeometry g256{14, 16, 16};
    CHECK(reduction_ratio(cfg, g256) == doctest::Approx(0.9375));

    cfg.mode = TokenizerMode::FullPatch;
    CHECK(cfg.token_count(256) == 256);
    CHECK(reduction_ratio(cfg, g256) == 0.0);

    cfg.mode = TokenizerMode::SingleToken;
    CHECK(cfg.token_count(256) == 1);

    cfg.mode = TokenizerMode::ObjectOnly;
    CHECK(cfg.token_count(256) == 7);

    cfg.mode = TokenizerMode::Oat;
    cfg.agent_grid = 5;
    CHECK(reduction_ratio(cfg, g256) == doctest::Approx(0.875));
  }

  TEST_CASE("tokenize emits the configured count for every mode and geometry") {
    Rng rng(6);
    AttentionPoolParams pool1 = AttentionPoolParams::init(1, 8, 0);
    for (int trial = 0; trial < 60; ++trial) {
      int gh = rng.uniform_int(3, 8), gw = rng.uniform_int(3, 8);
      PatchFeatureGrid f = random_grid(rng, gh, gw, 8);
      TokenizerConfig cfg;
      cfg.n_slots = rng.uniform_int(1, 7);
      cfg.agent_grid = std::min({3, gh, gw}) | 1;
      cfg.mode = static_cast<TokenizerMode>(rng.uniform_int(0, 3));
      cfg.pool = PoolKind::Average;
      MaskSet m = random_masks(rng, gh, gw, cfg.n_slots);
      KeypointPrediction kp =
          rng.uniform() < 0.5 ? no_kp() : kp_at(rng.uniform(0.0, gw * 14.0), rng.uniform(0.0, gh * 14.0));
      AttentionPoolParams poolN = AttentionPoolParams::init(cfg.n_slots, 8, 1);
      const AttentionPoolParams* pp = cfg.mode == TokenizerMode::SingleToken ? &pool1 : &poolN;
      VisualTokens t = tokenize(f, m, kp, cfg, pp);
      CHECK(t.count() == cfg.token_count(f.geom.patches()));
      CHECK(static_cast<int>(t.provenance.size()) == t.count());
      CHECK(t.tokens.allFinite());
      if (cfg.mode == TokenizerMode::Oat) {
        for (int i = 0; i < cfg.n_slots; ++i) CHECK(t.provenance[i].kind == TokenKind::Object);
      }
    }
  }

  TEST_CASE("slot-label permutations do not change the token multiset") {
    Rng rng(7);
    PatchFeatureGrid f = random_grid(rng, 4, 4, 5);
    RawPartition raw;
    raw.grid_h = raw.grid_w = 4;
    raw.label = {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 4};
    raw.part_color.assign(5, -1);

    RawPartition permuted = raw;
    std::vector<int> perm = {3, 0, 4, 1, 2};
    for (int& l : permuted.label) l = perm[l];

    VisualTokens a = object_tokens(f, normalize_slots(raw, 7), PoolKind::Average, nullptr);
    VisualTokens b = object_tokens(f, normalize_slots(permuted, 7), PoolKind::Average, nullptr);

    auto rows_sorted = [](const Mat& m) {
      std::vector<std::vector<double>> rows;
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(m.cols());
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
        rows.push_back(std::move(r));
      }
      std::sort(rows.begin(), rows.end());
      return rows;
    };
    CHECK(rows_sorted(a.tokens) == rows_sorted(b.tokens));
  }

  TEST_CASE("K mismatches are rejected") {
    Rng rng(8);
    PatchFeatureGrid f = random_grid(rng, 4, 4, 5);
    MaskSet m = random_masks(rng, 4, 5, 6);  // 20 patches vs 16
    CHECK_THROWS_AS(object_tokens(f, m, PoolKind::Average, nullptr), GeometryError);
  }

  TEST_CASE("backward pass matches finite differences through features and pool") {
    Rng rng(9);
    PatchFeatureGrid f = random_grid(rng, 4, 4, 6);
    MaskSet m = random_masks(rng, 4, 4, 4);
    AttentionPoolParams pool = AttentionPoolParams::init(4, 6, 2);
    TokenizerConfig cfg;
    cfg.mode = TokenizerMode::Oat;
    cfg.n_slots = 4;
    cfg.agent_grid = 3;
    cfg.pool = PoolKind::Attention;
    KeypointPrediction kp = kp_at(30.0, 25.0);

    // loss = 0.5 || tokens - targets ||^2
    TokenizerTape tape;
    VisualTokens base = tokenize(f, m, kp, cfg, &pool, &tape);
    Mat targets(base.tokens.rows(), base.tokens.cols());
    for (Eigen::Index j = 0; j < targets.cols(); ++j)
      for (Eigen::Index i = 0; i < targets.rows(); ++i) targets(i, j) = rng.uniform(-1, 1);
    Mat dtok = base.tokens - targets;

    AttentionPoolGrads pg;
    pg.setZero(pool);
    Mat dfeats = tokenize_backward(dtok, cfg, f, m, &pool, tape, &pg);

    auto loss_at = [&] {
      VisualTokens t = tokenize(f, m, kp, cfg, &pool);
      return 0.5 * (t.tokens - targets).squaredNorm();
    };
    const double h = 1e-6;
    double max_rel = 0.0;
    for (int t = 0; t < 30; ++t) {
      int which = rng.uniform_int(0, 2);
      double* slot;
      double analytic;
      if (which == 0) {
        Eigen::Index i = rng.uniform_int(0, static_cast<int>(f.features.size()) - 1);
        slot = f.features.data() + i;
        analytic = dfeats.data()[i];
      } else if (which == 1) {
        Eigen::Index i = rng.uniform_int(0, static_cast<int>(pool.queries.size()) - 1);
        slot = pool.queries.data() + i;
        analytic = pg.queries.data()[i];
      } else {
        Eigen::Index i = rng.uniform_int(0, static_cast<int>(pool.key_w.size()) - 1);
        slot = pool.key_w.data() + i;
        analytic = pg.key_w.data()[i];
      }
      double saved = *slot;
      *slot = saved + h;
      double lp = loss_at();
      *slot = saved - h;
      double lm = loss_at();
      *slot = saved;
      double numeric = (lp - lm) / (2 * h);
      max_rel = std::max(max_rel,
                         std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    }
    CHECK(max_rel < 1e-4);
  }
}
