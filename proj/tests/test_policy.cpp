#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oat/policy.hpp"

using namespace oat;

namespace {

PolicyConfig tiny_config() {
  PolicyConfig cfg;
  cfg.width = 32;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.bins = 16;
  cfg.visual_dim = 8;
  cfg.max_seq = 64;
  return cfg;
}

PolicySample random_sample(const PolicyParams& p, Rng& rng, int n_lang, int n_visual) {
  PolicySample s;
  s.lang.resize(n_lang);
  for (int& id : s.lang)
    id = p.vocab.word_base() + rng.uniform_int(0, static_cast<int>(p.vocab.words.size()) - 1);
  s.visual.resize(n_visual, p.cfg.visual_dim);
  for (Eigen::Index j = 0; j < s.visual.cols(); ++j)
    for (Eigen::Index i = 0; i < s.visual.rows(); ++i) s.visual(i, j) = rng.uniform(-1, 1);
  for (int& t : s.targets) t = rng.uniform_int(0, p.cfg.bins - 1);
  return s;
}

std::vector<std::array<double, 7>> synthetic_actions(Rng& rng, int n) {
  std::vector<std::array<double, 7>> actions(n);
  for (auto& a : actions)
    for (double& v : a) v = rng.uniform(-0.06, 0.06);
  return actions;
}

}  // namespace

TEST_SUITE("policy") {
  TEST_CASE("binning maps range endpoints to edge bins") {
    Rng rng(0);
    ActionBinning b = ActionBinning::fit(synthetic_actions(rng, 500), 64);
    for (int d = 0; d < 7; ++d) {
      std::array<double, 7> lo_probe{}, hi_probe{};
      lo_probe[d] = b.lo[d];
      hi_probe[d] = b.hi[d];
      CHECK(b.encode(Action::from_flat(lo_probe))[d] == 0);
      CHECK(b.encode(Action::from_flat(hi_probe))[d] == 63);
    }
  }

  TEST_CASE("midpoint lands in bin B/2, verified against a scan of bin edges") {
    Rng rng(1);
    ActionBinning b = ActionBinning::fit(synthetic_actions(rng, 200), 64);
    for (int d = 0; d < 7; ++d) {
      double mid = 0.5 * (b.lo[d] + b.hi[d]);
      std::array<double, 7> probe{};
      probe[d] = mid;
      int got = b.encode(Action::from_flat(probe))[d];

      // oracle: scan half-open bins [lo + i*w, lo + (i+1)*w), last bin closed
      int expect = -1;
      double w = (b.hi[d] - b.lo[d]) / 64;
      for (int i = 0; i < 64; ++i) {
        double edge_lo = b.lo[d] + i * w, edge_hi = b.lo[d] + (i + 1) * w;
        bool inside = i == 63 ? (mid >= edge_lo && mid <= edge_hi) : (mid >= edge_lo && mid < edge_hi);
        if (inside) {
          expect = i;
          break;
        }
      }
      CHECK(got == expect);
      CHECK(got == 32);
    }
  }

  TEST_CASE("out-of-range values clip to edge bins") {
    Rng rng(2);
    ActionBinning b = ActionBinning::fit(synthetic_actions(rng, 100), 64);
    std::array<double, 7> big{}, small{};
    for (int d = 0; d < 7; ++d) {
      big[d] = 2 * std::abs(b.hi[d]) + 1;
      small[d] = -2 * std::abs(b.lo[d]) - 1;
    }
    for (int d = 0; d < 7; ++d) {
      CHECK(b.encode(Action::from_flat(big))[d] == 63);
      CHECK(b.encode(Action::from_flat(small))[d] == 0);
    }
  }

  TEST_CASE("encode(decode(bin)) is the identity and round trips stay within half a bin") {
    Rng rng(3);
    ActionBinning b = ActionBinning::fit(synthetic_actions(rng, 300), 64);
    for (int bin = 0; bin < 64; ++bin) {
      std::array<int, 7> ids;
      ids.fill(bin);
      CHECK(b.encode(b.decode(ids)) == ids);
    }
    for (int t = 0; t < 200; ++t) {
      std::array<double, 7> raw;
      for (int d = 0; d < 7; ++d) raw[d] = rng.uniform(b.lo[d], b.hi[d]);
      Action a = Action::from_flat(raw);
      Action back = b.decode(b.encode(a));
      auto rb = back.flat();
      for (int d = 0; d < 7; ++d) CHECK(std::abs(raw[d] - rb[d]) <= b.bin_width(d) / 2 + 1e-12);
    }
  }

  TEST_CASE("degenerate dimensions widen so lo < hi") {
    std::vector<std::array<double, 7>> actions(50);
    for (auto& a : actions) a = {0.01, -0.02, 0.0, 0.0, 0.0, 0.0, 1.0};  // constant rot dims
    ActionBinning b = ActionBinning::fit(actions, 64);
    for (int d = 0; d < 7; ++d) CHECK(b.lo[d] < b.hi[d]);
  }

  TEST_CASE("unfitted binning refuses to encode") {
    ActionBinning b;
    CHECK_THROWS_AS(b.encode(Action{}), std::logic_error);
    CHECK_THROWS_AS(b.decode({0, 0, 0, 0, 0, 0, 0}), std::logic_error);
  }

  TEST_CASE("the vocabulary covers the template grammar with disjoint ranges") {
    Vocabulary v = Vocabulary::standard(64);
    auto ids = v.encode_instruction("place the red cube in front of the green bowl");
    CHECK(ids.size() == 10);
    for (int id : ids) {
      CHECK(id >= v.word_base());
      CHECK(id < v.action_base());
    }
    CHECK(v.size() == v.action_base() + 64);
    CHECK_THROWS_AS(v.encode_instruction("grab the thing"), DataError);
  }

  TEST_CASE("causality: perturbing a future token never changes earlier logits") {
    PolicyConfig cfg = tiny_config();
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 7);
    Rng rng(4);
    PolicySample s = random_sample(p, rng, 4, 5);

    Mat base = policy_logits_all(p, s);

    // future action input: targets[4] is the input at the second-to-last row
    PolicySample s2 = s;
    s2.targets[4] = (s2.targets[4] + 1) % cfg.bins;
    Mat pert = policy_logits_all(p, s2);
    int changed_row = 4 + 5 + 2 + 4;  // BOS + lang + SEP + visual + 4 action inputs
    for (int r = 0; r < changed_row; ++r)
      CHECK((base.row(r).array() == pert.row(r).array()).all());

    // future visual token: language logits stay bit-identical
    PolicySample s3 = s;
    s3.visual(4, 0) += 0.5;
    Mat pert2 = policy_logits_all(p, s3);
    int visual_row_start = 1 + 4 + 1 + 4;  // the perturbed visual row
    for (int r = 0; r < visual_row_start; ++r)
      CHECK((base.row(r).array() == pert2.row(r).array()).all());
  }

  TEST_CASE("next-token distribution is normalized") {
    PolicyConfig cfg = tiny_config();
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 11);
    Rng rng(5);
    PolicySample s = random_sample(p, rng, 5, 4);
    for (int prefix_len : {0, 3}) {
      std::vector<int> decoded(s.targets.begin(), s.targets.begin() + prefix_len);
      Vec dist = policy_next_distribution(p, s.lang, s.visual, decoded);
      CHECK(dist.size() == cfg.bins);
      CHECK(std::abs(dist.sum() - 1.0) < 1e-6);
      CHECK(dist.minCoeff() >= 0.0);
    }
  }

  TEST_CASE("gradients match finite differences on random coordinates") {
    PolicyConfig cfg = tiny_config();
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 13);
    Rng rng(6);
    std::vector<PolicySample> batch = {random_sample(p, rng, 4, 5), random_sample(p, rng, 5, 3)};

    PolicyParams grads = PolicyParams::zeros_like(p);
    policy_forward_backward(p, grads, batch, nullptr);

    nn::ParamSet ps = PolicyParams::registry(p, grads);
    auto loss_fn = [&] { return policy_forward(p, batch).loss; };
    Rng check_rng(7);
    CHECK(nn::grad_check(ps, loss_fn, check_rng, 8) < 1e-4);
  }

  TEST_CASE("visual-token gradients match finite differences") {
    PolicyConfig cfg = tiny_config();
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 17);
    Rng rng(8);
    std::vector<PolicySample> batch = {random_sample(p, rng, 4, 6)};
    PolicyParams grads = PolicyParams::zeros_like(p);
    std::vector<Mat> dvis;
    policy_forward_backward(p, grads, batch, &dvis);
    REQUIRE(dvis.size() == 1);

    const double h = 1e-6;
    double max_rel = 0.0;
    for (int t = 0; t < 10; ++t) {
      Eigen::Index i = rng.uniform_int(0, static_cast<int>(batch[0].visual.size()) - 1);
      double saved = batch[0].visual.data()[i];
      batch[0].visual.data()[i] = saved + h;
      double lp = policy_forward(p, batch).loss;
      batch[0].visual.data()[i] = saved - h;
      double lm = policy_forward(p, batch).loss;
      batch[0].visual.data()[i] = saved;
      double numeric = (lp - lm) / (2 * h);
      double analytic = dvis[0].data()[i];
      max_rel = std::max(max_rel,
                         std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    }
    CHECK(max_rel < 1e-4);
  }

  TEST_CASE("greedy decode is deterministic and ties break to the lowest bin") {
    PolicyConfig cfg = tiny_config();
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 19);
    Rng rng(9);
    PolicySample s = random_sample(p, rng, 4, 4);
    auto a = policy_greedy_bins(p, s.lang, s.visual);
    auto b = policy_greedy_bins(p, s.lang, s.visual);
    CHECK(a == b);

    // uniform logits: zero head makes every bin score identical
    p.head_w.setZero();
    p.head_b.setZero();
    auto c = policy_greedy_bins(p, s.lang, s.visual);
    for (int t = 0; t < 7; ++t) CHECK(c[t] == 0);
  }

  TEST_CASE("teacher-forced accuracy is invariant to batch order") {
    PolicyConfig cfg = tiny_config();
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 23);
    Rng rng(10);
    std::vector<PolicySample> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_sample(p, rng, 4, 4));
    double acc1 = action_token_accuracy(p, batch);
    std::reverse(batch.begin(), batch.end());
    double acc2 = action_token_accuracy(p, batch);
    CHECK(acc1 == doctest::Approx(acc2).epsilon(1e-12));
  }

  TEST_CASE("sequence overflow is rejected") {
    PolicyConfig cfg = tiny_config();
    cfg.max_seq = 16;
    PolicyParams p = PolicyParams::init(cfg, Vocabulary::standard(cfg.bins), 29);
    Rng rng(11);
    PolicySample s = random_sample(p, rng, 6, 8);  // 6 + 8 + 8 > 16
    CHECK_THROWS_AS(policy_forward(p, {s}), std::length_error);
  }
}
