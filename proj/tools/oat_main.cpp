// Command-line front end: dataset generation, training, evaluation, benches,
// ablations, and single-frame inspection tools.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "oat/checkpoint.hpp"
#include "oat/dataset.hpp"
#include "oat/detector.hpp"
#include "oat/png_io.hpp"
#include "oat/segment.hpp"
#include "oat/train.hpp"

namespace fs = std::filesystem;
using namespace oat;

namespace {

// Flag values layer on top of an optional config file: the file loads first,
// then only flags the user actually passed override it.
struct KvCli {
  std::vector<std::function<void(KvConfig&)>> appliers;

  void add_str(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& desc) {
    auto val = std::make_shared<std::string>();
    CLI::Option* opt = cmd->add_option(flag, *val, desc);
    appliers.push_back([opt, val, key](KvConfig& kv) {
      if (opt->count()) kv.set(key, *val);
    });
  }
  void add_int(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& desc) {
    auto val = std::make_shared<long long>();
    CLI::Option* opt = cmd->add_option(flag, *val, desc);
    appliers.push_back([opt, val, key](KvConfig& kv) {
      if (opt->count()) kv.set_int(key, *val);
    });
  }
  void add_double(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& desc) {
    auto val = std::make_shared<double>();
    CLI::Option* opt = cmd->add_option(flag, *val, desc);
    appliers.push_back([opt, val, key](KvConfig& kv) {
      if (opt->count()) kv.set_double(key, *val);
    });
  }
  void apply(KvConfig& kv) const {
    for (const auto& f : appliers) f(kv);
  }
};

void add_train_options(CLI::App* cmd, KvCli& cli) {
  cli.add_str(cmd, "--data", "data", "dataset directory");
  cli.add_str(cmd, "--out", "out", "output directory for metrics + checkpoint");
  cli.add_str(cmd, "--mode", "mode", "tokenizer mode: oat|full-patch|single-token|object-only");
  cli.add_int(cmd, "--n-slots", "n_slots", "object slots N");
  cli.add_int(cmd, "--agent-grid", "agent_grid", "agent window side G (odd)");
  cli.add_str(cmd, "--pool", "pool", "object pooling: average|attention");
  cli.add_int(cmd, "--policy-width", "policy_width", "transformer width");
  cli.add_int(cmd, "--policy-layers", "policy_layers", "transformer blocks");
  cli.add_int(cmd, "--policy-heads", "policy_heads", "attention heads");
  cli.add_int(cmd, "--bins", "bins", "action bins per dimension");
  cli.add_str(cmd, "--encoder", "encoder", "conv-trained|linear-frozen");
  cli.add_int(cmd, "--encoder-dim", "encoder_dim", "patch feature width D");
  cli.add_int(cmd, "--encoder-hidden", "encoder_hidden", "conv stage-1 channels");
  cli.add_str(cmd, "--masks", "masks", "mask source: oracle|unsupervised");
  cli.add_str(cmd, "--keypoints", "keypoints", "keypoint source: heuristic|learned|oracle");
  cli.add_str(cmd, "--detector", "detector", "detector checkpoint (keypoints=learned)");
  cli.add_int(cmd, "--batch", "batch", "batch size");
  cli.add_int(cmd, "--steps", "steps", "training steps");
  cli.add_double(cmd, "--lr", "lr", "Adam learning rate");
  cli.add_int(cmd, "--log-every", "log_every", "metric cadence");
  cli.add_int(cmd, "--probe-every", "probe_every", "probe accuracy cadence");
  cli.add_int(cmd, "--probe-size", "probe_size", "probe set size");
  cli.add_int(cmd, "--eval-every", "eval_every", "closed-loop eval cadence (0 off)");
  cli.add_int(cmd, "--eval-rollouts", "eval_rollouts", "rollouts per eval");
  cli.add_str(cmd, "--seed", "seed", "run seed");
  cli.add_double(cmd, "--stop-at-probe-accuracy", "stop_at_probe_accuracy", "early-stop threshold");
}

Image overlay_masks(const Image& img, const MaskSet& masks, int patch_size) {
  static const std::array<std::array<double, 3>, 10> tint = {{{0.9, 0.1, 0.1},
                                                              {0.1, 0.8, 0.1},
                                                              {0.15, 0.3, 0.95},
                                                              {0.95, 0.85, 0.1},
                                                              {0.9, 0.5, 0.1},
                                                              {0.6, 0.1, 0.8},
                                                              {0.1, 0.8, 0.8},
                                                              {0.55, 0.35, 0.15},
                                                              {0.95, 0.4, 0.7},
                                                              {0.4, 0.4, 0.4}}};
  Image out = img;
  for (int pr = 0; pr < masks.grid_h; ++pr)
    for (int pc = 0; pc < masks.grid_w; ++pc) {
      int slot = masks.assignment[pr * masks.grid_w + pc];
      const auto& c = tint[slot % tint.size()];
      for (int y = pr * patch_size; y < (pr + 1) * patch_size; ++y)
        for (int x = pc * patch_size; x < (pc + 1) * patch_size; ++x)
          for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = 0.55 * img.at(y, x, ch) + 0.45 * c[ch];
    }
  return out;
}

void draw_cross(Image& img, double u, double v, const std::array<double, 3>& c) {
  int cu = static_cast<int>(u), cv = static_cast<int>(v);
  for (int d = -6; d <= 6; ++d) {
    int x = cu + d, y = cv + d;
    if (x >= 0 && x < img.width && cv >= 0 && cv < img.height)
      for (int ch = 0; ch < 3; ++ch) img.at(cv, x, ch) = c[ch];
    if (cu >= 0 && cu < img.width && y >= 0 && y < img.height)
      for (int ch = 0; ch < 3; ++ch) img.at(y, cu, ch) = c[ch];
  }
}

const StoredStep& fetch_step(const Dataset& ds, int episode, int step) {
  if (episode < 0 || episode >= static_cast<int>(ds.episodes.size()))
    throw DataError("episode index out of range");
  const StoredEpisode& ep = ds.episodes[episode];
  if (step < 0 || step >= static_cast<int>(ep.steps.size())) throw DataError("step index out of range");
  return ep.steps[step];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object/agent-centric tokenization pipeline for a desk-scale pick-and-place policy"};
  app.require_subcommand(1);

  int exit_code = 0;

  // ---- gen-data -------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate an expert demonstration dataset");
  struct {
    std::string out;
    int episodes = kDefaultEpisodes;
    uint64_t seed = 0;
    int image_size = 112;
    int patch = 14;
  } gen_opts;
  gen->add_option("--out", gen_opts.out, "dataset directory")->required();
  gen->add_option("--episodes", gen_opts.episodes, "episode count (default 320)");
  gen->add_option("--seed", gen_opts.seed, "generation seed");
  gen->add_option("--image-size", gen_opts.image_size, "square image size in pixels");
  gen->add_option("--patch", gen_opts.patch, "patch size in pixels");
  gen->callback([&] {
    SimParams sim;
    sim.image_size = gen_opts.image_size;
    sim.patch_size = gen_opts.patch;
    generate_dataset(gen_opts.episodes, gen_opts.seed, gen_opts.out, sim);
    Dataset ds = load_dataset(gen_opts.out);
    size_t successes = 0;
    for (const auto& ep : ds.episodes) successes += ep.success ? 1 : 0;
    std::printf("wrote %d episodes (%zu successful, %zu steps) to %s\n", ds.manifest.episode_count,
                successes, ds.total_steps(), gen_opts.out.c_str());
  });

  // ---- train ----------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "behavior-clone the policy on a dataset");
  KvCli train_cli;
  std::string train_config_file, train_resume_path;
  bool train_verbose = false;
  tr->add_option("--config", train_config_file, "key = value config file");
  tr->add_option("--resume", train_resume_path, "checkpoint to continue from");
  tr->add_flag("--verbose", train_verbose, "per-interval progress lines");
  add_train_options(tr, train_cli);
  tr->callback([&] {
    KvConfig kv = train_config_file.empty() ? KvConfig() : KvConfig::parse_file(train_config_file);
    train_cli.apply(kv);
    TrainConfig cfg = TrainConfig::from_kv(kv);
    cfg.verbose = train_verbose;
    if (cfg.data_path.empty()) throw DataError("train: --data (or config key data) is required");
    TrainResult r = train_resume_path.empty() ? train(cfg) : train_resume(train_resume_path, cfg);
    std::printf("trained %lld steps; final probe accuracy %.4f; config hash %s\n", r.steps_run,
                r.metrics.final_probe_accuracy, hex64(cfg.to_kv().hash()).c_str());
    if (!cfg.out_dir.empty()) std::printf("checkpoint + metrics under %s\n", cfg.out_dir.c_str());
  });

  // ---- eval -----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "closed-loop success rate of a checkpoint");
  struct {
    std::string checkpoint, detector, relation, data;
    int rollouts = 100;
    uint64_t seed = 0;
    int threads = 2;
    int image_size = 112;
  } eval_opts;
  ev->add_option("--checkpoint", eval_opts.checkpoint, "policy checkpoint")->required();
  ev->add_option("--detector", eval_opts.detector, "detector checkpoint (for keypoints=learned)");
  ev->add_option("--rollouts", eval_opts.rollouts, "rollout count (default 100)");
  ev->add_option("--seed", eval_opts.seed, "rollout seed");
  ev->add_option("--relation", eval_opts.relation, "pin relation: in|left-of|front-of");
  ev->add_option("--data", eval_opts.data, "dataset dir (simulator geometry source)");
  ev->add_option("--image-size", eval_opts.image_size, "image size when no --data given");
  ev->add_option("--threads", eval_opts.threads, "parallel rollout workers");
  ev->callback([&] {
    PolicyBundle bundle = load_bundle(eval_opts.checkpoint);
    SimParams sim;
    if (!eval_opts.data.empty()) {
      sim = load_manifest(eval_opts.data).sim();
    } else {
      sim.image_size = eval_opts.image_size;
      sim.patch_size = bundle.encoder.patch_size;
    }
    DetectorParams det = DetectorParams::heuristic();
    if (!eval_opts.detector.empty()) det = load_detector(eval_opts.detector);
    else if (bundle.kp_source == KeypointSource::Learned)
      throw DataError("checkpoint expects a learned detector; pass --detector");
    std::optional<Relation> rel;
    if (eval_opts.relation == "in") rel = Relation::In;
    else if (eval_opts.relation == "left-of") rel = Relation::LeftOf;
    else if (eval_opts.relation == "front-of") rel = Relation::FrontOf;
    else if (!eval_opts.relation.empty()) throw DataError("unknown relation: " + eval_opts.relation);

    EvalResult r = evaluate(bundle, det, eval_opts.rollouts, eval_opts.seed, rel, sim, eval_opts.threads);
    std::printf("success %d/%d = %.3f +/- %.3f\n", r.successes, r.rollouts, r.success_rate, r.stderr_);
  });

  // ---- bench ------------------------------------------------------------------
  auto* be = app.add_subcommand("bench", "throughput and attention-cost scaling");
  struct {
    std::vector<int> tokens = {1, 7, 16, 32, 64, 128, 256};
    int lang_tokens = 12;
    int reps = 20;
    uint64_t seed = 0;
    std::string data;
    int pipeline_steps = 24;
  } bench_opts;
  be->add_option("--tokens", bench_opts.tokens, "visual token budgets");
  be->add_option("--lang-tokens", bench_opts.lang_tokens, "language tokens incl BOS/SEP");
  be->add_option("--reps", bench_opts.reps, "timed repetitions per budget");
  be->add_option("--seed", bench_opts.seed, "parameter seed");
  be->add_option("--data", bench_opts.data, "dataset dir; adds the end-to-end pipeline table");
  be->add_option("--pipeline-steps", bench_opts.pipeline_steps, "train steps per pipeline measurement");
  be->callback([&] {
    PolicyConfig pc;
    auto rows = bench_policy_scaling(pc, bench_opts.tokens, bench_opts.lang_tokens, bench_opts.reps,
                                     bench_opts.seed);
    std::printf("policy fwd+bwd scaling (width %d, %d layers, J=%d):\n", pc.width, pc.layers,
                bench_opts.lang_tokens);
    std::printf("%8s %6s %12s %14s %14s %16s\n", "tokens", "seq", "ex/sec", "s/example", "attn s/ex",
                "attn ops");
    for (const auto& r : rows)
      std::printf("%8d %6d %12.2f %14.6f %14.6f %16lld\n", r.visual_tokens, r.seq_len, r.examples_per_sec,
                  r.step_seconds_per_example, r.attention_seconds_per_example, r.attention_ops);
    const BenchRow* base = nullptr;
    for (const auto& r : rows)
      if (!base || r.visual_tokens > base->visual_tokens) base = &r;
    if (base) {
      std::printf("\nratios vs T=%d: measured-total  measured-attn  analytic (J+T+7)^2\n", base->visual_tokens);
      for (const auto& r : rows) {
        if (&r == base) continue;
        std::printf("  T=%-4d %14.2f %14.2f %14.2f\n", r.visual_tokens,
                    base->step_seconds_per_example / r.step_seconds_per_example,
                    base->attention_seconds_per_example / std::max(1e-12, r.attention_seconds_per_example),
                    analytic_cost_ratio(bench_opts.lang_tokens, base->visual_tokens, r.visual_tokens));
      }
    }
    if (!bench_opts.data.empty()) {
      TrainConfig basecfg;
      basecfg.data_path = bench_opts.data;
      std::vector<TokenizerConfig> cfgs;
      TokenizerConfig t;
      t.mode = TokenizerMode::FullPatch;
      cfgs.push_back(t);
      t.mode = TokenizerMode::Oat;
      t.pool = PoolKind::Average;
      cfgs.push_back(t);
      t.mode = TokenizerMode::ObjectOnly;
      t.pool = PoolKind::Attention;
      cfgs.push_back(t);
      t.mode = TokenizerMode::SingleToken;
      cfgs.push_back(t);
      auto prows = bench_pipeline(cfgs, basecfg, bench_opts.pipeline_steps);
      std::printf("\nend-to-end train-step throughput:\n%-28s %8s %12s\n", "mode", "tokens", "ex/sec");
      for (const auto& r : prows)
        std::printf("%-28s %8d %12.2f\n", r.mode.c_str(), r.visual_tokens, r.examples_per_sec);
    }
  });

  // ---- ablate -------------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "train + evaluate the tokenizer ablation grid");
  KvCli ablate_cli;
  struct {
    std::vector<uint64_t> seeds = {0};
    int rollouts_per_relation = 34;
    std::string detector;
    int threads = 2;
  } ab_opts;
  add_train_options(ab, ablate_cli);
  ab->add_option("--seeds", ab_opts.seeds, "shared training seeds");
  ab->add_option("--rollouts-per-relation", ab_opts.rollouts_per_relation, "eval rollouts per relation");
  ab->add_option("--ablate-detector", ab_opts.detector, "detector checkpoint for evaluation");
  ab->add_option("--threads", ab_opts.threads, "parallel rollout workers");
  ab->callback([&] {
    KvConfig kv;
    ablate_cli.apply(kv);
    TrainConfig base = TrainConfig::from_kv(kv);
    if (base.data_path.empty()) throw DataError("ablate: --data is required");
    DetectorParams det =
        ab_opts.detector.empty() ? DetectorParams::heuristic() : load_detector(ab_opts.detector);
    AblationResult r =
        run_ablation_suite(base, ab_opts.seeds, ab_opts.rollouts_per_relation, det, ab_opts.threads);
    std::printf("%s", r.table().c_str());
    std::printf("data-order hashes:");
    for (uint64_t h : r.data_order_hashes) std::printf(" %s", hex64(h).c_str());
    std::printf("\n");
    const double tol = 0.03;
    for (size_t i = 0; i + 1 < r.rows.size(); ++i) {
      // expected ordering is rows[3] >= rows[2] >= rows[1] >= rows[0] (listed weakest first)
      double weaker = r.rows[i].average, stronger = r.rows[i + 1].average;
      if (stronger + tol < weaker) {
        std::printf("DEVIATION: %s (%.3f) outperformed %s (%.3f) beyond the %.0f-point band\n",
                    r.rows[i].variant.c_str(), weaker, r.rows[i + 1].variant.c_str(), stronger, tol * 100);
      }
    }
  });

  // ---- tokenize -------------------------------------------------------------------
  auto* tk = app.add_subcommand("tokenize", "token provenance table for one episode step");
  struct {
    std::string data, mode = "oat", pool = "average", masks = "oracle", keypoints = "heuristic";
    std::string detector, checkpoint;
    int episode = 0, step = 0, n_slots = 7, agent_grid = 3;
    uint64_t seed = 0;
  } tok_opts;
  tk->add_option("--data", tok_opts.data, "dataset directory")->required();
  tk->add_option("--episode", tok_opts.episode, "episode index");
  tk->add_option("--step", tok_opts.step, "step index");
  tk->add_option("--mode", tok_opts.mode, "tokenizer mode");
  tk->add_option("--n-slots", tok_opts.n_slots, "object slots N");
  tk->add_option("--agent-grid", tok_opts.agent_grid, "agent window side G");
  tk->add_option("--pool", tok_opts.pool, "average|attention");
  tk->add_option("--masks", tok_opts.masks, "oracle|unsupervised");
  tk->add_option("--keypoints", tok_opts.keypoints, "heuristic|learned|oracle");
  tk->add_option("--detector", tok_opts.detector, "detector checkpoint");
  tk->add_option("--checkpoint", tok_opts.checkpoint, "reuse a trained bundle's encoder + config");
  tk->add_option("--seed", tok_opts.seed, "encoder seed when no checkpoint given");
  tk->callback([&] {
    Dataset ds = load_dataset(tok_opts.data);
    const StoredStep& st = fetch_step(ds, tok_opts.episode, tok_opts.step);
    Image img = st.decode_image();
    SimParams sim = ds.manifest.sim();

    TokenizerConfig tcfg;
    EncoderParams enc;
    std::optional<AttentionPoolParams> pool;
    if (!tok_opts.checkpoint.empty()) {
      PolicyBundle b = load_bundle(tok_opts.checkpoint);
      tcfg = b.tok;
      enc = b.encoder;
      pool = b.pool;
    } else {
      tcfg.mode = tokenizer_mode_from_name(tok_opts.mode);
      tcfg.n_slots = tok_opts.n_slots;
      tcfg.agent_grid = tok_opts.agent_grid;
      tcfg.pool = pool_kind_from_name(tok_opts.pool);
      enc = EncoderParams::linear_frozen(sim.patch_size, 64, tok_opts.seed);
      if (tcfg.mode == TokenizerMode::SingleToken ||
          ((tcfg.mode == TokenizerMode::Oat || tcfg.mode == TokenizerMode::ObjectOnly) &&
           tcfg.pool == PoolKind::Attention)) {
        int nq = tcfg.mode == TokenizerMode::SingleToken ? 1 : tcfg.n_slots;
        pool = AttentionPoolParams::init(nq, enc.dim, tok_opts.seed + 1);
      }
    }

    PatchFeatureGrid feats = encode(img, enc);
    MaskSet masks;
    if (tcfg.mode == TokenizerMode::Oat || tcfg.mode == TokenizerMode::ObjectOnly) {
      masks = tok_opts.masks == "oracle" ? segment_oracle(st.gt_masks, tcfg.n_slots)
                                         : segment_unsupervised(img, tcfg.n_slots, sim.patch_size);
    }
    KeypointPrediction kp;
    if (tcfg.mode == TokenizerMode::Oat) {
      if (tok_opts.keypoints == "oracle") {
        kp.point = st.gripper_px;
        kp.confidence = 1.0;
      } else if (tok_opts.keypoints == "learned") {
        if (tok_opts.detector.empty()) throw DataError("tokenize: --keypoints learned needs --detector");
        kp = detect(img, load_detector(tok_opts.detector));
      } else {
        kp = detect(img, DetectorParams::heuristic());
      }
    }
    VisualTokens toks = tokenize(feats, masks, kp, tcfg, pool ? &*pool : nullptr);

    std::printf("instruction = %s\n", ds.episodes[tok_opts.episode].instruction.c_str());
    std::printf("mode = %s\npool = %s\ntokens = %d\npatches = %d\nreduction_ratio = %.6f\n",
                tokenizer_mode_name(tcfg.mode), pool_kind_name(tcfg.pool), toks.count(),
                feats.geom.patches(), reduction_ratio(tcfg, feats.geom));
    if (tcfg.mode == TokenizerMode::Oat) {
      std::printf("keypoint = %s\n",
                  kp.point ? ("(" + std::to_string(kp.point->u) + ", " + std::to_string(kp.point->v) + ")").c_str()
                           : "none (fallback to global mean)");
    }
    std::printf("%6s %-8s %6s %6s %10s\n", "token", "kind", "index", "empty", "|t|");
    for (int i = 0; i < toks.count(); ++i) {
      const TokenProvenance& p = toks.provenance[i];
      const char* kind = p.kind == TokenKind::Object   ? "object"
                         : p.kind == TokenKind::Agent  ? "agent"
                         : p.kind == TokenKind::Global ? "global"
                                                       : "patch";
      std::printf("%6d %-8s %6d %6s %10.4f\n", i, kind, p.index, p.empty ? "yes" : "no",
                  toks.tokens.row(i).norm());
    }
  });

  // ---- segment ---------------------------------------------------------------------
  auto* sg = app.add_subcommand("segment", "color-coded mask overlay for one episode step");
  struct {
    std::string data, out = "segment.png", source = "unsupervised";
    int episode = 0, step = 0, n_slots = 7;
  } seg_opts;
  sg->add_option("--data", seg_opts.data, "dataset directory")->required();
  sg->add_option("--episode", seg_opts.episode, "episode index");
  sg->add_option("--step", seg_opts.step, "step index");
  sg->add_option("--n-slots", seg_opts.n_slots, "slot count N");
  sg->add_option("--source", seg_opts.source, "unsupervised|oracle");
  sg->add_option("--out", seg_opts.out, "overlay PNG path");
  sg->callback([&] {
    Dataset ds = load_dataset(seg_opts.data);
    const StoredStep& st = fetch_step(ds, seg_opts.episode, seg_opts.step);
    Image img = st.decode_image();
    SimParams sim = ds.manifest.sim();
    MaskSet masks = seg_opts.source == "oracle"
                        ? segment_oracle(st.gt_masks, seg_opts.n_slots)
                        : segment_unsupervised(img, seg_opts.n_slots, sim.patch_size);
    write_png_file(seg_opts.out, overlay_masks(img, masks, sim.patch_size));
    auto counts = masks.slot_counts();
    int nonempty = 0;
    for (int c : counts) nonempty += c > 0 ? 1 : 0;
    std::printf("wrote %s (%d/%d non-empty slots; counts:", seg_opts.out.c_str(), nonempty, masks.n_slots);
    for (int c : counts) std::printf(" %d", c);
    std::printf(")\n");
  });

  // ---- detect -----------------------------------------------------------------------
  auto* dt = app.add_subcommand("detect", "gripper keypoint overlay for one episode step");
  struct {
    std::string data, out = "detect.png", detector;
    int episode = 0, step = 0;
  } det_opts;
  dt->add_option("--data", det_opts.data, "dataset directory")->required();
  dt->add_option("--episode", det_opts.episode, "episode index");
  dt->add_option("--step", det_opts.step, "step index");
  dt->add_option("--detector", det_opts.detector, "detector checkpoint (default: color heuristic)");
  dt->add_option("--out", det_opts.out, "overlay PNG path");
  dt->callback([&] {
    Dataset ds = load_dataset(det_opts.data);
    const StoredStep& st = fetch_step(ds, det_opts.episode, det_opts.step);
    Image img = st.decode_image();
    DetectorParams det =
        det_opts.detector.empty() ? DetectorParams::heuristic() : load_detector(det_opts.detector);
    KeypointPrediction kp = detect(img, det);
    Image out = img;
    draw_cross(out, st.gripper_px.u, st.gripper_px.v, {0.05, 0.05, 0.05});  // ground truth, dark
    if (kp.point) draw_cross(out, kp.point->u, kp.point->v, {1.0, 1.0, 1.0});
    write_png_file(det_opts.out, out);
    if (kp.point) {
      double err = std::hypot(kp.point->u - st.gripper_px.u, kp.point->v - st.gripper_px.v);
      std::printf("prediction (%.2f, %.2f) conf %.3f; ground truth (%.2f, %.2f); error %.2f px\n",
                  kp.point->u, kp.point->v, kp.confidence, st.gripper_px.u, st.gripper_px.v, err);
    } else {
      std::printf("no detection (confidence %.3f below threshold %.2f)\n", kp.confidence, det.threshold);
    }
    std::printf("wrote %s\n", det_opts.out.c_str());
  });

  // ---- train-detector ------------------------------------------------------------------
  auto* td = app.add_subcommand("train-detector", "train the learned gripper detector");
  struct {
    std::string data, out = "detector.oat";
    int steps = 1200, batch = 32, max_frames = 6000;
    double lr = 3e-3, negatives = 0.12;
    uint64_t seed = 0;
    bool verbose = false;
  } td_opts;
  td->add_option("--data", td_opts.data, "dataset directory")->required();
  td->add_option("--out", td_opts.out, "detector checkpoint path");
  td->add_option("--steps", td_opts.steps, "training steps");
  td->add_option("--batch", td_opts.batch, "batch size");
  td->add_option("--lr", td_opts.lr, "Adam learning rate");
  td->add_option("--max-frames", td_opts.max_frames, "cap on labeled frames");
  td->add_option("--negatives", td_opts.negatives, "fraction of gripper-free frames");
  td->add_option("--seed", td_opts.seed, "training seed");
  td->add_flag("--verbose", td_opts.verbose, "log loss curve");
  td->callback([&] {
    Dataset ds = load_dataset(td_opts.data);
    SimParams sim = ds.manifest.sim();
    std::vector<DetectorSample> samples;
    Rng rng(td_opts.seed);
    for (const auto& ep : ds.episodes) {
      for (const auto& st : ep.steps) {
        if (static_cast<int>(samples.size()) >= td_opts.max_frames) break;
        DetectorSample s;
        if (rng.uniform() < td_opts.negatives) {
          RenderResult r = render_without_gripper(st.state, sim);
          s.png = encode_png(r.image);
        } else {
          s.png = st.png;
          s.keypoint = st.gripper_px;
        }
        samples.push_back(std::move(s));
      }
    }
    DetectorTrainHyper hyper;
    hyper.steps = td_opts.steps;
    hyper.batch = td_opts.batch;
    hyper.lr = td_opts.lr;
    hyper.seed = td_opts.seed;
    hyper.verbose = td_opts.verbose;
    DetectorTrainResult r = train_detector(samples, hyper, sim.image_size, sim.patch_size);
    save_detector(td_opts.out, r.params);
    std::printf("holdout: median error %.2f px, hit-rate@%d/2 %.3f, miss rate %.4f (%d frames)\n",
                r.holdout.median_px_error, sim.patch_size, r.holdout.hit_rate, r.holdout.miss_rate,
                r.holdout.n_present + r.holdout.n_absent);
    std::printf("wrote %s\n", td_opts.out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems -> 1
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return exit_code;
}
