#include "oat/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "oat/png_io.hpp"
#include "oat/segment.hpp"

namespace fs = std::filesystem;

namespace oat {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Image quantize_to_8bit(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = std::lround(clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

}  // namespace

KvConfig TrainConfig::to_kv() const {
  KvConfig kv;
  kv.set("data", data_path);
  kv.set("out", out_dir);
  kv.set("mode", tokenizer_mode_name(tok.mode));
  kv.set_int("n_slots", tok.n_slots);
  kv.set_int("agent_grid", tok.agent_grid);
  kv.set("pool", pool_kind_name(tok.pool));
  kv.set_int("policy_width", policy.width);
  kv.set_int("policy_layers", policy.layers);
  kv.set_int("policy_heads", policy.heads);
  kv.set_int("bins", policy.bins);
  kv.set("encoder", encoder_mode == EncoderMode::ConvTrained ? "conv-trained" : "linear-frozen");
  kv.set_int("encoder_dim", policy.visual_dim);
  kv.set_int("encoder_hidden", encoder_hidden);
  kv.set("masks", mask_source_name(mask_source));
  kv.set("keypoints", keypoint_source_name(kp_source));
  kv.set("detector", detector_ckpt);
  kv.set_int("batch", batch);
  kv.set_int("steps", steps);
  kv.set_double("lr", lr);
  kv.set_int("log_every", log_every);
  kv.set_int("probe_every", probe_every);
  kv.set_int("probe_size", probe_size);
  kv.set_int("eval_every", eval_every);
  kv.set_int("eval_rollouts", eval_rollouts);
  kv.set("seed", std::to_string(seed));
  kv.set_double("stop_at_probe_accuracy", stop_at_probe_accuracy);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  TrainConfig c;
  c.data_path = kv.get_or("data", "");
  c.out_dir = kv.get_or("out", "");
  c.tok.mode = tokenizer_mode_from_name(kv.get_or("mode", "oat"));
  c.tok.n_slots = static_cast<int>(kv.get_int_or("n_slots", 7));
  c.tok.agent_grid = static_cast<int>(kv.get_int_or("agent_grid", 3));
  c.tok.pool = pool_kind_from_name(kv.get_or("pool", "average"));
  c.policy.width = static_cast<int>(kv.get_int_or("policy_width", 128));
  c.policy.layers = static_cast<int>(kv.get_int_or("policy_layers", 4));
  c.policy.heads = static_cast<int>(kv.get_int_or("policy_heads", 4));
  c.policy.bins = static_cast<int>(kv.get_int_or("bins", 64));
  c.policy.visual_dim = static_cast<int>(kv.get_int_or("encoder_dim", 64));
  std::string enc = kv.get_or("encoder", "conv-trained");
  if (enc == "conv-trained") {
    c.encoder_mode = EncoderMode::ConvTrained;
  } else if (enc == "linear-frozen") {
    c.encoder_mode = EncoderMode::LinearFrozen;
  } else {
    throw DataError("unknown encoder mode: " + enc);
  }
  c.encoder_hidden = static_cast<int>(kv.get_int_or("encoder_hidden", 32));
  c.mask_source = mask_source_from_name(kv.get_or("masks", "oracle"));
  c.kp_source = keypoint_source_from_name(kv.get_or("keypoints", "heuristic"));
  c.detector_ckpt = kv.get_or("detector", "");
  c.batch = static_cast<int>(kv.get_int_or("batch", 8));
  c.steps = static_cast<int>(kv.get_int_or("steps", 2000));
  c.lr = kv.get_double_or("lr", 1e-3);
  c.log_every = static_cast<int>(kv.get_int_or("log_every", 25));
  c.probe_every = static_cast<int>(kv.get_int_or("probe_every", 100));
  c.probe_size = static_cast<int>(kv.get_int_or("probe_size", 64));
  c.eval_every = static_cast<int>(kv.get_int_or("eval_every", 0));
  c.eval_rollouts = static_cast<int>(kv.get_int_or("eval_rollouts", 0));
  c.seed = kv.has("seed") ? std::stoull(kv.get("seed")) : 0;
  c.stop_at_probe_accuracy = kv.get_double_or("stop_at_probe_accuracy", -1.0);
  return c;
}

long long RunMetrics::steps_to_probe_accuracy(double threshold) const {
  for (const MetricRow& r : rows)
    if (r.probe_accuracy >= threshold) return r.step;
  return -1;
}

// --- trainer -------------------------------------------------------------------

namespace {

struct FrameRef {
  int ep;
  int step;
};

/// Per-frame parts that stay fixed across the run: language ids, normalized
/// masks, keypoint prediction, target bins.
struct FrameCache {
  std::vector<int> lang;
  MaskSet masks;
  KeypointPrediction kp;
  std::array<int, 7> targets;
};

struct Trainer {
  TrainConfig cfg;
  Dataset dataset;
  SimParams sim;
  PolicyBundle bundle;
  DetectorParams detector;
  bool needs_masks = false, needs_kp = false;

  std::vector<FrameRef> frames;
  std::vector<FrameCache> cache;
  std::vector<int> order;
  size_t cursor = 0;
  Rng order_rng{0};
  uint64_t order_hash = 0xcbf29ce484222325ULL;

  std::vector<int> probe_indices;

  PolicyParams policy_grads;
  EncoderGrads encoder_grads;
  AttentionPoolGrads pool_grads;
  nn::Adam adam{1e-3};

  explicit Trainer(const TrainConfig& c) : cfg(c), order_rng(c.seed), adam(c.lr) {
    if (cfg.data_path.empty()) throw DataError("train: no dataset path configured");
    dataset = load_dataset(cfg.data_path);
    sim = dataset.manifest.sim();

    needs_masks = cfg.tok.mode == TokenizerMode::Oat || cfg.tok.mode == TokenizerMode::ObjectOnly;
    needs_kp = cfg.tok.mode == TokenizerMode::Oat;

    if (cfg.kp_source == KeypointSource::Learned) {
      if (cfg.detector_ckpt.empty()) throw DataError("train: keypoints=learned requires a detector checkpoint");
      detector = load_detector(cfg.detector_ckpt);
    } else {
      detector = DetectorParams::heuristic();
    }

    for (int e = 0; e < static_cast<int>(dataset.episodes.size()); ++e) {
      if (!dataset.episodes[e].success) continue;  // clone only successful demonstrations
      for (int s = 0; s < static_cast<int>(dataset.episodes[e].steps.size()); ++s)
        frames.push_back(FrameRef{e, s});
    }
    if (frames.empty()) throw DataError("train: dataset has no successful episodes");

    // binning over the training actions
    std::vector<std::array<double, 7>> actions;
    actions.reserve(frames.size());
    for (const FrameRef& f : frames) actions.push_back(dataset.episodes[f.ep].steps[f.step].action.flat());
    bundle.binning = ActionBinning::fit(actions, cfg.policy.bins);

    bundle.tok = cfg.tok;
    bundle.mask_source = cfg.mask_source;
    bundle.kp_source = cfg.kp_source;

    int D = cfg.policy.visual_dim;
    Rng seeder = Rng::substream(cfg.seed, 0x5eed);
    if (cfg.encoder_mode == EncoderMode::ConvTrained) {
      bundle.encoder = EncoderParams::conv_trained(sim.patch_size, D, cfg.encoder_hidden, seeder.next_u64());
    } else {
      bundle.encoder = EncoderParams::linear_frozen(sim.patch_size, D, seeder.next_u64());
    }
    if (bundle.uses_pool()) {
      int n_queries = cfg.tok.mode == TokenizerMode::SingleToken ? 1 : cfg.tok.n_slots;
      bundle.pool = AttentionPoolParams::init(n_queries, D, seeder.next_u64());
    }
    Vocabulary vocab = Vocabulary::standard(cfg.policy.bins);
    bundle.policy = PolicyParams::init(cfg.policy, vocab, seeder.next_u64());

    build_cache();

    order.resize(frames.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    shuffle_order();

    // fixed probe subset, independent of the data-order stream
    Rng probe_rng = Rng::substream(cfg.seed, 0x9a0be);
    std::vector<int> pool_idx = order;
    for (int i = static_cast<int>(pool_idx.size()) - 1; i > 0; --i)
      std::swap(pool_idx[i], pool_idx[probe_rng.uniform_int(0, i)]);
    int n_probe = std::min<int>(cfg.probe_size, static_cast<int>(pool_idx.size()));
    probe_indices.assign(pool_idx.begin(), pool_idx.begin() + n_probe);

    policy_grads = PolicyParams::zeros_like(bundle.policy);
    encoder_grads.setZero(bundle.encoder);
    if (bundle.pool) pool_grads.setZero(*bundle.pool);
  }

  void build_cache() {
    cache.resize(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
      const FrameRef& f = frames[i];
      const StoredEpisode& ep = dataset.episodes[f.ep];
      const StoredStep& st = ep.steps[f.step];
      FrameCache& fc = cache[i];
      fc.lang = bundle.policy.vocab.encode_instruction(ep.instruction);
      fc.targets = bundle.binning.encode(st.action);
      if (needs_masks || needs_kp) {
        Image img;
        bool decoded = false;
        if (needs_masks) {
          if (cfg.mask_source == MaskSource::Oracle) {
            fc.masks = segment_oracle(st.gt_masks, cfg.tok.n_slots);
          } else {
            img = st.decode_image();
            decoded = true;
            fc.masks = segment_unsupervised(img, cfg.tok.n_slots, sim.patch_size);
          }
        }
        if (needs_kp) {
          if (cfg.kp_source == KeypointSource::Oracle) {
            fc.kp.point = st.gripper_px;
            fc.kp.confidence = 1.0;
          } else {
            if (!decoded) img = st.decode_image();
            fc.kp = detect(img, detector);
          }
        }
      }
    }
  }

  void shuffle_order() {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_int(0, i)]);
    cursor = 0;
  }

  int next_frame() {
    if (cursor >= order.size()) shuffle_order();
    int idx = order[cursor++];
    order_hash = fnv1a64(&frames[idx], sizeof(FrameRef), order_hash);
    return idx;
  }

  nn::ParamSet registry() {
    nn::ParamSet ps = PolicyParams::registry(bundle.policy, policy_grads);
    if (cfg.encoder_mode == EncoderMode::ConvTrained) {
      ps.add("enc.w0", bundle.encoder.w0, encoder_grads.w0);
      ps.add("enc.b0", bundle.encoder.b0, encoder_grads.b0);
      ps.add("enc.w1", bundle.encoder.w1, encoder_grads.w1);
      ps.add("enc.b1", bundle.encoder.b1, encoder_grads.b1);
    }
    if (bundle.pool) {
      ps.add("pool.q", bundle.pool->queries, pool_grads.queries);
      ps.add("pool.k", bundle.pool->key_w, pool_grads.key_w);
    }
    return ps;
  }

  PolicySample make_sample(int idx, PatchFeatureGrid* feats, EncoderTape* enc_tape, TokenizerTape* tok_tape) {
    const FrameRef& f = frames[idx];
    const FrameCache& fc = cache[idx];
    const StoredStep& st = dataset.episodes[f.ep].steps[f.step];
    Image img = st.decode_image();
    *feats = encode_forward(img, bundle.encoder, enc_tape);
    VisualTokens toks =
        tokenize(*feats, fc.masks, fc.kp, cfg.tok, bundle.pool ? &*bundle.pool : nullptr, tok_tape);
    PolicySample s;
    s.lang = fc.lang;
    s.visual = std::move(toks.tokens);
    s.targets = fc.targets;
    return s;
  }

  double probe_accuracy() {
    double correct_weight = 0.0;
    int total = 0;
    const int chunk = 16;
    for (size_t at = 0; at < probe_indices.size(); at += chunk) {
      std::vector<PolicySample> batch;
      for (size_t i = at; i < std::min(probe_indices.size(), at + chunk); ++i) {
        PatchFeatureGrid feats;
        batch.push_back(make_sample(probe_indices[i], &feats, nullptr, nullptr));
      }
      PolicyBatchStats st = policy_forward(bundle.policy, batch);
      correct_weight += st.accuracy * static_cast<double>(batch.size());
      total += static_cast<int>(batch.size());
    }
    return total ? correct_weight / total : 0.0;
  }

  TrainResult run(long long start_step) {
    RunMetrics metrics;
    double probe_acc = 0.0;
    double window_loss = 0.0, window_acc = 0.0;
    int window_n = 0;
    long long window_examples = 0;
    auto t0 = Clock::now();
    double window_t0 = 0.0;
    long long step = start_step;

    const int batch_size = std::max(1, std::min<int>(cfg.batch, static_cast<int>(frames.size())));
    const int log_every = std::max(1, cfg.log_every);

    for (; step < cfg.steps; ++step) {
      nn::ParamSet ps = registry();
      ps.zero_grads();

      std::vector<PolicySample> batch(batch_size);
      std::vector<PatchFeatureGrid> feats(batch_size);
      std::vector<EncoderTape> enc_tapes(batch_size);
      std::vector<TokenizerTape> tok_tapes(batch_size);
      std::vector<int> idxs(batch_size);
      const bool conv = cfg.encoder_mode == EncoderMode::ConvTrained;
      for (int b = 0; b < batch_size; ++b) {
        idxs[b] = next_frame();
        batch[b] = make_sample(idxs[b], &feats[b], conv ? &enc_tapes[b] : nullptr, &tok_tapes[b]);
      }

      std::vector<Mat> dvisual;
      PolicyBatchStats st = policy_forward_backward(bundle.policy, policy_grads, batch, &dvisual);
      if (!std::isfinite(st.loss)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                           " (seed " + std::to_string(cfg.seed) + ", lr " + std::to_string(cfg.lr) + ")");
      }

      for (int b = 0; b < batch_size; ++b) {
        const FrameCache& fc = cache[idxs[b]];
        Mat dfeats = tokenize_backward(dvisual[b], cfg.tok, feats[b], fc.masks,
                                       bundle.pool ? &*bundle.pool : nullptr, tok_tapes[b],
                                       bundle.pool ? &pool_grads : nullptr);
        if (conv) encode_backward(dfeats, bundle.encoder, enc_tapes[b], encoder_grads);
      }

      adam.step(ps);

      window_loss += st.loss;
      window_acc += st.accuracy;
      ++window_n;
      window_examples += batch_size;

      bool probed = false;
      if (cfg.probe_every > 0 && (step + 1) % cfg.probe_every == 0) {
        probe_acc = probe_accuracy();
        probed = true;
      }
      if ((step + 1) % log_every == 0) {
        metrics.rows.push_back(MetricRow{step + 1, window_loss / window_n, window_acc / window_n, probe_acc});
        double now = seconds_since(t0);
        metrics.perf.push_back(PerfRow{step + 1, window_examples / std::max(1e-9, now - window_t0), now});
        if (cfg.verbose) {
          std::printf("step %lld loss %.4f acc %.3f probe %.3f (%.1f ex/s)\n", step + 1,
                      window_loss / window_n, window_acc / window_n, probe_acc,
                      window_examples / std::max(1e-9, now - window_t0));
        }
        window_loss = window_acc = 0.0;
        window_n = 0;
        window_examples = 0;
        window_t0 = now;
      }
      if (cfg.eval_every > 0 && cfg.eval_rollouts > 0 && (step + 1) % cfg.eval_every == 0) {
        EvalResult ev = evaluate(bundle, detector, cfg.eval_rollouts,
                                 Rng::substream(cfg.seed, 0xe7a1).next_u64(), std::nullopt, sim, 2);
        metrics.evals.push_back(EvalRow{step + 1, ev.success_rate, ev.stderr_, ev.rollouts});
        if (cfg.verbose) std::printf("step %lld success %.3f\n", step + 1, ev.success_rate);
      }
      if (probed && cfg.stop_at_probe_accuracy > 0 && probe_acc >= cfg.stop_at_probe_accuracy) {
        ++step;
        break;
      }
    }

    metrics.final_probe_accuracy = cfg.probe_every > 0 ? probe_accuracy() : 0.0;
    metrics.data_order_hash = order_hash;

    TrainResult result;
    result.bundle = bundle;
    result.metrics = std::move(metrics);
    result.steps_run = step;

    if (!cfg.out_dir.empty()) {
      fs::create_directories(cfg.out_dir);
      export_metrics(result.metrics, cfg, cfg.out_dir);
      TrainState ts;
      ts.step = step;
      ts.data_rng = order_rng.save_state();
      ts.adam_t = adam.steps_taken();
      ts.adam_m = adam.m();
      ts.adam_v = adam.v();
      save_bundle((fs::path(cfg.out_dir) / "checkpoint.oat").string(), bundle, &ts);
    }
    return result;
  }
};

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  Trainer t(cfg);
  return t.run(0);
}

TrainResult train_resume(const std::string& checkpoint_path, const TrainConfig& cfg) {
  TrainState state;
  PolicyBundle saved = load_bundle(checkpoint_path, &state);
  Trainer t(cfg);
  t.bundle = std::move(saved);
  t.order_rng.restore_state(state.data_rng);
  // Rebuild caches that depend on restored pieces (binning was refit above with
  // identical data, but the restored one is authoritative).
  t.adam.restore(state.adam_t, state.adam_m, state.adam_v);
  t.policy_grads = PolicyParams::zeros_like(t.bundle.policy);
  t.encoder_grads.setZero(t.bundle.encoder);
  if (t.bundle.pool) t.pool_grads.setZero(*t.bundle.pool);
  t.order_hash = 0xcbf29ce484222325ULL;
  return t.run(state.step);
}

void export_metrics(const RunMetrics& metrics, const TrainConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "metrics.csv");
    if (!f) throw DataError("cannot write metrics.csv under " + out_dir);
    f << "step,loss,accuracy,probe_accuracy\n";
    for (const MetricRow& r : metrics.rows)
      f << r.step << "," << format_double(r.loss) << "," << format_double(r.accuracy) << ","
        << format_double(r.probe_accuracy) << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "perf.csv");
    f << "step,examples_per_sec,wall_seconds\n";
    for (const PerfRow& r : metrics.perf)
      f << r.step << "," << format_double(r.examples_per_sec) << "," << format_double(r.wall_seconds) << "\n";
  }
  if (!metrics.evals.empty()) {
    std::ofstream f(fs::path(out_dir) / "eval.csv");
    f << "step,success_rate,stderr,rollouts\n";
    for (const EvalRow& r : metrics.evals)
      f << r.step << "," << format_double(r.success_rate) << "," << format_double(r.stderr_) << ","
        << r.rollouts << "\n";
  }
  {
    KvConfig summary;
    KvConfig ckv = cfg.to_kv();
    summary.set("config_hash", hex64(ckv.hash()));
    summary.set("seed", std::to_string(cfg.seed));
    summary.set("data_order_hash", hex64(metrics.data_order_hash));
    summary.set_double("final_probe_accuracy", metrics.final_probe_accuracy);
    if (!metrics.rows.empty()) {
      summary.set_double("final_loss", metrics.rows.back().loss);
      summary.set_int("last_step", metrics.rows.back().step);
    }
    if (!metrics.evals.empty()) summary.set_double("final_success_rate", metrics.evals.back().success_rate);
    if (!cfg.data_path.empty()) {
      DatasetManifest m = load_manifest(cfg.data_path);
      PatchGeometry geom = make_patch_geometry(m.image_size, m.image_size, m.patch_size);
      summary.set_double("reduction_ratio", reduction_ratio(cfg.tok, geom));
      summary.set_int("visual_tokens", cfg.tok.token_count(geom.patches()));
    }
    summary.write_file((fs::path(out_dir) / "summary.txt").string());
  }
}

// --- evaluation ------------------------------------------------------------------

EvalResult evaluate_rollouts(const RolloutPolicy& policy, int n_rollouts, uint64_t seed,
                             std::optional<Relation> relation, const SimParams& sim, int threads) {
  auto run_one = [&](int i) -> bool {
    uint64_t task_seed = Rng::substream(seed, static_cast<uint64_t>(i)).next_u64();
    auto [state, instruction] =
        relation ? sample_task_with_relation(task_seed, *relation, sim) : sample_task(task_seed, sim);
    for (int t = 0; t < sim.max_steps; ++t) {
      if (check_success(state, instruction, sim)) return true;
      RenderResult r = render(state, sim);
      Action a = policy(state, r, instruction);
      state = step_sim(state, a, sim);
    }
    return check_success(state, instruction, sim);
  };

  int successes = 0;
  if (threads <= 1) {
    for (int i = 0; i < n_rollouts; ++i) successes += run_one(i) ? 1 : 0;
  } else {
    std::vector<std::future<int>> futs;
    for (int w = 0; w < threads; ++w) {
      futs.push_back(std::async(std::launch::async, [&, w] {
        int s = 0;
        for (int i = w; i < n_rollouts; i += threads) s += run_one(i) ? 1 : 0;
        return s;
      }));
    }
    for (auto& f : futs) successes += f.get();
  }

  EvalResult out;
  out.successes = successes;
  out.rollouts = n_rollouts;
  out.success_rate = n_rollouts ? static_cast<double>(successes) / n_rollouts : 0.0;
  out.stderr_ = n_rollouts ? std::sqrt(out.success_rate * (1 - out.success_rate) / n_rollouts) : 0.0;
  return out;
}

RolloutPolicy make_bundle_policy(const PolicyBundle& bundle, const DetectorParams& detector,
                                 const SimParams& sim) {
  auto b = std::make_shared<PolicyBundle>(bundle);
  auto det = std::make_shared<DetectorParams>(detector);
  SimParams s = sim;
  return [b, det, s](const SceneState&, const RenderResult& r, const std::string& instruction) {
    // match the 8-bit quantization the policy saw in training data
    Image img = quantize_to_8bit(r.image);
    PatchFeatureGrid feats = encode(img, b->encoder);

    MaskSet masks;
    if (b->tok.mode == TokenizerMode::Oat || b->tok.mode == TokenizerMode::ObjectOnly) {
      masks = b->mask_source == MaskSource::Oracle ? segment_oracle(r.gt_masks, b->tok.n_slots)
                                                   : segment_unsupervised(img, b->tok.n_slots, s.patch_size);
    }
    KeypointPrediction kp;
    if (b->tok.mode == TokenizerMode::Oat) {
      if (b->kp_source == KeypointSource::Oracle) {
        kp.point = r.gripper_px;
        kp.confidence = 1.0;
      } else {
        kp = detect(img, *det);
      }
    }
    VisualTokens toks = tokenize(feats, masks, kp, b->tok, b->pool ? &*b->pool : nullptr);
    return predict_action(b->policy, instruction, toks.tokens, b->binning);
  };
}

EvalResult evaluate(const PolicyBundle& bundle, const DetectorParams& detector, int n_rollouts, uint64_t seed,
                    std::optional<Relation> relation, const SimParams& sim, int threads) {
  return evaluate_rollouts(make_bundle_policy(bundle, detector, sim), n_rollouts, seed, relation, sim, threads);
}

// --- bench -------------------------------------------------------------------------

double analytic_cost_ratio(int lang_tokens, int tokens_a, int tokens_b) {
  double a = lang_tokens + tokens_a + 7;
  double b = lang_tokens + tokens_b + 7;
  return (a * a) / (b * b);
}

std::vector<BenchRow> bench_policy_scaling(const PolicyConfig& cfg, const std::vector<int>& token_budgets,
                                           int lang_tokens, int reps, uint64_t seed) {
  Vocabulary vocab = Vocabulary::standard(cfg.bins);
  PolicyParams params = PolicyParams::init(cfg, vocab, seed);
  PolicyParams grads = PolicyParams::zeros_like(params);
  Rng rng(seed + 1);

  const int n_words = lang_tokens - 2;  // BOS and SEP take two slots
  if (n_words < 1) throw std::invalid_argument("bench: lang_tokens must be >= 3");
  const int batch = 4;

  std::vector<BenchRow> rows;
  for (int T : token_budgets) {
    std::vector<PolicySample> samples(batch);
    for (auto& s : samples) {
      s.lang.resize(n_words);
      for (int& id : s.lang)
        id = vocab.word_base() + rng.uniform_int(0, static_cast<int>(vocab.words.size()) - 1);
      s.visual.resize(T, cfg.visual_dim);
      for (Eigen::Index j = 0; j < s.visual.cols(); ++j)
        for (Eigen::Index i = 0; i < s.visual.rows(); ++i) s.visual(i, j) = rng.uniform(-1.0, 1.0);
      for (int& t : s.targets) t = rng.uniform_int(0, cfg.bins - 1);
    }

    std::vector<Mat> dvis;
    policy_forward_backward(params, grads, samples, &dvis);  // warmup

    PolicyRunTiming timing;
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) policy_forward_backward(params, grads, samples, &dvis, &timing);
    double elapsed = seconds_since(t0);

    BenchRow row;
    row.label = "T=" + std::to_string(T);
    row.visual_tokens = T;
    row.seq_len = lang_tokens + T + 7;
    row.step_seconds_per_example = elapsed / (reps * batch);
    row.examples_per_sec = 1.0 / row.step_seconds_per_example;
    row.attention_seconds_per_example = timing.attention_seconds / (reps * batch);
    row.attention_ops = 6LL * cfg.layers * row.seq_len * row.seq_len * cfg.width;
    rows.push_back(row);
  }
  return rows;
}

std::vector<PipelineBenchRow> bench_pipeline(const std::vector<TokenizerConfig>& configs,
                                             const TrainConfig& base, int steps) {
  std::vector<PipelineBenchRow> rows;
  DatasetManifest m = load_manifest(base.data_path);
  PatchGeometry geom = make_patch_geometry(m.image_size, m.image_size, m.patch_size);
  for (const TokenizerConfig& tok : configs) {
    TrainConfig cfg = base;
    cfg.tok = tok;
    cfg.out_dir.clear();
    cfg.steps = steps;
    cfg.log_every = std::max(1, steps / 4);
    cfg.probe_every = 0;
    cfg.eval_every = 0;
    cfg.stop_at_probe_accuracy = -1;
    cfg.verbose = false;
    TrainResult r = train(cfg);
    // median examples/sec over logged windows, skipping the cold first window
    std::vector<double> eps;
    for (size_t i = 1; i < r.metrics.perf.size(); ++i) eps.push_back(r.metrics.perf[i].examples_per_sec);
    if (eps.empty() && !r.metrics.perf.empty()) eps.push_back(r.metrics.perf[0].examples_per_sec);
    std::sort(eps.begin(), eps.end());
    PipelineBenchRow row;
    row.mode = tokenizer_mode_name(tok.mode);
    if (tok.mode == TokenizerMode::Oat)
      row.mode += std::string("(") + pool_kind_name(tok.pool) + ",G=" + std::to_string(tok.agent_grid) + ")";
    row.visual_tokens = tok.token_count(geom.patches());
    row.examples_per_sec = eps.empty() ? 0.0 : eps[eps.size() / 2];
    rows.push_back(row);
  }
  return rows;
}

// --- ablation ----------------------------------------------------------------------

std::string AblationResult::table() const {
  std::ostringstream os;
  os << "variant                    in   left-of  front-of   average\n";
  for (const AblationRow& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s %5.1f%%  %6.1f%%  %7.1f%%  %7.1f%%\n", r.variant.c_str(),
                  100 * r.success_by_relation[0], 100 * r.success_by_relation[1],
                  100 * r.success_by_relation[2], 100 * r.average);
    os << buf;
  }
  return os.str();
}

AblationResult run_ablation_suite(const TrainConfig& base, const std::vector<uint64_t>& seeds,
                                  int rollouts_per_relation, const DetectorParams& detector, int threads) {
  struct Variant {
    std::string name;
    TokenizerConfig tok;
  };
  std::vector<Variant> variants;
  {
    TokenizerConfig t = base.tok;
    t.mode = TokenizerMode::SingleToken;
    variants.push_back({"single-token", t});
    t.mode = TokenizerMode::ObjectOnly;
    t.pool = PoolKind::Attention;
    variants.push_back({"object-only", t});
    t.mode = TokenizerMode::Oat;
    t.pool = PoolKind::Attention;
    variants.push_back({"oat (attention pool)", t});
    t.pool = PoolKind::Average;
    variants.push_back({"oat (average pool)", t});
  }

  AblationResult result;
  const SimParams sim = load_manifest(base.data_path).sim();
  for (const Variant& v : variants) {
    AblationRow row;
    row.variant = v.name;
    uint64_t hash = 0;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.tok = v.tok;
      cfg.seed = seed;
      cfg.out_dir.clear();
      cfg.eval_every = 0;
      TrainResult tr = train(cfg);
      hash = tr.metrics.data_order_hash;  // identical across variants per seed
      for (int rel = 0; rel < 3; ++rel) {
        // same eval seed across variants so every variant faces the same tasks
        uint64_t eval_seed = Rng::substream(base.seed, 0x77a + static_cast<uint64_t>(rel)).next_u64();
        EvalResult ev = evaluate(tr.bundle, detector, rollouts_per_relation, eval_seed,
                                 static_cast<Relation>(rel), sim, threads);
        row.success_by_relation[rel] += ev.success_rate / seeds.size();
      }
    }
    row.average = (row.success_by_relation[0] + row.success_by_relation[1] + row.success_by_relation[2]) / 3.0;
    result.rows.push_back(row);
    result.data_order_hashes.push_back(hash);
  }
  return result;
}

}  // namespace oat
