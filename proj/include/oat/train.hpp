#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "oat/checkpoint.hpp"
#include "oat/config.hpp"
#include "oat/dataset.hpp"
#include "oat/detector.hpp"

namespace oat {

struct TrainConfig {
  std::string data_path;
  std::string out_dir;  // metrics + checkpoint destination; empty disables export

  TokenizerConfig tok;
  PolicyConfig policy;
  EncoderMode encoder_mode = EncoderMode::ConvTrained;
  int encoder_hidden = 32;
  MaskSource mask_source = MaskSource::Oracle;
  KeypointSource kp_source = KeypointSource::Heuristic;
  std::string detector_ckpt;  // required for kp_source = learned

  int batch = 8;
  int steps = 2000;
  double lr = 1e-3;
  int log_every = 25;
  int probe_every = 100;
  int probe_size = 64;
  int eval_every = 0;       // closed-loop eval cadence in steps (0 = off)
  int eval_rollouts = 0;    // rollouts per eval point
  uint64_t seed = 0;
  double stop_at_probe_accuracy = -1.0;  // early stop; < 0 disables
  bool verbose = false;

  KvConfig to_kv() const;
  static TrainConfig from_kv(const KvConfig& kv);
};

struct MetricRow {
  long long step;
  double loss;
  double accuracy;        // teacher-forced batch accuracy
  double probe_accuracy;  // fixed-probe accuracy, refreshed every probe_every steps
};

struct PerfRow {
  long long step;
  double examples_per_sec;
  double wall_seconds;
};

struct EvalRow {
  long long step;
  double success_rate;
  double stderr_;
  int rollouts;
};

struct RunMetrics {
  std::vector<MetricRow> rows;
  std::vector<PerfRow> perf;
  std::vector<EvalRow> evals;
  uint64_t data_order_hash = 0;  // FNV over the (episode, step) sample stream
  double final_probe_accuracy = 0.0;

  /// First logged step with probe accuracy >= threshold, or -1.
  long long steps_to_probe_accuracy(double threshold) const;
};

struct TrainResult {
  PolicyBundle bundle;
  RunMetrics metrics;
  long long steps_run = 0;
};

/// Behavior cloning: cross-entropy over the 7 teacher-forced action-token
/// positions, Adam over policy + projector + conv encoder + attention pool.
/// Single-threaded and bit-reproducible per seed.
TrainResult train(const TrainConfig& cfg);

/// Continues a checkpointed run up to cfg.steps; bit-identical to the
/// uninterrupted run.
TrainResult train_resume(const std::string& checkpoint_path, const TrainConfig& cfg);

void export_metrics(const RunMetrics& metrics, const TrainConfig& cfg, const std::string& out_dir);

// --- closed-loop evaluation ---------------------------------------------------

struct EvalResult {
  double success_rate = 0.0;
  double stderr_ = 0.0;
  int successes = 0;
  int rollouts = 0;
};

using RolloutPolicy = std::function<Action(const SceneState&, const RenderResult&, const std::string&)>;

/// Seeded closed-loop rollouts with a max-step cutoff; rollouts are
/// independent, so `threads` > 1 changes wall time but not the counts.
EvalResult evaluate_rollouts(const RolloutPolicy& policy, int n_rollouts, uint64_t seed,
                             std::optional<Relation> relation, const SimParams& sim, int threads = 1);

/// Wraps a trained bundle (plus its gripper detector) as a rollout policy.
RolloutPolicy make_bundle_policy(const PolicyBundle& bundle, const DetectorParams& detector,
                                 const SimParams& sim);

EvalResult evaluate(const PolicyBundle& bundle, const DetectorParams& detector, int n_rollouts, uint64_t seed,
                    std::optional<Relation> relation = std::nullopt, const SimParams& sim = {},
                    int threads = 1);

// --- throughput / attention-cost bench -----------------------------------------

struct BenchRow {
  std::string label;
  int visual_tokens = 0;
  int seq_len = 0;  // J + T + 7 with J counting BOS + words + SEP
  double step_seconds_per_example = 0.0;
  double examples_per_sec = 0.0;
  double attention_seconds_per_example = 0.0;
  long long attention_ops = 0;  // 6 * L * S^2 * d (fwd + bwd multiply-adds)
};

/// Synthetic-token policy fwd+bwd scaling across visual-token budgets at fixed
/// policy size. J (language side incl. BOS/SEP) is held constant.
std::vector<BenchRow> bench_policy_scaling(const PolicyConfig& cfg, const std::vector<int>& token_budgets,
                                           int lang_tokens, int reps, uint64_t seed);

/// Analytic (J+T+7)^2 attention-cost ratio between two token budgets.
double analytic_cost_ratio(int lang_tokens, int tokens_a, int tokens_b);

struct PipelineBenchRow {
  std::string mode;
  int visual_tokens = 0;
  double examples_per_sec = 0.0;
};

/// End-to-end train-step throughput (decode + encode + tokenize + policy
/// fwd/bwd + optimizer) per tokenizer mode on a real dataset.
std::vector<PipelineBenchRow> bench_pipeline(const std::vector<TokenizerConfig>& configs,
                                             const TrainConfig& base, int steps);

// --- ablation suite -------------------------------------------------------------

struct AblationRow {
  std::string variant;
  std::array<double, 3> success_by_relation{};  // in, left-of, front-of
  double average = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<uint64_t> data_order_hashes;  // one per variant; all equal by construction
  std::string table() const;
};

/// Trains {single-token, object-only, oat+attention, oat+average} at the same
/// step budget with shared seeds and identical episode order, then evaluates
/// each per relation.
AblationResult run_ablation_suite(const TrainConfig& base, const std::vector<uint64_t>& seeds,
                                  int rollouts_per_relation, const DetectorParams& detector, int threads = 1);

}  // namespace oat
