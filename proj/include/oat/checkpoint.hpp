#pragma once

#include <optional>
#include <string>

#include "oat/encoder.hpp"
#include "oat/policy.hpp"
#include "oat/tokenizer.hpp"

namespace oat {

enum class MaskSource : uint8_t { Oracle = 0, Unsupervised = 1 };
enum class KeypointSource : uint8_t { Heuristic = 0, Learned = 1, Oracle = 2 };

const char* mask_source_name(MaskSource m);
const char* keypoint_source_name(KeypointSource k);
MaskSource mask_source_from_name(const std::string& s);
KeypointSource keypoint_source_from_name(const std::string& s);

/// Everything needed to run the policy end to end (the gripper detector ships
/// as its own checkpoint): tokenizer config + pipeline sources, the feature
/// encoder, optional attention-pool parameters, policy weights, action
/// binning, and the vocabulary.
struct PolicyBundle {
  TokenizerConfig tok;
  MaskSource mask_source = MaskSource::Oracle;
  KeypointSource kp_source = KeypointSource::Heuristic;
  EncoderParams encoder;
  std::optional<AttentionPoolParams> pool;
  PolicyParams policy;
  ActionBinning binning;

  bool uses_pool() const {
    return tok.mode == TokenizerMode::SingleToken ||
           ((tok.mode == TokenizerMode::Oat || tok.mode == TokenizerMode::ObjectOnly) &&
            tok.pool == PoolKind::Attention);
  }
};

/// Optimizer/data-order state for bit-exact resume.
struct TrainState {
  int64_t step = 0;
  std::string data_rng;
  int64_t adam_t = 0;
  std::vector<double> adam_m, adam_v;
};

void save_bundle(const std::string& path, const PolicyBundle& bundle, const TrainState* state = nullptr);
PolicyBundle load_bundle(const std::string& path, TrainState* state = nullptr);

}  // namespace oat
