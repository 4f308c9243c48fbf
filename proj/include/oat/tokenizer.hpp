#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oat/detector.hpp"
#include "oat/encoder.hpp"
#include "oat/segment.hpp"

namespace oat {

enum class TokenizerMode : uint8_t { Oat = 0, FullPatch = 1, SingleToken = 2, ObjectOnly = 3 };
enum class PoolKind : uint8_t { Average = 0, Attention = 1 };

const char* tokenizer_mode_name(TokenizerMode m);
const char* pool_kind_name(PoolKind p);
TokenizerMode tokenizer_mode_from_name(const std::string& name);
PoolKind pool_kind_from_name(const std::string& name);

struct TokenizerConfig {
  TokenizerMode mode = TokenizerMode::Oat;
  int n_slots = 7;      // N object slots
  int agent_grid = 3;   // G, odd
  PoolKind pool = PoolKind::Average;

  /// Emitted token count; a pure function of the config (and K for full-patch).
  int token_count(int n_patches) const;
};

/// 1 - tokens/K for this config on this patch grid.
double reduction_ratio(const TokenizerConfig& cfg, const PatchGeometry& geom);

enum class TokenKind : uint8_t { Object = 0, Agent = 1, Global = 2, Patch = 3 };

struct TokenProvenance {
  TokenKind kind = TokenKind::Global;
  int index = 0;        // slot id, agent cell, or patch id
  bool empty = false;   // object slot had no member patches
};

struct VisualTokens {
  Mat tokens;  // T x D, object tokens (slot order) before agent tokens (row-major)
  std::vector<TokenProvenance> provenance;

  int count() const { return static_cast<int>(tokens.rows()); }
};

/// Learned pooling: one query per object slot (single-token mode uses query 0
/// over all patches) and a shared key projection; values are the raw feature
/// rows, so uniform attention reduces exactly to average pooling.
struct AttentionPoolParams {
  Mat queries;  // N x D (or 1 x D for single-token)
  Mat key_w;    // D x D

  static AttentionPoolParams init(int n_queries, int dim, uint64_t seed);
};

struct AttentionPoolGrads {
  Mat queries;
  Mat key_w;
  void setZero(const AttentionPoolParams& p) {
    queries = Mat::Zero(p.queries.rows(), p.queries.cols());
    key_w = Mat::Zero(p.key_w.rows(), p.key_w.cols());
  }
};

/// Intermediates for the backward pass (slot memberships and attention weights).
struct TokenizerTape {
  std::vector<std::vector<int>> members;       // patch ids per pooled token
  std::vector<std::vector<double>> attn;       // attention weights per pooled token
  std::vector<int> agent_rows;                 // selected patch ids, empty on fallback
  bool agent_fallback = false;
  int n_object_tokens = 0;
  int n_patches = 0;
};

/// N object-centric tokens: average pooling takes the mean of each slot's
/// feature rows; attention pooling softmax-weights them by query-key score.
/// Empty slots produce zero tokens (flagged in provenance).
VisualTokens object_tokens(const PatchFeatureGrid& feats, const MaskSet& masks, PoolKind pool,
                           const AttentionPoolParams* params, TokenizerTape* tape = nullptr);

/// G*G agent-centric tokens: the raw (un-pooled) feature rows of the window
/// around the keypoint's patch; with no detection, every token is the global
/// mean of all K rows.
VisualTokens agent_tokens(const PatchFeatureGrid& feats, const KeypointPrediction& kp, int agent_grid,
                          TokenizerTape* tape = nullptr);

VisualTokens tokenize(const PatchFeatureGrid& feats, const MaskSet& masks, const KeypointPrediction& kp,
                      const TokenizerConfig& cfg, const AttentionPoolParams* params = nullptr,
                      TokenizerTape* tape = nullptr);

/// Propagates d(loss)/d(tokens) back to the feature grid and the attention
/// pool parameters (when the config uses them).
Mat tokenize_backward(const Mat& dtokens, const TokenizerConfig& cfg, const PatchFeatureGrid& feats,
                      const MaskSet& masks, const AttentionPoolParams* params, const TokenizerTape& tape,
                      AttentionPoolGrads* pool_grads);

}  // namespace oat
