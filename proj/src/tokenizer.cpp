#include "oat/tokenizer.hpp"

#include <cmath>

namespace oat {

const char* tokenizer_mode_name(TokenizerMode m) {
  switch (m) {
    case TokenizerMode::Oat: return "oat";
    case TokenizerMode::FullPatch: return "full-patch";
    case TokenizerMode::SingleToken: return "single-token";
    case TokenizerMode::ObjectOnly: return "object-only";
  }
  return "?";
}

const char* pool_kind_name(PoolKind p) { return p == PoolKind::Average ? "average" : "attention"; }

TokenizerMode tokenizer_mode_from_name(const std::string& name) {
  if (name == "oat") return TokenizerMode::Oat;
  if (name == "full-patch") return TokenizerMode::FullPatch;
  if (name == "single-token") return TokenizerMode::SingleToken;
  if (name == "object-only") return TokenizerMode::ObjectOnly;
  throw DataError("unknown tokenizer mode: " + name);
}

PoolKind pool_kind_from_name(const std::string& name) {
  if (name == "average") return PoolKind::Average;
  if (name == "attention") return PoolKind::Attention;
  throw DataError("unknown pool kind: " + name);
}

int TokenizerConfig::token_count(int n_patches) const {
  switch (mode) {
    case TokenizerMode::FullPatch: return n_patches;
    case TokenizerMode::SingleToken: return 1;
    case TokenizerMode::ObjectOnly: return n_slots;
    case TokenizerMode::Oat: return n_slots + agent_grid * agent_grid;
  }
  return 0;
}

double reduction_ratio(const TokenizerConfig& cfg, const PatchGeometry& geom) {
  return 1.0 - static_cast<double>(cfg.token_count(geom.patches())) / geom.patches();
}

AttentionPoolParams AttentionPoolParams::init(int n_queries, int dim, uint64_t seed) {
  AttentionPoolParams p;
  Rng rng(seed);
  p.queries.resize(n_queries, dim);
  nn::init_uniform(p.queries, rng, dim);
  p.key_w.resize(dim, dim);
  nn::init_uniform(p.key_w, rng, dim);
  return p;
}

namespace {

/// Pools `member` rows of feats into one token. Average: plain mean.
/// Attention: softmax((q . W_k v_i)/sqrt(D)) weights over the raw rows.
Eigen::RowVectorXd pool_rows(const Mat& feats, const std::vector<int>& members, PoolKind pool,
                             const AttentionPoolParams* params, int query_index,
                             std::vector<double>* attn_out) {
  const int D = static_cast<int>(feats.cols());
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(D);
  if (members.empty()) return out;

  if (pool == PoolKind::Average) {
    for (int k : members) out += feats.row(k);
    out /= static_cast<double>(members.size());
    if (attn_out) attn_out->assign(members.size(), 1.0 / members.size());
    return out;
  }

  if (!params) throw std::invalid_argument("attention pooling requires AttentionPoolParams");
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  Eigen::RowVectorXd q = params->queries.row(query_index);
  std::vector<double> scores(members.size());
  double mx = -1e300;
  for (size_t i = 0; i < members.size(); ++i) {
    Eigen::RowVectorXd key = feats.row(members[i]) * params->key_w.transpose();
    scores[i] = q.dot(key) * scale;
    mx = std::max(mx, scores[i]);
  }
  double sum = 0;
  for (double& s : scores) {
    s = std::exp(s - mx);
    sum += s;
  }
  for (size_t i = 0; i < members.size(); ++i) {
    scores[i] /= sum;
    out += scores[i] * feats.row(members[i]);
  }
  if (attn_out) *attn_out = std::move(scores);
  return out;
}

}  // namespace

VisualTokens object_tokens(const PatchFeatureGrid& feats, const MaskSet& masks, PoolKind pool,
                           const AttentionPoolParams* params, TokenizerTape* tape) {
  if (masks.patches() != static_cast<int>(feats.features.rows())) {
    throw GeometryError("object_tokens: mask/feature patch count mismatch");
  }
  const int N = masks.n_slots;
  const int D = static_cast<int>(feats.features.cols());

  std::vector<std::vector<int>> members(N);
  for (int k = 0; k < masks.patches(); ++k) members[masks.assignment[k]].push_back(k);

  VisualTokens out;
  out.tokens = Mat::Zero(N, D);
  out.provenance.resize(N);
  if (tape) {
    tape->members.assign(N, {});
    tape->attn.assign(N, {});
    tape->n_object_tokens = N;
  }
  for (int j = 0; j < N; ++j) {
    out.provenance[j] = TokenProvenance{TokenKind::Object, j, members[j].empty()};
    std::vector<double> attn;
    out.tokens.row(j) = pool_rows(feats.features, members[j], pool, params, j, tape ? &attn : nullptr);
    if (tape) {
      tape->members[j] = members[j];
      tape->attn[j] = std::move(attn);
    }
  }
  return out;
}

VisualTokens agent_tokens(const PatchFeatureGrid& feats, const KeypointPrediction& kp, int agent_grid,
                          TokenizerTape* tape) {
  const PatchGeometry& g = feats.geom;
  const int T = agent_grid * agent_grid;
  const int D = static_cast<int>(feats.features.cols());

  VisualTokens out;
  out.tokens.resize(T, D);
  out.provenance.resize(T);
  if (tape) {
    tape->agent_rows.clear();
    tape->agent_fallback = false;
  }

  if (kp.point) {
    PatchIndex center = pixel_to_patch(g, *kp.point);
    auto window = patch_window(g, center, agent_grid);
    for (int i = 0; i < T; ++i) {
      int k = patch_flat(g, window[i]);
      out.tokens.row(i) = feats.features.row(k);  // raw rows, no transform
      out.provenance[i] = TokenProvenance{TokenKind::Agent, i, false};
      if (tape) tape->agent_rows.push_back(k);
    }
    return out;
  }

  // no detection: every agent token is the global patch-feature mean
  Eigen::RowVectorXd global = feats.features.colwise().mean();
  for (int i = 0; i < T; ++i) {
    out.tokens.row(i) = global;
    out.provenance[i] = TokenProvenance{TokenKind::Global, i, false};
  }
  if (tape) tape->agent_fallback = true;
  return out;
}

VisualTokens tokenize(const PatchFeatureGrid& feats, const MaskSet& masks, const KeypointPrediction& kp,
                      const TokenizerConfig& cfg, const AttentionPoolParams* params, TokenizerTape* tape) {
  const int K = static_cast<int>(feats.features.rows());
  if (tape) {
    *tape = TokenizerTape{};
    tape->n_patches = K;
  }

  switch (cfg.mode) {
    case TokenizerMode::FullPatch: {
      VisualTokens out;
      out.tokens = feats.features;
      out.provenance.resize(K);
      for (int k = 0; k < K; ++k) out.provenance[k] = TokenProvenance{TokenKind::Patch, k, false};
      return out;
    }
    case TokenizerMode::SingleToken: {
      if (!params) throw std::invalid_argument("single-token mode requires attention pool params");
      std::vector<int> all(K);
      for (int k = 0; k < K; ++k) all[k] = k;
      VisualTokens out;
      out.tokens = Mat::Zero(1, feats.features.cols());
      std::vector<double> attn;
      out.tokens.row(0) = pool_rows(feats.features, all, PoolKind::Attention, params, 0, tape ? &attn : nullptr);
      out.provenance = {TokenProvenance{TokenKind::Global, 0, false}};
      if (tape) {
        tape->members = {all};
        tape->attn = {std::move(attn)};
        tape->n_object_tokens = 1;
      }
      return out;
    }
    case TokenizerMode::ObjectOnly:
      return object_tokens(feats, masks, cfg.pool, params, tape);
    case TokenizerMode::Oat: {
      VisualTokens obj = object_tokens(feats, masks, cfg.pool, params, tape);
      VisualTokens agent = agent_tokens(feats, kp, cfg.agent_grid, tape);
      VisualTokens out;
      out.tokens.resize(obj.count() + agent.count(), feats.features.cols());
      out.tokens.topRows(obj.count()) = obj.tokens;
      out.tokens.bottomRows(agent.count()) = agent.tokens;
      out.provenance = obj.provenance;
      out.provenance.insert(out.provenance.end(), agent.provenance.begin(), agent.provenance.end());
      return out;
    }
  }
  throw std::logic_error("tokenize: unhandled mode");
}

Mat tokenize_backward(const Mat& dtokens, const TokenizerConfig& cfg, const PatchFeatureGrid& feats,
                      const MaskSet& masks, const AttentionPoolParams* params, const TokenizerTape& tape,
                      AttentionPoolGrads* pool_grads) {
  (void)masks;
  const int K = static_cast<int>(feats.features.rows());
  const int D = static_cast<int>(feats.features.cols());
  Mat dfeats = Mat::Zero(K, D);

  if (cfg.mode == TokenizerMode::FullPatch) {
    dfeats = dtokens;
    return dfeats;
  }

  const bool attention = cfg.mode == TokenizerMode::SingleToken || cfg.pool == PoolKind::Attention;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));

  // pooled tokens (object tokens, or the lone global token)
  for (int j = 0; j < tape.n_object_tokens; ++j) {
    const auto& members = tape.members[j];
    if (members.empty()) continue;
    Eigen::RowVectorXd dtok = dtokens.row(j);

    if (!attention) {
      double inv = 1.0 / members.size();
      for (int k : members) dfeats.row(k) += inv * dtok;
      continue;
    }

    const auto& alpha = tape.attn[j];
    Eigen::RowVectorXd q = params->queries.row(j);

    // value path + score gradient
    std::vector<double> dalpha(members.size());
    for (size_t i = 0; i < members.size(); ++i) {
      dfeats.row(members[i]) += alpha[i] * dtok;
      dalpha[i] = dtok.dot(feats.features.row(members[i]));
    }
    double dot = 0;
    for (size_t i = 0; i < members.size(); ++i) dot += alpha[i] * dalpha[i];
    for (size_t i = 0; i < members.size(); ++i) {
      double dscore = alpha[i] * (dalpha[i] - dot) * scale;
      Eigen::RowVectorXd v = feats.features.row(members[i]);
      Eigen::RowVectorXd key = v * params->key_w.transpose();
      if (pool_grads) {
        pool_grads->queries.row(j) += dscore * key;
        pool_grads->key_w += (dscore * q).transpose() * v;
      }
      dfeats.row(members[i]) += dscore * (q * params->key_w);
    }
  }

  // agent tokens
  if (cfg.mode == TokenizerMode::Oat) {
    const int n_obj = tape.n_object_tokens;
    const int T = cfg.agent_grid * cfg.agent_grid;
    if (tape.agent_fallback) {
      Eigen::RowVectorXd total = dtokens.bottomRows(T).colwise().sum();
      double inv = 1.0 / K;
      for (int k = 0; k < K; ++k) dfeats.row(k) += inv * total;
    } else {
      for (int i = 0; i < T; ++i) dfeats.row(tape.agent_rows[i]) += dtokens.row(n_obj + i);
    }
  }
  return dfeats;
}

}  // namespace oat
