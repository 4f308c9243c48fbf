#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "oat/nn.hpp"
#include "oat/scene.hpp"

namespace oat {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Closed vocabulary: BOS, SEP, the template-grammar words, then B action-bin
/// ids. Ranges are disjoint by construction.
struct Vocabulary {
  std::vector<std::string> words;
  int bins = 64;

  static Vocabulary standard(int bins);

  int bos() const { return 0; }
  int sep() const { return 1; }
  int word_base() const { return 2; }
  int action_base() const { return 2 + static_cast<int>(words.size()); }
  int size() const { return action_base() + bins; }

  int word_id(const std::string& w) const;
  std::vector<int> encode_instruction(const std::string& instruction) const;
};

/// Uniform per-dimension binning over the dataset's 1st-99th percentile range
/// (degenerate dimensions widen by epsilon so lo < hi always holds). Bins are
/// half-open [lo + i*w, lo + (i+1)*w) with the last bin closed; out-of-range
/// values clip to the edge bins; decode returns bin centers.
struct ActionBinning {
  int bins = 64;
  std::array<double, 7> lo{};
  std::array<double, 7> hi{};
  bool fitted = false;

  static ActionBinning fit(const std::vector<std::array<double, 7>>& actions, int bins);

  std::array<int, 7> encode(const Action& a) const;
  Action decode(const std::array<int, 7>& ids) const;
  double bin_width(int dim) const { return (hi[dim] - lo[dim]) / bins; }
};

struct PolicyConfig {
  int width = 128;      // d
  int layers = 4;       // L
  int heads = 4;
  int bins = 64;        // B action bins
  int visual_dim = 64;  // D of incoming visual tokens
  int mlp_mult = 4;
  int max_seq = 320;

  int head_dim() const { return width / heads; }
};

/// Decoder-only causal transformer over [BOS, l_1..l_J, SEP, v_1..v_T,
/// a_1..a_7]: language and action ids come from the embedding table, visual
/// tokens enter through the MLP projector, and the output head scores the B
/// action bins. Logits at the 7 positions preceding each action id carry the
/// loss.
struct PolicyParams {
  PolicyConfig cfg;
  Vocabulary vocab;

  Mat embed;  // vocab x d
  Mat pos;    // max_seq x d
  Mat proj_w1;
  Vec proj_b1;
  Mat proj_w2;
  Vec proj_b2;

  struct Block {
    Mat wq, wk, wv, wo;      // d x d
    Vec bq, bk, bv, bo;      // d
    Vec ln1_g, ln1_b, ln2_g, ln2_b;
    Mat mlp_w1;              // 4d x d
    Vec mlp_b1;
    Mat mlp_w2;              // d x 4d
    Vec mlp_b2;
  };
  std::vector<Block> blocks;
  Vec lnf_g, lnf_b;
  Mat head_w;  // bins x d
  Vec head_b;

  static PolicyParams init(const PolicyConfig& cfg, const Vocabulary& vocab, uint64_t seed);
  static PolicyParams zeros_like(const PolicyParams& p);

  /// Enumerates (name, param, grad) pairs in a fixed order.
  static nn::ParamSet registry(PolicyParams& params, PolicyParams& grads);

  long long parameter_count() const;
};

struct PolicySample {
  std::vector<int> lang;          // word ids, no specials
  Mat visual;                     // T x D
  std::array<int, 7> targets{};   // action bin indices (0..B-1)
};

struct PolicyBatchStats {
  double loss = 0.0;
  double accuracy = 0.0;  // over 7 * batch teacher-forced positions
};

/// Timing hooks let the bench report attention-op cost separately.
struct PolicyRunTiming {
  double attention_seconds = 0.0;
};

PolicyBatchStats policy_forward(const PolicyParams& params, const std::vector<PolicySample>& batch,
                                PolicyRunTiming* timing = nullptr);

/// Forward + backward. Gradients accumulate into `grads` (mean over the 7 *
/// batch loss positions); d(loss)/d(visual tokens) per sample comes back for
/// the tokenizer/encoder backward.
PolicyBatchStats policy_forward_backward(const PolicyParams& params, PolicyParams& grads,
                                         const std::vector<PolicySample>& batch, std::vector<Mat>* dvisual,
                                         PolicyRunTiming* timing = nullptr);

/// Teacher-forced logits at every input position (bins-wide rows); positions
/// before the action segment are exercised by the causality tests.
Mat policy_logits_all(const PolicyParams& params, const PolicySample& sample);

/// Next-bin distribution at the last prefix position (softmax-normalized).
Vec policy_next_distribution(const PolicyParams& params, const std::vector<int>& lang, const Mat& visual,
                             const std::vector<int>& decoded_bins);

/// Greedy decode of the 7 action bins (KV-cached; argmax ties break toward the
/// lowest id).
std::array<int, 7> policy_greedy_bins(const PolicyParams& params, const std::vector<int>& lang,
                                      const Mat& visual);

Action predict_action(const PolicyParams& params, const std::string& instruction, const Mat& visual_tokens,
                      const ActionBinning& binning);

double action_token_accuracy(const PolicyParams& params, const std::vector<PolicySample>& batch);

}  // namespace oat
