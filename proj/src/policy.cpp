#include "oat/policy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace oat {

namespace {

constexpr double kLnEps = 1e-5;

using Clock = std::chrono::steady_clock;

struct AttnTimer {
  PolicyRunTiming* timing;
  Clock::time_point t0;
  explicit AttnTimer(PolicyRunTiming* t) : timing(t) {
    if (timing) t0 = Clock::now();
  }
  ~AttnTimer() {
    if (timing) timing->attention_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  }
};

void layer_norm(const Mat& x, const Vec& gain, const Vec& bias, Mat& out, Mat& xhat, Vec& rstd) {
  const Eigen::Index R = x.rows(), d = x.cols();
  out.resize(R, d);
  xhat.resize(R, d);
  rstd.resize(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd(r) = rs;
    xhat.row(r) = (x.row(r).array() - mu) * rs;
    out.row(r) = xhat.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
  }
}

void layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Vec& gain, Mat& dx, Vec& dgain,
                         Vec& dbias) {
  const Eigen::Index R = dy.rows(), d = dy.cols();
  dx.resize(R, d);
  for (Eigen::Index r = 0; r < R; ++r) {
    Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gain.transpose());
    double m1 = dxhat.mean();
    double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (dxhat.array() - m1 - xhat.row(r).array() * m2) * rstd(r);
    dgain += dy.row(r).cwiseProduct(xhat.row(r)).transpose();
    dbias += dy.row(r).transpose();
  }
}

struct SeqLayout {
  int J = 0, T = 0, S = 0, offset = 0;
};

struct BlockTape {
  Mat x_in, ln1_out, xhat1, ln2_out, xhat2;
  Vec rstd1, rstd2;
  Mat q, k, v;
  std::vector<Mat> attn;  // softmax weights, one S x S per (sample * heads + head)
  Mat ctx;                // concatenated head outputs, pre-Wo
  Mat x_mid;
  Mat mlp_pre, mlp_act;
};

struct ForwardTape {
  std::vector<SeqLayout> layout;
  int total_rows = 0, total_visual = 0;
  Mat visual_in;   // sumT x D stacked visual tokens
  Mat vis_pre;     // sumT x d projector hidden pre-gelu
  Mat vis_act;     // sumT x d
  Mat x0;
  std::vector<BlockTape> blocks;
  Mat xf, xhatf, lnf_out;
  Vec rstdf;
};

void check_sample(const PolicyParams& p, const PolicySample& s) {
  if (s.visual.cols() != p.cfg.visual_dim) throw GeometryError("policy: visual token width mismatch");
  int S = static_cast<int>(s.lang.size()) + static_cast<int>(s.visual.rows()) + 8;
  if (S > p.cfg.max_seq) throw std::length_error("policy: sequence exceeds max_seq");
  for (int id : s.lang)
    if (id < 0 || id >= p.vocab.action_base()) throw DataError("policy: language id out of range");
  for (int t : s.targets)
    if (t < 0 || t >= p.cfg.bins) throw DataError("policy: target bin out of range");
}

/// Embeds the batch and runs every transformer block, stacking all sequences
/// into one row block per matrix so the dense layers see a single GEMM.
ForwardTape run_forward(const PolicyParams& p, const std::vector<PolicySample>& batch,
                        PolicyRunTiming* timing) {
  const PolicyConfig& cfg = p.cfg;
  const int d = cfg.width, H = cfg.heads, dh = cfg.head_dim();

  ForwardTape tape;
  tape.layout.resize(batch.size());
  int R = 0, VT = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    check_sample(p, batch[b]);
    SeqLayout& L = tape.layout[b];
    L.J = static_cast<int>(batch[b].lang.size());
    L.T = static_cast<int>(batch[b].visual.rows());
    L.S = L.J + L.T + 8;
    L.offset = R;
    R += L.S;
    VT += L.T;
  }
  tape.total_rows = R;
  tape.total_visual = VT;

  // projector over all visual tokens at once
  tape.visual_in.resize(VT, cfg.visual_dim);
  int vrow = 0;
  for (const auto& s : batch) {
    tape.visual_in.middleRows(vrow, s.visual.rows()) = s.visual;
    vrow += static_cast<int>(s.visual.rows());
  }
  tape.vis_pre.noalias() = tape.visual_in * p.proj_w1.transpose();
  tape.vis_pre.rowwise() += p.proj_b1.transpose();
  tape.vis_act = tape.vis_pre.unaryExpr([](double x) { return nn::gelu(x); });
  Mat vis_out = tape.vis_act * p.proj_w2.transpose();
  vis_out.rowwise() += p.proj_b2.transpose();

  tape.x0.resize(R, d);
  vrow = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    const SeqLayout& L = tape.layout[b];
    const PolicySample& s = batch[b];
    int r = L.offset;
    tape.x0.row(r) = p.embed.row(p.vocab.bos()) + p.pos.row(0);
    for (int j = 0; j < L.J; ++j) tape.x0.row(r + 1 + j) = p.embed.row(s.lang[j]) + p.pos.row(1 + j);
    tape.x0.row(r + 1 + L.J) = p.embed.row(p.vocab.sep()) + p.pos.row(1 + L.J);
    for (int t = 0; t < L.T; ++t)
      tape.x0.row(r + 2 + L.J + t) = vis_out.row(vrow + t) + p.pos.row(2 + L.J + t);
    for (int t = 0; t < 6; ++t) {
      int id = p.vocab.action_base() + s.targets[t];
      tape.x0.row(r + 2 + L.J + L.T + t) = p.embed.row(id) + p.pos.row(2 + L.J + L.T + t);
    }
    vrow += L.T;
  }

  Mat x = tape.x0;
  tape.blocks.resize(cfg.layers);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    BlockTape& bt = tape.blocks[l];
    const PolicyParams::Block& blk = p.blocks[l];
    bt.x_in = x;
    layer_norm(x, blk.ln1_g, blk.ln1_b, bt.ln1_out, bt.xhat1, bt.rstd1);
    bt.q.noalias() = bt.ln1_out * blk.wq.transpose();
    bt.q.rowwise() += blk.bq.transpose();
    bt.k.noalias() = bt.ln1_out * blk.wk.transpose();
    bt.k.rowwise() += blk.bk.transpose();
    bt.v.noalias() = bt.ln1_out * blk.wv.transpose();
    bt.v.rowwise() += blk.bv.transpose();

    bt.ctx.resize(R, d);
    bt.attn.assign(batch.size() * H, Mat());
    {
      AttnTimer timer(timing);
      for (size_t b = 0; b < batch.size(); ++b) {
        const SeqLayout& L = tape.layout[b];
        for (int h = 0; h < H; ++h) {
          Mat Qh = bt.q.block(L.offset, h * dh, L.S, dh);
          Mat Kh = bt.k.block(L.offset, h * dh, L.S, dh);
          Mat Vh = bt.v.block(L.offset, h * dh, L.S, dh);
          Mat scores = Qh * Kh.transpose() * scale;
          for (int i = 0; i < L.S; ++i)
            for (int j = i + 1; j < L.S; ++j) scores(i, j) = -1e30;  // strictly causal
          nn::softmax_rows_inplace(scores);
          bt.ctx.block(L.offset, h * dh, L.S, dh).noalias() = scores * Vh;
          bt.attn[b * H + h] = std::move(scores);
        }
      }
    }
    Mat attn_out = bt.ctx * blk.wo.transpose();
    attn_out.rowwise() += blk.bo.transpose();
    bt.x_mid = x + attn_out;

    layer_norm(bt.x_mid, blk.ln2_g, blk.ln2_b, bt.ln2_out, bt.xhat2, bt.rstd2);
    bt.mlp_pre.noalias() = bt.ln2_out * blk.mlp_w1.transpose();
    bt.mlp_pre.rowwise() += blk.mlp_b1.transpose();
    bt.mlp_act = bt.mlp_pre.unaryExpr([](double v) { return nn::gelu(v); });
    Mat mlp_out = bt.mlp_act * blk.mlp_w2.transpose();
    mlp_out.rowwise() += blk.mlp_b2.transpose();
    x = bt.x_mid + mlp_out;
  }
  tape.xf = std::move(x);
  layer_norm(tape.xf, p.lnf_g, p.lnf_b, tape.lnf_out, tape.xhatf, tape.rstdf);
  return tape;
}

struct LossEval {
  double loss = 0.0;
  double accuracy = 0.0;
  Mat probs;                 // (7 * batch) x bins
  std::vector<int> rows;     // absolute row per loss position
  std::vector<int> targets;
};

LossEval eval_loss(const PolicyParams& p, const ForwardTape& tape, const std::vector<PolicySample>& batch) {
  LossEval ev;
  const int n_pos = static_cast<int>(batch.size()) * 7;
  ev.rows.reserve(n_pos);
  ev.targets.reserve(n_pos);
  for (size_t b = 0; b < batch.size(); ++b) {
    const SeqLayout& L = tape.layout[b];
    for (int t = 0; t < 7; ++t) {
      ev.rows.push_back(L.offset + L.J + L.T + 1 + t);
      ev.targets.push_back(batch[b].targets[t]);
    }
  }
  Mat logits(n_pos, p.cfg.bins);
  for (int i = 0; i < n_pos; ++i)
    logits.row(i) = tape.lnf_out.row(ev.rows[i]) * p.head_w.transpose() + p.head_b.transpose();
  ev.probs = logits;
  nn::softmax_rows_inplace(ev.probs);

  int correct = 0;
  double loss = 0.0;
  for (int i = 0; i < n_pos; ++i) {
    loss -= std::log(std::max(ev.probs(i, ev.targets[i]), 1e-300));
    int arg = 0;
    for (int c = 1; c < p.cfg.bins; ++c)
      if (ev.probs(i, c) > ev.probs(i, arg)) arg = c;  // ties keep the lowest id
    if (arg == ev.targets[i]) ++correct;
  }
  ev.loss = loss / n_pos;
  ev.accuracy = static_cast<double>(correct) / n_pos;
  return ev;
}

}  // namespace

// --- vocabulary and binning --------------------------------------------------

Vocabulary Vocabulary::standard(int bins) {
  Vocabulary v;
  v.bins = bins;
  v.words = {"place", "the", "in", "left", "of", "front"};
  for (int i = 0; i < Palette::kColors; ++i) v.words.push_back(Palette::names[i]);
  for (const char* s : {"cube", "ball", "bowl", "bag"}) v.words.push_back(s);
  return v;
}

int Vocabulary::word_id(const std::string& w) const {
  for (size_t i = 0; i < words.size(); ++i)
    if (words[i] == w) return word_base() + static_cast<int>(i);
  throw DataError("word not in vocabulary: " + w);
}

std::vector<int> Vocabulary::encode_instruction(const std::string& instruction) const {
  std::istringstream is(instruction);
  std::vector<int> ids;
  std::string w;
  while (is >> w) ids.push_back(word_id(w));
  if (ids.empty()) throw DataError("empty instruction");
  return ids;
}

ActionBinning ActionBinning::fit(const std::vector<std::array<double, 7>>& actions, int bins) {
  if (actions.empty()) throw DataError("ActionBinning::fit: no actions");
  ActionBinning out;
  out.bins = bins;
  const auto percentile = [](std::vector<double>& v, double pct) {
    std::sort(v.begin(), v.end());
    double rank = pct / 100.0 * (static_cast<double>(v.size()) - 1);
    size_t lo = static_cast<size_t>(std::floor(rank));
    size_t hi = static_cast<size_t>(std::ceil(rank));
    double f = rank - lo;
    return v[lo] * (1 - f) + v[hi] * f;
  };
  for (int dim = 0; dim < 7; ++dim) {
    std::vector<double> v(actions.size());
    for (size_t i = 0; i < actions.size(); ++i) v[i] = actions[i][dim];
    out.lo[dim] = percentile(v, 1.0);
    out.hi[dim] = percentile(v, 99.0);
    if (out.hi[dim] - out.lo[dim] < 1e-9) {
      double c = out.lo[dim];
      double eps = std::max(1e-6, std::abs(c) * 1e-3);
      out.lo[dim] = c - eps;
      out.hi[dim] = c + eps;
    }
  }
  out.fitted = true;
  return out;
}

std::array<int, 7> ActionBinning::encode(const Action& a) const {
  if (!fitted) throw std::logic_error("ActionBinning: encode before fit");
  std::array<int, 7> ids{};
  auto flat = a.flat();
  for (int d = 0; d < 7; ++d) {
    double w = bin_width(d);
    int idx = static_cast<int>(std::floor((flat[d] - lo[d]) / w));
    ids[d] = std::clamp(idx, 0, bins - 1);
  }
  return ids;
}

Action ActionBinning::decode(const std::array<int, 7>& ids) const {
  if (!fitted) throw std::logic_error("ActionBinning: decode before fit");
  std::array<double, 7> flat{};
  for (int d = 0; d < 7; ++d) {
    int b = std::clamp(ids[d], 0, bins - 1);
    flat[d] = lo[d] + (b + 0.5) * bin_width(d);
  }
  return Action::from_flat(flat);
}

// --- parameters ---------------------------------------------------------------

PolicyParams PolicyParams::init(const PolicyConfig& cfg, const Vocabulary& vocab, uint64_t seed) {
  if (cfg.width % cfg.heads != 0) throw std::invalid_argument("policy width must divide heads");
  PolicyParams p;
  p.cfg = cfg;
  p.vocab = vocab;
  p.vocab.bins = cfg.bins;
  Rng rng(seed);
  const int d = cfg.width;

  p.embed.resize(p.vocab.size(), d);
  nn::init_uniform(p.embed, rng, d);
  p.pos.resize(cfg.max_seq, d);
  nn::init_uniform(p.pos, rng, d);
  p.proj_w1.resize(d, cfg.visual_dim);
  nn::init_uniform(p.proj_w1, rng, cfg.visual_dim);
  p.proj_b1 = Vec::Zero(d);
  p.proj_w2.resize(d, d);
  nn::init_uniform(p.proj_w2, rng, d);
  p.proj_b2 = Vec::Zero(d);

  p.blocks.resize(cfg.layers);
  for (auto& b : p.blocks) {
    for (Mat* m : {&b.wq, &b.wk, &b.wv, &b.wo}) {
      m->resize(d, d);
      nn::init_uniform(*m, rng, d);
    }
    b.bq = b.bk = b.bv = b.bo = Vec::Zero(d);
    b.ln1_g = Vec::Ones(d);
    b.ln1_b = Vec::Zero(d);
    b.ln2_g = Vec::Ones(d);
    b.ln2_b = Vec::Zero(d);
    b.mlp_w1.resize(cfg.mlp_mult * d, d);
    nn::init_uniform(b.mlp_w1, rng, d);
    b.mlp_b1 = Vec::Zero(cfg.mlp_mult * d);
    b.mlp_w2.resize(d, cfg.mlp_mult * d);
    nn::init_uniform(b.mlp_w2, rng, cfg.mlp_mult * d);
    b.mlp_b2 = Vec::Zero(d);
  }
  p.lnf_g = Vec::Ones(d);
  p.lnf_b = Vec::Zero(d);
  p.head_w.resize(cfg.bins, d);
  nn::init_uniform(p.head_w, rng, d);
  p.head_b = Vec::Zero(cfg.bins);
  return p;
}

PolicyParams PolicyParams::zeros_like(const PolicyParams& p) {
  PolicyParams z = p;
  auto zero = [](Mat& m) { m.setZero(); };
  zero(z.embed);
  zero(z.pos);
  zero(z.proj_w1);
  zero(z.proj_w2);
  z.proj_b1.setZero();
  z.proj_b2.setZero();
  for (auto& b : z.blocks) {
    b.wq.setZero();
    b.wk.setZero();
    b.wv.setZero();
    b.wo.setZero();
    b.bq.setZero();
    b.bk.setZero();
    b.bv.setZero();
    b.bo.setZero();
    b.ln1_g.setZero();
    b.ln1_b.setZero();
    b.ln2_g.setZero();
    b.ln2_b.setZero();
    b.mlp_w1.setZero();
    b.mlp_b1.setZero();
    b.mlp_w2.setZero();
    b.mlp_b2.setZero();
  }
  z.lnf_g.setZero();
  z.lnf_b.setZero();
  z.head_w.setZero();
  z.head_b.setZero();
  return z;
}

nn::ParamSet PolicyParams::registry(PolicyParams& params, PolicyParams& grads) {
  nn::ParamSet ps;
  ps.add("embed", params.embed, grads.embed);
  ps.add("pos", params.pos, grads.pos);
  ps.add("proj_w1", params.proj_w1, grads.proj_w1);
  ps.add("proj_b1", params.proj_b1, grads.proj_b1);
  ps.add("proj_w2", params.proj_w2, grads.proj_w2);
  ps.add("proj_b2", params.proj_b2, grads.proj_b2);
  for (size_t l = 0; l < params.blocks.size(); ++l) {
    auto& b = params.blocks[l];
    auto& g = grads.blocks[l];
    std::string tag = "block" + std::to_string(l) + ".";
    ps.add(tag + "wq", b.wq, g.wq);
    ps.add(tag + "bq", b.bq, g.bq);
    ps.add(tag + "wk", b.wk, g.wk);
    ps.add(tag + "bk", b.bk, g.bk);
    ps.add(tag + "wv", b.wv, g.wv);
    ps.add(tag + "bv", b.bv, g.bv);
    ps.add(tag + "wo", b.wo, g.wo);
    ps.add(tag + "bo", b.bo, g.bo);
    ps.add(tag + "ln1_g", b.ln1_g, g.ln1_g);
    ps.add(tag + "ln1_b", b.ln1_b, g.ln1_b);
    ps.add(tag + "ln2_g", b.ln2_g, g.ln2_g);
    ps.add(tag + "ln2_b", b.ln2_b, g.ln2_b);
    ps.add(tag + "mlp_w1", b.mlp_w1, g.mlp_w1);
    ps.add(tag + "mlp_b1", b.mlp_b1, g.mlp_b1);
    ps.add(tag + "mlp_w2", b.mlp_w2, g.mlp_w2);
    ps.add(tag + "mlp_b2", b.mlp_b2, g.mlp_b2);
  }
  ps.add("lnf_g", params.lnf_g, grads.lnf_g);
  ps.add("lnf_b", params.lnf_b, grads.lnf_b);
  ps.add("head_w", params.head_w, grads.head_w);
  ps.add("head_b", params.head_b, grads.head_b);
  return ps;
}

long long PolicyParams::parameter_count() const {
  PolicyParams tmp_g = PolicyParams::zeros_like(*this);
  PolicyParams tmp_p = *this;
  return registry(tmp_p, tmp_g).total();
}

// --- forward / backward -------------------------------------------------------

PolicyBatchStats policy_forward(const PolicyParams& params, const std::vector<PolicySample>& batch,
                                PolicyRunTiming* timing) {
  if (batch.empty()) throw std::invalid_argument("policy_forward: empty batch");
  ForwardTape tape = run_forward(params, batch, timing);
  LossEval ev = eval_loss(params, tape, batch);
  return {ev.loss, ev.accuracy};
}

PolicyBatchStats policy_forward_backward(const PolicyParams& params, PolicyParams& grads,
                                         const std::vector<PolicySample>& batch, std::vector<Mat>* dvisual,
                                         PolicyRunTiming* timing) {
  if (batch.empty()) throw std::invalid_argument("policy_forward_backward: empty batch");
  const PolicyConfig& cfg = params.cfg;
  const int d = cfg.width, H = cfg.heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTape tape = run_forward(params, batch, timing);
  LossEval ev = eval_loss(params, tape, batch);

  const int n_pos = static_cast<int>(ev.rows.size());
  const double inv_n = 1.0 / n_pos;

  // head + final LN
  Mat dlnf = Mat::Zero(tape.total_rows, d);
  for (int i = 0; i < n_pos; ++i) {
    Eigen::RowVectorXd dlogits = ev.probs.row(i) * inv_n;
    dlogits(ev.targets[i]) -= inv_n;
    grads.head_w.noalias() += dlogits.transpose() * tape.lnf_out.row(ev.rows[i]);
    grads.head_b += dlogits.transpose();
    dlnf.row(ev.rows[i]) = dlogits * params.head_w;
  }
  Mat dx;
  layer_norm_backward(dlnf, tape.xhatf, tape.rstdf, params.lnf_g, dx, grads.lnf_g, grads.lnf_b);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const BlockTape& bt = tape.blocks[l];
    const PolicyParams::Block& blk = params.blocks[l];
    PolicyParams::Block& gb = grads.blocks[l];

    // mlp branch: x_out = x_mid + gelu(ln2 W1^T + b1) W2^T + b2
    Mat dmlp_out = dx;
    gb.mlp_w2.noalias() += dmlp_out.transpose() * bt.mlp_act;
    gb.mlp_b2 += dmlp_out.colwise().sum().transpose();
    Mat dact = dmlp_out * blk.mlp_w2;
    Mat dpre = dact.cwiseProduct(bt.mlp_pre.unaryExpr([](double v) { return nn::gelu_grad(v); }));
    gb.mlp_w1.noalias() += dpre.transpose() * bt.ln2_out;
    gb.mlp_b1 += dpre.colwise().sum().transpose();
    Mat dln2 = dpre * blk.mlp_w1;
    Mat dx_mid;
    layer_norm_backward(dln2, bt.xhat2, bt.rstd2, blk.ln2_g, dx_mid, gb.ln2_g, gb.ln2_b);
    dx_mid += dx;  // residual

    // attention branch: x_mid = x_in + ctx Wo^T + bo
    gb.wo.noalias() += dx_mid.transpose() * bt.ctx;
    gb.bo += dx_mid.colwise().sum().transpose();
    Mat dctx = dx_mid * blk.wo;

    Mat dq = Mat::Zero(tape.total_rows, d);
    Mat dk = Mat::Zero(tape.total_rows, d);
    Mat dv = Mat::Zero(tape.total_rows, d);
    {
      AttnTimer timer(timing);
      for (size_t b = 0; b < batch.size(); ++b) {
        const SeqLayout& L = tape.layout[b];
        for (int h = 0; h < H; ++h) {
          const Mat& P = bt.attn[b * H + h];
          Mat dctx_h = dctx.block(L.offset, h * dh, L.S, dh);
          Mat Vh = bt.v.block(L.offset, h * dh, L.S, dh);
          Mat dP = dctx_h * Vh.transpose();
          dv.block(L.offset, h * dh, L.S, dh).noalias() = P.transpose() * dctx_h;
          Vec rowdot = (dP.cwiseProduct(P)).rowwise().sum();
          Mat dS = P.cwiseProduct(dP.colwise() - rowdot);
          Mat Qh = bt.q.block(L.offset, h * dh, L.S, dh);
          Mat Kh = bt.k.block(L.offset, h * dh, L.S, dh);
          dq.block(L.offset, h * dh, L.S, dh).noalias() = dS * Kh * scale;
          dk.block(L.offset, h * dh, L.S, dh).noalias() = dS.transpose() * Qh * scale;
        }
      }
    }
    gb.wq.noalias() += dq.transpose() * bt.ln1_out;
    gb.bq += dq.colwise().sum().transpose();
    gb.wk.noalias() += dk.transpose() * bt.ln1_out;
    gb.bk += dk.colwise().sum().transpose();
    gb.wv.noalias() += dv.transpose() * bt.ln1_out;
    gb.bv += dv.colwise().sum().transpose();

    Mat dln1 = dq * blk.wq + dk * blk.wk + dv * blk.wv;
    Mat dx_in;
    layer_norm_backward(dln1, bt.xhat1, bt.rstd1, blk.ln1_g, dx_in, gb.ln1_g, gb.ln1_b);
    dx = dx_mid + dx_in;
  }

  // scatter into embeddings / positions and run the projector backward
  Mat dvis_out(tape.total_visual, d);
  int vrow = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    const SeqLayout& L = tape.layout[b];
    const PolicySample& s = batch[b];
    int r = L.offset;
    grads.embed.row(params.vocab.bos()) += dx.row(r);
    grads.pos.row(0) += dx.row(r);
    for (int j = 0; j < L.J; ++j) {
      grads.embed.row(s.lang[j]) += dx.row(r + 1 + j);
      grads.pos.row(1 + j) += dx.row(r + 1 + j);
    }
    grads.embed.row(params.vocab.sep()) += dx.row(r + 1 + L.J);
    grads.pos.row(1 + L.J) += dx.row(r + 1 + L.J);
    for (int t = 0; t < L.T; ++t) {
      dvis_out.row(vrow + t) = dx.row(r + 2 + L.J + t);
      grads.pos.row(2 + L.J + t) += dx.row(r + 2 + L.J + t);
    }
    for (int t = 0; t < 6; ++t) {
      grads.embed.row(params.vocab.action_base() + s.targets[t]) += dx.row(r + 2 + L.J + L.T + t);
      grads.pos.row(2 + L.J + L.T + t) += dx.row(r + 2 + L.J + L.T + t);
    }
    vrow += L.T;
  }

  grads.proj_w2.noalias() += dvis_out.transpose() * tape.vis_act;
  grads.proj_b2 += dvis_out.colwise().sum().transpose();
  Mat dvis_act = dvis_out * params.proj_w2;
  Mat dvis_pre = dvis_act.cwiseProduct(tape.vis_pre.unaryExpr([](double v) { return nn::gelu_grad(v); }));
  grads.proj_w1.noalias() += dvis_pre.transpose() * tape.visual_in;
  grads.proj_b1 += dvis_pre.colwise().sum().transpose();

  if (dvisual) {
    Mat dvis_in = dvis_pre * params.proj_w1;
    dvisual->clear();
    dvisual->reserve(batch.size());
    vrow = 0;
    for (size_t b = 0; b < batch.size(); ++b) {
      int T = tape.layout[b].T;
      dvisual->push_back(dvis_in.middleRows(vrow, T));
      vrow += T;
    }
  }
  return {ev.loss, ev.accuracy};
}

Mat policy_logits_all(const PolicyParams& params, const PolicySample& sample) {
  ForwardTape tape = run_forward(params, {sample}, nullptr);
  Mat logits = tape.lnf_out * params.head_w.transpose();
  logits.rowwise() += params.head_b.transpose();
  return logits;
}

// --- greedy decoding ----------------------------------------------------------

namespace {

struct DecodeState {
  std::vector<Mat> k, v;  // per block, rows grow as tokens append
  Mat x_rows;             // unused after prefix; kept for clarity
};

int argmax_lowest(const Eigen::RowVectorXd& v) {
  int arg = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(arg)) arg = i;
  return arg;
}

/// Runs rows [start, S) of a single sequence through the blocks, attending
/// over cached keys/values (which already hold rows [0, start)).
Mat extend_sequence(const PolicyParams& p, std::vector<Mat>& kcache, std::vector<Mat>& vcache,
                    const Mat& new_rows, int start) {
  const PolicyConfig& cfg = p.cfg;
  const int d = cfg.width, H = cfg.heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int n = static_cast<int>(new_rows.rows());

  Mat x = new_rows;
  for (int l = 0; l < cfg.layers; ++l) {
    const PolicyParams::Block& blk = p.blocks[l];
    Mat ln1, xhat;
    Vec rstd;
    layer_norm(x, blk.ln1_g, blk.ln1_b, ln1, xhat, rstd);
    Mat q = ln1 * blk.wq.transpose();
    q.rowwise() += blk.bq.transpose();
    Mat k = ln1 * blk.wk.transpose();
    k.rowwise() += blk.bk.transpose();
    Mat v = ln1 * blk.wv.transpose();
    v.rowwise() += blk.bv.transpose();

    kcache[l].conservativeResize(start + n, d);
    vcache[l].conservativeResize(start + n, d);
    kcache[l].bottomRows(n) = k;
    vcache[l].bottomRows(n) = v;

    Mat ctx(n, d);
    for (int h = 0; h < H; ++h) {
      Mat Qh = q.middleCols(h * dh, dh);
      Mat Kh = kcache[l].block(0, h * dh, start + n, dh);
      Mat Vh = vcache[l].block(0, h * dh, start + n, dh);
      Mat scores = Qh * Kh.transpose() * scale;
      for (int i = 0; i < n; ++i)
        for (int j = start + i + 1; j < start + n; ++j) scores(i, j) = -1e30;
      nn::softmax_rows_inplace(scores);
      ctx.middleCols(h * dh, dh).noalias() = scores * Vh;
    }
    Mat attn_out = ctx * blk.wo.transpose();
    attn_out.rowwise() += blk.bo.transpose();
    x += attn_out;

    Mat ln2, xhat2;
    Vec rstd2;
    layer_norm(x, blk.ln2_g, blk.ln2_b, ln2, xhat2, rstd2);
    Mat pre = ln2 * blk.mlp_w1.transpose();
    pre.rowwise() += blk.mlp_b1.transpose();
    Mat act = pre.unaryExpr([](double t) { return nn::gelu(t); });
    Mat mlp_out = act * blk.mlp_w2.transpose();
    mlp_out.rowwise() += blk.mlp_b2.transpose();
    x += mlp_out;
  }
  Mat lnf, xhatf;
  Vec rstdf;
  layer_norm(x, p.lnf_g, p.lnf_b, lnf, xhatf, rstdf);
  return lnf;
}

Mat build_prefix_rows(const PolicyParams& p, const std::vector<int>& lang, const Mat& visual) {
  const int J = static_cast<int>(lang.size());
  const int T = static_cast<int>(visual.rows());
  const int S0 = J + T + 2;
  if (S0 + 7 > p.cfg.max_seq) throw std::length_error("policy: sequence exceeds max_seq");

  Mat vis_pre = visual * p.proj_w1.transpose();
  vis_pre.rowwise() += p.proj_b1.transpose();
  Mat vis_act = vis_pre.unaryExpr([](double t) { return nn::gelu(t); });
  Mat vis_out = vis_act * p.proj_w2.transpose();
  vis_out.rowwise() += p.proj_b2.transpose();

  Mat rows(S0, p.cfg.width);
  rows.row(0) = p.embed.row(p.vocab.bos()) + p.pos.row(0);
  for (int j = 0; j < J; ++j) rows.row(1 + j) = p.embed.row(lang[j]) + p.pos.row(1 + j);
  rows.row(1 + J) = p.embed.row(p.vocab.sep()) + p.pos.row(1 + J);
  for (int t = 0; t < T; ++t) rows.row(2 + J + t) = vis_out.row(t) + p.pos.row(2 + J + t);
  return rows;
}

}  // namespace

Vec policy_next_distribution(const PolicyParams& params, const std::vector<int>& lang, const Mat& visual,
                             const std::vector<int>& decoded_bins) {
  std::vector<Mat> kcache(params.cfg.layers), vcache(params.cfg.layers);
  Mat prefix = build_prefix_rows(params, lang, visual);
  int len = static_cast<int>(prefix.rows());
  Mat extra(static_cast<int>(decoded_bins.size()), params.cfg.width);
  for (size_t i = 0; i < decoded_bins.size(); ++i) {
    extra.row(static_cast<int>(i)) =
        params.embed.row(params.vocab.action_base() + decoded_bins[i]) + params.pos.row(len + static_cast<int>(i));
  }
  Mat all(prefix.rows() + extra.rows(), params.cfg.width);
  all.topRows(prefix.rows()) = prefix;
  if (extra.rows() > 0) all.bottomRows(extra.rows()) = extra;
  Mat lnf = extend_sequence(params, kcache, vcache, all, 0);
  Eigen::RowVectorXd logits = lnf.row(lnf.rows() - 1) * params.head_w.transpose() + params.head_b.transpose();
  Mat m = logits;
  nn::softmax_rows_inplace(m);
  return m.row(0).transpose();
}

std::array<int, 7> policy_greedy_bins(const PolicyParams& params, const std::vector<int>& lang,
                                      const Mat& visual) {
  std::vector<Mat> kcache(params.cfg.layers), vcache(params.cfg.layers);
  Mat prefix = build_prefix_rows(params, lang, visual);
  int len = static_cast<int>(prefix.rows());

  Mat lnf = extend_sequence(params, kcache, vcache, prefix, 0);
  std::array<int, 7> out{};
  for (int t = 0; t < 7; ++t) {
    Eigen::RowVectorXd logits =
        lnf.row(lnf.rows() - 1) * params.head_w.transpose() + params.head_b.transpose();
    out[t] = argmax_lowest(logits);
    if (t == 6) break;
    Mat next(1, params.cfg.width);
    next.row(0) = params.embed.row(params.vocab.action_base() + out[t]) + params.pos.row(len);
    lnf = extend_sequence(params, kcache, vcache, next, len);
    ++len;
  }
  return out;
}

Action predict_action(const PolicyParams& params, const std::string& instruction, const Mat& visual_tokens,
                      const ActionBinning& binning) {
  std::vector<int> lang = params.vocab.encode_instruction(instruction);
  std::array<int, 7> bins = policy_greedy_bins(params, lang, visual_tokens);
  return binning.decode(bins);
}

double action_token_accuracy(const PolicyParams& params, const std::vector<PolicySample>& batch) {
  return policy_forward(params, batch).accuracy;
}

}  // namespace oat
