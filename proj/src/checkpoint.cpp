#include "oat/checkpoint.hpp"

#include "oat/binio.hpp"

namespace oat {

const char* mask_source_name(MaskSource m) { return m == MaskSource::Oracle ? "oracle" : "unsupervised"; }

const char* keypoint_source_name(KeypointSource k) {
  switch (k) {
    case KeypointSource::Heuristic: return "heuristic";
    case KeypointSource::Learned: return "learned";
    case KeypointSource::Oracle: return "oracle";
  }
  return "?";
}

MaskSource mask_source_from_name(const std::string& s) {
  if (s == "oracle") return MaskSource::Oracle;
  if (s == "unsupervised") return MaskSource::Unsupervised;
  throw DataError("unknown mask source: " + s);
}

KeypointSource keypoint_source_from_name(const std::string& s) {
  if (s == "heuristic") return KeypointSource::Heuristic;
  if (s == "learned") return KeypointSource::Learned;
  if (s == "oracle") return KeypointSource::Oracle;
  throw DataError("unknown keypoint source: " + s);
}

namespace {

constexpr char kMagic[8] = {'O', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

enum Tag : uint32_t { kTagTok = 1, kTagEnc = 2, kTagPool = 3, kTagPolicy = 4, kTagBins = 5, kTagTrain = 6 };

void write_section(BinWriter& out, uint32_t tag, const BinWriter& payload) {
  out.u32(tag);
  out.u64(payload.buffer().size());
  out.raw(payload.buffer().data(), payload.buffer().size());
}

void write_encoder(BinWriter& w, const EncoderParams& e) {
  w.u8(static_cast<uint8_t>(e.mode));
  w.u32(static_cast<uint32_t>(e.patch_size));
  w.u32(static_cast<uint32_t>(e.dim));
  w.u32(static_cast<uint32_t>(e.hidden));
  w.mat(e.w0);
  w.vec(e.b0);
  w.mat(e.w1);
  w.vec(e.b1);
}

EncoderParams read_encoder(BinReader& r) {
  EncoderParams e;
  e.mode = static_cast<EncoderMode>(r.u8());
  e.patch_size = static_cast<int>(r.u32());
  e.dim = static_cast<int>(r.u32());
  e.hidden = static_cast<int>(r.u32());
  e.w0 = r.mat();
  e.b0 = r.vec();
  e.w1 = r.mat();
  e.b1 = r.vec();
  return e;
}

void write_policy(BinWriter& w, const PolicyParams& p) {
  w.u32(static_cast<uint32_t>(p.cfg.width));
  w.u32(static_cast<uint32_t>(p.cfg.layers));
  w.u32(static_cast<uint32_t>(p.cfg.heads));
  w.u32(static_cast<uint32_t>(p.cfg.bins));
  w.u32(static_cast<uint32_t>(p.cfg.visual_dim));
  w.u32(static_cast<uint32_t>(p.cfg.mlp_mult));
  w.u32(static_cast<uint32_t>(p.cfg.max_seq));
  w.u32(static_cast<uint32_t>(p.vocab.words.size()));
  for (const auto& word : p.vocab.words) w.str(word);
  w.mat(p.embed);
  w.mat(p.pos);
  w.mat(p.proj_w1);
  w.vec(p.proj_b1);
  w.mat(p.proj_w2);
  w.vec(p.proj_b2);
  for (const auto& b : p.blocks) {
    w.mat(b.wq);
    w.vec(b.bq);
    w.mat(b.wk);
    w.vec(b.bk);
    w.mat(b.wv);
    w.vec(b.bv);
    w.mat(b.wo);
    w.vec(b.bo);
    w.vec(b.ln1_g);
    w.vec(b.ln1_b);
    w.vec(b.ln2_g);
    w.vec(b.ln2_b);
    w.mat(b.mlp_w1);
    w.vec(b.mlp_b1);
    w.mat(b.mlp_w2);
    w.vec(b.mlp_b2);
  }
  w.vec(p.lnf_g);
  w.vec(p.lnf_b);
  w.mat(p.head_w);
  w.vec(p.head_b);
}

PolicyParams read_policy(BinReader& r) {
  PolicyParams p;
  p.cfg.width = static_cast<int>(r.u32());
  p.cfg.layers = static_cast<int>(r.u32());
  p.cfg.heads = static_cast<int>(r.u32());
  p.cfg.bins = static_cast<int>(r.u32());
  p.cfg.visual_dim = static_cast<int>(r.u32());
  p.cfg.mlp_mult = static_cast<int>(r.u32());
  p.cfg.max_seq = static_cast<int>(r.u32());
  uint32_t n_words = r.u32();
  p.vocab.words.resize(n_words);
  for (auto& word : p.vocab.words) word = r.str();
  p.vocab.bins = p.cfg.bins;
  p.embed = r.mat();
  p.pos = r.mat();
  p.proj_w1 = r.mat();
  p.proj_b1 = r.vec();
  p.proj_w2 = r.mat();
  p.proj_b2 = r.vec();
  p.blocks.resize(p.cfg.layers);
  for (auto& b : p.blocks) {
    b.wq = r.mat();
    b.bq = r.vec();
    b.wk = r.mat();
    b.bk = r.vec();
    b.wv = r.mat();
    b.bv = r.vec();
    b.wo = r.mat();
    b.bo = r.vec();
    b.ln1_g = r.vec();
    b.ln1_b = r.vec();
    b.ln2_g = r.vec();
    b.ln2_b = r.vec();
    b.mlp_w1 = r.mat();
    b.mlp_b1 = r.vec();
    b.mlp_w2 = r.mat();
    b.mlp_b2 = r.vec();
  }
  p.lnf_g = r.vec();
  p.lnf_b = r.vec();
  p.head_w = r.mat();
  p.head_b = r.vec();
  return p;
}

}  // namespace

void save_bundle(const std::string& path, const PolicyBundle& bundle, const TrainState* state) {
  BinWriter out;
  out.raw(kMagic, sizeof(kMagic));
  out.u32(kVersion);

  {
    BinWriter w;
    w.u8(static_cast<uint8_t>(bundle.tok.mode));
    w.u32(static_cast<uint32_t>(bundle.tok.n_slots));
    w.u32(static_cast<uint32_t>(bundle.tok.agent_grid));
    w.u8(static_cast<uint8_t>(bundle.tok.pool));
    w.u8(static_cast<uint8_t>(bundle.mask_source));
    w.u8(static_cast<uint8_t>(bundle.kp_source));
    write_section(out, kTagTok, w);
  }
  {
    BinWriter w;
    write_encoder(w, bundle.encoder);
    write_section(out, kTagEnc, w);
  }
  if (bundle.pool) {
    BinWriter w;
    w.mat(bundle.pool->queries);
    w.mat(bundle.pool->key_w);
    write_section(out, kTagPool, w);
  }
  {
    BinWriter w;
    write_policy(w, bundle.policy);
    write_section(out, kTagPolicy, w);
  }
  {
    BinWriter w;
    w.u32(static_cast<uint32_t>(bundle.binning.bins));
    w.u8(bundle.binning.fitted ? 1 : 0);
    for (int d = 0; d < 7; ++d) {
      w.f64(bundle.binning.lo[d]);
      w.f64(bundle.binning.hi[d]);
    }
    write_section(out, kTagBins, w);
  }
  if (state) {
    BinWriter w;
    w.i64(state->step);
    w.str(state->data_rng);
    w.i64(state->adam_t);
    w.dvec(state->adam_m);
    w.dvec(state->adam_v);
    write_section(out, kTagTrain, w);
  }
  out.write_file(path);
}

PolicyBundle load_bundle(const std::string& path, TrainState* state) {
  std::string data = BinReader::slurp(path);
  BinReader r(data.data(), data.size(), path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a policy checkpoint: " + path);
  if (r.u32() != kVersion) throw DataError("unsupported checkpoint version: " + path);

  PolicyBundle b;
  bool have_tok = false, have_enc = false, have_policy = false, have_bins = false;
  while (r.remaining() > 0) {
    uint32_t tag = r.u32();
    uint64_t size = r.u64();
    size_t start = r.pos();
    switch (tag) {
      case kTagTok: {
        b.tok.mode = static_cast<TokenizerMode>(r.u8());
        b.tok.n_slots = static_cast<int>(r.u32());
        b.tok.agent_grid = static_cast<int>(r.u32());
        b.tok.pool = static_cast<PoolKind>(r.u8());
        b.mask_source = static_cast<MaskSource>(r.u8());
        b.kp_source = static_cast<KeypointSource>(r.u8());
        have_tok = true;
        break;
      }
      case kTagEnc:
        b.encoder = read_encoder(r);
        have_enc = true;
        break;
      case kTagPool: {
        AttentionPoolParams p;
        p.queries = r.mat();
        p.key_w = r.mat();
        b.pool = std::move(p);
        break;
      }
      case kTagPolicy:
        b.policy = read_policy(r);
        have_policy = true;
        break;
      case kTagBins: {
        b.binning.bins = static_cast<int>(r.u32());
        b.binning.fitted = r.u8() != 0;
        for (int d = 0; d < 7; ++d) {
          b.binning.lo[d] = r.f64();
          b.binning.hi[d] = r.f64();
        }
        have_bins = true;
        break;
      }
      case kTagTrain: {
        TrainState ts;
        ts.step = r.i64();
        ts.data_rng = r.str();
        ts.adam_t = r.i64();
        ts.adam_m = r.dvec();
        ts.adam_v = r.dvec();
        if (state) *state = std::move(ts);
        break;
      }
      default:
        throw DataError("unknown checkpoint section tag in " + path);
    }
    if (r.pos() != start + size) throw DataError("checkpoint section size mismatch in " + path);
  }
  if (!have_tok || !have_enc || !have_policy || !have_bins) throw DataError("incomplete checkpoint: " + path);
  return b;
}

}  // namespace oat
