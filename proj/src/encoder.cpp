#include "hexlink/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "hexlink/errors.hpp"

namespace hexlink {

using num::Param;
using num::ParamStore;
using num::Tensor2;
using num::Var;

namespace {

struct Shapes {
  std::size_t fuse_in, d, hd, ffn;
};

Shapes shapes_of(const EncoderDims& d) {
  if (d.d_model == 0 || d.heads == 0 || d.d_head == 0 || d.ffn_mult == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (d.side_channels == 0) throw ChannelError("the spatial channel is mandatory");
  return {(1 + d.side_channels) * d.d_model, d.d_model, d.heads * d.d_head, d.ffn_mult * d.d_model};
}

Tensor2 ones(std::size_t cols) { return Tensor2(1, cols, 1.0); }

}  // namespace

void AttentionMask::validate(std::size_t m) const {
  if (attendable.size() != m) throw ShapeError("attention mask length does not match the sequence");
  if (m == 0) throw ShapeError("empty sequence");
  if (!attendable[0]) throw ShapeError("the CLS position must be attendable");
}

EncoderParams EncoderParams::create(ParamStore& store, const std::string& prefix, const EncoderDims& dims,
                                    std::mt19937_64& rng) {
  const Shapes s = shapes_of(dims);
  EncoderParams p;
  p.dims = dims;
  p.fuse_w1 = &store.add(prefix + ".fuse_w1", num::init_glorot(s.fuse_in, s.d, rng));
  p.fuse_b1 = &store.add(prefix + ".fuse_b1", Tensor2(1, s.d));
  p.fuse_w2 = &store.add(prefix + ".fuse_w2", num::init_glorot(s.d, s.d, rng));
  p.fuse_b2 = &store.add(prefix + ".fuse_b2", Tensor2(1, s.d));
  p.w_q = &store.add(prefix + ".w_q", num::init_glorot(s.d, s.hd, rng));
  p.w_k = &store.add(prefix + ".w_k", num::init_glorot(s.d, s.hd, rng));
  p.w_v = &store.add(prefix + ".w_v", num::init_glorot(s.d, s.hd, rng));
  p.w_o = &store.add(prefix + ".w_o", num::init_glorot(s.hd, s.d, rng));
  p.b_o = &store.add(prefix + ".b_o", Tensor2(1, s.d));
  p.ffn_w1 = &store.add(prefix + ".ffn_w1", num::init_glorot(s.d, s.ffn, rng));
  p.ffn_b1 = &store.add(prefix + ".ffn_b1", Tensor2(1, s.ffn));
  p.ffn_w2 = &store.add(prefix + ".ffn_w2", num::init_glorot(s.ffn, s.d, rng));
  p.ffn_b2 = &store.add(prefix + ".ffn_b2", Tensor2(1, s.d));
  p.ln1_gamma = &store.add(prefix + ".ln1_gamma", ones(s.d));
  p.ln1_beta = &store.add(prefix + ".ln1_beta", Tensor2(1, s.d));
  p.ln2_gamma = &store.add(prefix + ".ln2_gamma", ones(s.d));
  p.ln2_beta = &store.add(prefix + ".ln2_beta", Tensor2(1, s.d));
  return p;
}

EncoderParams EncoderParams::attach(ParamStore& store, const std::string& prefix, const EncoderDims& dims) {
  const Shapes s = shapes_of(dims);
  EncoderParams p;
  p.dims = dims;
  auto get = [&](const char* name, std::size_t rows, std::size_t cols) {
    Param& q = store.get(prefix + "." + name);
    if (q.value().rows() != rows || q.value().cols() != cols) {
      throw ShapeError("parameter " + q.name() + " has shape " + q.value().shape_str());
    }
    return &q;
  };
  p.fuse_w1 = get("fuse_w1", s.fuse_in, s.d);
  p.fuse_b1 = get("fuse_b1", 1, s.d);
  p.fuse_w2 = get("fuse_w2", s.d, s.d);
  p.fuse_b2 = get("fuse_b2", 1, s.d);
  p.w_q = get("w_q", s.d, s.hd);
  p.w_k = get("w_k", s.d, s.hd);
  p.w_v = get("w_v", s.d, s.hd);
  p.w_o = get("w_o", s.hd, s.d);
  p.b_o = get("b_o", 1, s.d);
  p.ffn_w1 = get("ffn_w1", s.d, s.ffn);
  p.ffn_b1 = get("ffn_b1", 1, s.ffn);
  p.ffn_w2 = get("ffn_w2", s.ffn, s.d);
  p.ffn_b2 = get("ffn_b2", 1, s.d);
  p.ln1_gamma = get("ln1_gamma", 1, s.d);
  p.ln1_beta = get("ln1_beta", 1, s.d);
  p.ln2_gamma = get("ln2_gamma", 1, s.d);
  p.ln2_beta = get("ln2_beta", 1, s.d);
  return p;
}

EncoderVars EncoderVars::bind(num::Tape& tape, const EncoderParams& p) {
  EncoderVars v;
  v.dims = p.dims;
  v.fuse_w1 = tape.param(*p.fuse_w1);
  v.fuse_b1 = tape.param(*p.fuse_b1);
  v.fuse_w2 = tape.param(*p.fuse_w2);
  v.fuse_b2 = tape.param(*p.fuse_b2);
  v.w_q = tape.param(*p.w_q);
  v.w_k = tape.param(*p.w_k);
  v.w_v = tape.param(*p.w_v);
  v.w_o = tape.param(*p.w_o);
  v.b_o = tape.param(*p.b_o);
  v.ffn_w1 = tape.param(*p.ffn_w1);
  v.ffn_b1 = tape.param(*p.ffn_b1);
  v.ffn_w2 = tape.param(*p.ffn_w2);
  v.ffn_b2 = tape.param(*p.ffn_b2);
  v.ln1_gamma = tape.param(*p.ln1_gamma);
  v.ln1_beta = tape.param(*p.ln1_beta);
  v.ln2_gamma = tape.param(*p.ln2_gamma);
  v.ln2_beta = tape.param(*p.ln2_beta);
  return v;
}

namespace {

Var multi_head(Var q, Var k, Var v, const EncoderVars& p, const AttentionMask& mask, double scale,
               AttentionTrace* trace) {
  mask.validate(q.rows());
  if (!(scale > 0.0)) throw ConfigError("attention scale must be positive");
  const std::size_t dh = p.dims.d_head;
  std::vector<Var> heads;
  heads.reserve(p.dims.heads);
  if (trace) {
    trace->values = v;
    trace->weights.clear();
  }
  for (std::size_t h = 0; h < p.dims.heads; ++h) {
    Var qh = num::slice_cols(q, h * dh, dh);
    Var kh = num::slice_cols(k, h * dh, dh);
    Var vh = num::slice_cols(v, h * dh, dh);
    Var w = num::masked_softmax_rows(num::scale(num::matmul_nt(qh, kh), 1.0 / scale), mask.attendable);
    if (trace) trace->weights.push_back(w);
    heads.push_back(num::matmul(w, vh));
  }
  Var cat = heads.size() == 1 ? heads[0] : num::concat_cols(heads);
  return num::add_bias(num::matmul(cat, p.w_o), p.b_o);
}

}  // namespace

Var standard_attention(Var x, const EncoderVars& p, const AttentionMask& mask, std::optional<double> scale,
                       AttentionTrace* trace) {
  if (x.cols() != p.dims.d_model) throw ShapeError("attention input has " + std::to_string(x.cols()) + " columns");
  const double s = scale.value_or(std::sqrt(static_cast<double>(p.dims.d_head)));
  if (trace) trace->fused = x;
  return multi_head(num::matmul(x, p.w_q), num::matmul(x, p.w_k), num::matmul(x, p.w_v), p, mask, s, trace);
}

Var st_nova(Var r_id, const SideChannels& side, const EncoderVars& p, const AttentionMask& mask,
            std::optional<double> scale, AttentionTrace* trace) {
  if (!side.spatial) throw ChannelError("ST-NOVA needs the spatial channel");
  std::vector<Var> parts{r_id, *side.spatial};
  if (side.poi) parts.push_back(*side.poi);
  if (side.time) parts.push_back(*side.time);
  if (parts.size() - 1 != p.dims.side_channels) {
    throw ChannelError("encoder expects " + std::to_string(p.dims.side_channels) + " side channels, got " +
                       std::to_string(parts.size() - 1));
  }
  for (const Var& part : parts) {
    if (part.rows() != r_id.rows() || part.cols() != p.dims.d_model) {
      throw ShapeError("side channel shape " + part.value().shape_str() + " does not match R_id " +
                       r_id.value().shape_str());
    }
  }
  Var hidden = num::relu(num::add_bias(num::matmul(num::concat_cols(parts), p.fuse_w1), p.fuse_b1));
  Var fused = num::add_bias(num::matmul(hidden, p.fuse_w2), p.fuse_b2);
  if (trace) trace->fused = fused;
  const double s = scale.value_or(std::sqrt(static_cast<double>(p.dims.d_model)));
  return multi_head(num::matmul(fused, p.w_q), num::matmul(fused, p.w_k), num::matmul(r_id, p.w_v), p, mask, s,
                    trace);
}

Var encoder_block(Var r_id, const SideChannels& side, const EncoderVars& p, const AttentionMask& mask,
                  AttentionTrace* trace) {
  Var y1 = num::layer_norm_rows(num::add(r_id, st_nova(r_id, side, p, mask, std::nullopt, trace)), p.ln1_gamma,
                                p.ln1_beta);
  Var hidden = num::relu(num::add_bias(num::matmul(y1, p.ffn_w1), p.ffn_b1));
  Var ffn = num::add_bias(num::matmul(hidden, p.ffn_w2), p.ffn_b2);
  return num::layer_norm_rows(num::add(y1, ffn), p.ln2_gamma, p.ln2_beta);
}

}  // namespace hexlink
