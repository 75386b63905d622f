#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hexlink/num/ops.hpp"
#include "hexlink/num/params.hpp"

namespace hexlink {

struct EncoderDims {
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t d_head = 64;
  // Side channels fed to the fusion MLP besides R_id (spatial is always one of them).
  std::size_t side_channels = 1;
  std::size_t ffn_mult = 4;
};

// Parameters of one encoder block, owned by a ParamStore under `prefix`.
struct EncoderParams {
  EncoderDims dims;
  num::Param* fuse_w1 = nullptr;  // (1 + side) d x d
  num::Param* fuse_b1 = nullptr;
  num::Param* fuse_w2 = nullptr;  // d x d
  num::Param* fuse_b2 = nullptr;
  num::Param* w_q = nullptr;      // d x heads*d_head, head h owns columns [h*d_head, (h+1)*d_head)
  num::Param* w_k = nullptr;
  num::Param* w_v = nullptr;
  num::Param* w_o = nullptr;      // heads*d_head x d
  num::Param* b_o = nullptr;
  num::Param* ffn_w1 = nullptr;   // d x ffn_mult*d
  num::Param* ffn_b1 = nullptr;
  num::Param* ffn_w2 = nullptr;
  num::Param* ffn_b2 = nullptr;
  num::Param* ln1_gamma = nullptr;
  num::Param* ln1_beta = nullptr;
  num::Param* ln2_gamma = nullptr;
  num::Param* ln2_beta = nullptr;

  static EncoderParams create(num::ParamStore& store, const std::string& prefix, const EncoderDims& dims,
                              std::mt19937_64& rng);
  static EncoderParams attach(num::ParamStore& store, const std::string& prefix, const EncoderDims& dims);
};

struct EncoderVars {
  EncoderDims dims;
  num::Var fuse_w1, fuse_b1, fuse_w2, fuse_b2;
  num::Var w_q, w_k, w_v, w_o, b_o;
  num::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  num::Var ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  static EncoderVars bind(num::Tape& tape, const EncoderParams& params);
};

// true = attendable. Position 0 (CLS) must be attendable.
struct AttentionMask {
  std::vector<bool> attendable;

  static AttentionMask all(std::size_t m) { return {std::vector<bool>(m, true)}; }
  std::size_t size() const { return attendable.size(); }
  // Throws ShapeError when empty, CLS is masked, or nothing is attendable.
  void validate(std::size_t m) const;
};

struct SideChannels {
  std::optional<num::Var> spatial;
  std::optional<num::Var> poi;
  std::optional<num::Var> time;
};

// Intermediate values kept for inspection.
struct AttentionTrace {
  num::Var fused;                  // F
  num::Var values;                 // V for all heads, m x heads*d_head
  std::vector<num::Var> weights;   // per head, m x m
};

// Per head softmax(Q K^T / scale) V with Q, K, V projections of x, heads
// concatenated and projected. scale defaults to sqrt(d_head).
num::Var standard_attention(num::Var x, const EncoderVars& p, const AttentionMask& mask,
                            std::optional<double> scale = std::nullopt, AttentionTrace* trace = nullptr);

// F = MLP(R_id | spatial | poi | time); Q = F W_Q, K = F W_K, V = R_id W_V.
// scale defaults to sqrt(d_model). Throws ChannelError without a spatial channel
// or when the channel count differs from the block's configuration.
num::Var st_nova(num::Var r_id, const SideChannels& side, const EncoderVars& p, const AttentionMask& mask,
                 std::optional<double> scale = std::nullopt, AttentionTrace* trace = nullptr);

// y1 = LN(R_id + st_nova); out = LN(y1 + FFN(y1)).
num::Var encoder_block(num::Var r_id, const SideChannels& side, const EncoderVars& p, const AttentionMask& mask,
                       AttentionTrace* trace = nullptr);

}  // namespace hexlink
