#include <cmath>
#include <random>

#include "doctest.h"
#include "hexlink/encoder.hpp"
#include "hexlink/errors.hpp"
#include "hexlink/num/grad_check.hpp"
#include "support.hpp"

using namespace hexlink;
using namespace hexlink::num;

namespace {

struct Block {
  ParamStore store;
  EncoderParams params;
  explicit Block(const EncoderDims& dims, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    params = EncoderParams::create(store, "enc", dims, rng);
    // Non-trivial biases and norms so that the oracles exercise them.
    for (Param* p : {params.fuse_b1, params.fuse_b2, params.b_o, params.ffn_b1, params.ffn_b2, params.ln1_beta,
                     params.ln2_beta}) {
      p->value() = testing::random_tensor(1, p->value().cols(), rng, -0.2, 0.2);
    }
  }
};

EncoderDims dims(std::size_t d, std::size_t heads, std::size_t d_head, std::size_t side = 1) {
  EncoderDims e;
  e.d_model = d;
  e.heads = heads;
  e.d_head = d_head;
  e.side_channels = side;
  return e;
}

Tensor2 add_row(Tensor2 x, const Tensor2& b) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += b(0, j);
  }
  return x;
}

Tensor2 relu_dense(Tensor2 x) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::max(0.0, x[i]);
  return x;
}

Tensor2 cols(const Tensor2& x, std::size_t start, std::size_t n) {
  Tensor2 out(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = x(i, start + j);
  }
  return out;
}

Tensor2 hcat(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

// Plain re-implementation of the ST-NOVA layer with one spatial channel.
Tensor2 st_nova_oracle(const Tensor2& r, const Tensor2& s, const EncoderParams& p, double scale) {
  const Tensor2 hidden = relu_dense(add_row(matmul(hcat(r, s), p.fuse_w1->value()), p.fuse_b1->value()));
  const Tensor2 f = add_row(matmul(hidden, p.fuse_w2->value()), p.fuse_b2->value());
  const Tensor2 q = matmul(f, p.w_q->value());
  const Tensor2 k = matmul(f, p.w_k->value());
  const Tensor2 v = matmul(r, p.w_v->value());
  const std::size_t m = r.rows();
  const std::size_t dh = p.dims.d_head;
  Tensor2 cat(m, p.dims.heads * dh);
  for (std::size_t h = 0; h < p.dims.heads; ++h) {
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> e(m);
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        double dotp = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dotp += q(i, h * dh + c) * k(j, h * dh + c);
        e[j] = std::exp(dotp / scale);
        z += e[j];
      }
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += e[j] / z * v(j, h * dh + c);
        cat(i, h * dh + c) = acc;
      }
    }
  }
  return add_row(matmul(cat, p.w_o->value()), p.b_o->value());
}

}  // namespace

TEST_CASE("single token attends to itself") {
  Block b(dims(6, 2, 3));
  std::mt19937_64 rng(2);
  Tape t;
  const EncoderVars v = EncoderVars::bind(t, b.params);
  const Tensor2 r = testing::random_tensor(1, 6, rng);
  AttentionTrace trace;
  const Var out = st_nova(t.constant(r), {t.constant(testing::random_tensor(1, 6, rng)), {}, {}}, v,
                          AttentionMask::all(1), std::nullopt, &trace);
  for (const Var& w : trace.weights) CHECK(w.value()(0, 0) == 1.0);
  const Tensor2 want = add_row(matmul(matmul(r, b.params.w_v->value()), b.params.w_o->value()), b.params.b_o->value());
  CHECK(max_abs_diff(out.value(), want) < 1e-14);
}

TEST_CASE("identical tokens get uniform attention") {
  Block b(dims(6, 3, 2));
  std::mt19937_64 rng(3);
  const Tensor2 r = testing::random_tensor(1, 6, rng);
  const Tensor2 s = testing::random_tensor(1, 6, rng);
  Tensor2 rr(4, 6);
  Tensor2 ss(4, 6);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      rr(i, j) = r(0, j);
      ss(i, j) = s(0, j);
    }
  }
  Tape t;
  AttentionTrace trace;
  st_nova(t.constant(rr), {t.constant(ss), {}, {}}, EncoderVars::bind(t, b.params), AttentionMask::all(4),
          std::nullopt, &trace);
  REQUIRE(trace.weights.size() == 3);
  for (const Var& w : trace.weights) {
    for (std::size_t i = 0; i < w.value().size(); ++i) CHECK(std::abs(w.value()[i] - 0.25) < 1e-15);
  }
}

TEST_CASE("ST-NOVA matches a hand-written oracle") {
  std::mt19937_64 rng(4);
  for (std::size_t m : {2u, 3u}) {
    Block b(dims(8, 2, 4), 10 + m);
    const Tensor2 r = testing::random_tensor(m, 8, rng);
    const Tensor2 s = testing::random_tensor(m, 8, rng);
    Tape t;
    const EncoderVars v = EncoderVars::bind(t, b.params);
    const Var got = st_nova(t.constant(r), {t.constant(s), {}, {}}, v, AttentionMask::all(m));
    CHECK(max_abs_diff(got.value(), st_nova_oracle(r, s, b.params, std::sqrt(8.0))) < 1e-12);
    const Var custom = st_nova(t.constant(r), {t.constant(s), {}, {}}, v, AttentionMask::all(m), 0.7);
    CHECK(max_abs_diff(custom.value(), st_nova_oracle(r, s, b.params, 0.7)) < 1e-12);
  }
}

TEST_CASE("identity fusion reduces ST-NOVA to standard attention") {
  const std::size_t d = 8;
  const double big = 10.0;
  Block b(dims(d, 2, 4), 5);
  Tensor2 w1(2 * d, d);
  for (std::size_t i = 0; i < d; ++i) w1(i, i) = 1.0;
  b.params.fuse_w1->value() = w1;
  b.params.fuse_b1->value() = Tensor2(1, d, big);
  b.params.fuse_w2->value() = Tensor2::identity(d);
  b.params.fuse_b2->value() = Tensor2(1, d, -big);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 r = testing::random_tensor(5, d, rng);
    Tape t;
    const EncoderVars v = EncoderVars::bind(t, b.params);
    const Var x = t.constant(r);
    const double scale = std::sqrt(4.0);
    const Var nova = st_nova(x, {t.constant(testing::random_tensor(5, d, rng, -3.0, 3.0)), {}, {}}, v,
                             AttentionMask::all(5), scale);
    const Var plain = standard_attention(x, v, AttentionMask::all(5));
    CHECK(max_abs_diff(nova.value(), plain.value()) < 1e-9);
  }
}

TEST_CASE("values do not depend on the side channels") {
  Block b(dims(6, 2, 3));
  std::mt19937_64 rng(7);
  const Tensor2 r = testing::random_tensor(4, 6, rng);
  Tape t;
  const EncoderVars v = EncoderVars::bind(t, b.params);
  AttentionTrace t1;
  AttentionTrace t2;
  st_nova(t.constant(r), {t.constant(testing::random_tensor(4, 6, rng)), {}, {}}, v, AttentionMask::all(4),
          std::nullopt, &t1);
  st_nova(t.constant(r), {t.constant(testing::random_tensor(4, 6, rng)), {}, {}}, v, AttentionMask::all(4),
          std::nullopt, &t2);
  CHECK(t1.values.value() == t2.values.value());
  CHECK(t1.weights[0].value() != t2.weights[0].value());
  CHECK(t1.fused.value() != t2.fused.value());
}

TEST_CASE("a zero feed-forward leaves the block at the second norm of the first") {
  Block b(dims(6, 2, 3));
  for (Param* p : {b.params.ffn_w1, b.params.ffn_b1, b.params.ffn_w2, b.params.ffn_b2}) p->value().fill(0.0);
  std::mt19937_64 rng(8);
  const Tensor2 r = testing::random_tensor(3, 6, rng);
  const Tensor2 s = testing::random_tensor(3, 6, rng);
  Tape t;
  const EncoderVars v = EncoderVars::bind(t, b.params);
  const Var out = encoder_block(t.constant(r), {t.constant(s), {}, {}}, v, AttentionMask::all(3));
  const Tensor2 att = st_nova_oracle(r, s, b.params, std::sqrt(6.0));
  Tensor2 sum = r;
  add_inplace(sum, att);
  const Var y1 = layer_norm_rows(t.constant(sum), t.constant(b.params.ln1_gamma->value()),
                                 t.constant(b.params.ln1_beta->value()));
  const Var want = layer_norm_rows(y1, t.constant(b.params.ln2_gamma->value()), t.constant(b.params.ln2_beta->value()));
  CHECK(max_abs_diff(out.value(), want.value()) < 1e-12);
}

TEST_CASE("masked positions do not influence the others") {
  Block b(dims(6, 2, 3, 2));
  std::mt19937_64 rng(9);
  const Tensor2 r = testing::random_tensor(3, 6, rng);
  const Tensor2 s = testing::random_tensor(3, 6, rng);
  const Tensor2 p = testing::random_tensor(3, 6, rng);
  auto padded = [&](const Tensor2& x) {
    Tensor2 out(5, 6);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 6; ++j) out(i, j) = x(i, j);
    }
    for (std::size_t i = 3; i < 5; ++i) {
      for (std::size_t j = 0; j < 6; ++j) out(i, j) = 5.0 * std::sin(static_cast<double>(7 * i + j));
    }
    return out;
  };
  Tape t;
  const EncoderVars v = EncoderVars::bind(t, b.params);
  const Var short_out = encoder_block(t.constant(r), {t.constant(s), t.constant(p), {}}, v, AttentionMask::all(3));
  const AttentionMask mask{{true, true, true, false, false}};
  const Var long_out = encoder_block(t.constant(padded(r)), {t.constant(padded(s)), t.constant(padded(p)), {}}, v, mask);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(long_out.value()(i, j) - short_out.value()(i, j)) < 1e-12);
  }
}

TEST_CASE("encoder block gradients") {
  Block b(dims(4, 2, 2, 2), 11);
  std::mt19937_64 rng(12);
  ParamStore inputs;
  Param& r = inputs.add("r", testing::random_tensor(3, 4, rng));
  Param& s = inputs.add("s", testing::random_tensor(3, 4, rng));
  Param& tm = inputs.add("t", testing::random_tensor(3, 4, rng));
  const Tensor2 k = testing::random_tensor(2, 4, rng);
  auto loss = [&](Tape& t) {
    const EncoderVars v = EncoderVars::bind(t, b.params);
    const Var out = encoder_block(t.param(r), {t.param(s), {}, t.param(tm)}, v, AttentionMask{{true, true, false}});
    return sum_all(matmul_nt(out, t.constant(k)));
  };
  std::vector<Param*> params = b.store.all();
  params.push_back(&r);
  params.push_back(&s);
  params.push_back(&tm);
  GradCheckOptions o;
  o.tol = 1e-4;
  const auto report = grad_check(loss, params, o);
  for (const auto& p : report.params) {
    INFO(p.name);
    CHECK(p.max_rel_error < 1e-4);
  }
  CHECK(report.passed);
}

TEST_CASE("channel and mask validation") {
  Block b(dims(4, 1, 4, 2));
  Tape t;
  const EncoderVars v = EncoderVars::bind(t, b.params);
  const Var x = t.constant(Tensor2(2, 4, 0.1));
  CHECK_THROWS_AS(st_nova(x, {std::nullopt, x, std::nullopt}, v, AttentionMask::all(2)), ChannelError);
  CHECK_THROWS_AS(st_nova(x, {x, std::nullopt, std::nullopt}, v, AttentionMask::all(2)), ChannelError);
  CHECK_THROWS_AS(st_nova(x, {x, x, x}, v, AttentionMask::all(2)), ChannelError);
  CHECK_NOTHROW(st_nova(x, {x, x, std::nullopt}, v, AttentionMask::all(2)));
  CHECK_THROWS_AS(st_nova(x, {x, t.constant(Tensor2(3, 4)), std::nullopt}, v, AttentionMask::all(2)), ShapeError);
  CHECK_THROWS_AS(st_nova(x, {x, x, std::nullopt}, v, AttentionMask{{false, true}}), ShapeError);
  CHECK_THROWS_AS(st_nova(x, {x, x, std::nullopt}, v, AttentionMask::all(3)), ShapeError);

  ParamStore copy;
  copy.load_json(b.store.to_json());
  CHECK_NOTHROW(EncoderParams::attach(copy, "enc", dims(4, 1, 4, 2)));
  CHECK_THROWS_AS(EncoderParams::attach(copy, "enc", dims(4, 1, 4, 1)), ShapeError);
}
