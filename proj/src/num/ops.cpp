#include "hexlink/num/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hexlink/errors.hpp"

namespace hexlink::num {

namespace {

void require(bool ok, const char* op, const Tensor2& a, const Tensor2& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

// Row-wise softmax restricted to attendable columns (all when mask empty).
Tensor2 softmax_forward(const Tensor2& x, const std::vector<bool>* mask) {
  Tensor2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < xr.size(); ++j) {
      if (!mask || (*mask)[j]) mx = std::max(mx, xr[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < xr.size(); ++j) {
      if (mask && !(*mask)[j]) continue;
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (double& v : yr) v /= sum;
  }
  return y;
}

std::function<void(Tape&, std::uint32_t)> softmax_backward(std::uint32_t a) {
  return [a](Tape& t, std::uint32_t self) {
    if (!t.requires_grad(a)) return;
    const Tensor2& y = t.value(self);
    const Tensor2& gy = t.grad(self);
    Tensor2& ga = t.grad(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto yr = y.row(i);
      auto gr = gy.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto out = ga.row(i);
      for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (gr[j] - dot);
    }
  };
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  require(a.cols() == b.rows(), "matmul", a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return t.record("matmul", matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    if (t.requires_grad(ia)) add_inplace(t.grad(ia), matmul_nt(g, t.value(ib)));
    if (t.requires_grad(ib)) add_inplace(t.grad(ib), matmul_tn(t.value(ia), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = a.tape();
  require(a.cols() == b.cols(), "matmul_nt", a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return t.record("matmul_nt", matmul_nt(a.value(), b.value()), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    if (t.requires_grad(ia)) add_inplace(t.grad(ia), matmul(g, t.value(ib)));
    if (t.requires_grad(ib)) add_inplace(t.grad(ib), matmul_tn(g, t.value(ia)));
  });
}

Var add(Var a, Var b) {
  Tape& t = a.tape();
  require(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor2 out = a.value();
  add_inplace(out, b.value());
  const auto ia = a.id(), ib = b.id();
  return t.record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t self) {
    if (t.requires_grad(ia)) add_inplace(t.grad(ia), t.grad(self));
    if (t.requires_grad(ib)) add_inplace(t.grad(ib), t.grad(self));
  });
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("add_n of nothing");
  Tape& t = xs.front().tape();
  Tensor2 out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    require(out.same_shape(xs[i].value()), "add_n", out, xs[i].value());
    add_inplace(out, xs[i].value());
  }
  std::vector<std::uint32_t> ids;
  for (const Var& v : xs) ids.push_back(v.id());
  return t.record("add_n", std::move(out), xs, [ids](Tape& t, std::uint32_t self) {
    for (auto id : ids) {
      if (t.requires_grad(id)) add_inplace(t.grad(id), t.grad(self));
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  Tensor2 out = a.value();
  for (double& v : out.values()) v *= s;
  const auto ia = a.id();
  return t.record("scale", std::move(out), {a}, [ia, s](Tape& t, std::uint32_t self) {
    add_inplace(t.grad(ia), t.grad(self), s);
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = a.tape();
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias", a.value(), bias.value());
  Tensor2 out = a.value();
  const Tensor2& b = bias.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  const auto ia = a.id(), ib = bias.id();
  return t.record("add_bias", std::move(out), {a, bias}, [ia, ib](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    if (t.requires_grad(ia)) add_inplace(t.grad(ia), g);
    if (t.requires_grad(ib)) {
      Tensor2& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
      }
    }
  });
}

Var relu(Var a) {
  Tape& t = a.tape();
  Tensor2 out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const auto ia = a.id();
  return t.record("relu", std::move(out), {a}, [ia](Tape& t, std::uint32_t self) {
    const Tensor2& x = t.value(ia);
    const Tensor2& g = t.grad(self);
    Tensor2& ga = t.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Tensor2 out(rows, cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& v = p.value();
    for (std::size_t i = 0; i < rows; ++i) std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  return t.record("concat_cols", std::move(out), parts, [ids, offsets](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor2& gp = t.grad(ids[k]);
      for (std::size_t i = 0; i < gp.rows(); ++i) {
        auto src = g.row(i).subspan(offsets[k], gp.cols());
        auto dst = gp.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& t = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  std::vector<double> vals;
  vals.reserve(rows * cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto v = p.value().values();
    vals.insert(vals.end(), v.begin(), v.end());
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.size();
  }
  return t.record("concat_rows", Tensor2(rows, cols, std::move(vals)), parts,
                  [ids, offsets](Tape& t, std::uint32_t self) {
                    const Tensor2& g = t.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!t.requires_grad(ids[k])) continue;
                      Tensor2& gp = t.grad(ids[k]);
                      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
                    }
                  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& t = a.tape();
  if (start + count > a.cols()) throw ShapeError("slice_cols beyond " + a.value().shape_str());
  const Tensor2& v = a.value();
  Tensor2 out(v.rows(), count);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    auto src = v.row(i).subspan(start, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const auto ia = a.id();
  return t.record("slice_cols", std::move(out), {a}, [ia, start](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    Tensor2& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto dst = ga.row(i).subspan(start, g.cols());
      auto src = g.row(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var gather_rows(Var table, std::span<const long> index) {
  Tape& t = table.tape();
  const Tensor2& tab = table.value();
  Tensor2 out(index.size(), tab.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const long k = index[i];
    if (k < -1 || k >= static_cast<long>(tab.rows())) {
      throw ShapeError("gather_rows index " + std::to_string(k) + " outside " + tab.shape_str());
    }
    if (k >= 0) std::copy(tab.row(static_cast<std::size_t>(k)).begin(), tab.row(static_cast<std::size_t>(k)).end(), out.row(i).begin());
  }
  const auto it = table.id();
  std::vector<long> idx(index.begin(), index.end());
  return t.record("gather_rows", std::move(out), {table}, [it, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    Tensor2& gt = t.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) continue;
      auto dst = gt.row(static_cast<std::size_t>(idx[i]));
      auto src = g.row(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var softmax_rows(Var a) {
  Tape& t = a.tape();
  return t.record("softmax_rows", softmax_forward(a.value(), nullptr), {a}, softmax_backward(a.id()));
}

Var masked_softmax_rows(Var a, const std::vector<bool>& attendable) {
  Tape& t = a.tape();
  if (attendable.size() != a.cols()) throw ShapeError("attention mask length does not match " + a.value().shape_str());
  if (std::none_of(attendable.begin(), attendable.end(), [](bool b) { return b; })) {
    throw ShapeError("attention mask has no attendable position");
  }
  return t.record("masked_softmax_rows", softmax_forward(a.value(), &attendable), {a}, softmax_backward(a.id()));
}

Var layer_norm_rows(Var a, Var gamma, Var beta, double eps) {
  Tape& t = a.tape();
  const Tensor2& x = a.value();
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm gamma", x, gamma.value());
  require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm beta", x, beta.value());
  const std::size_t n = x.cols();
  Tensor2 xhat(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  Tensor2 out(x.rows(), n);
  const Tensor2& g = gamma.value();
  const Tensor2& b = beta.value();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xr[j] - mean) * inv_std[i];
      out(i, j) = g[j] * xhat(i, j) + b[j];
    }
  }
  const auto ia = a.id(), ig = gamma.id(), ib = beta.id();
  return t.record("layer_norm_rows", std::move(out), {a, gamma, beta},
                  [ia, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
                    const Tensor2& gy = t.grad(self);
                    const Tensor2& gam = t.value(ig);
                    const std::size_t n = gy.cols();
                    if (t.requires_grad(ig) || t.requires_grad(ib)) {
                      for (std::size_t i = 0; i < gy.rows(); ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          if (t.requires_grad(ig)) t.grad(ig)[j] += gy(i, j) * xhat(i, j);
                          if (t.requires_grad(ib)) t.grad(ib)[j] += gy(i, j);
                        }
                      }
                    }
                    if (!t.requires_grad(ia)) return;
                    Tensor2& ga = t.grad(ia);
                    std::vector<double> dxhat(n);
                    for (std::size_t i = 0; i < gy.rows(); ++i) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        dxhat[j] = gy(i, j) * gam[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat(i, j);
                      }
                      mean_d /= static_cast<double>(n);
                      mean_dx /= static_cast<double>(n);
                      for (std::size_t j = 0; j < n; ++j) {
                        ga(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                      }
                    }
                  });
}

Var spmm(const SparseMatrix& sparse, Var h) {
  Tape& t = h.tape();
  const auto ih = h.id();
  const SparseMatrix* sp = &sparse;
  return t.record("spmm", sparse.multiply(h.value()), {h}, [ih, sp](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    Tensor2& gh = t.grad(ih);
    // gh += sparse^T * g, scattered through the stored entries only.
    for (std::size_t r = 0; r < sp->rows(); ++r) {
      auto src = g.row(r);
      for (std::size_t k = sp->row_begin(r); k < sp->row_end(r); ++k) {
        const double v = sp->value(k);
        auto dst = gh.row(sp->col_index(k));
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += v * src[j];
      }
    }
  });
}

Var temporal_encoding(Var freqs, std::span<const double> times) {
  Tape& t = freqs.tape();
  if (freqs.rows() != 1) throw ShapeError("temporal frequencies must be a row vector, got " + freqs.value().shape_str());
  const Tensor2& w = freqs.value();
  const std::size_t pairs = w.cols();
  Tensor2 out(times.size(), 2 * pairs);
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t k = 0; k < pairs; ++k) {
      out(i, 2 * k) = std::sin(w[k] * times[i]);
      out(i, 2 * k + 1) = std::cos(w[k] * times[i]);
    }
  }
  const auto iw = freqs.id();
  std::vector<double> ts(times.begin(), times.end());
  return t.record("temporal_encoding", std::move(out), {freqs}, [iw, ts = std::move(ts)](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    const Tensor2& w = t.value(iw);
    Tensor2& gw = t.grad(iw);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      for (std::size_t k = 0; k < w.cols(); ++k) {
        const double arg = w[k] * ts[i];
        gw[k] += ts[i] * (g(i, 2 * k) * std::cos(arg) - g(i, 2 * k + 1) * std::sin(arg));
      }
    }
  });
}

Var mean_rows(Var a, std::span<const std::size_t> rows) {
  Tape& t = a.tape();
  if (rows.empty()) throw ShapeError("mean over zero rows");
  const Tensor2& v = a.value();
  Tensor2 out(1, v.cols());
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    if (r >= v.rows()) throw ShapeError("mean_rows index outside " + v.shape_str());
    auto src = v.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) out[j] += inv * src[j];
  }
  const auto ia = a.id();
  std::vector<std::size_t> rs(rows.begin(), rows.end());
  return t.record("mean_rows", std::move(out), {a}, [ia, rs = std::move(rs), inv](Tape& t, std::uint32_t self) {
    const Tensor2& g = t.grad(self);
    Tensor2& ga = t.grad(ia);
    for (std::size_t r : rs) {
      auto dst = ga.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += inv * g[j];
    }
  });
}

Var sum_all(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return t.record("sum_all", Tensor2(1, 1, s), {a}, [ia](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ia).values()) v += g;
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const double> weights) {
  Tape& t = logits.tape();
  const Tensor2& x = logits.value();
  if (targets.size() != x.rows() || weights.size() != x.rows()) {
    throw ShapeError("cross entropy: " + std::to_string(targets.size()) + " targets for logits " + x.shape_str());
  }
  if (x.rows() == 0) throw ShapeError("cross entropy over zero rows");
  Tensor2 probs = softmax_forward(x, nullptr);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (targets[i] >= x.cols()) throw ShapeError("cross entropy target outside " + x.shape_str());
    auto xr = x.row(i);
    double mx = *std::max_element(xr.begin(), xr.end());
    double sum = 0.0;
    for (double v : xr) sum += std::exp(v - mx);
    const double nll = -(xr[targets[i]] - mx - std::log(sum));
    loss += weights[i] * nll;
  }
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  const auto il = logits.id();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  return t.record("softmax_cross_entropy", Tensor2(1, 1, loss * inv_n), {logits},
                  [il, tg = std::move(tg), wt = std::move(wt), probs = std::move(probs), inv_n](Tape& t, std::uint32_t self) {
                    const double g = t.grad(self)[0];
                    Tensor2& gl = t.grad(il);
                    for (std::size_t i = 0; i < probs.rows(); ++i) {
                      const double c = g * wt[i] * inv_n;
                      auto pr = probs.row(i);
                      auto dst = gl.row(i);
                      for (std::size_t j = 0; j < pr.size(); ++j) dst[j] += c * pr[j];
                      dst[tg[i]] -= c;
                    }
                  });
}

}  // namespace hexlink::num
