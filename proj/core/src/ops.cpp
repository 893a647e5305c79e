#include "fosnet/ops.hpp"

#include <cmath>
#include <cstring>

namespace fosnet {

namespace {

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T softplus(T x) {
    return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

// Copies x [B,H,W,C] into a zero-filled [B,H+2p,W+2p,C] buffer.
template <typename T>
TensorT<T> pad_spatial(const TensorT<T>& x, std::size_t p) {
    if (p == 0) return x;
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
    TensorT<T> out({B, H + 2 * p, W + 2 * p, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            std::memcpy(&out(b, h + p, p, std::size_t(0)), &x(b, h, std::size_t(0), std::size_t(0)),
                        W * C * sizeof(T));
    return out;
}

// Adds the interior of gxp [B,H+2p,W+2p,C] into gx [B,H,W,C].
template <typename T>
void unpad_accumulate(const TensorT<T>& gxp, std::size_t p, TensorT<T>& gx) {
    const std::size_t B = gx.extent(0), H = gx.extent(1), W = gx.extent(2), C = gx.extent(3);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) {
            const T* src = &gxp(b, h + p, p, std::size_t(0));
            T* dst = &gx(b, h, std::size_t(0), std::size_t(0));
            for (std::size_t i = 0; i < W * C; ++i) dst[i] += src[i];
        }
}

template <typename T>
void conv_forward_kernel(const TensorT<T>& xp, const TensorT<T>& w, const TensorT<T>& bias,
                         const T* scl, std::size_t stride, TensorT<T>& out) {
    const std::size_t B = xp.extent(0), Ci = xp.extent(3);
    const std::size_t kh = w.extent(0), kw = w.extent(1), Co = w.extent(3);
    const std::size_t Ho = out.extent(1), Wo = out.extent(2);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow) {
                T* acc = &out(b, oh, ow, std::size_t(0));
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        const T* xv = &xp(b, oh * stride + i, ow * stride + j, std::size_t(0));
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            const T xc = xv[ci];
                            const T* wrow = &w(i, j, ci, std::size_t(0));
                            for (std::size_t co = 0; co < Co; ++co) acc[co] += xc * wrow[co];
                        }
                    }
                if (scl) {
                    const T s = scl[oh * Wo + ow];
                    for (std::size_t co = 0; co < Co; ++co) acc[co] *= s;
                }
                const T* bp = bias.data();
                for (std::size_t co = 0; co < Co; ++co) acc[co] += bp[co];
            }
}

template <typename T>
void conv_backward_kernel(const TensorT<T>& xp, const TensorT<T>& w, const T* scl,
                          std::size_t stride, const TensorT<T>& gout, TensorT<T>* gxp,
                          TensorT<T>* gw, TensorT<T>* gb) {
    const std::size_t B = xp.extent(0), Ci = xp.extent(3);
    const std::size_t kh = w.extent(0), kw = w.extent(1), Co = w.extent(3);
    const std::size_t Ho = gout.extent(1), Wo = gout.extent(2);
    std::vector<T> gscaled(Co);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow) {
                const T* go = &gout(b, oh, ow, std::size_t(0));
                if (gb) {
                    T* gbp = gb->data();
                    for (std::size_t co = 0; co < Co; ++co) gbp[co] += go[co];
                }
                const T s = scl ? scl[oh * Wo + ow] : T(1);
                for (std::size_t co = 0; co < Co; ++co) gscaled[co] = go[co] * s;
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        const std::size_t ih = oh * stride + i, jw = ow * stride + j;
                        if (gxp) {
                            T* gxv = &(*gxp)(b, ih, jw, std::size_t(0));
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                                const T* wrow = &w(i, j, ci, std::size_t(0));
                                T acc = T(0);
                                for (std::size_t co = 0; co < Co; ++co)
                                    acc += wrow[co] * gscaled[co];
                                gxv[ci] += acc;
                            }
                        }
                        if (gw) {
                            const T* xv = &xp(b, ih, jw, std::size_t(0));
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                                const T xc = xv[ci];
                                T* gwrow = &(*gw)(i, j, ci, std::size_t(0));
                                for (std::size_t co = 0; co < Co; ++co)
                                    gwrow[co] += xc * gscaled[co];
                            }
                        }
                    }
            }
}

template <typename T>
ValueT<T> conv2d_impl(const char* op, ValueT<T> x, ValueT<T> w, ValueT<T> bias,
                      std::size_t stride, std::size_t pad, TensorT<T> scl) {
    const TensorT<T>& tx = x.value();
    const TensorT<T>& tw = w.value();
    const TensorT<T>& tb = bias.value();
    if (tx.rank() != 4 || tw.rank() != 4)
        throw ShapeError(std::string(op) + ": expected rank-4 input/weights, got " +
                         shape_str(tx.shape()) + " and " + shape_str(tw.shape()));
    if (tx.extent(3) != tw.extent(2))
        throw ShapeError(std::string(op) + ": channel-count mismatch, input " +
                         shape_str(tx.shape()) + " vs weights " + shape_str(tw.shape()));
    if (tb.rank() != 1 || tb.extent(0) != tw.extent(3))
        throw ShapeError(std::string(op) + ": bias shape " + shape_str(tb.shape()) +
                         " does not match " + std::to_string(tw.extent(3)) + " output channels");
    if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    const std::size_t B = tx.extent(0), H = tx.extent(1), W = tx.extent(2);
    const std::size_t kh = tw.extent(0), kw = tw.extent(1), Co = tw.extent(3);
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ShapeError(std::string(op) + ": kernel " + shape_str(tw.shape()) +
                         " larger than padded input " + shape_str(tx.shape()));
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (!scl.empty() && (scl.rank() != 2 || scl.extent(0) != Ho || scl.extent(1) != Wo))
        throw ShapeError(std::string(op) + ": scale mask " + shape_str(scl.shape()) +
                         " does not match output grid [" + std::to_string(Ho) + "," +
                         std::to_string(Wo) + "]");

    TensorT<T> xp = pad_spatial(tx, pad);
    TensorT<T> out({B, Ho, Wo, Co});
    conv_forward_kernel(xp, tw, tb, scl.empty() ? nullptr : scl.data(), stride, out);

    return x.tape->record(
        op, std::move(out), {x, w, bias},
        [xid = x.id, wid = w.id, bid = bias.id, stride, pad, xp = std::move(xp),
         scl = std::move(scl)](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& go = t.grad_of(self);
            const TensorT<T>& tw = t.value_of(wid);
            const bool wx = t.wants_grad(xid), ww = t.wants_grad(wid), wb = t.wants_grad(bid);
            TensorT<T> gxp;
            if (wx) gxp = TensorT<T>(xp.shape());
            conv_backward_kernel(xp, tw, scl.empty() ? nullptr : scl.data(), stride, go,
                                 wx ? &gxp : nullptr, ww ? &t.grad_buffer(wid) : nullptr,
                                 wb ? &t.grad_buffer(bid) : nullptr);
            if (wx) {
                if (pad == 0)
                    accumulate(t.grad_buffer(xid), gxp);
                else
                    unpad_accumulate(gxp, pad, t.grad_buffer(xid));
            }
        });
}

}  // namespace

template <typename T>
ValueT<T> add(ValueT<T> a, ValueT<T> b) {
    const TensorT<T>&ta = a.value(), &tb = b.value();
    check_same_shape("add", ta, tb);
    TensorT<T> out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
    return a.tape->record("add", std::move(out), {a, b},
                          [aid = a.id, bid = b.id](TapeT<T>& t, std::uint32_t self) {
                              const TensorT<T>& g = t.grad_of(self);
                              if (t.wants_grad(aid)) accumulate(t.grad_buffer(aid), g);
                              if (t.wants_grad(bid)) accumulate(t.grad_buffer(bid), g);
                          });
}

template <typename T>
ValueT<T> sub(ValueT<T> a, ValueT<T> b) {
    const TensorT<T>&ta = a.value(), &tb = b.value();
    check_same_shape("sub", ta, tb);
    TensorT<T> out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
    return a.tape->record("sub", std::move(out), {a, b},
                          [aid = a.id, bid = b.id](TapeT<T>& t, std::uint32_t self) {
                              const TensorT<T>& g = t.grad_of(self);
                              if (t.wants_grad(aid)) accumulate(t.grad_buffer(aid), g);
                              if (t.wants_grad(bid)) {
                                  TensorT<T>& gb = t.grad_buffer(bid);
                                  for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                              }
                          });
}

template <typename T>
ValueT<T> mul(ValueT<T> a, ValueT<T> b) {
    const TensorT<T>&ta = a.value(), &tb = b.value();
    check_same_shape("mul", ta, tb);
    TensorT<T> out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
    return a.tape->record("mul", std::move(out), {a, b},
                          [aid = a.id, bid = b.id](TapeT<T>& t, std::uint32_t self) {
                              const TensorT<T>& g = t.grad_of(self);
                              const TensorT<T>&va = t.value_of(aid), &vb = t.value_of(bid);
                              if (t.wants_grad(aid)) {
                                  TensorT<T>& ga = t.grad_buffer(aid);
                                  for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
                              }
                              if (t.wants_grad(bid)) {
                                  TensorT<T>& gb = t.grad_buffer(bid);
                                  for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
                              }
                          });
}

template <typename T>
ValueT<T> scale(ValueT<T> a, T k) {
    const TensorT<T>& ta = a.value();
    TensorT<T> out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * k;
    return a.tape->record("scale", std::move(out), {a},
                          [aid = a.id, k](TapeT<T>& t, std::uint32_t self) {
                              if (!t.wants_grad(aid)) return;
                              const TensorT<T>& g = t.grad_of(self);
                              TensorT<T>& ga = t.grad_buffer(aid);
                              for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * k;
                          });
}

template <typename T>
ValueT<T> relu(ValueT<T> a) {
    const TensorT<T>& ta = a.value();
    TensorT<T> out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] > T(0) ? ta[i] : T(0);
    return a.tape->record("relu", std::move(out), {a},
                          [aid = a.id](TapeT<T>& t, std::uint32_t self) {
                              if (!t.wants_grad(aid)) return;
                              const TensorT<T>& g = t.grad_of(self);
                              const TensorT<T>& va = t.value_of(aid);
                              TensorT<T>& ga = t.grad_buffer(aid);
                              for (std::size_t i = 0; i < g.numel(); ++i)
                                  if (va[i] > T(0)) ga[i] += g[i];
                          });
}

template <typename T>
ValueT<T> sigmoid(ValueT<T> a) {
    const TensorT<T>& ta = a.value();
    TensorT<T> out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(ta[i]);
    return a.tape->record("sigmoid", std::move(out), {a},
                          [aid = a.id](TapeT<T>& t, std::uint32_t self) {
                              if (!t.wants_grad(aid)) return;
                              const TensorT<T>& g = t.grad_of(self);
                              const TensorT<T>& s = t.value_of(self);
                              TensorT<T>& ga = t.grad_buffer(aid);
                              for (std::size_t i = 0; i < g.numel(); ++i)
                                  ga[i] += g[i] * s[i] * (T(1) - s[i]);
                          });
}

template <typename T>
ValueT<T> sum(ValueT<T> a) {
    const TensorT<T>& ta = a.value();
    T acc = T(0);
    for (std::size_t i = 0; i < ta.numel(); ++i) acc += ta[i];
    return a.tape->record("sum", TensorT<T>::scalar(acc), {a},
                          [aid = a.id](TapeT<T>& t, std::uint32_t self) {
                              if (!t.wants_grad(aid)) return;
                              const T g = t.grad_of(self)[0];
                              TensorT<T>& ga = t.grad_buffer(aid);
                              for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
                          });
}

template <typename T>
ValueT<T> reshape(ValueT<T> a, Shape shape) {
    const TensorT<T>& ta = a.value();
    if (shape_numel(shape) != ta.numel())
        throw ShapeError("reshape: cannot view " + shape_str(ta.shape()) + " as " +
                         shape_str(shape));
    TensorT<T> out(std::move(shape), ta.vec());
    return a.tape->record("reshape", std::move(out), {a},
                          [aid = a.id](TapeT<T>& t, std::uint32_t self) {
                              if (!t.wants_grad(aid)) return;
                              const TensorT<T>& g = t.grad_of(self);
                              TensorT<T>& ga = t.grad_buffer(aid);
                              for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                          });
}

template <typename T>
ValueT<T> concat_last(ValueT<T> a, ValueT<T> b) {
    const TensorT<T>&ta = a.value(), &tb = b.value();
    if (ta.rank() != tb.rank() || ta.rank() == 0)
        throw ShapeError("concat: rank mismatch " + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
    Shape shape = ta.shape();
    const std::size_t last = ta.rank() - 1;
    for (std::size_t i = 0; i + 1 < ta.rank(); ++i)
        if (ta.extent(i) != tb.extent(i))
            throw ShapeError("concat: shape mismatch " + shape_str(ta.shape()) + " vs " +
                             shape_str(tb.shape()));
    const std::size_t da = ta.extent(last), db = tb.extent(last);
    shape[last] = da + db;
    const std::size_t rows = ta.numel() / da;
    TensorT<T> out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        T* dst = out.data() + r * (da + db);
        std::memcpy(dst, ta.data() + r * da, da * sizeof(T));
        std::memcpy(dst + da, tb.data() + r * db, db * sizeof(T));
    }
    return a.tape->record(
        "concat", std::move(out), {a, b},
        [aid = a.id, bid = b.id, rows, da, db](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& g = t.grad_of(self);
            if (t.wants_grad(aid)) {
                TensorT<T>& ga = t.grad_buffer(aid);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < da; ++i)
                        ga[r * da + i] += g[r * (da + db) + i];
            }
            if (t.wants_grad(bid)) {
                TensorT<T>& gb = t.grad_buffer(bid);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < db; ++i)
                        gb[r * db + i] += g[r * (da + db) + da + i];
            }
        });
}

template <typename T>
ValueT<T> add_bias(ValueT<T> x, ValueT<T> b) {
    const TensorT<T>&tx = x.value(), &tb = b.value();
    if (tb.rank() != 1 || tx.rank() == 0 || tx.extent(tx.rank() - 1) != tb.extent(0))
        throw ShapeError("add_bias: bias " + shape_str(tb.shape()) +
                         " does not match trailing axis of " + shape_str(tx.shape()));
    const std::size_t d = tb.extent(0);
    TensorT<T> out(tx.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = tx[i] + tb[i % d];
    return x.tape->record("add_bias", std::move(out), {x, b},
                          [xid = x.id, bid = b.id, d](TapeT<T>& t, std::uint32_t self) {
                              const TensorT<T>& g = t.grad_of(self);
                              if (t.wants_grad(xid)) accumulate(t.grad_buffer(xid), g);
                              if (t.wants_grad(bid)) {
                                  TensorT<T>& gb = t.grad_buffer(bid);
                                  for (std::size_t i = 0; i < g.numel(); ++i) gb[i % d] += g[i];
                              }
                          });
}

template <typename T>
ValueT<T> matmul(ValueT<T> a, ValueT<T> b) {
    const TensorT<T>&ta = a.value(), &tb = b.value();
    if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape()) + " and " +
                         shape_str(tb.shape()));
    const std::size_t n = ta.extent(0), k = ta.extent(1), m = tb.extent(1);
    TensorT<T> out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const T av = ta(i, l);
            const T* brow = &tb(l, std::size_t(0));
            T* orow = &out(i, std::size_t(0));
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    return a.tape->record(
        "matmul", std::move(out), {a, b},
        [aid = a.id, bid = b.id, n, k, m](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& g = t.grad_of(self);
            const TensorT<T>&va = t.value_of(aid), &vb = t.value_of(bid);
            if (t.wants_grad(aid)) {
                TensorT<T>& ga = t.grad_buffer(aid);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        T acc = T(0);
                        for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * vb(l, j);
                        ga(i, l) += acc;
                    }
            }
            if (t.wants_grad(bid)) {
                TensorT<T>& gb = t.grad_buffer(bid);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        const T av = va(i, l);
                        for (std::size_t j = 0; j < m; ++j) gb(l, j) += av * g(i, j);
                    }
            }
        });
}

template <typename T>
ValueT<T> linear(ValueT<T> x, ValueT<T> w) {
    const TensorT<T>&tx = x.value(), &tw = w.value();
    if (tx.rank() != 2 || tw.rank() != 2 || tx.extent(1) != tw.extent(1))
        throw ShapeError("linear: incompatible shapes " + shape_str(tx.shape()) +
                         " and weights " + shape_str(tw.shape()));
    const std::size_t B = tx.extent(0), D = tx.extent(1), C = tw.extent(0);
    TensorT<T> out({B, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* xr = &tx(b, std::size_t(0));
            const T* wr = &tw(c, std::size_t(0));
            T acc = T(0);
            for (std::size_t d = 0; d < D; ++d) acc += xr[d] * wr[d];
            out(b, c) = acc;
        }
    return x.tape->record(
        "linear", std::move(out), {x, w},
        [xid = x.id, wid = w.id, B, D, C](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& g = t.grad_of(self);
            const TensorT<T>&vx = t.value_of(xid), &vw = t.value_of(wid);
            if (t.wants_grad(xid)) {
                TensorT<T>& gx = t.grad_buffer(xid);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T gv = g(b, c);
                        const T* wr = &vw(c, std::size_t(0));
                        T* gxr = &gx(b, std::size_t(0));
                        for (std::size_t d = 0; d < D; ++d) gxr[d] += gv * wr[d];
                    }
            }
            if (t.wants_grad(wid)) {
                TensorT<T>& gw = t.grad_buffer(wid);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T gv = g(b, c);
                        const T* xr = &vx(b, std::size_t(0));
                        T* gwr = &gw(c, std::size_t(0));
                        for (std::size_t d = 0; d < D; ++d) gwr[d] += gv * xr[d];
                    }
            }
        });
}

template <typename T>
ValueT<T> conv2d(ValueT<T> x, ValueT<T> w, ValueT<T> bias, std::size_t stride, std::size_t pad) {
    return conv2d_impl("conv2d", x, w, bias, stride, pad, TensorT<T>());
}

template <typename T>
ValueT<T> partial_conv2d(ValueT<T> x, ValueT<T> w, ValueT<T> bias, std::size_t stride,
                         std::size_t pad, const TensorT<T>& scl) {
    if (scl.empty()) throw ShapeError("partial_conv2d: empty scale mask");
    return conv2d_impl("partial_conv2d", x, w, bias, stride, pad, scl);
}

template <typename T>
ValueT<T> conv1x1(ValueT<T> x, ValueT<T> w, ValueT<T> bias) {
    const TensorT<T>&tx = x.value(), &tw = w.value(), &tb = bias.value();
    if (tx.rank() != 4 || tw.rank() != 2 || tx.extent(3) != tw.extent(1))
        throw ShapeError("conv1x1: input " + shape_str(tx.shape()) + " vs weights " +
                         shape_str(tw.shape()));
    if (tb.rank() != 1 || tb.extent(0) != tw.extent(0))
        throw ShapeError("conv1x1: bias " + shape_str(tb.shape()) + " vs weights " +
                         shape_str(tw.shape()));
    const std::size_t cells = tx.extent(0) * tx.extent(1) * tx.extent(2);
    const std::size_t D = tx.extent(3), C = tw.extent(0);
    TensorT<T> out({tx.extent(0), tx.extent(1), tx.extent(2), C});
    for (std::size_t r = 0; r < cells; ++r) {
        const T* xr = tx.data() + r * D;
        T* orow = out.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) {
            const T* wr = &tw(c, std::size_t(0));
            T acc = tb[c];
            for (std::size_t d = 0; d < D; ++d) acc += wr[d] * xr[d];
            orow[c] = acc;
        }
    }
    return x.tape->record(
        "conv1x1", std::move(out), {x, w, bias},
        [xid = x.id, wid = w.id, bid = bias.id, cells, D, C](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& g = t.grad_of(self);
            const TensorT<T>&vx = t.value_of(xid), &vw = t.value_of(wid);
            if (t.wants_grad(xid)) {
                TensorT<T>& gx = t.grad_buffer(xid);
                for (std::size_t r = 0; r < cells; ++r) {
                    const T* gr = g.data() + r * C;
                    T* gxr = gx.data() + r * D;
                    for (std::size_t c = 0; c < C; ++c) {
                        const T gv = gr[c];
                        const T* wr = &vw(c, std::size_t(0));
                        for (std::size_t d = 0; d < D; ++d) gxr[d] += gv * wr[d];
                    }
                }
            }
            if (t.wants_grad(wid)) {
                TensorT<T>& gw = t.grad_buffer(wid);
                for (std::size_t r = 0; r < cells; ++r) {
                    const T* gr = g.data() + r * C;
                    const T* xr = vx.data() + r * D;
                    for (std::size_t c = 0; c < C; ++c) {
                        const T gv = gr[c];
                        T* gwr = &gw(c, std::size_t(0));
                        for (std::size_t d = 0; d < D; ++d) gwr[d] += gv * xr[d];
                    }
                }
            }
            if (t.wants_grad(bid)) {
                TensorT<T>& gb = t.grad_buffer(bid);
                for (std::size_t r = 0; r < cells; ++r) {
                    const T* gr = g.data() + r * C;
                    for (std::size_t c = 0; c < C; ++c) gb[c] += gr[c];
                }
            }
        });
}

template <typename T>
ValueT<T> global_avg_pool(ValueT<T> x) {
    const TensorT<T>& tx = x.value();
    if (tx.rank() != 4)
        throw ShapeError("global_avg_pool: expected [B,N,M,D], got " + shape_str(tx.shape()));
    const std::size_t B = tx.extent(0), cells = tx.extent(1) * tx.extent(2), D = tx.extent(3);
    if (cells == 0) throw ShapeError("global_avg_pool: empty grid");
    TensorT<T> out({B, D});
    const T inv = T(1) / static_cast<T>(cells);
    for (std::size_t b = 0; b < B; ++b) {
        T* orow = &out(b, std::size_t(0));
        for (std::size_t r = 0; r < cells; ++r) {
            const T* xr = tx.data() + (b * cells + r) * D;
            for (std::size_t d = 0; d < D; ++d) orow[d] += xr[d];
        }
        for (std::size_t d = 0; d < D; ++d) orow[d] *= inv;
    }
    return x.tape->record("global_avg_pool", std::move(out), {x},
                          [xid = x.id, B, cells, D, inv](TapeT<T>& t, std::uint32_t self) {
                              if (!t.wants_grad(xid)) return;
                              const TensorT<T>& g = t.grad_of(self);
                              TensorT<T>& gx = t.grad_buffer(xid);
                              for (std::size_t b = 0; b < B; ++b) {
                                  const T* gr = &g(b, std::size_t(0));
                                  for (std::size_t r = 0; r < cells; ++r) {
                                      T* gxr = gx.data() + (b * cells + r) * D;
                                      for (std::size_t d = 0; d < D; ++d) gxr[d] += gr[d] * inv;
                                  }
                              }
                          });
}

namespace {

template <typename T>
void check_bn_shapes(const char* op, const TensorT<T>& x, const TensorT<T>& gamma,
                     const TensorT<T>& beta) {
    if (x.rank() != 2 && x.rank() != 4)
        throw ShapeError(std::string(op) + ": expected [B,D] or [B,N,M,D], got " +
                         shape_str(x.shape()));
    const std::size_t D = x.extent(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.extent(0) != D || !gamma.same_shape(beta))
        throw ShapeError(std::string(op) + ": gamma/beta " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + std::to_string(D) +
                         " channels");
}

}  // namespace

template <typename T>
BatchNormOut<T> batch_norm_train(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta, T eps) {
    const TensorT<T>& tx = x.value();
    check_bn_shapes("batch_norm", tx, gamma.value(), beta.value());
    const std::size_t D = tx.extent(tx.rank() - 1);
    const std::size_t R = tx.numel() / D;
    if (R < 2)
        throw ShapeError("batch_norm: training mode needs >= 2 values per channel, got " +
                         std::to_string(R));
    const T invR = T(1) / static_cast<T>(R);

    TensorT<T> mean({D}), var({D});
    for (std::size_t r = 0; r < R; ++r) {
        const T* xr = tx.data() + r * D;
        for (std::size_t d = 0; d < D; ++d) mean[d] += xr[d];
    }
    for (std::size_t d = 0; d < D; ++d) mean[d] *= invR;
    for (std::size_t r = 0; r < R; ++r) {
        const T* xr = tx.data() + r * D;
        for (std::size_t d = 0; d < D; ++d) {
            const T c = xr[d] - mean[d];
            var[d] += c * c;
        }
    }
    for (std::size_t d = 0; d < D; ++d) var[d] *= invR;

    TensorT<T> inv_std({D});
    for (std::size_t d = 0; d < D; ++d) inv_std[d] = T(1) / std::sqrt(var[d] + eps);

    const TensorT<T>&tg = gamma.value(), &tbeta = beta.value();
    TensorT<T> xhat(tx.shape()), out(tx.shape());
    for (std::size_t r = 0; r < R; ++r) {
        const T* xr = tx.data() + r * D;
        T* hr = xhat.data() + r * D;
        T* orow = out.data() + r * D;
        for (std::size_t d = 0; d < D; ++d) {
            hr[d] = (xr[d] - mean[d]) * inv_std[d];
            orow[d] = tg[d] * hr[d] + tbeta[d];
        }
    }

    ValueT<T> y = x.tape->record(
        "batch_norm", std::move(out), {x, gamma, beta},
        [xid = x.id, gid = gamma.id, bid = beta.id, xhat = std::move(xhat),
         inv_std = std::move(inv_std), R, D, invR](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& g = t.grad_of(self);
            const TensorT<T>& vgamma = t.value_of(gid);
            if (t.wants_grad(bid)) {
                TensorT<T>& gb = t.grad_buffer(bid);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d) gb[d] += gr[d];
                }
            }
            if (t.wants_grad(gid)) {
                TensorT<T>& gg = t.grad_buffer(gid);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    const T* hr = xhat.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d) gg[d] += gr[d] * hr[d];
                }
            }
            if (t.wants_grad(xid)) {
                // dx = inv_std * gamma * (gy - mean(gy) - xhat * mean(gy*xhat))
                TensorT<T> sum_g({D}), sum_gh({D});
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    const T* hr = xhat.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d) {
                        sum_g[d] += gr[d];
                        sum_gh[d] += gr[d] * hr[d];
                    }
                }
                TensorT<T>& gx = t.grad_buffer(xid);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    const T* hr = xhat.data() + r * D;
                    T* gxr = gx.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d)
                        gxr[d] += vgamma[d] * inv_std[d] *
                                  (gr[d] - sum_g[d] * invR - hr[d] * sum_gh[d] * invR);
                }
            }
        });
    return {y, std::move(mean), std::move(var)};
}

template <typename T>
ValueT<T> batch_norm_eval(ValueT<T> x, ValueT<T> gamma, ValueT<T> beta,
                          const TensorT<T>& running_mean, const TensorT<T>& running_var, T eps) {
    const TensorT<T>& tx = x.value();
    check_bn_shapes("batch_norm_eval", tx, gamma.value(), beta.value());
    const std::size_t D = tx.extent(tx.rank() - 1);
    if (running_mean.numel() != D || running_var.numel() != D)
        throw ShapeError("batch_norm_eval: running stats do not match " + std::to_string(D) +
                         " channels");
    const std::size_t R = tx.numel() / D;
    TensorT<T> inv_std({D});
    for (std::size_t d = 0; d < D; ++d) inv_std[d] = T(1) / std::sqrt(running_var[d] + eps);

    const TensorT<T>&tg = gamma.value(), &tbeta = beta.value();
    TensorT<T> xn(tx.shape()), out(tx.shape());
    for (std::size_t r = 0; r < R; ++r) {
        const T* xr = tx.data() + r * D;
        T* nr = xn.data() + r * D;
        T* orow = out.data() + r * D;
        for (std::size_t d = 0; d < D; ++d) {
            nr[d] = (xr[d] - running_mean[d]) * inv_std[d];
            orow[d] = tg[d] * nr[d] + tbeta[d];
        }
    }
    return x.tape->record(
        "batch_norm_eval", std::move(out), {x, gamma, beta},
        [xid = x.id, gid = gamma.id, bid = beta.id, xn = std::move(xn),
         inv_std = std::move(inv_std), R, D](TapeT<T>& t, std::uint32_t self) {
            const TensorT<T>& g = t.grad_of(self);
            const TensorT<T>& vgamma = t.value_of(gid);
            if (t.wants_grad(bid)) {
                TensorT<T>& gb = t.grad_buffer(bid);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d) gb[d] += gr[d];
                }
            }
            if (t.wants_grad(gid)) {
                TensorT<T>& gg = t.grad_buffer(gid);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    const T* nr = xn.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d) gg[d] += gr[d] * nr[d];
                }
            }
            if (t.wants_grad(xid)) {
                TensorT<T>& gx = t.grad_buffer(xid);
                for (std::size_t r = 0; r < R; ++r) {
                    const T* gr = g.data() + r * D;
                    T* gxr = gx.data() + r * D;
                    for (std::size_t d = 0; d < D; ++d)
                        gxr[d] += gr[d] * vgamma[d] * inv_std[d];
                }
            }
        });
}

template <typename T>
ValueT<T> softmax_cross_entropy(ValueT<T> logits, const TensorT<T>& targets) {
    const TensorT<T>& tx = logits.value();
    if (tx.rank() != 2)
        throw ShapeError("softmax_cross_entropy: expected [B,C] logits, got " +
                         shape_str(tx.shape()));
    check_same_shape("softmax_cross_entropy", tx, targets);
    const std::size_t B = tx.extent(0), C = tx.extent(1);
    TensorT<T> probs({B, C});
    T loss = T(0);
    for (std::size_t b = 0; b < B; ++b) {
        const T* o = &tx(b, std::size_t(0));
        T m = o[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, o[c]);
        T z = T(0);
        for (std::size_t c = 0; c < C; ++c) z += std::exp(o[c] - m);
        const T lse = m + std::log(z);
        T* pr = &probs(b, std::size_t(0));
        T dot = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            pr[c] = std::exp(o[c] - m) / z;
            dot += targets(b, c) * o[c];
        }
        loss += lse - dot;
    }
    loss /= static_cast<T>(B);
    return logits.tape->record(
        "softmax_cross_entropy", TensorT<T>::scalar(loss), {logits},
        [xid = logits.id, probs = std::move(probs), targets, B, C](TapeT<T>& t,
                                                                  std::uint32_t self) {
            if (!t.wants_grad(xid)) return;
            const T g = t.grad_of(self)[0] / static_cast<T>(B);
            TensorT<T>& gx = t.grad_buffer(xid);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    gx(b, c) += g * (probs(b, c) - targets(b, c));
        });
}

template <typename T>
ValueT<T> sigmoid_bce(ValueT<T> logits, const TensorT<T>& targets) {
    const TensorT<T>& tx = logits.value();
    check_same_shape("sigmoid_bce", tx, targets);
    const std::size_t n = tx.numel();
    if (n == 0) throw ShapeError("sigmoid_bce: empty input");
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i)
        loss += softplus(tx[i]) - targets[i] * tx[i];
    loss /= static_cast<T>(n);
    return logits.tape->record(
        "sigmoid_bce", TensorT<T>::scalar(loss), {logits},
        [xid = logits.id, targets, n](TapeT<T>& t, std::uint32_t self) {
            if (!t.wants_grad(xid)) return;
            const T g = t.grad_of(self)[0] / static_cast<T>(n);
            const TensorT<T>& vx = t.value_of(xid);
            TensorT<T>& gx = t.grad_buffer(xid);
            for (std::size_t i = 0; i < n; ++i)
                gx[i] += g * (stable_sigmoid(vx[i]) - targets[i]);
        });
}

template <typename T>
ValueT<T> scene_coherence(ValueT<T> grid) {
    const TensorT<T>& tg = grid.value();
    if (tg.rank() != 3 && tg.rank() != 4)
        throw ShapeError("scene_coherence: expected [N,M,C] or [B,N,M,C], got " +
                         shape_str(tg.shape()));
    const bool batched = tg.rank() == 4;
    const std::size_t B = batched ? tg.extent(0) : 1;
    const std::size_t N = tg.extent(batched ? 1 : 0);
    const std::size_t M = tg.extent(batched ? 2 : 1);
    const std::size_t C = tg.extent(batched ? 3 : 2);
    const std::size_t Z = (N - 1) * M + N * (M - 1);
    if (Z == 0)
        throw ShapeError("scene_coherence: grid " + shape_str(tg.shape()) +
                         " has no adjacent cells (1x1 grid)");

    const T norm = T(1) / (static_cast<T>(C) * static_cast<T>(Z) * static_cast<T>(B));
    T loss = T(0);
    for (std::size_t b = 0; b < B; ++b) {
        const T* base = tg.data() + b * N * M * C;
        for (std::size_t n = 0; n + 1 < N; ++n)
            for (std::size_t m = 0; m < M; ++m) {
                const T* p = base + (n * M + m) * C;
                const T* q = base + ((n + 1) * M + m) * C;
                for (std::size_t c = 0; c < C; ++c) {
                    const T d = q[c] - p[c];
                    loss += d * d;
                }
            }
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t m = 0; m + 1 < M; ++m) {
                const T* p = base + (n * M + m) * C;
                const T* q = base + (n * M + m + 1) * C;
                for (std::size_t c = 0; c < C; ++c) {
                    const T d = q[c] - p[c];
                    loss += d * d;
                }
            }
    }
    loss *= norm;
    return grid.tape->record(
        "scene_coherence", TensorT<T>::scalar(loss), {grid},
        [gid = grid.id, B, N, M, C, norm](TapeT<T>& t, std::uint32_t self) {
            if (!t.wants_grad(gid)) return;
            const T g0 = t.grad_of(self)[0] * norm * T(2);
            const TensorT<T>& v = t.value_of(gid);
            TensorT<T>& gx = t.grad_buffer(gid);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t off = b * N * M * C;
                for (std::size_t n = 0; n + 1 < N; ++n)
                    for (std::size_t m = 0; m < M; ++m) {
                        const std::size_t ip = off + (n * M + m) * C;
                        const std::size_t iq = off + ((n + 1) * M + m) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            const T d = g0 * (v[iq + c] - v[ip + c]);
                            gx[iq + c] += d;
                            gx[ip + c] -= d;
                        }
                    }
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t m = 0; m + 1 < M; ++m) {
                        const std::size_t ip = off + (n * M + m) * C;
                        const std::size_t iq = off + (n * M + m + 1) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            const T d = g0 * (v[iq + c] - v[ip + c]);
                            gx[iq + c] += d;
                            gx[ip + c] -= d;
                        }
                    }
            }
        });
}

#define FOSNET_INSTANTIATE_OPS(T)                                                               \
    template ValueT<T> add<T>(ValueT<T>, ValueT<T>);                                            \
    template ValueT<T> sub<T>(ValueT<T>, ValueT<T>);                                            \
    template ValueT<T> mul<T>(ValueT<T>, ValueT<T>);                                            \
    template ValueT<T> scale<T>(ValueT<T>, T);                                                  \
    template ValueT<T> relu<T>(ValueT<T>);                                                      \
    template ValueT<T> sigmoid<T>(ValueT<T>);                                                   \
    template ValueT<T> sum<T>(ValueT<T>);                                                       \
    template ValueT<T> reshape<T>(ValueT<T>, Shape);                                            \
    template ValueT<T> concat_last<T>(ValueT<T>, ValueT<T>);                                    \
    template ValueT<T> add_bias<T>(ValueT<T>, ValueT<T>);                                       \
    template ValueT<T> matmul<T>(ValueT<T>, ValueT<T>);                                         \
    template ValueT<T> linear<T>(ValueT<T>, ValueT<T>);                                         \
    template ValueT<T> conv2d<T>(ValueT<T>, ValueT<T>, ValueT<T>, std::size_t, std::size_t);    \
    template ValueT<T> partial_conv2d<T>(ValueT<T>, ValueT<T>, ValueT<T>, std::size_t,          \
                                         std::size_t, const TensorT<T>&);                       \
    template ValueT<T> conv1x1<T>(ValueT<T>, ValueT<T>, ValueT<T>);                             \
    template ValueT<T> global_avg_pool<T>(ValueT<T>);                                           \
    template BatchNormOut<T> batch_norm_train<T>(ValueT<T>, ValueT<T>, ValueT<T>, T);           \
    template ValueT<T> batch_norm_eval<T>(ValueT<T>, ValueT<T>, ValueT<T>, const TensorT<T>&,   \
                                          const TensorT<T>&, T);                                \
    template ValueT<T> softmax_cross_entropy<T>(ValueT<T>, const TensorT<T>&);                  \
    template ValueT<T> sigmoid_bce<T>(ValueT<T>, const TensorT<T>&);                            \
    template ValueT<T> scene_coherence<T>(ValueT<T>);

FOSNET_INSTANTIATE_OPS(float)
FOSNET_INSTANTIATE_OPS(double)

#undef FOSNET_INSTANTIATE_OPS

}  // namespace fosnet
