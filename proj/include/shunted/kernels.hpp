#pragma once

// Forward and backward math kernels on plain tensors. Everything here is
// non-recording; the autodiff layer in ops.hpp wires these into the tape.
// Matrix products go through Eigen; backward weight reductions run in fixed
// index order so results do not depend on the thread count.

#include <cmath>
#include <vector>

#include "shunted/tensor.hpp"

namespace shunted::kernels {

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  TensorT<S> c({a.dim(0), b.dim(1)});
  c.mat(a.dim(0), b.dim(1)).noalias() =
      a.mat(a.dim(0), a.dim(1)) * b.mat(b.dim(0), b.dim(1));
  return c;
}

/// A[T,m,k] * B[T,k,n] -> [T,m,n]; with transpose_b, B is [T,n,k].
template <class S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b, bool transpose_b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  const long T = a.dim(0), m = a.dim(1), k = a.dim(2);
  const long n = transpose_b ? b.dim(1) : b.dim(2);
  const long bk = transpose_b ? b.dim(2) : b.dim(1);
  if (bk != k)
    throw ShapeError("bmm: inner dimensions disagree " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  TensorT<S> c({T, m, n});
  const S* ap = a.data();
  const S* bp = b.data();
  S* cp = c.data();
  parallel_for(T, [&](long t) {
    CMapMat<S> A(ap + t * m * k, m, k);
    MapMat<S> C(cp + t * m * n, m, n);
    if (transpose_b) {
      CMapMat<S> B(bp + t * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      CMapMat<S> B(bp + t * k * n, k, n);
      C.noalias() = A * B;
    }
  });
  return c;
}

/// Accumulates gradients for bmm into da/db (either may be null).
template <class S>
void bmm_backward(const TensorT<S>& a, const TensorT<S>& b, bool transpose_b,
                  const TensorT<S>& gc, TensorT<S>* da, TensorT<S>* db) {
  const long T = a.dim(0), m = a.dim(1), k = a.dim(2);
  const long n = transpose_b ? b.dim(1) : b.dim(2);
  parallel_for(T, [&](long t) {
    CMapMat<S> A(a.data() + t * m * k, m, k);
    CMapMat<S> G(gc.data() + t * m * n, m, n);
    if (transpose_b) {
      CMapMat<S> B(b.data() + t * n * k, n, k);
      if (da) MapMat<S>(da->data() + t * m * k, m, k).noalias() += G * B;
      if (db) MapMat<S>(db->data() + t * n * k, n, k).noalias() += G.transpose() * A;
    } else {
      CMapMat<S> B(b.data() + t * k * n, k, n);
      if (da) MapMat<S>(da->data() + t * m * k, m, k).noalias() += G * B.transpose();
      if (db) MapMat<S>(db->data() + t * k * n, k, n).noalias() += A.transpose() * G;
    }
  });
}

// ---------------------------------------------------------------------------
// linear: y[...,dout] = x[...,din] . w[din,dout] + b
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  if (x.ndim() < 1 || w.ndim() != 2 || x.dim(x.ndim() - 1) != w.dim(0))
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(w.shape()));
  if (b.numel() != w.dim(1))
    throw ShapeError("linear: bias " + shape_to_string(b.shape()) + " vs weight " +
                     shape_to_string(w.shape()));
  const long din = w.dim(0), dout = w.dim(1);
  const long rows = x.numel() / din;
  std::vector<long> out_shape(x.shape());
  out_shape.back() = dout;
  TensorT<S> y(out_shape);
  auto Y = y.mat(rows, dout);
  Y.noalias() = x.mat(rows, din) * w.mat(din, dout);
  Y.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>::Map(b.data(), dout);
  return y;
}

template <class S>
void linear_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& gy,
                     TensorT<S>* dx, TensorT<S>* dw, TensorT<S>* db) {
  const long din = w.dim(0), dout = w.dim(1);
  const long rows = x.numel() / din;
  auto G = gy.mat(rows, dout);
  if (dx) dx->mat(rows, din).noalias() += G * w.mat(din, dout).transpose();
  if (dw) dw->mat(din, dout).noalias() += x.mat(rows, din).transpose() * G;
  if (db) MapVec<S>(db->data(), dout).noalias() += G.colwise().sum().transpose();
}

// ---------------------------------------------------------------------------
// conv2d via im2col + gemm
// ---------------------------------------------------------------------------

inline long conv_out_dim(long in, long k, long stride, long pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline void check_conv_geometry(long H, long W, long kh, long kw, long stride, long pad,
                                const char* op) {
  if (stride < 1 || pad < 0)
    throw ConfigError(std::string(op) + ": stride must be >= 1 and pad >= 0");
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     std::to_string(H + 2 * pad) + "x" + std::to_string(W + 2 * pad));
}

namespace detail {
/// Output-column range [lo,hi) whose input column ox*stride + kx - pad lands
/// inside [0, W); outside it the padded value is zero.
inline std::pair<long, long> valid_ox_range(long W, long Wo, long kx, long stride,
                                            long pad) {
  long lo = pad > kx ? (pad - kx + stride - 1) / stride : 0;
  const long num = W - 1 - kx + pad;
  long hi = num < 0 ? 0 : num / stride + 1;
  if (hi > Wo) hi = Wo;
  if (lo > hi) lo = hi;
  return {lo, hi};
}
}  // namespace detail

/// Writes the [Cin*kh*kw, Ho*Wo] patch matrix for one image (row-major).
template <class S>
void im2col(const S* x, long C, long H, long W, long kh, long kw, long stride, long pad,
            long Ho, long Wo, S* cols) {
  for (long c = 0; c < C; ++c) {
    const S* xc = x + c * H * W;
    for (long ky = 0; ky < kh; ++ky) {
      for (long kx = 0; kx < kw; ++kx) {
        S* row = cols + ((c * kh + ky) * kw + kx) * (Ho * Wo);
        const auto [lo, hi] = detail::valid_ox_range(W, Wo, kx, stride, pad);
        for (long oy = 0; oy < Ho; ++oy) {
          const long iy = oy * stride + ky - pad;
          S* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, S(0));
            continue;
          }
          const S* src = xc + iy * W + kx - pad;
          std::fill(dst, dst + lo, S(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + hi, dst + Wo, S(0));
        }
      }
    }
  }
}

/// Scatters a patch matrix back into the image gradient (accumulating).
template <class S>
void col2im_acc(const S* cols, long C, long H, long W, long kh, long kw, long stride,
                long pad, long Ho, long Wo, S* dx) {
  for (long c = 0; c < C; ++c) {
    S* xc = dx + c * H * W;
    for (long ky = 0; ky < kh; ++ky) {
      for (long kx = 0; kx < kw; ++kx) {
        const S* row = cols + ((c * kh + ky) * kw + kx) * (Ho * Wo);
        const auto [lo, hi] = detail::valid_ox_range(W, Wo, kx, stride, pad);
        for (long oy = 0; oy < Ho; ++oy) {
          const long iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const S* src = row + oy * Wo;
          S* dst = xc + iy * W + kx - pad;
          if (stride == 1) {
            for (long ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                  long stride, long pad) {
  if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input " + shape_to_string(x.shape()) + " vs kernel " +
                     shape_to_string(w.shape()));
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.numel() != Cout)
    throw ShapeError("conv2d: bias " + shape_to_string(b.shape()) + " vs kernel " +
                     shape_to_string(w.shape()));
  check_conv_geometry(H, W, kh, kw, stride, pad, "conv2d");
  const long Ho = conv_out_dim(H, kh, stride, pad);
  const long Wo = conv_out_dim(W, kw, stride, pad);
  const long K = C * kh * kw;
  TensorT<S> y({B, Cout, Ho, Wo});
  parallel_for(B, [&](long bi) {
    std::vector<S> cols(static_cast<std::size_t>(K) * Ho * Wo);
    im2col(x.data() + bi * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
    MapMat<S> Y(y.data() + bi * Cout * Ho * Wo, Cout, Ho * Wo);
    Y.noalias() = w.mat(Cout, K) * CMapMat<S>(cols.data(), K, Ho * Wo);
    for (long c = 0; c < Cout; ++c) Y.row(c).array() += b[c];
  });
  return y;
}

template <class S>
void conv2d_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& gy,
                     long stride, long pad, TensorT<S>* dx, TensorT<S>* dw,
                     TensorT<S>* db) {
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long Ho = gy.dim(2), Wo = gy.dim(3);
  const long K = C * kh * kw;
  std::vector<S> cols(static_cast<std::size_t>(K) * Ho * Wo);
  std::vector<S> dcols(dx ? cols.size() : 0);
  for (long bi = 0; bi < B; ++bi) {  // fixed order: dw/db reductions stay deterministic
    CMapMat<S> G(gy.data() + bi * Cout * Ho * Wo, Cout, Ho * Wo);
    if (dw || dx)
      im2col(x.data() + bi * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo,
             cols.data());
    if (dw)
      dw->mat(Cout, K).noalias() += G * CMapMat<S>(cols.data(), K, Ho * Wo).transpose();
    if (db)
      MapVec<S>(db->data(), Cout).noalias() += G.rowwise().sum();
    if (dx) {
      MapMat<S>(dcols.data(), K, Ho * Wo).noalias() = w.mat(Cout, K).transpose() * G;
      col2im_acc(dcols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                 dx->data() + bi * C * H * W);
    }
  }
}

// ---------------------------------------------------------------------------
// depthwise conv2d: w[C,1,k,k], per-channel independence
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> depthwise_conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                            long stride, long pad) {
  if (x.ndim() != 4 || w.ndim() != 4 || w.dim(0) != x.dim(1) || w.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: input " + shape_to_string(x.shape()) +
                     " vs kernel " + shape_to_string(w.shape()));
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long kh = w.dim(2), kw = w.dim(3);
  if (b.numel() != C)
    throw ShapeError("depthwise_conv2d: bias " + shape_to_string(b.shape()) +
                     " vs kernel " + shape_to_string(w.shape()));
  check_conv_geometry(H, W, kh, kw, stride, pad, "depthwise_conv2d");
  const long Ho = conv_out_dim(H, kh, stride, pad);
  const long Wo = conv_out_dim(W, kw, stride, pad);
  TensorT<S> y({B, C, Ho, Wo});
  parallel_for(B * C, [&](long bc) {
    const S* xc = x.data() + bc * H * W;
    S* yc = y.data() + bc * Ho * Wo;
    const S* wc = w.data() + (bc % C) * kh * kw;
    const S bias = b[bc % C];
    std::fill(yc, yc + Ho * Wo, bias);
    for (long oy = 0; oy < Ho; ++oy) {
      S* dst = yc + oy * Wo;
      for (long ky = 0; ky < kh; ++ky) {
        const long iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        const S* src = xc + iy * W;
        for (long kx = 0; kx < kw; ++kx) {
          const S wv = wc[ky * kw + kx];
          if (stride == 1) {
            const long lo = std::max(0L, pad - kx);
            const long hi = std::min(Wo, W + pad - kx);
            const S* s = src + lo + kx - pad;
            for (long ox = lo; ox < hi; ++ox) dst[ox] += wv * s[ox - lo];
          } else {
            for (long ox = 0; ox < Wo; ++ox) {
              const long ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < W) dst[ox] += wv * src[ix];
            }
          }
        }
      }
    }
  });
  return y;
}

template <class S>
void depthwise_conv2d_backward(const TensorT<S>& x, const TensorT<S>& w,
                               const TensorT<S>& gy, long stride, long pad,
                               TensorT<S>* dx, TensorT<S>* dw, TensorT<S>* db) {
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long kh = w.dim(2), kw = w.dim(3);
  const long Ho = gy.dim(2), Wo = gy.dim(3);
  // Channels are independent, so a parallel map over c keeps every
  // accumulation order identical to the serial sweep.
  parallel_for(C, [&](long c) {
    const S* wc = w.data() + c * kh * kw;
    for (long bi = 0; bi < B; ++bi) {
      const long bc = bi * C + c;
      const S* xc = x.data() + bc * H * W;
      const S* gc = gy.data() + bc * Ho * Wo;
      S* dxc = dx ? dx->data() + bc * H * W : nullptr;
      for (long oy = 0; oy < Ho; ++oy) {
        const S* grow = gc + oy * Wo;
        if (db) {
          S acc = 0;
          for (long ox = 0; ox < Wo; ++ox) acc += grow[ox];
          (*db)[c] += acc;
        }
        for (long ky = 0; ky < kh; ++ky) {
          const long iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (long kx = 0; kx < kw; ++kx) {
            const S wv = wc[ky * kw + kx];
            const auto [lo, hi] = detail::valid_ox_range(W, Wo, kx, stride, pad);
            const S* xrow = xc + iy * W + kx - pad;
            S wacc = 0;
            if (stride == 1) {
              if (dx) {
                S* dxrow = dxc + iy * W + kx - pad;
                for (long ox = lo; ox < hi; ++ox) dxrow[ox] += wv * grow[ox];
              }
              if (dw)
                for (long ox = lo; ox < hi; ++ox) wacc += grow[ox] * xrow[ox];
            } else {
              for (long ox = lo; ox < hi; ++ox) {
                if (dx) dxc[iy * W + ox * stride + kx - pad] += wv * grow[ox];
                wacc += grow[ox] * xrow[ox * stride];
              }
            }
            if (dw) dw->data()[c * kh * kw + ky * kw + kx] += wacc;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// depthwise conv on token layout: x[B, N=h*w, C] seen as a channels-last
// h x w grid. Same math as depthwise_conv2d on the transposed layout, but
// the inner loops run over the contiguous channel axis. Stride 1, same-size
// output (2*pad == k-1).
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> depthwise_conv2d_tokens(const TensorT<S>& x, const TensorT<S>& w,
                                   const TensorT<S>& b, long h, long wd, long pad) {
  const long C = x.dim(2), k = w.dim(2);
  if (x.ndim() != 3 || x.dim(1) != h * wd)
    throw ShapeError("depthwise_tokens: input " + shape_to_string(x.shape()) +
                     " vs grid " + std::to_string(h) + "x" + std::to_string(wd));
  if (w.ndim() != 4 || w.dim(0) != C || w.dim(1) != 1 || w.dim(3) != k ||
      2 * pad != k - 1)
    throw ShapeError("depthwise_tokens: kernel " + shape_to_string(w.shape()) +
                     " with pad " + std::to_string(pad));
  const long B = x.dim(0), N = h * wd;
  TensorT<S> y({B, N, C});
  // Per-tap channel vectors, contiguous.
  TensorT<S> taps({k * k, C});
  for (long c = 0; c < C; ++c)
    for (long t = 0; t < k * k; ++t) taps(t, c) = w[c * k * k + t];
  parallel_for(B, [&](long bi) {
    const S* xb = x.data() + bi * N * C;
    S* yb = y.data() + bi * N * C;
    for (long n = 0; n < N; ++n)
      std::copy(b.data(), b.data() + C, yb + n * C);
    for (long ky = 0; ky < k; ++ky) {
      const long oy_lo = std::max(0L, pad - ky);
      const long oy_hi = std::min(h, h + pad - ky);
      for (long kx = 0; kx < k; ++kx) {
        const S* tap = taps.data() + (ky * k + kx) * C;
        const long ox_lo = std::max(0L, pad - kx);
        const long ox_hi = std::min(wd, wd + pad - kx);
        if (ox_lo >= ox_hi) continue;
        for (long oy = oy_lo; oy < oy_hi; ++oy) {
          const long iy = oy + ky - pad;
          const S* src = xb + ((iy * wd) + ox_lo + kx - pad) * C;
          S* dst = yb + ((oy * wd) + ox_lo) * C;
          for (long i = 0; i < (ox_hi - ox_lo) * C; i += C)
            for (long c = 0; c < C; ++c) dst[i + c] += tap[c] * src[i + c];
        }
      }
    }
  });
  return y;
}

template <class S>
void depthwise_conv2d_tokens_backward(const TensorT<S>& x, const TensorT<S>& w,
                                      const TensorT<S>& gy, long h, long wd, long pad,
                                      TensorT<S>* dx, TensorT<S>* dw, TensorT<S>* db) {
  const long B = x.dim(0), C = x.dim(2), k = w.dim(2);
  const long N = h * wd;
  TensorT<S> taps({k * k, C});
  for (long c = 0; c < C; ++c)
    for (long t = 0; t < k * k; ++t) taps(t, c) = w[c * k * k + t];
  TensorT<S> tap_grads({k * k, C});
  for (long bi = 0; bi < B; ++bi) {  // fixed order for the weight reductions
    const S* xb = x.data() + bi * N * C;
    const S* gb = gy.data() + bi * N * C;
    S* dxb = dx ? dx->data() + bi * N * C : nullptr;
    if (db) {
      S* dbp = db->data();
      for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) dbp[c] += gb[n * C + c];
    }
    for (long ky = 0; ky < k; ++ky) {
      const long oy_lo = std::max(0L, pad - ky);
      const long oy_hi = std::min(h, h + pad - ky);
      for (long kx = 0; kx < k; ++kx) {
        const S* tap = taps.data() + (ky * k + kx) * C;
        S* tgrad = tap_grads.data() + (ky * k + kx) * C;
        const long ox_lo = std::max(0L, pad - kx);
        const long ox_hi = std::min(wd, wd + pad - kx);
        if (ox_lo >= ox_hi) continue;
        for (long oy = oy_lo; oy < oy_hi; ++oy) {
          const long iy = oy + ky - pad;
          const long in_off = ((iy * wd) + ox_lo + kx - pad) * C;
          const long out_off = ((oy * wd) + ox_lo) * C;
          const long len = (ox_hi - ox_lo) * C;
          const S* grow = gb + out_off;
          if (dx) {
            S* dxrow = dxb + in_off;
            for (long i = 0; i < len; i += C)
              for (long c = 0; c < C; ++c) dxrow[i + c] += tap[c] * grow[i + c];
          }
          if (dw) {
            const S* xrow = xb + in_off;
            for (long i = 0; i < len; i += C)
              for (long c = 0; c < C; ++c) tgrad[c] += grow[i + c] * xrow[i + c];
          }
        }
      }
    }
  }
  if (dw)
    for (long c = 0; c < C; ++c)
      for (long t = 0; t < k * k; ++t) dw->data()[c * k * k + t] += tap_grads(t, c);
}

// ---------------------------------------------------------------------------
// softmax over the last axis (max-subtracted)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
  if (x.ndim() < 1) throw ShapeError("softmax_rows: scalar input");
  const long n = x.dim(x.ndim() - 1);
  const long rows = x.numel() / n;
  TensorT<S> y(x.shape());
  for (long r = 0; r < rows; ++r) {
    CMapArr<S> in(x.data() + r * n, n);
    MapArr<S> out(y.data() + r * n, n);
    const S m = in.maxCoeff();
    out = (in - m).exp();
    out /= out.sum();
  }
  return y;
}

/// dx = y * (gy - sum(gy * y)) per row.
template <class S>
void softmax_rows_backward(const TensorT<S>& y, const TensorT<S>& gy, TensorT<S>* dx) {
  const long n = y.dim(y.ndim() - 1);
  const long rows = y.numel() / n;
  for (long r = 0; r < rows; ++r) {
    CMapArr<S> yr(y.data() + r * n, n);
    CMapArr<S> gr(gy.data() + r * n, n);
    MapArr<S> dr(dx->data() + r * n, n);
    const S dot = (yr * gr).sum();
    dr += yr * (gr - dot);
  }
}

// ---------------------------------------------------------------------------
// layer norm over the last axis
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps) {
  const long C = x.dim(x.ndim() - 1);
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("layer_norm: affine params " + shape_to_string(gamma.shape()) +
                     "/" + shape_to_string(beta.shape()) + " vs feature dim " +
                     std::to_string(C));
  const long rows = x.numel() / C;
  TensorT<S> y(x.shape());
  CMapArr<S> g(gamma.data(), C), bta(beta.data(), C);
  for (long r = 0; r < rows; ++r) {
    CMapArr<S> in(x.data() + r * C, C);
    MapArr<S> out(y.data() + r * C, C);
    const S mean = in.mean();
    const S var = (in - mean).square().sum() / S(C);
    const S rstd = S(1) / std::sqrt(var + eps);
    out = ((in - mean) * rstd) * g + bta;
  }
  return y;
}

template <class S>
void layer_norm_backward(const TensorT<S>& x, const TensorT<S>& gamma, S eps,
                         const TensorT<S>& gy, TensorT<S>* dx, TensorT<S>* dgamma,
                         TensorT<S>* dbeta) {
  const long C = x.dim(x.ndim() - 1);
  const long rows = x.numel() / C;
  CMapArr<S> g(gamma.data(), C);
  Eigen::Array<S, Eigen::Dynamic, 1> xhat(C), dyh(C);
  for (long r = 0; r < rows; ++r) {
    CMapArr<S> in(x.data() + r * C, C);
    CMapArr<S> gr(gy.data() + r * C, C);
    const S mean = in.mean();
    const S var = (in - mean).square().sum() / S(C);
    const S rstd = S(1) / std::sqrt(var + eps);
    xhat = (in - mean) * rstd;
    if (dgamma) MapArr<S>(dgamma->data(), C) += gr * xhat;
    if (dbeta) MapArr<S>(dbeta->data(), C) += gr;
    if (dx) {
      dyh = gr * g;
      const S m1 = dyh.mean();
      const S m2 = (dyh * xhat).mean();
      MapArr<S>(dx->data() + r * C, C) += rstd * (dyh - m1 - xhat * m2);
    }
  }
}

// ---------------------------------------------------------------------------
// GELU (tanh approximation; constants below define the op exactly)
// ---------------------------------------------------------------------------

template <class S>
inline S gelu_scalar(S x) {
  const S c0 = S(0.7978845608028654);  // sqrt(2/pi)
  const S c1 = S(0.044715);
  return S(0.5) * x * (S(1) + std::tanh(c0 * (x + c1 * x * x * x)));
}

template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
  const S c0 = S(0.7978845608028654);
  const S c1 = S(0.044715);
  TensorT<S> y(x.shape());
  auto xa = x.arr();
  y.arr() = S(0.5) * xa * (S(1) + (c0 * (xa + c1 * xa.cube())).tanh());
  return y;
}

template <class S>
void gelu_backward(const TensorT<S>& x, const TensorT<S>& gy, TensorT<S>* dx) {
  const S c0 = S(0.7978845608028654);
  const S c1 = S(0.044715);
  auto xa = x.arr();
  Eigen::Array<S, Eigen::Dynamic, 1> t = (c0 * (xa + c1 * xa.cube())).tanh();
  dx->arr() += gy.arr() * (S(0.5) * (S(1) + t) +
                           S(0.5) * xa * (S(1) - t.square()) * c0 *
                               (S(1) + S(3) * c1 * xa.square()));
}

// ---------------------------------------------------------------------------
// cross entropy with label smoothing (mean over batch)
// ---------------------------------------------------------------------------

/// Returns {loss (scalar tensor), probs [B,K]}.
template <class S>
std::pair<TensorT<S>, TensorT<S>> cross_entropy(const TensorT<S>& logits,
                                                const std::vector<int>& labels,
                                                S smoothing) {
  if (logits.ndim() != 2)
    throw ShapeError("cross_entropy: logits must be [B,K], got " +
                     shape_to_string(logits.shape()));
  const long B = logits.dim(0), K = logits.dim(1);
  if (static_cast<long>(labels.size()) != B)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(B));
  TensorT<S> probs({B, K});
  S total = 0;
  for (long b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K)
      throw IndexError("cross_entropy: label " + std::to_string(y) +
                       " out of range for " + std::to_string(K) + " classes");
    CMapArr<S> l(logits.data() + b * K, K);
    MapArr<S> p(probs.data() + b * K, K);
    const S m = l.maxCoeff();
    p = (l - m).exp();
    const S lse = m + std::log(p.sum());
    p /= p.sum();
    S row = -(S(1) - smoothing) * (l[y] - lse);
    if (smoothing > S(0)) {
      S sum_logp = l.sum() - S(K) * lse;
      row -= (smoothing / S(K)) * sum_logp;
    }
    total += row;
  }
  return {TensorT<S>::scalar(total / S(B)), std::move(probs)};
}

template <class S>
void cross_entropy_backward(const TensorT<S>& probs, const std::vector<int>& labels,
                            S smoothing, S gloss, TensorT<S>* dlogits) {
  const long B = probs.dim(0), K = probs.dim(1);
  const S scale = gloss / S(B);
  for (long b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    CMapArr<S> p(probs.data() + b * K, K);
    MapArr<S> d(dlogits->data() + b * K, K);
    d += scale * (p - smoothing / S(K));
    d[y] -= scale * (S(1) - smoothing);
  }
}

// ---------------------------------------------------------------------------
// permute / concat / slice / reductions
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& perm) {
  const long nd = x.ndim();
  if (static_cast<long>(perm.size()) != nd)
    throw ShapeError("permute: axes " + std::to_string(perm.size()) + " vs rank " +
                     std::to_string(nd));
  std::vector<long> out_shape(nd);
  std::vector<long> in_strides(nd, 1), step(nd);
  for (long d = nd - 2; d >= 0; --d)
    in_strides[d] = in_strides[d + 1] * x.dim(d + 1);
  for (long d = 0; d < nd; ++d) {
    out_shape[d] = x.dim(perm[d]);
    step[d] = in_strides[perm[d]];
  }
  TensorT<S> y(out_shape);
  if (y.numel() == 0) return y;
  const S* src = x.data();
  S* dst = y.data();
  if (nd == 1) {
    std::copy(src, src + y.numel(), dst);
    return y;
  }
  // Tight loops over the last two output axes; odometer over the rest.
  const long rows = out_shape[nd - 2], cols = out_shape[nd - 1];
  const long srow = step[nd - 2], scol = step[nd - 1];
  const long outer = y.numel() / (rows * cols);
  std::vector<long> idx(nd, 0);
  long base = 0;
  for (long o = 0; o < outer; ++o) {
    const S* s0 = src + base;
    if (scol == 1) {
      for (long r = 0; r < rows; ++r, dst += cols)
        std::copy(s0 + r * srow, s0 + r * srow + cols, dst);
    } else {
      for (long r = 0; r < rows; ++r) {
        const S* p = s0 + r * srow;
        for (long c = 0; c < cols; ++c) *dst++ = p[c * scol];
      }
    }
    for (long d = nd - 3; d >= 0; --d) {
      base += step[d];
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
      base -= step[d] * out_shape[d];
    }
  }
  return y;
}

inline std::vector<int> inverse_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

/// Concatenates along the last axis; all leading dims must match.
template <class S>
TensorT<S> concat_last(const std::vector<const TensorT<S>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  const auto& s0 = parts[0]->shape();
  long total = 0;
  for (const auto* p : parts) {
    if (p->ndim() != parts[0]->ndim())
      throw ShapeError("concat_last: rank mismatch");
    for (long d = 0; d + 1 < p->ndim(); ++d)
      if (p->dim(d) != s0[d])
        throw ShapeError("concat_last: leading dims differ: " + shape_to_string(s0) +
                         " vs " + shape_to_string(p->shape()));
    total += p->dim(p->ndim() - 1);
  }
  std::vector<long> out_shape(s0);
  out_shape.back() = total;
  TensorT<S> y(out_shape);
  const long rows = y.numel() / total;
  long at = 0;
  for (const auto* p : parts) {
    const long n = p->dim(p->ndim() - 1);
    for (long r = 0; r < rows; ++r)
      std::copy(p->data() + r * n, p->data() + (r + 1) * n, y.data() + r * total + at);
    at += n;
  }
  return y;
}

template <class S>
TensorT<S> slice_last(const TensorT<S>& x, long from, long len) {
  const long n = x.dim(x.ndim() - 1);
  if (from < 0 || len < 0 || from + len > n)
    throw ShapeError("slice_last: [" + std::to_string(from) + "," +
                     std::to_string(from + len) + ") out of " + std::to_string(n));
  std::vector<long> out_shape(x.shape());
  out_shape.back() = len;
  TensorT<S> y(out_shape);
  const long rows = x.numel() / n;
  for (long r = 0; r < rows; ++r)
    std::copy(x.data() + r * n + from, x.data() + r * n + from + len, y.data() + r * len);
  return y;
}

template <class S>
void slice_last_backward(const TensorT<S>& gy, long from, TensorT<S>* dx) {
  const long n = dx->dim(dx->ndim() - 1);
  const long len = gy.dim(gy.ndim() - 1);
  const long rows = dx->numel() / n;
  for (long r = 0; r < rows; ++r)
    for (long i = 0; i < len; ++i) dx->data()[r * n + from + i] += gy.data()[r * len + i];
}

/// Mean over the last axis: [..., n] -> [...].
template <class S>
TensorT<S> mean_last(const TensorT<S>& x) {
  if (x.ndim() < 1) throw ShapeError("mean_last: scalar input");
  const long n = x.dim(x.ndim() - 1);
  if (n == 0) throw ShapeError("mean_last: empty reduction axis");
  std::vector<long> out_shape(x.shape().begin(), x.shape().end() - 1);
  TensorT<S> y(out_shape);
  const long rows = y.numel();
  for (long r = 0; r < rows; ++r) y[r] = CMapArr<S>(x.data() + r * n, n).mean();
  return y;
}

template <class S>
void mean_last_backward(const TensorT<S>& gy, long n, TensorT<S>* dx) {
  const long rows = gy.numel();
  for (long r = 0; r < rows; ++r) {
    MapArr<S>(dx->data() + r * n, n) += gy[r] / S(n);
  }
}

/// Sum of all elements -> scalar.
template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  return TensorT<S>::scalar(x.arr().sum());
}

}  // namespace shunted::kernels
