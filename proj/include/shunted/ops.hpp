#pragma once

// Differentiable operations: thin tape wrappers over kernels.hpp. Free
// functions on VarT handles, composable like expressions:
//   auto y = linear(x, g.param(w), g.param(b)) + residual;

#include <vector>

#include "shunted/graph.hpp"
#include "shunted/kernels.hpp"

namespace shunted {

namespace detail {
template <class S>
inline void same_graph(VarT<S> a, VarT<S> b, const char* op) {
  if (a.g == nullptr || a.g != b.g)
    throw ConfigError(std::string(op) + ": operands from different graphs");
}
}  // namespace detail

template <class S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
  detail::same_graph(a, b, "matmul");
  TensorT<S> y = kernels::matmul(a.val(), b.val());
  ensure_finite(y, "matmul");
  const int ai = a.id, bi = b.id;
  return a.g->make(std::move(y), [ai, bi](GraphT<S>& g, int self) {
    const TensorT<S>& gy = g.grad_of(self);
    const TensorT<S>& A = g.value(ai);
    const TensorT<S>& B = g.value(bi);
    const long m = A.dim(0), k = A.dim(1), n = B.dim(1);
    g.grad_buffer(ai).mat(m, k).noalias() += gy.mat(m, n) * B.mat(k, n).transpose();
    g.grad_buffer(bi).mat(k, n).noalias() += A.mat(m, k).transpose() * gy.mat(m, n);
  });
}

template <class S>
VarT<S> bmm(VarT<S> a, VarT<S> b, bool transpose_b = false) {
  detail::same_graph(a, b, "bmm");
  TensorT<S> y = kernels::bmm(a.val(), b.val(), transpose_b);
  ensure_finite(y, "bmm");
  const int ai = a.id, bi = b.id;
  return a.g->make(std::move(y), [ai, bi, transpose_b](GraphT<S>& g, int self) {
    kernels::bmm_backward(g.value(ai), g.value(bi), transpose_b, g.grad_of(self),
                          &g.grad_buffer(ai), &g.grad_buffer(bi));
  });
}

template <class S>
VarT<S> linear(VarT<S> x, VarT<S> w, VarT<S> b) {
  detail::same_graph(x, w, "linear");
  detail::same_graph(x, b, "linear");
  TensorT<S> y = kernels::linear(x.val(), w.val(), b.val());
  ensure_finite(y, "linear");
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.g->make(std::move(y), [xi, wi, bi](GraphT<S>& g, int self) {
    kernels::linear_backward(g.value(xi), g.value(wi), g.grad_of(self),
                             &g.grad_buffer(xi), &g.grad_buffer(wi),
                             &g.grad_buffer(bi));
  });
}

template <class S>
VarT<S> conv2d(VarT<S> x, VarT<S> w, VarT<S> b, long stride, long pad) {
  detail::same_graph(x, w, "conv2d");
  TensorT<S> y = kernels::conv2d(x.val(), w.val(), b.val(), stride, pad);
  ensure_finite(y, "conv2d");
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.g->make(std::move(y), [xi, wi, bi, stride, pad](GraphT<S>& g, int self) {
    kernels::conv2d_backward(g.value(xi), g.value(wi), g.grad_of(self), stride, pad,
                             &g.grad_buffer(xi), &g.grad_buffer(wi),
                             &g.grad_buffer(bi));
  });
}

template <class S>
VarT<S> depthwise_conv2d(VarT<S> x, VarT<S> w, VarT<S> b, long stride, long pad) {
  detail::same_graph(x, w, "depthwise_conv2d");
  TensorT<S> y = kernels::depthwise_conv2d(x.val(), w.val(), b.val(), stride, pad);
  ensure_finite(y, "depthwise_conv2d");
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.g->make(std::move(y), [xi, wi, bi, stride, pad](GraphT<S>& g, int self) {
    kernels::depthwise_conv2d_backward(g.value(xi), g.value(wi), g.grad_of(self), stride,
                                       pad, &g.grad_buffer(xi), &g.grad_buffer(wi),
                                       &g.grad_buffer(bi));
  });
}

/// Depthwise conv applied to tokens [B,N,C] over their h x w grid (stride 1,
/// same-size). Identical math to depthwise_conv2d on the spatial layout.
template <class S>
VarT<S> depthwise_tokens(VarT<S> x, VarT<S> w, VarT<S> b, long h, long wd, long pad) {
  detail::same_graph(x, w, "depthwise_tokens");
  TensorT<S> y = kernels::depthwise_conv2d_tokens(x.val(), w.val(), b.val(), h, wd, pad);
  ensure_finite(y, "depthwise_tokens");
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.g->make(std::move(y), [xi, wi, bi, h, wd, pad](GraphT<S>& g, int self) {
    kernels::depthwise_conv2d_tokens_backward(g.value(xi), g.value(wi), g.grad_of(self),
                                              h, wd, pad, &g.grad_buffer(xi),
                                              &g.grad_buffer(wi), &g.grad_buffer(bi));
  });
}

template <class S>
VarT<S> softmax_rows(VarT<S> x) {
  TensorT<S> y = kernels::softmax_rows(x.val());
  ensure_finite(y, "softmax_rows");
  const int xi = x.id;
  return x.g->make(std::move(y), [xi](GraphT<S>& g, int self) {
    kernels::softmax_rows_backward(g.value(self), g.grad_of(self), &g.grad_buffer(xi));
  });
}

template <class S>
VarT<S> layer_norm(VarT<S> x, VarT<S> gamma, VarT<S> beta, S eps) {
  detail::same_graph(x, gamma, "layer_norm");
  TensorT<S> y = kernels::layer_norm(x.val(), gamma.val(), beta.val(), eps);
  ensure_finite(y, "layer_norm");
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return x.g->make(std::move(y), [xi, gi, bi, eps](GraphT<S>& g, int self) {
    kernels::layer_norm_backward(g.value(xi), g.value(gi), eps, g.grad_of(self),
                                 &g.grad_buffer(xi), &g.grad_buffer(gi),
                                 &g.grad_buffer(bi));
  });
}

template <class S>
VarT<S> gelu(VarT<S> x) {
  TensorT<S> y = kernels::gelu(x.val());
  ensure_finite(y, "gelu");
  const int xi = x.id;
  return x.g->make(std::move(y), [xi](GraphT<S>& g, int self) {
    kernels::gelu_backward(g.value(xi), g.grad_of(self), &g.grad_buffer(xi));
  });
}

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
  detail::same_graph(a, b, "add");
  if (!a.val().same_shape(b.val()))
    throw ShapeError("add: shape " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  TensorT<S> y = a.val();
  y.add_(b.val());
  ensure_finite(y, "add");
  const int ai = a.id, bi = b.id;
  return a.g->make(std::move(y), [ai, bi](GraphT<S>& g, int self) {
    const TensorT<S>& gy = g.grad_of(self);
    g.grad_buffer(ai).add_(gy);
    g.grad_buffer(bi).add_(gy);
  });
}

template <class S>
VarT<S> operator+(VarT<S> a, VarT<S> b) {
  return add(a, b);
}

/// Elementwise product.
template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
  detail::same_graph(a, b, "mul");
  if (!a.val().same_shape(b.val()))
    throw ShapeError("mul: shape " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  TensorT<S> y = a.val();
  y.arr() *= b.val().arr();
  ensure_finite(y, "mul");
  const int ai = a.id, bi = b.id;
  return a.g->make(std::move(y), [ai, bi](GraphT<S>& g, int self) {
    const TensorT<S>& gy = g.grad_of(self);
    g.grad_buffer(ai).arr() += gy.arr() * g.value(bi).arr();
    g.grad_buffer(bi).arr() += gy.arr() * g.value(ai).arr();
  });
}

template <class S>
VarT<S> scale(VarT<S> x, S c) {
  TensorT<S> y = x.val();
  y.scale_(c);
  const int xi = x.id;
  return x.g->make(std::move(y), [xi, c](GraphT<S>& g, int self) {
    TensorT<S>& dx = g.grad_buffer(xi);
    dx.arr() += g.grad_of(self).arr() * c;
  });
}

template <class S>
VarT<S> operator*(S c, VarT<S> x) {
  return scale(x, c);
}

template <class S>
VarT<S> reshape(VarT<S> x, std::vector<long> shape) {
  TensorT<S> y = x.val().reshaped(std::move(shape));
  const int xi = x.id;
  return x.g->make(std::move(y), [xi](GraphT<S>& g, int self) {
    const TensorT<S>& gy = g.grad_of(self);
    g.grad_buffer(xi).arr() += gy.arr();
  });
}

template <class S>
VarT<S> transpose(VarT<S> x, std::vector<int> perm) {
  TensorT<S> y = kernels::permute(x.val(), perm);
  const int xi = x.id;
  auto inv = kernels::inverse_perm(perm);
  return x.g->make(std::move(y), [xi, inv](GraphT<S>& g, int self) {
    g.grad_buffer(xi).add_(kernels::permute(g.grad_of(self), inv));
  });
}

/// 2-D transpose convenience.
template <class S>
VarT<S> transpose(VarT<S> x) {
  return transpose(x, {1, 0});
}

template <class S>
VarT<S> concat_last(const std::vector<VarT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  std::vector<const TensorT<S>*> vals;
  vals.reserve(parts.size());
  std::vector<int> ids;
  std::vector<long> widths;
  for (auto p : parts) {
    detail::same_graph(parts[0], p, "concat_last");
    vals.push_back(&p.val());
    ids.push_back(p.id);
    widths.push_back(p.val().dim(p.val().ndim() - 1));
  }
  TensorT<S> y = kernels::concat_last(vals);
  return parts[0].g->make(std::move(y), [ids, widths](GraphT<S>& g, int self) {
    const TensorT<S>& gy = g.grad_of(self);
    long at = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      TensorT<S> piece = kernels::slice_last(gy, at, widths[i]);
      g.grad_buffer(ids[i]).add_(piece);
      at += widths[i];
    }
  });
}

template <class S>
VarT<S> slice_last(VarT<S> x, long from, long len) {
  TensorT<S> y = kernels::slice_last(x.val(), from, len);
  const int xi = x.id;
  return x.g->make(std::move(y), [xi, from](GraphT<S>& g, int self) {
    kernels::slice_last_backward(g.grad_of(self), from, &g.grad_buffer(xi));
  });
}

template <class S>
VarT<S> mean_last(VarT<S> x) {
  const long n = x.val().dim(x.val().ndim() - 1);
  TensorT<S> y = kernels::mean_last(x.val());
  const int xi = x.id;
  return x.g->make(std::move(y), [xi, n](GraphT<S>& g, int self) {
    kernels::mean_last_backward(g.grad_of(self), n, &g.grad_buffer(xi));
  });
}

/// Global average pool [B,C,H,W] -> [B,C].
template <class S>
VarT<S> global_avg_pool(VarT<S> x) {
  if (x.ndim() != 4)
    throw ShapeError("global_avg_pool: expected [B,C,H,W], got " +
                     shape_to_string(x.shape()));
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  return mean_last(reshape(x, {B, C, H * W}));
}

template <class S>
VarT<S> sum_all(VarT<S> x) {
  TensorT<S> y = kernels::sum_all(x.val());
  const int xi = x.id;
  return x.g->make(std::move(y), [xi](GraphT<S>& g, int self) {
    const S gy = g.grad_of(self)[0];
    g.grad_buffer(xi).arr() += gy;
  });
}

/// Label-smoothed cross entropy, mean over the batch -> scalar.
template <class S>
VarT<S> cross_entropy(VarT<S> logits, std::vector<int> labels, S smoothing) {
  auto [loss, probs] = kernels::cross_entropy(logits.val(), labels, smoothing);
  ensure_finite(loss, "cross_entropy");
  const int li = logits.id;
  auto probs_saved = std::make_shared<TensorT<S>>(std::move(probs));
  return logits.g->make(
      std::move(loss),
      [li, probs_saved, labels = std::move(labels), smoothing](GraphT<S>& g, int self) {
        kernels::cross_entropy_backward(*probs_saved, labels, smoothing,
                                        g.grad_of(self)[0], &g.grad_buffer(li));
      });
}

// ---------------------------------------------------------------------------
// token/spatial layout helpers: tokens [B,N,C] <-> feature map [B,C,h,w]
// ---------------------------------------------------------------------------

template <class S>
VarT<S> tokens_to_spatial(VarT<S> x, long h, long w) {
  const long B = x.dim(0), N = x.dim(1), C = x.dim(2);
  if (N != h * w)
    throw ShapeError("tokens_to_spatial: N=" + std::to_string(N) + " != " +
                     std::to_string(h) + "x" + std::to_string(w));
  return transpose(reshape(x, {B, h, w, C}), {0, 3, 1, 2});
}

template <class S>
VarT<S> spatial_to_tokens(VarT<S> x) {
  const long B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(transpose(x, {0, 2, 3, 1}), {B, h * w, C});
}

}  // namespace shunted
