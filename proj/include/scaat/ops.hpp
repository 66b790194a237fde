#pragma once

// Differentiable primitives: add, mul, matmul, conv2d, relu, max_pool2d,
// reshape, mean, softmax, log. Everything else (cross-entropy, divergences,
// sums) is composed from these.

#include "scaat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scaat {

namespace detail {

inline bool is_suffix(const Shape& whole, const Shape& tail) {
  if (tail.size() > whole.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), whole.rbegin());
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " input, got shape " + shape_str(s));
  }
}

}  // namespace detail

/// Elementwise sum. `b` may also match the trailing dimensions of `a`, in
/// which case it is broadcast over the leading ones (bias addition).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    Vec<T> out = a.values() + b.values();
    return make_result<T>("add", a.shape(), std::move(out), {a, b},
                          [](const Vec<T>& g, detail::GradSink<T>& sink) {
                            if (auto* ga = sink[0]) *ga += g;
                            if (auto* gb = sink[1]) *gb += g;
                          });
  }
  if (!detail::is_suffix(a.shape(), b.shape())) {
    throw ShapeError("add: cannot broadcast " + shape_str(b.shape()) + " onto " +
                     shape_str(a.shape()));
  }
  const auto inner = static_cast<Eigen::Index>(b.numel());
  const auto outer = static_cast<Eigen::Index>(a.numel()) / inner;
  Vec<T> out = a.values();
  MatMap<T>(out.data(), outer, inner).rowwise() += b.values().matrix().transpose();
  return make_result<T>(
      "add", a.shape(), std::move(out), {a, b},
      [outer, inner](const Vec<T>& g, detail::GradSink<T>& sink) {
        if (auto* ga = sink[0]) *ga += g;
        if (auto* gb = sink[1]) {
          gb->matrix() +=
              ConstMatMap<T>(g.data(), outer, inner).colwise().sum().transpose();
        }
      });
}

/// Elementwise product of equal shapes; a one-element `b` is broadcast.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() && b.numel() != 1) {
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
  if (a.shape() == b.shape()) {
    Vec<T> out = a.values() * b.values();
    return make_result<T>("mul", a.shape(), std::move(out), {a, b},
                          [av = a.values(), bv = b.values()](
                              const Vec<T>& g, detail::GradSink<T>& sink) {
                            if (auto* ga = sink[0]) *ga += g * bv;
                            if (auto* gb = sink[1]) *gb += g * av;
                          });
  }
  const T s = b.values()[0];
  Vec<T> out = a.values() * s;
  return make_result<T>("mul", a.shape(), std::move(out), {a, b},
                        [av = a.values(), s](const Vec<T>& g,
                                             detail::GradSink<T>& sink) {
                          if (auto* ga = sink[0]) *ga += g * s;
                          if (auto* gb = sink[1]) (*gb)[0] += (g * av).sum();
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T c) {
  Vec<T> out = a.values() * c;
  return make_result<T>("mul", a.shape(), std::move(out), {a},
                        [c](const Vec<T>& g, detail::GradSink<T>& sink) {
                          if (auto* ga = sink[0]) *ga += g * c;
                        });
}

/// (M,K) x (K,N), or (M,K) x (N,K)^T when `transpose_b` is set.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto bk = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(0));
  const auto n = static_cast<Eigen::Index>(transpose_b ? b.dim(0) : b.dim(1));
  if (k != bk) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  }
  Vec<T> out(m * n);
  ConstMatMap<T> A(a.values().data(), m, k);
  MatMap<T> C(out.data(), m, n);
  if (transpose_b) {
    C.noalias() = A * ConstMatMap<T>(b.values().data(), n, k).transpose();
  } else {
    C.noalias() = A * ConstMatMap<T>(b.values().data(), k, n);
  }
  return make_result<T>(
      "matmul", {a.dim(0), static_cast<std::size_t>(n)}, std::move(out), {a, b},
      [av = a.values(), bv = b.values(), m, k, n, transpose_b](
          const Vec<T>& g, detail::GradSink<T>& sink) {
        ConstMatMap<T> G(g.data(), m, n);
        if (auto* ga = sink[0]) {
          MatMap<T> GA(ga->data(), m, k);
          if (transpose_b) {
            GA.noalias() += G * ConstMatMap<T>(bv.data(), n, k);
          } else {
            GA.noalias() += G * ConstMatMap<T>(bv.data(), k, n).transpose();
          }
        }
        if (auto* gb = sink[1]) {
          ConstMatMap<T> A(av.data(), m, k);
          if (transpose_b) {
            MatMap<T>(gb->data(), n, k).noalias() += G.transpose() * A;
          } else {
            MatMap<T>(gb->data(), k, n).noalias() += A.transpose() * G;
          }
        }
      });
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

namespace detail {

struct ConvGeometry {
  Eigen::Index channels, height, width;
  Eigen::Index kernel_h, kernel_w;
  Eigen::Index out_h, out_w;
  Eigen::Index stride, padding;

  Eigen::Index col_rows() const { return channels * kernel_h * kernel_w; }
  Eigen::Index col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (Eigen::Index c = 0; c < g.channels; ++c) {
    for (Eigen::Index i = 0; i < g.kernel_h; ++i) {
      for (Eigen::Index j = 0; j < g.kernel_w; ++j) {
        T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.col_cols();
        for (Eigen::Index oh = 0; oh < g.out_h; ++oh) {
          const Eigen::Index h = oh * g.stride - g.padding + i;
          T* dst = row + oh * g.out_w;
          if (h < 0 || h >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.height + h) * g.width;
          for (Eigen::Index ow = 0; ow < g.out_w; ++ow) {
            const Eigen::Index w = ow * g.stride - g.padding + j;
            dst[ow] = (w < 0 || w >= g.width) ? T(0) : src[w];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  for (Eigen::Index c = 0; c < g.channels; ++c) {
    for (Eigen::Index i = 0; i < g.kernel_h; ++i) {
      for (Eigen::Index j = 0; j < g.kernel_w; ++j) {
        const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.col_cols();
        for (Eigen::Index oh = 0; oh < g.out_h; ++oh) {
          const Eigen::Index h = oh * g.stride - g.padding + i;
          if (h < 0 || h >= g.height) continue;
          const T* src = row + oh * g.out_w;
          T* dst = x + (c * g.height + h) * g.width;
          for (Eigen::Index ow = 0; ow < g.out_w; ++ow) {
            const Eigen::Index w = ow * g.stride - g.padding + j;
            if (w >= 0 && w < g.width) dst[w] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation. x: (N,C,H,W), weight: (F,C,KH,KW), bias: (F).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opt = {}) {
  detail::require_rank("conv2d input", x.shape(), 4);
  detail::require_rank("conv2d weight", weight.shape(), 4);
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) +
                     " expects " + std::to_string(weight.dim(1)) +
                     " input channels, input is " + shape_str(x.shape()));
  }
  if (bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                     " does not match " + std::to_string(weight.dim(0)) + " filters");
  }
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const auto pad = static_cast<Eigen::Index>(opt.padding);
  const auto st = static_cast<Eigen::Index>(opt.stride);
  const auto H = static_cast<Eigen::Index>(x.dim(2));
  const auto W = static_cast<Eigen::Index>(x.dim(3));
  const auto KH = static_cast<Eigen::Index>(weight.dim(2));
  const auto KW = static_cast<Eigen::Index>(weight.dim(3));
  if (H + 2 * pad < KH || W + 2 * pad < KW) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  detail::ConvGeometry geo{static_cast<Eigen::Index>(x.dim(1)),
                           H,
                           W,
                           KH,
                           KW,
                           (H + 2 * pad - KH) / st + 1,
                           (W + 2 * pad - KW) / st + 1,
                           st,
                           pad};
  const auto N = static_cast<Eigen::Index>(x.dim(0));
  const auto F = static_cast<Eigen::Index>(weight.dim(0));
  const Eigen::Index in_size = geo.channels * H * W;
  const Eigen::Index out_size = F * geo.col_cols();
  const Eigen::Index col_size = geo.col_rows() * geo.col_cols();

  // Columns are only kept when the weight gradient may be requested.
  const bool keep_cols = weight.requires_grad();
  Vec<T> cols(keep_cols ? N * col_size : col_size);
  Vec<T> out(N * out_size);
  ConstMatMap<T> Wm(weight.values().data(), F, geo.col_rows());
  for (Eigen::Index n = 0; n < N; ++n) {
    T* col = cols.data() + (keep_cols ? n * col_size : 0);
    detail::im2col(x.values().data() + n * in_size, geo, col);
    MatMap<T> O(out.data() + n * out_size, F, geo.col_cols());
    O.noalias() = Wm * ConstMatMap<T>(col, geo.col_rows(), geo.col_cols());
    O.colwise() += bias.values().matrix();
  }
  if (!keep_cols) cols.resize(0);

  Shape out_shape{x.dim(0), weight.dim(0), static_cast<std::size_t>(geo.out_h),
                  static_cast<std::size_t>(geo.out_w)};
  return make_result<T>(
      "conv2d", std::move(out_shape), std::move(out), {x, weight, bias},
      [geo, N, F, in_size, out_size, col_size, cols = std::move(cols),
       wv = weight.values()](const Vec<T>& g, detail::GradSink<T>& sink) {
        ConstMatMap<T> Wm(wv.data(), F, geo.col_rows());
        Vec<T> dcol;
        if (sink[0]) dcol.resize(col_size);
        for (Eigen::Index n = 0; n < N; ++n) {
          ConstMatMap<T> G(g.data() + n * out_size, F, geo.col_cols());
          if (auto* gx = sink[0]) {
            MatMap<T> D(dcol.data(), geo.col_rows(), geo.col_cols());
            D.noalias() = Wm.transpose() * G;
            detail::col2im_add(dcol.data(), geo, gx->data() + n * in_size);
          }
          if (auto* gw = sink[1]) {
            ConstMatMap<T> C(cols.data() + n * col_size, geo.col_rows(), geo.col_cols());
            MatMap<T>(gw->data(), F, geo.col_rows()).noalias() += G * C.transpose();
          }
          if (auto* gb = sink[2]) {
            gb->matrix() += G.rowwise().sum();
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Vec<T> out = x.values().max(T(0));
  return make_result<T>("relu", x.shape(), std::move(out), {x},
                        [xv = x.values()](const Vec<T>& g, detail::GradSink<T>& sink) {
                          if (auto* gx = sink[0]) {
                            *gx += (xv > T(0)).select(g, T(0));
                          }
                        });
}

/// Max pooling over (N,C,H,W) with a square window; trailing rows/columns
/// that do not fill a window are dropped. Ties go to the first maximum.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window = 2, std::size_t stride = 2) {
  detail::require_rank("max_pool2d", x.shape(), 4);
  if (window == 0 || stride == 0 || x.dim(2) < window || x.dim(3) < window) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) +
                     " does not fit input " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t H = x.dim(2), W = x.dim(3);
  const std::size_t OH = (H - window) / stride + 1;
  const std::size_t OW = (W - window) / stride + 1;
  Vec<T> out(static_cast<Eigen::Index>(planes * OH * OW));
  std::vector<std::size_t> argmax(planes * OH * OW);
  const T* xv = x.values().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow) {
        std::size_t best = p * H * W + oh * stride * W + ow * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = p * H * W + (oh * stride + i) * W + ow * stride + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (p * OH + oh) * OW + ow;
        out[static_cast<Eigen::Index>(o)] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return make_result<T>("max_pool2d", {x.dim(0), x.dim(1), OH, OW}, std::move(out), {x},
                        [argmax = std::move(argmax)](const Vec<T>& g,
                                                     detail::GradSink<T>& sink) {
                          if (auto* gx = sink[0]) {
                            for (std::size_t o = 0; o < argmax.size(); ++o) {
                              (*gx)[static_cast<Eigen::Index>(argmax[o])] +=
                                  g[static_cast<Eigen::Index>(o)];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  return make_result<T>("reshape", std::move(shape), x.values(), {x},
                        [](const Vec<T>& g, detail::GradSink<T>& sink) {
                          if (auto* gx = sink[0]) *gx += g;
                        });
}

/// Mean over every element; the result is a rank-0 scalar.
template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto n = static_cast<T>(x.numel());
  Vec<T> out = Vec<T>::Constant(1, x.values().sum() / n);
  return make_result<T>("mean", Shape{}, std::move(out), {x},
                        [n](const Vec<T>& g, detail::GradSink<T>& sink) {
                          if (auto* gx = sink[0]) *gx += g[0] / n;
                        });
}

/// Softmax along the last dimension.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax of a rank-0 tensor");
  const auto cols = static_cast<Eigen::Index>(x.shape().back());
  const auto rows = static_cast<Eigen::Index>(x.numel()) / cols;
  Vec<T> out(x.numel());
  ConstMatMap<T> X(x.values().data(), rows, cols);
  MatMap<T> Y(out.data(), rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mx = X.row(r).maxCoeff();
    Y.row(r) = (X.row(r).array() - mx).exp().matrix();
    Y.row(r) /= Y.row(r).sum();
  }
  return make_result<T>(
      "softmax", x.shape(), out, {x},
      [yv = out, rows, cols](const Vec<T>& g, detail::GradSink<T>& sink) {
        if (auto* gx = sink[0]) {
          ConstMatMap<T> Y(yv.data(), rows, cols);
          ConstMatMap<T> G(g.data(), rows, cols);
          MatMap<T> GX(gx->data(), rows, cols);
          for (Eigen::Index r = 0; r < rows; ++r) {
            const T dot = Y.row(r).dot(G.row(r));
            GX.row(r).array() += Y.row(r).array() * (G.row(r).array() - dot);
          }
        }
      });
}

/// Natural log of (x + 1e-12).
template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  const T floor = static_cast<T>(kLogFloor);
  Vec<T> shifted = x.values() + floor;
  Vec<T> out = shifted.log();
  return make_result<T>("log", x.shape(), std::move(out), {x},
                        [shifted = std::move(shifted)](const Vec<T>& g,
                                                       detail::GradSink<T>& sink) {
                          if (auto* gx = sink[0]) *gx += g / shifted;
                        });
}

// Composites.

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, mul(b, T(-1)));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  return mul(mean(x), static_cast<T>(x.numel()));
}

namespace detail {

template <typename T>
Tensor<T> as_rows(const Tensor<T>& scores) {
  if (scores.rank() == 1) return reshape(scores, {1, scores.dim(0)});
  require_rank("scores", scores.shape(), 2);
  return scores;
}

}  // namespace detail

/// Mean over the batch of -ln softmax(scores)[label]. Accepts (C) with one
/// label or (N,C) with N labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& scores, std::span<const int> labels) {
  auto rows = detail::as_rows(scores);
  const std::size_t n = rows.dim(0), classes = rows.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " score rows");
  }
  Vec<T> onehot = Vec<T>::Zero(static_cast<Eigen::Index>(n * classes));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " outside [0," + std::to_string(classes) + ")");
    }
    onehot[static_cast<Eigen::Index>(i * classes + labels[i])] = T(1);
  }
  auto picked = mul(log(softmax(rows)), Tensor<T>(rows.shape(), std::move(onehot)));
  return mul(mean(picked), -static_cast<T>(classes));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& scores, int label) {
  const int labels[1] = {label};
  return cross_entropy(scores, std::span<const int>(labels));
}

/// Batch mean of the symmetrised KL divergence in bits,
/// 1/2 KL(P||Q) + 1/2 KL(Q||P) = 1/2 sum (P - Q)(log2 P - log2 Q), rowwise.
template <typename T>
Tensor<T> js_divergence(const Tensor<T>& p, const Tensor<T>& q) {
  if (p.shape() != q.shape()) {
    throw ShapeError("js_divergence: shapes " + shape_str(p.shape()) + " and " +
                     shape_str(q.shape()) + " differ");
  }
  const std::size_t classes = p.shape().back();
  auto terms = mul(sub(p, q), sub(log(p), log(q)));
  const T scale = static_cast<T>(classes) / (T(2) * static_cast<T>(std::log(2.0)));
  return mul(mean(terms), scale);
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores) {
  const std::size_t cols = scores.shape().back();
  const std::size_t rows = scores.numel() / cols;
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::Index idx = 0;
    scores.values().segment(static_cast<Eigen::Index>(r * cols),
                            static_cast<Eigen::Index>(cols)).maxCoeff(&idx);
    out[r] = static_cast<std::size_t>(idx);
  }
  return out;
}

}  // namespace scaat
