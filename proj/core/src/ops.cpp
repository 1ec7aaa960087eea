#include "merob/ops.hpp"

#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <limits>

#include "merob/errors.hpp"

namespace merob {

namespace fault {
namespace {
std::atomic<bool> g_conv_flip{false};
}
void set_conv_backward_sign_flip(bool enabled) { g_conv_flip = enabled; }
bool conv_backward_sign_flip() { return g_conv_flip; }
}  // namespace fault

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using BackwardFn = std::function<void(const std::vector<T>&)>;

// Wraps freshly computed values into a tensor and, when any input tracks
// gradients, records the inputs and the backward rule on it.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> fn) {
  auto out = Tensor<T>::from(std::move(shape), std::move(values));
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto* in : inputs) node.parents.push_back(in->node());
    node.backward = std::move(fn);
  }
  return out;
}

template <typename T>
bool tracks(const NodePtr<T>& n) {
  return n->requires_grad;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

struct ImageDims {
  std::size_t n, c, h, w;
  bool batched;
};

ImageDims image_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw DimensionError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_str(s));
}

}  // namespace

ConvGeometry conv_output_size(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                              std::size_t padding, std::size_t stride) {
  if (stride == 0) throw DimensionError("stride must be positive");
  if (kh == 0 || kw == 0) throw DimensionError("window must be non-empty");
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("window " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                         std::to_string(w + 2 * padding));
  }
  return {(h + 2 * padding - kh) / stride + 1, (w + 2 * padding - kw) / stride + 1};
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<T> out(m * n);
  MutMap<T>(out.data(), m, n).noalias() =
      ConstMap<T>(a.values().data(), m, k) * ConstMap<T>(b.values().data(), k, n);

  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](const auto& g) {
    ConstMap<T> gm(g.data(), m, n);
    if (tracks(an)) {
      std::vector<T> ga(m * k);
      MutMap<T>(ga.data(), m, k).noalias() = gm * ConstMap<T>(bn->value->data(), k, n).transpose();
      an->accumulate(ga);
    }
    if (tracks(bn)) {
      std::vector<T> gb(k * n);
      MutMap<T>(gb.data(), k, n).noalias() = ConstMap<T>(an->value->data(), m, k).transpose() * gm;
      bn->accumulate(gb);
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t padding, std::size_t stride) {
  const auto d = image_dims(input.shape(), "conv2d");
  const auto& ks = kernels.shape();
  if (ks.size() != 4 || ks[1] != d.c) {
    throw DimensionError("conv2d: kernels " + shape_str(ks) + " do not match input " +
                         shape_str(input.shape()));
  }
  if (bias.shape() != Shape{ks[0]}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match kernels " +
                         shape_str(ks));
  }
  const std::size_t K = ks[0], kh = ks[2], kw = ks[3];
  const auto geo = conv_output_size(d.h, d.w, kh, kw, padding, stride);
  const std::size_t Ho = geo.out_h, Wo = geo.out_w;
  const std::size_t ckk = d.c * kh * kw;
  const std::size_t positions = Ho * Wo;

  auto in = input.values();
  auto kv = kernels.values();
  auto bv = bias.values();

  // im2col for every sample: cols[n] is (C*kh*kw) x (Ho*Wo).
  auto cols = std::make_shared<std::vector<T>>(d.n * ckk * positions, T(0));
  for (std::size_t n = 0; n < d.n; ++n) {
    T* cn = cols->data() + n * ckk * positions;
    const T* img = in.data() + n * d.c * d.h * d.w;
    for (std::size_t c = 0; c < d.c; ++c) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          T* row = cn + ((c * kh + i) * kw + j) * positions;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                     static_cast<std::ptrdiff_t>(padding);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.h)) continue;
            const T* src = img + (c * d.h + static_cast<std::size_t>(y)) * d.w;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                       static_cast<std::ptrdiff_t>(padding);
              if (x < 0 || x >= static_cast<std::ptrdiff_t>(d.w)) continue;
              row[oy * Wo + ox] = src[x];
            }
          }
        }
      }
    }
  }

  std::vector<T> out(d.n * K * positions);
  ConstMap<T> kmat(kv.data(), K, ckk);
  for (std::size_t n = 0; n < d.n; ++n) {
    MutMap<T> on(out.data() + n * K * positions, K, positions);
    on.noalias() = kmat * ConstMap<T>(cols->data() + n * ckk * positions, ckk, positions);
    for (std::size_t k = 0; k < K; ++k) {
      T* row = out.data() + (n * K + k) * positions;
      for (std::size_t p = 0; p < positions; ++p) row[p] += bv[k];
    }
  }

  Shape out_shape = d.batched ? Shape{d.n, K, Ho, Wo} : Shape{K, Ho, Wo};
  NodePtr<T> xn = input.node(), kn = kernels.node(), bn = bias.node();
  return make_result<T>(
      std::move(out_shape), std::move(out), {&input, &kernels, &bias},
      [=](const std::vector<T>& g) {
        ConstMap<T> kmat_b(kn->value->data(), K, ckk);
        if (tracks(kn)) {
          std::vector<T> gk(K * ckk, T(0));
          MutMap<T> gkm(gk.data(), K, ckk);
          for (std::size_t n = 0; n < d.n; ++n) {
            gkm.noalias() += ConstMap<T>(g.data() + n * K * positions, K, positions) *
                             ConstMap<T>(cols->data() + n * ckk * positions, ckk, positions)
                                 .transpose();
          }
          kn->accumulate(gk);
        }
        if (tracks(bn)) {
          std::vector<T> gb(K, T(0));
          for (std::size_t n = 0; n < d.n; ++n) {
            for (std::size_t k = 0; k < K; ++k) {
              const T* row = g.data() + (n * K + k) * positions;
              T acc = 0;
              for (std::size_t p = 0; p < positions; ++p) acc += row[p];
              gb[k] += acc;
            }
          }
          bn->accumulate(gb);
        }
        if (tracks(xn)) {
          std::vector<T> gx(d.n * d.c * d.h * d.w, T(0));
          std::vector<T> gcols(ckk * positions);
          for (std::size_t n = 0; n < d.n; ++n) {
            MutMap<T>(gcols.data(), ckk, positions).noalias() =
                kmat_b.transpose() * ConstMap<T>(g.data() + n * K * positions, K, positions);
            T* img = gx.data() + n * d.c * d.h * d.w;
            for (std::size_t c = 0; c < d.c; ++c) {
              for (std::size_t i = 0; i < kh; ++i) {
                for (std::size_t j = 0; j < kw; ++j) {
                  const T* row = gcols.data() + ((c * kh + i) * kw + j) * positions;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                             static_cast<std::ptrdiff_t>(padding);
                    if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    T* dst = img + (c * d.h + static_cast<std::size_t>(y)) * d.w;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                               static_cast<std::ptrdiff_t>(padding);
                      if (x < 0 || x >= static_cast<std::ptrdiff_t>(d.w)) continue;
                      dst[x] += row[oy * Wo + ox];
                    }
                  }
                }
              }
            }
          }
          if (fault::conv_backward_sign_flip()) {
            for (auto& v : gx) v = -v;
          }
          xn->accumulate(gx);
        }
      });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const auto d = image_dims(input.shape(), "maxpool2d");
  if (window > d.h || window > d.w) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " exceeds input " +
                         shape_str(input.shape()));
  }
  const auto geo = conv_output_size(d.h, d.w, window, window, 0, stride);
  const std::size_t Ho = geo.out_h, Wo = geo.out_w;
  auto in = input.values();
  std::vector<T> out(d.n * d.c * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const std::size_t base = plane * d.h * d.w;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = base + (oy * stride) * d.w + ox * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * stride + i) * d.w + ox * stride + j;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (plane * Ho + oy) * Wo + ox;
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  Shape out_shape = d.batched ? Shape{d.n, d.c, Ho, Wo} : Shape{d.c, Ho, Wo};
  NodePtr<T> xn = input.node();
  const std::size_t in_size = in.size();
  return make_result<T>(std::move(out_shape), std::move(out), {&input},
                        [xn, argmax, in_size](const std::vector<T>& g) {
                          std::vector<T> gx(in_size, T(0));
                          for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
                          xn->accumulate(gx);
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  const auto d = image_dims(input.shape(), "global_avg_pool");
  const std::size_t hw = d.h * d.w;
  auto in = input.values();
  std::vector<T> out(d.n * d.c);
  for (std::size_t plane = 0; plane < out.size(); ++plane) {
    T acc = 0;
    for (std::size_t p = 0; p < hw; ++p) acc += in[plane * hw + p];
    out[plane] = acc / static_cast<T>(hw);
  }
  Shape out_shape = d.batched ? Shape{d.n, d.c} : Shape{d.c};
  NodePtr<T> xn = input.node();
  return make_result<T>(std::move(out_shape), std::move(out), {&input},
                        [xn, hw](const std::vector<T>& g) {
                          std::vector<T> gx(g.size() * hw);
                          const T scale = T(1) / static_cast<T>(hw);
                          for (std::size_t plane = 0; plane < g.size(); ++plane) {
                            for (std::size_t p = 0; p < hw; ++p) {
                              gx[plane * hw + p] = g[plane] * scale;
                            }
                          }
                          xn->accumulate(gx);
                        });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  auto in = x.values();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
  NodePtr<T> xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, slope](const std::vector<T>& g) {
    const auto& v = *xn->value;
    std::vector<T> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = v[i] > T(0) ? g[i] : slope * g[i];
    xn->accumulate(gx);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](const std::vector<T>& g) {
    if (tracks(an)) an->accumulate(g);
    if (tracks(bn)) bn->accumulate(g);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](const std::vector<T>& g) {
    if (tracks(an)) an->accumulate(g);
    if (tracks(bn)) {
      std::vector<T> neg(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      bn->accumulate(neg);
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const auto& s = x.shape();
  if (s.size() != 2 || bias.shape() != Shape{s[1]}) {
    throw DimensionError("add_bias: shape mismatch " + shape_str(s) + " vs " +
                         shape_str(bias.shape()));
  }
  const std::size_t rows = s[0], cols = s[1];
  auto xv = x.values(), bv = bias.values();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  }
  NodePtr<T> xn = x.node(), bn = bias.node();
  return make_result<T>(s, std::move(out), {&x, &bias},
                        [xn, bn, rows, cols](const std::vector<T>& g) {
                          if (tracks(xn)) xn->accumulate(g);
                          if (tracks(bn)) {
                            std::vector<T> gb(cols, T(0));
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                            }
                            bn->accumulate(gb);
                          }
                        });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  NodePtr<T> xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, s](const std::vector<T>& g) {
    std::vector<T> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * s;
    xn->accumulate(gx);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.values()) acc += v;
  NodePtr<T> xn = x.node();
  const std::size_t n = x.numel();
  return make_result<T>(Shape{}, {acc}, {&x}, [xn, n](const std::vector<T>& g) {
    std::vector<T> gx(n, g[0]);
    xn->accumulate(gx);
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sign(const Tensor<T>& x) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>((xv[i] > T(0)) - (xv[i] < T(0)));
  }
  return Tensor<T>::from(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw UsageError("clamp: lower bound above upper bound");
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
  NodePtr<T> xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, lo, hi](const std::vector<T>& g) {
    const auto& v = *xn->value;
    std::vector<T> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (v[i] >= lo && v[i] <= hi) ? g[i] : T(0);
    xn->accumulate(gx);
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  if (pred.numel() == 0) throw DimensionError("mse_loss of empty tensors");
  auto pv = pred.values(), tv = target.values();
  const std::size_t n = pv.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = pv[i] - tv[i];
    acc += diff * diff;
  }
  NodePtr<T> pn = pred.node(), tn = target.node();
  return make_result<T>(Shape{}, {acc / static_cast<T>(n)}, {&pred, &target},
                        [pn, tn, n](const std::vector<T>& g) {
                          const auto& p = *pn->value;
                          const auto& t = *tn->value;
                          const T scale = T(2) * g[0] / static_cast<T>(n);
                          std::vector<T> gp(n);
                          for (std::size_t i = 0; i < n; ++i) gp[i] = scale * (p[i] - t[i]);
                          if (tracks(pn)) pn->accumulate(gp);
                          if (tracks(tn)) {
                            for (auto& v : gp) v = -v;
                            tn->accumulate(gp);
                          }
                        });
}

#define MEROB_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> sign(const Tensor<T>&);                                                   \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                            \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);

MEROB_INSTANTIATE_OPS(float)
MEROB_INSTANTIATE_OPS(double)

#undef MEROB_INSTANTIATE_OPS

}  // namespace merob
