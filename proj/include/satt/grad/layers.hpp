#pragma once

// Layers needed by the toy residual network: 2-D convolution, per-channel
// spatial normalisation, ReLU, linear head and softmax cross-entropy.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "satt/grad/ops.hpp"

namespace satt::grad {

namespace detail {

// Dot product with eight independent partial sums, combined in a fixed order.
template <std::floating_point T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

struct ConvGeometry {
  std::size_t cin, cout, kernel, stride, pad, h, w, ho, wo;

  std::size_t rows() const { return cin * kernel * kernel; }
  std::size_t cols() const { return ho * wo; }
};

// Row r = (ci*K + ky)*K + kx of the batched column matrix holds, for every
// sample n and output pixel p, x[n][ci][oy*s + ky - pad][ox*s + kx - pad]
// (0 outside). Column index is n * (ho*wo) + p; row stride is ld.
template <std::floating_point T>
void im2col(const T* x, const ConvGeometry& g, T* col, std::size_t ld) {
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((ci * g.kernel + ky) * g.kernel + kx) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.wo + ox] = inside ? x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
                                             static_cast<std::size_t>(ix)]
                                         : T(0);
          }
        }
      }
    }
  }
}

template <std::floating_point T>
void col2im_add(const T* col, const ConvGeometry& g, T* x, std::size_t ld) {
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((ci * g.kernel + ky) * g.kernel + kx) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

// C (m x p) += A (m x k) * B (k x p), all row-major. Four rows of C are
// updated per pass over a column block of B so each B load feeds four FMAs.
template <std::floating_point T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p) {
  constexpr std::size_t kBlock = 512;
  for (std::size_t p0 = 0; p0 < p; p0 += kBlock) {
    const std::size_t pn = std::min(kBlock, p - p0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* c0 = c + i * p + p0;
      T* c1 = c0 + p;
      T* c2 = c1 + p;
      T* c3 = c2 + p;
      for (std::size_t l = 0; l < k; ++l) {
        const T a0 = a[i * k + l], a1 = a[(i + 1) * k + l], a2 = a[(i + 2) * k + l], a3 = a[(i + 3) * k + l];
        const T* br = b + l * p + p0;
        for (std::size_t j = 0; j < pn; ++j) {
          const T bv = br[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* ci = c + i * p + p0;
      for (std::size_t l = 0; l < k; ++l) {
        const T av = a[i * k + l];
        const T* br = b + l * p + p0;
        for (std::size_t j = 0; j < pn; ++j) ci[j] += av * br[j];
      }
    }
  }
}

template <std::floating_point T>
std::vector<T> batched_im2col(const Tensor4<T>& x, const ConvGeometry& g) {
  const std::size_t ld = x.n() * g.cols();
  std::vector<T> col(g.rows() * ld);
  for (std::size_t n = 0; n < x.n(); ++n) {
    im2col(x.data().data() + x.offset(n, 0, 0, 0), g, col.data() + n * g.cols(), ld);
  }
  return col;
}

}  // namespace detail

// weight is (cout, cin, k, k); no bias (a normalisation always follows).
template <std::floating_point T>
Var conv2d(Tape<T>& tape, Var x, Var weight, std::size_t stride, std::size_t pad) {
  const Shape4 xs = tape.shape(x);
  const Shape4 ws = tape.shape(weight);
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ShapeError("conv2d: weight " + ws.str() + " does not fit input " + xs.str());
  }
  if (stride == 0 || xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
    throw ShapeError("conv2d: kernel larger than padded input " + xs.str());
  }
  const detail::ConvGeometry g{xs.c,
                               ws.n,
                               ws.h,
                               stride,
                               pad,
                               xs.h,
                               xs.w,
                               (xs.h + 2 * pad - ws.h) / stride + 1,
                               (xs.w + 2 * pad - ws.w) / stride + 1};
  const std::size_t ld = xs.n * g.cols();
  const std::vector<T> col = detail::batched_im2col(tape.value(x), g);
  std::vector<T> y(g.cout * ld, T(0));
  detail::gemm_acc(tape.value(weight).data().data(), col.data(), y.data(), g.cout, g.rows(), ld);
  Tensor4<T> out(Shape4{xs.n, g.cout, g.ho, g.wo});
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* src = y.data() + co * ld + n * g.cols();
      std::copy(src, src + g.cols(), out.plane(n, co).begin());
    }
  }
  return tape.record("conv2d", std::move(out), [x, weight, g, ld](const Tensor4<T>& grad_out, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const Tensor4<T>& wv = t.value(weight);
    const std::size_t N = xv.n();
    // Output gradient as a (cout x N*ho*wo) matrix.
    std::vector<T> gy(g.cout * ld);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const auto src = grad_out.plane(n, co);
        std::copy(src.begin(), src.end(), gy.begin() + static_cast<std::ptrdiff_t>(co * ld + n * g.cols()));
      }
    }
    const std::vector<T> col = detail::batched_im2col(xv, g);
    Tensor4<T> gw(wv.shape());
    for (std::size_t co = 0; co < g.cout; ++co) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        gw[co * g.rows() + r] = detail::dot(gy.data() + co * ld, col.data() + r * ld, ld);
      }
    }
    std::vector<T> wt(g.rows() * g.cout);
    for (std::size_t co = 0; co < g.cout; ++co) {
      for (std::size_t r = 0; r < g.rows(); ++r) wt[r * g.cout + co] = wv[co * g.rows() + r];
    }
    std::vector<T> dcol(g.rows() * ld, T(0));
    detail::gemm_acc(wt.data(), gy.data(), dcol.data(), g.rows(), g.cout, ld);
    Tensor4<T> gx(xv.shape());
    for (std::size_t n = 0; n < N; ++n) {
      detail::col2im_add(dcol.data() + n * g.cols(), g, gx.data().data() + gx.offset(n, 0, 0, 0), ld);
    }
    t.accumulate(x, gx);
    t.accumulate(weight, gw);
  });
}

// Per-(sample, channel) normalisation over h*w with biased variance, then a
// per-channel affine. gamma and beta are (1, c, 1, 1).
template <std::floating_point T>
Var channel_norm(Tape<T>& tape, Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Tensor4<T>& xv = tape.value(x);
  const auto gm = values(tape, gamma);
  const auto bt = values(tape, beta);
  if (gm.size() != xv.c() || bt.size() != xv.c()) {
    throw ShapeError("channel_norm: affine lengths do not match c=" + std::to_string(xv.c()));
  }
  const std::size_t hw = xv.shape().spatial();
  Tensor4<T> out(xv.shape());
  Tensor4<T> xhat(xv.shape());
  std::vector<double> inv(xv.n() * xv.c());
  for (std::size_t n = 0; n < xv.n(); ++n) {
    for (std::size_t c = 0; c < xv.c(); ++c) {
      auto xp = xv.plane(n, c);
      const double mean = plane_mean(xp);
      const double iv = 1.0 / std::sqrt(plane_variance(xp, mean) + eps);
      inv[n * xv.c() + c] = iv;
      auto hp = xhat.plane(n, c);
      auto op = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        hp[i] = static_cast<T>((static_cast<double>(xp[i]) - mean) * iv);
        op[i] = gm[c] * hp[i] + bt[c];
      }
    }
  }
  auto backward = [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv)](const Tensor4<T>& g,
                                                                                Tape<T>& t) {
    const auto gm = values(t, gamma);
    const std::size_t C = xhat.c();
    const std::size_t hw = xhat.shape().spatial();
    Tensor4<T> gx(xhat.shape());
    Tensor4<T> ggamma(t.shape(gamma));
    Tensor4<T> gbeta(t.shape(beta));
    for (std::size_t n = 0; n < xhat.n(); ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        auto gp = g.plane(n, c);
        auto hp = xhat.plane(n, c);
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_g += gp[i];
          sum_gh += static_cast<double>(gp[i]) * hp[i];
        }
        ggamma[c] += static_cast<T>(sum_gh);
        gbeta[c] += static_cast<T>(sum_g);
        const double scale = gm[c] * inv[n * C + c];
        const double mean_g = sum_g / static_cast<double>(hw);
        const double mean_gh = sum_gh / static_cast<double>(hw);
        auto dst = gx.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          dst[i] = static_cast<T>(scale * (gp[i] - mean_g - hp[i] * mean_gh));
        }
      }
    }
    t.accumulate(x, gx);
    t.accumulate(gamma, ggamma);
    t.accumulate(beta, gbeta);
  };
  return tape.record("channel_norm", std::move(out), std::move(backward));
}

template <std::floating_point T>
Var relu(Tape<T>& tape, Var x) {
  Tensor4<T> out = tape.value(x);
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return tape.record("relu", std::move(out), [x](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    Tensor4<T> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = xv[i] > T(0) ? g[i] : T(0);
    t.accumulate(x, gx);
  });
}

// x is (n, c, 1, 1); weight (classes, c, 1, 1); bias (1, classes, 1, 1).
template <std::floating_point T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const Tensor4<T>& xv = tape.value(x);
  const Tensor4<T>& wv = tape.value(weight);
  const std::size_t C = xv.c() * xv.h() * xv.w();
  const std::size_t K = wv.n();
  if (wv.size() != K * C || tape.shape(bias).size() != K) {
    throw ShapeError("linear: weight " + wv.shape().str() + " does not fit input " + xv.shape().str());
  }
  Tensor4<T> out(Shape4{xv.n(), K, 1, 1});
  const auto bv = values(tape, bias);
  for (std::size_t n = 0; n < xv.n(); ++n) {
    const T* xr = xv.data().data() + n * C;
    for (std::size_t k = 0; k < K; ++k) out(n, k, 0, 0) = bv[k] + detail::dot(wv.data().data() + k * C, xr, C);
  }
  return tape.record("linear", std::move(out), [x, weight, bias, C, K](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const Tensor4<T>& wv = t.value(weight);
    Tensor4<T> gx(xv.shape());
    Tensor4<T> gw(wv.shape());
    Tensor4<T> gb(t.shape(bias));
    for (std::size_t n = 0; n < xv.n(); ++n) {
      const T* xr = xv.data().data() + n * C;
      T* gxr = gx.data().data() + n * C;
      for (std::size_t k = 0; k < K; ++k) {
        const T gk = g(n, k, 0, 0);
        gb[k] += gk;
        const T* wr = wv.data().data() + k * C;
        T* gwr = gw.data().data() + k * C;
        for (std::size_t c = 0; c < C; ++c) {
          gwr[c] += gk * xr[c];
          gxr[c] += gk * wr[c];
        }
      }
    }
    t.accumulate(x, gx);
    t.accumulate(weight, gw);
    t.accumulate(bias, gb);
  });
}

// Mean softmax cross-entropy over the batch; logits are (n, classes, 1, 1).
// Returns a (1, 1, 1, 1) scalar.
template <std::floating_point T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const Tensor4<T>& lv = tape.value(logits);
  const std::size_t N = lv.n();
  const std::size_t K = lv.c();
  if (labels.size() != N) throw ShapeError("softmax_cross_entropy: label count does not match batch");
  Tensor4<T> prob(lv.shape());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " out of range");
    }
    double mx = lv(n, 0, 0, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(lv(n, k, 0, 0)));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(lv(n, k, 0, 0)) - mx);
    for (std::size_t k = 0; k < K; ++k) {
      prob(n, k, 0, 0) = static_cast<T>(std::exp(static_cast<double>(lv(n, k, 0, 0)) - mx) / z);
    }
    loss += std::log(z) + mx - static_cast<double>(lv(n, static_cast<std::size_t>(labels[n]), 0, 0));
  }
  Tensor4<T> out(Shape4{1, 1, 1, 1}, static_cast<T>(loss / static_cast<double>(N)));
  std::vector<int> lab(labels.begin(), labels.end());
  auto backward = [logits, prob = std::move(prob), lab = std::move(lab)](const Tensor4<T>& g, Tape<T>& t) {
    Tensor4<T> gl(prob.shape());
    const T scale = g[0] / static_cast<T>(prob.n());
    for (std::size_t n = 0; n < prob.n(); ++n) {
      for (std::size_t k = 0; k < prob.c(); ++k) {
        const T onehot = static_cast<std::size_t>(lab[n]) == k ? T(1) : T(0);
        gl(n, k, 0, 0) = scale * (prob(n, k, 0, 0) - onehot);
      }
    }
    t.accumulate(logits, gl);
  };
  return tape.record("softmax_cross_entropy", std::move(out), std::move(backward));
}

}  // namespace satt::grad
