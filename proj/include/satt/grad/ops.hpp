#pragma once

// Tape-recorded versions of the tensor-core and attention operations. Each
// op computes its forward value with the plain implementation and registers
// the analytic adjoint.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "satt/attention.hpp"
#include "satt/grad/tape.hpp"
#include "satt/ops.hpp"

namespace satt::grad {

template <std::floating_point T>
std::span<const T> values(const Tape<T>& tape, Var v) {
  return tape.value(v).data();
}

// Wraps a parameter vector as a (1, len, 1, 1) leaf.
template <std::floating_point T>
Var vector_leaf(Tape<T>& tape, const std::vector<T>& v, std::string name) {
  return tape.leaf(Tensor4<T>(Shape4{1, v.size(), 1, 1}, v), std::move(name));
}

template <std::floating_point T>
std::vector<T> grad_vector(const Tape<T>& tape, Var v) {
  return tape.grad(v).vec();
}

// ---------------------------------------------------------------------------
// Channel restructuring.

template <std::floating_point T>
std::vector<Var> split_channels(Tape<T>& tape, Var x, std::size_t parts) {
  auto pieces = satt::split_channels(tape.value(x), parts);
  std::vector<Var> out;
  out.reserve(parts);
  const std::size_t width = tape.shape(x).c / parts;
  for (std::size_t p = 0; p < parts; ++p) {
    out.push_back(tape.record("split_channels", std::move(pieces[p]),
                              [x, p, width](const Tensor4<T>& g, Tape<T>& t) {
                                Tensor4<T>& gx = t.grad_buffer(x);
                                for (std::size_t n = 0; n < g.n(); ++n) {
                                  for (std::size_t c = 0; c < width; ++c) {
                                    auto src = g.plane(n, c);
                                    auto dst = gx.plane(n, p * width + c);
                                    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                                  }
                                }
                              }));
  }
  return out;
}

template <std::floating_point T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& parts) {
  std::vector<Tensor4<T>> vals;
  vals.reserve(parts.size());
  for (Var v : parts) vals.push_back(tape.value(v));
  auto out = satt::concat_channels(vals);
  return tape.record("concat_channels", std::move(out), [parts](const Tensor4<T>& g, Tape<T>& t) {
    std::size_t offset = 0;
    for (Var v : parts) {
      Tensor4<T>& gv = t.grad_buffer(v);
      for (std::size_t n = 0; n < g.n(); ++n) {
        for (std::size_t c = 0; c < gv.c(); ++c) {
          auto src = g.plane(n, offset + c);
          auto dst = gv.plane(n, c);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        }
      }
      offset += gv.c();
    }
  });
}

// Adjoint of a permutation is its inverse.
template <std::floating_point T>
Var channel_shuffle(Tape<T>& tape, Var x, std::size_t groups) {
  auto out = satt::channel_shuffle(tape.value(x), groups);
  return tape.record("channel_shuffle", std::move(out), [x, groups](const Tensor4<T>& g, Tape<T>& t) {
    t.accumulate(x, satt::channel_unshuffle(g, groups));
  });
}

// ---------------------------------------------------------------------------
// Pointwise.

template <std::floating_point T>
Var add(Tape<T>& tape, Var a, Var b) {
  auto out = satt::add(tape.value(a), tape.value(b));
  return tape.record("add", std::move(out), [a, b](const Tensor4<T>& g, Tape<T>& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <std::floating_point T>
Var mul(Tape<T>& tape, Var a, Var b) {
  auto out = satt::mul(tape.value(a), tape.value(b));
  return tape.record("mul", std::move(out), [a, b](const Tensor4<T>& g, Tape<T>& t) {
    t.accumulate(a, satt::mul(g, t.value(b)));
    t.accumulate(b, satt::mul(g, t.value(a)));
  });
}

// w and b are (1, c, 1, 1) leaves.
template <std::floating_point T>
Var scale_shift(Tape<T>& tape, Var x, Var w, Var b) {
  auto out = satt::scale_shift(tape.value(x), values(tape, w), values(tape, b));
  return tape.record("scale_shift", std::move(out), [x, w, b](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const auto wv = values(t, w);
    Tensor4<T> gx(xv.shape());
    Tensor4<T> gw(t.shape(w));
    Tensor4<T> gb(t.shape(b));
    for (std::size_t n = 0; n < xv.n(); ++n) {
      for (std::size_t c = 0; c < xv.c(); ++c) {
        auto gp = g.plane(n, c);
        auto xp = xv.plane(n, c);
        auto dst = gx.plane(n, c);
        double sw = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < gp.size(); ++i) {
          dst[i] = wv[c] * gp[i];
          sw += static_cast<double>(gp[i]) * xp[i];
          sb += gp[i];
        }
        gw[c] += static_cast<T>(sw);
        gb[c] += static_cast<T>(sb);
      }
    }
    t.accumulate(x, gx);
    t.accumulate(w, gw);
    t.accumulate(b, gb);
  });
}

template <std::floating_point T>
Var sigmoid(Tape<T>& tape, Var x) {
  auto out = satt::sigmoid(tape.value(x));
  Tensor4<T> saved = out;
  return tape.record("sigmoid", std::move(out), [x, y = std::move(saved)](const Tensor4<T>& g, Tape<T>& t) {
    Tensor4<T> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i] * (T(1) - y[i]);
    t.accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Statistics.

template <std::floating_point T>
Var mean_spatial(Tape<T>& tape, Var x) {
  auto out = satt::mean_spatial(tape.value(x));
  return tape.record("mean_spatial", std::move(out), [x](const Tensor4<T>& g, Tape<T>& t) {
    Tensor4<T>& gx = t.grad_buffer(x);
    const T inv = T(1) / static_cast<T>(gx.shape().spatial());
    for (std::size_t n = 0; n < gx.n(); ++n) {
      for (std::size_t c = 0; c < gx.c(); ++c) {
        const T share = g(n, c, 0, 0) * inv;
        for (T& v : gx.plane(n, c)) v += share;
      }
    }
  });
}

// Biased variance of x around a supplied (n, c, 1, 1) mean.
template <std::floating_point T>
Var var_spatial(Tape<T>& tape, Var x, Var mean) {
  auto out = satt::var_spatial(tape.value(x), tape.value(mean));
  return tape.record("var_spatial", std::move(out), [x, mean](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const Tensor4<T>& mv = t.value(mean);
    Tensor4<T> gx(xv.shape());
    Tensor4<T> gm(mv.shape());
    const double hw = static_cast<double>(xv.shape().spatial());
    for (std::size_t n = 0; n < xv.n(); ++n) {
      for (std::size_t c = 0; c < xv.c(); ++c) {
        const double mu = mv(n, c, 0, 0);
        const double scale = 2.0 * static_cast<double>(g(n, c, 0, 0)) / hw;
        auto xp = xv.plane(n, c);
        auto dst = gx.plane(n, c);
        double sum_dev = 0.0;
        for (std::size_t i = 0; i < xp.size(); ++i) {
          const double d = xp[i] - mu;
          dst[i] = static_cast<T>(scale * d);
          sum_dev += d;
        }
        gm(n, c, 0, 0) = static_cast<T>(-scale * sum_dev);
      }
    }
    t.accumulate(x, gx);
    t.accumulate(mean, gm);
  });
}

// ---------------------------------------------------------------------------
// Attention branches.

namespace detail {

// Gradients of the gate transform: given dz (per logit, for one column of k
// statistics t), accumulate dW/db and return dt.
template <std::floating_point T>
void gate_transform_backward(GateTransform mode, std::span<const T> w, std::span<const double> t,
                             std::span<const double> dz, std::span<double> dw, std::span<double> db,
                             std::span<double> dt) {
  const std::size_t k = t.size();
  switch (mode) {
    case GateTransform::affine:
      for (std::size_t j = 0; j < k; ++j) {
        dw[j] += dz[j] * t[j];
        db[j] += dz[j];
        dt[j] = w[j] * dz[j];
      }
      return;
    case GateTransform::conv1x1:
      for (std::size_t l = 0; l < k; ++l) dt[l] = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        db[j] += dz[j];
        for (std::size_t l = 0; l < k; ++l) {
          dw[j * k + l] += dz[j] * t[l];
          dt[l] += w[j * k + l] * dz[j];
        }
      }
      return;
    case GateTransform::identity:
      for (std::size_t j = 0; j < k; ++j) dt[j] = dz[j];
      return;
  }
}

template <std::floating_point T>
void accumulate_vector(Tape<T>& t, Var v, std::span<const double> g) {
  Tensor4<T>& buf = t.grad_buffer(v);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += static_cast<T>(g[i]);
}

}  // namespace detail

template <std::floating_point T>
Var channel_branch(Tape<T>& tape, Var x, Var w, Var b, GateTransform mode = GateTransform::affine) {
  auto out = satt::channel_branch(tape.value(x), values(tape, w), values(tape, b), mode);
  return tape.record("channel_branch", std::move(out), [x, w, b, mode](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const auto wv = values(t, w);
    const auto bv = values(t, b);
    const std::size_t k = xv.c();
    const std::size_t hw = xv.shape().spatial();
    std::vector<T> stats(k);
    std::vector<double> s(k), dz(k), ds(k), dw(wv.size(), 0.0), db(bv.size(), 0.0);
    Tensor4<T> gx(xv.shape());
    for (std::size_t n = 0; n < xv.n(); ++n) {
      for (std::size_t j = 0; j < k; ++j) {
        stats[j] = static_cast<T>(plane_mean(xv.plane(n, j)));
        s[j] = stats[j];
      }
      for (std::size_t j = 0; j < k; ++j) {
        const double gate = satt::sigmoid(satt::detail::gate_logit<T>(mode, wv, bv, stats, j));
        auto gp = g.plane(n, j);
        auto xp = xv.plane(n, j);
        auto dst = gx.plane(n, j);
        double dgate = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          dgate += static_cast<double>(gp[i]) * xp[i];
          dst[i] = static_cast<T>(gate * gp[i]);
        }
        dz[j] = dgate * gate * (1.0 - gate);
      }
      detail::gate_transform_backward<T>(mode, wv, s, dz, dw, db, ds);
      for (std::size_t j = 0; j < k; ++j) {
        const double share = ds[j] / static_cast<double>(hw);
        for (T& v : gx.plane(n, j)) v = static_cast<T>(v + share);
      }
    }
    t.accumulate(x, gx);
    if (mode != GateTransform::identity) {
      detail::accumulate_vector<T>(t, w, dw);
      detail::accumulate_vector<T>(t, b, db);
    }
  });
}

template <std::floating_point T>
Var spatial_branch(Tape<T>& tape, Var x, Var w, Var b, Var gamma, Var beta, double eps, bool with_gn,
                   GateTransform mode = GateTransform::affine) {
  auto out = satt::spatial_branch(tape.value(x), values(tape, w), values(tape, b), values(tape, gamma),
                                  values(tape, beta), eps, with_gn, mode);
  auto backward = [x, w, b, gamma, beta, eps, with_gn, mode](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const auto wv = values(t, w);
    const auto bv = values(t, b);
    const auto gm = values(t, gamma);
    const auto bt = values(t, beta);
    const std::size_t k = xv.c();
    const std::size_t hw = xv.shape().spatial();
    Tensor4<T> gx(xv.shape());
    std::vector<double> dw(wv.size(), 0.0), db(bv.size(), 0.0), dgamma(k, 0.0), dbeta(k, 0.0);
    std::vector<double> xhat(k * hw), inv(k), du(k * hw);
    std::vector<T> u(k * hw);
    std::vector<double> ucol(k), dz(k), ducol(k);
    for (std::size_t n = 0; n < xv.n(); ++n) {
      for (std::size_t j = 0; j < k; ++j) {
        auto xp = xv.plane(n, j);
        if (with_gn) {
          const double mean = plane_mean(xp);
          inv[j] = 1.0 / std::sqrt(plane_variance(xp, mean) + eps);
          for (std::size_t i = 0; i < hw; ++i) {
            const T xh = static_cast<T>((static_cast<double>(xp[i]) - mean) * inv[j]);
            xhat[j * hw + i] = xh;
            u[j * hw + i] = gm[j] * xh + bt[j];
          }
        } else {
          for (std::size_t i = 0; i < hw; ++i) u[j * hw + i] = xp[i];
        }
      }
      std::vector<T> column(k);
      for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          column[j] = u[j * hw + i];
          ucol[j] = column[j];
        }
        for (std::size_t j = 0; j < k; ++j) {
          const double gate = satt::sigmoid(satt::detail::gate_logit<T>(mode, wv, bv, column, j));
          const double gy = g(n, j, i / xv.w(), i % xv.w());
          const double xval = xv(n, j, i / xv.w(), i % xv.w());
          gx(n, j, i / xv.w(), i % xv.w()) = static_cast<T>(gate * gy);
          dz[j] = gy * xval * gate * (1.0 - gate);
        }
        detail::gate_transform_backward<T>(mode, wv, ucol, dz, dw, db, ducol);
        for (std::size_t j = 0; j < k; ++j) du[j * hw + i] = ducol[j];
      }
      for (std::size_t j = 0; j < k; ++j) {
        auto dst = gx.plane(n, j);
        if (!with_gn) {
          for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<T>(dst[i] + du[j * hw + i]);
          continue;
        }
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = du[j * hw + i];
          dgamma[j] += d * xhat[j * hw + i];
          dbeta[j] += d;
          const double dxh = d * gm[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat[j * hw + i];
        }
        const double mean_dxhat = sum_dxhat / static_cast<double>(hw);
        const double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) {
          const double dxh = du[j * hw + i] * gm[j];
          const double dx = inv[j] * (dxh - mean_dxhat - xhat[j * hw + i] * mean_dxhat_xhat);
          dst[i] = static_cast<T>(dst[i] + dx);
        }
      }
    }
    t.accumulate(x, gx);
    if (mode != GateTransform::identity) {
      detail::accumulate_vector<T>(t, w, dw);
      detail::accumulate_vector<T>(t, b, db);
    }
    if (with_gn) {
      detail::accumulate_vector<T>(t, gamma, dgamma);
      detail::accumulate_vector<T>(t, beta, dbeta);
    }
  };
  return tape.record("spatial_branch", std::move(out), std::move(backward));
}

// ---------------------------------------------------------------------------
// Whole module.

struct SaVars {
  Var w1, b1, w2, b2, gn_gamma, gn_beta;
};

template <std::floating_point T>
SaVars sa_leaves(Tape<T>& tape, const SaParams<T>& p, const std::string& prefix = "") {
  return SaVars{vector_leaf(tape, p.w1, prefix + "w1"),       vector_leaf(tape, p.b1, prefix + "b1"),
                vector_leaf(tape, p.w2, prefix + "w2"),       vector_leaf(tape, p.b2, prefix + "b2"),
                vector_leaf(tape, p.gn_gamma, prefix + "gn_gamma"),
                vector_leaf(tape, p.gn_beta, prefix + "gn_beta")};
}

// Gradients of every SA parameter in SaParams layout.
template <std::floating_point T>
SaParams<T> sa_grads(const Tape<T>& tape, const SaVars& v, const SaParams<T>& like) {
  SaParams<T> g = like;
  g.w1 = grad_vector(tape, v.w1);
  g.b1 = grad_vector(tape, v.b1);
  g.w2 = grad_vector(tape, v.w2);
  g.b2 = grad_vector(tape, v.b2);
  g.gn_gamma = grad_vector(tape, v.gn_gamma);
  g.gn_beta = grad_vector(tape, v.gn_beta);
  return g;
}

// Records the literal pipeline: group split, half split, both branches,
// concatenations and the final shuffle.
template <std::floating_point T>
Var sa_forward(Tape<T>& tape, Var x, const SaVars& p, const SaConfig& cfg) {
  const std::size_t C = tape.shape(x).c;
  cfg.validate(C);
  const std::size_t k = cfg.branch_width(C);
  const GateTransform mode = cfg.transform();
  const std::size_t wlen = mode == GateTransform::conv1x1 ? k * k : k;
  if (mode != GateTransform::identity &&
      (tape.shape(p.w1).size() != wlen || tape.shape(p.w2).size() != wlen)) {
    throw ShapeError("sa_forward: gate weight length does not match C/2G=" + std::to_string(k));
  }
  for (Var v : {p.b1, p.b2, p.gn_gamma, p.gn_beta}) {
    if (tape.shape(v).size() != k) {
      throw ShapeError("sa_forward: parameter '" + tape.name(v) + "' length does not match C/2G=" +
                       std::to_string(k));
    }
  }
  const auto groups = split_channels(tape, x, cfg.groups);
  std::vector<Var> merged;
  merged.reserve(cfg.groups);
  for (Var group : groups) {
    const auto halves = split_channels(tape, group, 2);
    Var a = channel_branch(tape, halves[0], p.w1, p.b1, mode);
    Var s = spatial_branch(tape, halves[1], p.w2, p.b2, p.gn_gamma, p.gn_beta, cfg.gn_epsilon,
                           cfg.enable_gn, mode);
    merged.push_back(concat_channels(tape, std::vector<Var>{a, s}));
  }
  Var out = concat_channels(tape, merged);
  return cfg.enable_shuffle ? channel_shuffle(tape, out, cfg.shuffle_groups) : out;
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation.

struct SeVars {
  Var fc1, b1, fc2, b2;
};

template <std::floating_point T>
SeVars se_leaves(Tape<T>& tape, const SeParams<T>& p, const std::string& prefix = "") {
  return SeVars{vector_leaf(tape, p.fc1, prefix + "fc1"), vector_leaf(tape, p.b1, prefix + "b1"),
                vector_leaf(tape, p.fc2, prefix + "fc2"), vector_leaf(tape, p.b2, prefix + "b2")};
}

template <std::floating_point T>
Var se_forward(Tape<T>& tape, Var x, const SeVars& v, std::size_t reduction) {
  SeParams<T> p;
  p.channels = tape.shape(x).c;
  p.reduction = reduction;
  p.fc1 = tape.value(v.fc1).vec();
  p.b1 = tape.value(v.b1).vec();
  p.fc2 = tape.value(v.fc2).vec();
  p.b2 = tape.value(v.b2).vec();
  auto out = satt::se_forward(tape.value(x), p);
  return tape.record("se_forward", std::move(out), [x, v, p](const Tensor4<T>& g, Tape<T>& t) {
    const Tensor4<T>& xv = t.value(x);
    const std::size_t C = p.channels;
    const std::size_t H = p.hidden();
    const std::size_t hw = xv.shape().spatial();
    std::vector<double> s(C), pre(H), hid(H), dlogit(C), dhid(H);
    std::vector<double> dfc1(C * H, 0.0), db1(H, 0.0), dfc2(H * C, 0.0), db2(C, 0.0);
    Tensor4<T> gx(xv.shape());
    for (std::size_t n = 0; n < xv.n(); ++n) {
      std::vector<T> sT(C);
      for (std::size_t c = 0; c < C; ++c) {
        sT[c] = static_cast<T>(plane_mean(xv.plane(n, c)));
        s[c] = sT[c];
      }
      for (std::size_t h = 0; h < H; ++h) {
        T acc = p.b1[h];
        for (std::size_t c = 0; c < C; ++c) acc += sT[c] * p.fc1[c * H + h];
        pre[h] = acc;
        hid[h] = acc > T(0) ? static_cast<double>(acc) : 0.0;
      }
      std::vector<double> gate(C);
      for (std::size_t c = 0; c < C; ++c) {
        T acc = p.b2[c];
        for (std::size_t h = 0; h < H; ++h) acc += static_cast<T>(hid[h]) * p.fc2[h * C + c];
        gate[c] = satt::sigmoid(acc);
        auto gp = g.plane(n, c);
        auto xp = xv.plane(n, c);
        double dgate = 0.0;
        for (std::size_t i = 0; i < hw; ++i) dgate += static_cast<double>(gp[i]) * xp[i];
        dlogit[c] = dgate * gate[c] * (1.0 - gate[c]);
        db2[c] += dlogit[c];
      }
      for (std::size_t h = 0; h < H; ++h) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          dfc2[h * C + c] += hid[h] * dlogit[c];
          acc += p.fc2[h * C + c] * dlogit[c];
        }
        dhid[h] = pre[h] > 0.0 ? acc : 0.0;
        db1[h] += dhid[h];
      }
      for (std::size_t c = 0; c < C; ++c) {
        double ds = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
          dfc1[c * H + h] += s[c] * dhid[h];
          ds += p.fc1[c * H + h] * dhid[h];
        }
        const double share = ds / static_cast<double>(hw);
        auto gp = g.plane(n, c);
        auto dst = gx.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<T>(gate[c] * gp[i] + share);
      }
    }
    t.accumulate(x, gx);
    detail::accumulate_vector<T>(t, v.fc1, dfc1);
    detail::accumulate_vector<T>(t, v.b1, db1);
    detail::accumulate_vector<T>(t, v.fc2, dfc2);
    detail::accumulate_vector<T>(t, v.b2, db2);
  });
}

}  // namespace satt::grad
