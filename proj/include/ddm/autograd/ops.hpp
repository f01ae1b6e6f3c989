#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ddm/autograd/tape.hpp"
#include "ddm/core/parallel.hpp"

namespace ddm {
namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using StridedMatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                 0, Eigen::OuterStride<>>;

// Unrolls output rows [y0, y1) of sample `i` into `cols` (rows: c*k*k,
// columns: (y1-y0)*outW). Stride 1, zero padding; only the pad fringe gets
// zero-filled.
template <typename S>
void im2col_rows(const Tensor<S>& x, int i, int k, int pad, int out_w, int y0, int y1,
                 std::vector<S>& cols) {
  const std::size_t chunk = static_cast<std::size_t>(y1 - y0) * out_w;
  cols.resize(static_cast<std::size_t>(x.c) * k * k * chunk);
  for (int ic = 0; ic < x.c; ++ic) {
    const S* src_plane = x.plane(i, ic);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* dst = cols.data() + (static_cast<std::size_t>((ic * k + ky) * k + kx)) * chunk;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(out_w, x.w + pad - kx);
        for (int y = y0; y < y1; ++y, dst += out_w) {
          const int yy = y + ky - pad;
          if (yy < 0 || yy >= x.h) {
            std::fill_n(dst, out_w, S(0));
            continue;
          }
          if (x_lo > 0) std::fill_n(dst, x_lo, S(0));
          std::memcpy(dst + x_lo, src_plane + static_cast<std::size_t>(yy) * x.w + (x_lo + kx - pad),
                      sizeof(S) * static_cast<std::size_t>(x_hi - x_lo));
          if (x_hi < out_w) std::fill_n(dst + x_hi, out_w - x_hi, S(0));
        }
      }
    }
  }
}

template <typename S>
void im2col(const Tensor<S>& x, int i, int k, int pad, int out_h, int out_w,
            std::vector<S>& cols) {
  im2col_rows(x, i, k, pad, out_w, 0, out_h, cols);
}

// Scatter-add of a cols buffer back into sample `i` of dx (adjoint of im2col).
template <typename S>
void col2im_add(const std::vector<S>& cols, int i, int k, int pad, int out_h, int out_w,
                Tensor<S>& dx) {
  const int P = out_h * out_w;
  for (int ic = 0; ic < dx.c; ++ic) {
    S* dst_plane = dx.plane(i, ic);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* src = cols.data() + (static_cast<std::size_t>((ic * k + ky) * k + kx)) * P;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(out_w, dx.w + pad - kx);
        for (int y = 0; y < out_h; ++y) {
          const int yy = y + ky - pad;
          if (yy < 0 || yy >= dx.h) continue;
          S* dst = dst_plane + static_cast<std::size_t>(yy) * dx.w + (x_lo + kx - pad);
          const S* s = src + static_cast<std::size_t>(y) * out_w + x_lo;
          for (int x = 0; x < x_hi - x_lo; ++x) dst[x] += s[x];
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, stride 1, square kernel, symmetric zero padding.
// w: [outC, inC, k, k], b: [outC, 1, 1, 1] or an invalid Var for no bias
// (the convention for convolutions feeding a batch norm).
template <typename S>
Var conv2d(Tape<S>& t, Var x, Var w, Var b, int pad) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  const int k = wv.h;
  if (wv.w != k) throw std::invalid_argument("conv2d: kernel must be square");
  if (wv.c != xv.c)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(xv.c) +
                                " do not match weight " + wv.shape_str());
  const bool has_bias = b.valid();
  if (has_bias) {
    const Tensor<S>& bv = t.val(b);
    if (bv.n != wv.n || bv.size() != static_cast<std::size_t>(wv.n))
      throw std::invalid_argument("conv2d: bias shape mismatch");
  }
  const int out_h = xv.h + 2 * pad - k + 1;
  const int out_w = xv.w + 2 * pad - k + 1;
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int out_c = wv.n;
  const int K = xv.c * k * k;
  const int P = out_h * out_w;

  Tensor<S> out(xv.n, out_c, out_h, out_w);
  const S* bias_data = has_bias ? t.val(b).data() : nullptr;
  detail::ConstMatMap<S> wm(wv.data(), out_c, K);
  const int T = num_threads();
  if (T > 1 && xv.n == 1 && out_h >= 2 * T) {
    // Single-sample eval path: partition output rows across workers.
    parallel_chunks(T, [&](int c) {
      const auto [y0, y1] = chunk_range(out_h, T, c);
      if (y0 >= y1) return;
      std::vector<S> cols;
      detail::im2col_rows(xv, 0, k, pad, out_w, y0, y1, cols);
      const int chunk_p = (y1 - y0) * out_w;
      detail::ConstMatMap<S> cm(cols.data(), K, chunk_p);
      detail::StridedMatMap<S> ym(out.plane(0, 0) + static_cast<std::size_t>(y0) * out_w, out_c,
                                  chunk_p, Eigen::OuterStride<>(P));
      ym.noalias() = wm * cm;
      if (bias_data)
        for (int oc = 0; oc < out_c; ++oc) ym.row(oc).array() += bias_data[oc];
    });
  } else {
    // One worker per sample; identical arithmetic to the serial loop.
    parallel_chunks(xv.n, [&](int i) {
      std::vector<S> cols;
      detail::im2col(xv, i, k, pad, out_h, out_w, cols);
      detail::ConstMatMap<S> cm(cols.data(), K, P);
      detail::MatMap<S> ym(out.plane(i, 0), out_c, P);
      ym.noalias() = wm * cm;
      if (bias_data)
        for (int oc = 0; oc < out_c; ++oc) ym.row(oc).array() += bias_data[oc];
    });
  }

  std::vector<int> inputs = {x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  return t.make(
      std::move(out), std::move(inputs),
      [x, w, b, has_bias, k, pad, out_h, out_w, K, P](Tape<S>& tp, const Tensor<S>& gout) {
        const Tensor<S>& xv = tp.val(x);
        const Tensor<S>& wv = tp.val(w);
        const int out_c = wv.n;
        const bool need_dx = tp.needs_grad(x.id);
        const bool need_dw = tp.needs_grad(w.id);
        const bool need_db = has_bias && tp.needs_grad(b.id);
        detail::ConstMatMap<S> wm(wv.data(), out_c, K);
        Tensor<S>* dx = need_dx ? &tp.grad_buf(x.id) : nullptr;  // allocate before forking

        // Per-worker weight/bias accumulators, reduced in worker order so the
        // result only depends on the configured thread count.
        const int T = std::min(num_threads(), gout.n);
        std::vector<Tensor<S>> dw_acc, db_acc;
        for (int c = 0; c < T; ++c) {
          if (need_dw) dw_acc.push_back(Tensor<S>::zeros_like(wv));
          if (need_db) db_acc.push_back(Tensor<S>(out_c, 1, 1, 1));
        }
        parallel_chunks(T, [&](int c) {
          const auto [i0, i1] = chunk_range(gout.n, T, c);
          std::vector<S> cols, dcols;
          for (int i = i0; i < i1; ++i) {
            detail::ConstMatMap<S> gm(gout.plane(i, 0), out_c, P);
            if (need_db) {
              for (int oc = 0; oc < out_c; ++oc) {
                const S* g = gout.plane(i, oc);
                double s = 0;
                for (int p = 0; p < P; ++p) s += g[p];
                db_acc[c].v[oc] += static_cast<S>(s);
              }
            }
            if (need_dw) {
              detail::im2col(xv, i, k, pad, out_h, out_w, cols);
              detail::ConstMatMap<S> cm(cols.data(), K, P);
              detail::MatMap<S> dwm(dw_acc[c].data(), out_c, K);
              dwm.noalias() += gm * cm.transpose();
            }
            if (need_dx) {
              dcols.resize(static_cast<std::size_t>(K) * P);
              detail::MatMap<S> dcm(dcols.data(), K, P);
              dcm.noalias() = wm.transpose() * gm;
              detail::col2im_add(dcols, i, k, pad, out_h, out_w, *dx);
            }
          }
        });
        for (int c = 0; c < T; ++c) {
          if (need_dw) {
            Tensor<S>& dw = tp.grad_buf(w.id);
            for (std::size_t j = 0; j < dw.size(); ++j) dw.v[j] += dw_acc[c].v[j];
          }
          if (need_db) {
            Tensor<S>& db = tp.grad_buf(b.id);
            for (int oc = 0; oc < out_c; ++oc) db.v[oc] += db_acc[c].v[oc];
          }
        }
      });
}

// Transposed convolution with 2x2 kernel and stride 2 (exact 2x upsampling).
// w: [inC, outC, 2, 2], b: [outC, 1, 1, 1].
template <typename S>
Var conv_transpose2x(Tape<S>& t, Var x, Var w, Var b) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  const Tensor<S>& bv = t.val(b);
  if (wv.h != 2 || wv.w != 2) throw std::invalid_argument("conv_transpose2x: kernel must be 2x2");
  if (wv.n != xv.c)
    throw std::invalid_argument("conv_transpose2x: input channels do not match weight");
  const int in_c = xv.c, out_c = wv.c;
  if (bv.size() != static_cast<std::size_t>(out_c))
    throw std::invalid_argument("conv_transpose2x: bias shape mismatch");
  const int P = xv.h * xv.w;

  Tensor<S> out(xv.n, out_c, 2 * xv.h, 2 * xv.w);
  parallel_chunks(xv.n, [&](int i) {
    std::vector<S> wk(static_cast<std::size_t>(out_c) * in_c);
    std::vector<S> ok(static_cast<std::size_t>(out_c) * P);
    detail::ConstMatMap<S> xm(xv.plane(i, 0), in_c, P);
    for (int ky = 0; ky < 2; ++ky)
      for (int kx = 0; kx < 2; ++kx) {
        for (int ic = 0; ic < in_c; ++ic)
          for (int oc = 0; oc < out_c; ++oc)
            wk[static_cast<std::size_t>(oc) * in_c + ic] = wv.at(ic, oc, ky, kx);
        detail::ConstMatMap<S> wkm(wk.data(), out_c, in_c);
        detail::MatMap<S> okm(ok.data(), out_c, P);
        okm.noalias() = wkm * xm;
        for (int oc = 0; oc < out_c; ++oc) {
          S* dst = out.plane(i, oc);
          const S* src = ok.data() + static_cast<std::size_t>(oc) * P;
          const S bias = bv.v[oc];
          for (int y = 0; y < xv.h; ++y)
            for (int xx = 0; xx < xv.w; ++xx)
              dst[static_cast<std::size_t>(2 * y + ky) * out.w + (2 * xx + kx)] =
                  src[static_cast<std::size_t>(y) * xv.w + xx] + bias;
        }
      }
  });

  const int in_h = xv.h, in_w = xv.w;
  return t.make(
      std::move(out), {x.id, w.id, b.id},
      [x, w, b, in_c, out_c, in_h, in_w, P](Tape<S>& tp, const Tensor<S>& gout) {
        const Tensor<S>& xv = tp.val(x);
        const Tensor<S>& wv = tp.val(w);
        const bool need_dx = tp.needs_grad(x.id);
        const bool need_dw = tp.needs_grad(w.id);
        const bool need_db = tp.needs_grad(b.id);
        Tensor<S>* dx = need_dx ? &tp.grad_buf(x.id) : nullptr;

        const int T = std::min(num_threads(), gout.n);
        std::vector<Tensor<S>> dw_acc, db_acc;
        for (int c = 0; c < T; ++c) {
          if (need_dw) dw_acc.push_back(Tensor<S>::zeros_like(wv));
          if (need_db) db_acc.push_back(Tensor<S>(out_c, 1, 1, 1));
        }
        parallel_chunks(T, [&](int c) {
          const auto [i0, i1] = chunk_range(gout.n, T, c);
          std::vector<S> gk(static_cast<std::size_t>(out_c) * P);
          std::vector<S> wk(static_cast<std::size_t>(out_c) * in_c);
          std::vector<S> dwk(static_cast<std::size_t>(in_c) * out_c);
          for (int i = i0; i < i1; ++i) {
            detail::ConstMatMap<S> xm(xv.plane(i, 0), in_c, P);
            if (need_db) {
              for (int oc = 0; oc < out_c; ++oc) {
                const S* g = gout.plane(i, oc);
                double s = 0;
                for (std::size_t p = 0; p < static_cast<std::size_t>(gout.h) * gout.w; ++p)
                  s += g[p];
                db_acc[c].v[oc] += static_cast<S>(s);
              }
            }
            if (!need_dx && !need_dw) continue;
            for (int ky = 0; ky < 2; ++ky)
              for (int kx = 0; kx < 2; ++kx) {
                // Gather the parity-(ky,kx) sub-grid of the output gradient.
                for (int oc = 0; oc < out_c; ++oc) {
                  const S* src = gout.plane(i, oc);
                  S* dst = gk.data() + static_cast<std::size_t>(oc) * P;
                  for (int y = 0; y < in_h; ++y)
                    for (int xx = 0; xx < in_w; ++xx)
                      dst[static_cast<std::size_t>(y) * in_w + xx] =
                          src[static_cast<std::size_t>(2 * y + ky) * gout.w + (2 * xx + kx)];
                }
                detail::ConstMatMap<S> gkm(gk.data(), out_c, P);
                if (need_dw) {
                  detail::MatMap<S> dwkm(dwk.data(), in_c, out_c);
                  dwkm.noalias() = xm * gkm.transpose();
                  for (int ic = 0; ic < in_c; ++ic)
                    for (int oc = 0; oc < out_c; ++oc)
                      dw_acc[c].at(ic, oc, ky, kx) +=
                          dwk[static_cast<std::size_t>(ic) * out_c + oc];
                }
                if (need_dx) {
                  for (int ic = 0; ic < in_c; ++ic)
                    for (int oc = 0; oc < out_c; ++oc)
                      wk[static_cast<std::size_t>(oc) * in_c + ic] = wv.at(ic, oc, ky, kx);
                  detail::ConstMatMap<S> wkm(wk.data(), out_c, in_c);
                  detail::MatMap<S> dxm(dx->plane(i, 0), in_c, P);
                  dxm.noalias() += wkm.transpose() * gkm;
                }
              }
          }
        });
        for (int c = 0; c < T; ++c) {
          if (need_dw) {
            Tensor<S>& dw = tp.grad_buf(w.id);
            for (std::size_t j = 0; j < dw.size(); ++j) dw.v[j] += dw_acc[c].v[j];
          }
          if (need_db) {
            Tensor<S>& db = tp.grad_buf(b.id);
            for (int oc = 0; oc < out_c; ++oc) db.v[oc] += db_acc[c].v[oc];
          }
        }
      });
}

template <typename S>
Var maxpool2x2(Tape<S>& t, Var x) {
  const Tensor<S>& xv = t.val(x);
  if (xv.h % 2 != 0 || xv.w % 2 != 0)
    throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " + xv.shape_str());
  Tensor<S> out(xv.n, xv.c, xv.h / 2, xv.w / 2);
  std::vector<std::uint8_t> arg(out.size());  // winner index within the 2x2 block
  std::size_t o = 0;
  for (int i = 0; i < xv.n; ++i)
    for (int ch = 0; ch < xv.c; ++ch) {
      const S* p = xv.plane(i, ch);
      for (int y = 0; y < out.h; ++y)
        for (int xx = 0; xx < out.w; ++xx, ++o) {
          const std::size_t base = static_cast<std::size_t>(2 * y) * xv.w + 2 * xx;
          S best = p[base];
          int bi = 0;
          const S cand1 = p[base + 1];
          if (cand1 > best) best = cand1, bi = 1;
          const S cand2 = p[base + xv.w];
          if (cand2 > best) best = cand2, bi = 2;
          const S cand3 = p[base + xv.w + 1];
          if (cand3 > best) best = cand3, bi = 3;
          out.v[o] = best;
          arg[o] = static_cast<std::uint8_t>(bi);
        }
    }
  const int in_w = xv.w;
  return t.make(std::move(out), {x.id},
                [x, arg = std::move(arg), in_w](Tape<S>& tp, const Tensor<S>& gout) {
                  if (!tp.needs_grad(x.id)) return;
                  Tensor<S>& dx = tp.grad_buf(x.id);
                  std::size_t o = 0;
                  for (int i = 0; i < gout.n; ++i)
                    for (int ch = 0; ch < gout.c; ++ch) {
                      S* d = dx.plane(i, ch);
                      for (int y = 0; y < gout.h; ++y)
                        for (int xx = 0; xx < gout.w; ++xx, ++o) {
                          const std::size_t base = static_cast<std::size_t>(2 * y) * in_w + 2 * xx;
                          const int bi = arg[o];
                          d[base + (bi & 1) + (bi >> 1) * in_w] += gout.v[o];
                        }
                    }
                });
}

template <typename S>
Var relu(Tape<S>& t, Var x) {
  const Tensor<S>& xv = t.val(x);
  Tensor<S> out = xv;
  // NaN passes through so divergence stays visible in the loss.
  for (auto& e : out.v) e = e < S(0) ? S(0) : e;
  return t.make(std::move(out), {x.id}, [x](Tape<S>& tp, const Tensor<S>& gout) {
    if (!tp.needs_grad(x.id)) return;
    const Tensor<S>& xv = tp.val(x);
    Tensor<S>& dx = tp.grad_buf(x.id);
    for (std::size_t i = 0; i < gout.size(); ++i)
      if (xv.v[i] > S(0)) dx.v[i] += gout.v[i];
  });
}

// Batch normalization over (n, h, w) per channel. In training mode the batch
// statistics are used and the running buffers are updated in place; in eval
// mode the running buffers are used.
template <typename S>
Var batchnorm(Tape<S>& t, Var x, Var gamma, Var beta, Tensor<S>& run_mean, Tensor<S>& run_var,
              bool train, S momentum = S(0.1), S eps = S(1e-5)) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& gv = t.val(gamma);
  const Tensor<S>& bv = t.val(beta);
  const int C = xv.c;
  if (static_cast<int>(gv.size()) != C || static_cast<int>(bv.size()) != C ||
      static_cast<int>(run_mean.size()) != C || static_cast<int>(run_var.size()) != C)
    throw std::invalid_argument("batchnorm: per-channel shapes do not match input " +
                                xv.shape_str());
  const std::size_t plane_sz = static_cast<std::size_t>(xv.h) * xv.w;
  const double m = static_cast<double>(xv.n) * plane_sz;

  // Channel-partitioned work is bitwise independent of the thread count.
  std::vector<S> mean(C), invstd(C);
  if (train) {
    parallel_chunks(C, [&](int ch) {
      double s = 0;
      for (int i = 0; i < xv.n; ++i) {
        const S* p = xv.plane(i, ch);
        for (std::size_t j = 0; j < plane_sz; ++j) s += p[j];
      }
      const double mu = s / m;
      double sq = 0;
      for (int i = 0; i < xv.n; ++i) {
        const S* p = xv.plane(i, ch);
        for (std::size_t j = 0; j < plane_sz; ++j) {
          const double d = p[j] - mu;
          sq += d * d;
        }
      }
      const double var = sq / m;
      mean[ch] = static_cast<S>(mu);
      invstd[ch] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      run_mean.v[ch] = (S(1) - momentum) * run_mean.v[ch] + momentum * static_cast<S>(mu);
      run_var.v[ch] = (S(1) - momentum) * run_var.v[ch] + momentum * static_cast<S>(unbiased);
    });
  } else {
    for (int ch = 0; ch < C; ++ch) {
      mean[ch] = run_mean.v[ch];
      invstd[ch] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(run_var.v[ch]) +
                                                  static_cast<double>(eps)));
    }
  }

  Tensor<S> out(xv.n, C, xv.h, xv.w);
  parallel_chunks(C, [&](int ch) {
    const S mu = mean[ch], is = invstd[ch], g = gv.v[ch], bb = bv.v[ch];
    for (int i = 0; i < xv.n; ++i) {
      const S* p = xv.plane(i, ch);
      S* q = out.plane(i, ch);
      for (std::size_t j = 0; j < plane_sz; ++j) q[j] = (p[j] - mu) * is * g + bb;
    }
  });

  return t.make(
      std::move(out), {x.id, gamma.id, beta.id},
      [x, gamma, beta, mean = std::move(mean), invstd = std::move(invstd), train, m,
       plane_sz](Tape<S>& tp, const Tensor<S>& gout) {
        const Tensor<S>& xv = tp.val(x);
        const Tensor<S>& gv = tp.val(gamma);
        const int C = xv.c;
        const bool need_dx = tp.needs_grad(x.id);
        Tensor<S>* dx = need_dx ? &tp.grad_buf(x.id) : nullptr;
        Tensor<S>* dgamma = tp.needs_grad(gamma.id) ? &tp.grad_buf(gamma.id) : nullptr;
        Tensor<S>* dbeta = tp.needs_grad(beta.id) ? &tp.grad_buf(beta.id) : nullptr;
        parallel_chunks(C, [&](int ch) {
          // Per-channel reductions are shared by all three gradients.
          const double mu = mean[ch], is = invstd[ch], ga = gv.v[ch];
          double sum_dy = 0, sum_dy_xhat = 0;
          for (int i = 0; i < xv.n; ++i) {
            const S* p = xv.plane(i, ch);
            const S* g = gout.plane(i, ch);
            for (std::size_t j = 0; j < plane_sz; ++j) {
              sum_dy += g[j];
              sum_dy_xhat += g[j] * (p[j] - mu) * is;
            }
          }
          if (dbeta) dbeta->v[ch] += static_cast<S>(sum_dy);
          if (dgamma) dgamma->v[ch] += static_cast<S>(sum_dy_xhat);
          if (!dx) return;
          const double k0 = sum_dy / m, k1 = sum_dy_xhat / m;
          for (int i = 0; i < xv.n; ++i) {
            const S* p = xv.plane(i, ch);
            const S* g = gout.plane(i, ch);
            S* d = dx->plane(i, ch);
            if (train) {
              for (std::size_t j = 0; j < plane_sz; ++j) {
                const double xhat = (p[j] - mu) * is;
                d[j] += static_cast<S>(ga * is * (g[j] - k0 - xhat * k1));
              }
            } else {
              for (std::size_t j = 0; j < plane_sz; ++j)
                d[j] += static_cast<S>(ga * is * g[j]);
            }
          }
        });
      });
}

template <typename S>
Var concat_channels(Tape<S>& t, Var a, Var b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (av.n != bv.n || av.h != bv.h || av.w != bv.w)
    throw std::invalid_argument("concat_channels: " + av.shape_str() + " vs " + bv.shape_str());
  Tensor<S> out(av.n, av.c + bv.c, av.h, av.w);
  const std::size_t plane_sz = static_cast<std::size_t>(av.h) * av.w;
  for (int i = 0; i < av.n; ++i) {
    std::memcpy(out.plane(i, 0), av.plane(i, 0), sizeof(S) * plane_sz * av.c);
    std::memcpy(out.plane(i, av.c), bv.plane(i, 0), sizeof(S) * plane_sz * bv.c);
  }
  const int ca = av.c, cb = bv.c;
  return t.make(std::move(out), {a.id, b.id},
                [a, b, ca, cb, plane_sz](Tape<S>& tp, const Tensor<S>& gout) {
                  for (int i = 0; i < gout.n; ++i) {
                    if (tp.needs_grad(a.id)) {
                      Tensor<S>& da = tp.grad_buf(a.id);
                      const S* g = gout.plane(i, 0);
                      S* d = da.plane(i, 0);
                      for (std::size_t j = 0; j < plane_sz * ca; ++j) d[j] += g[j];
                    }
                    if (tp.needs_grad(b.id)) {
                      Tensor<S>& db = tp.grad_buf(b.id);
                      const S* g = gout.plane(i, ca);
                      S* d = db.plane(i, 0);
                      for (std::size_t j = 0; j < plane_sz * cb; ++j) d[j] += g[j];
                    }
                  }
                });
}

template <typename S>
Var slice_channels(Tape<S>& t, Var x, int c0, int len) {
  const Tensor<S>& xv = t.val(x);
  if (c0 < 0 || len <= 0 || c0 + len > xv.c)
    throw std::invalid_argument("slice_channels: range out of bounds");
  Tensor<S> out(xv.n, len, xv.h, xv.w);
  const std::size_t plane_sz = static_cast<std::size_t>(xv.h) * xv.w;
  for (int i = 0; i < xv.n; ++i)
    std::memcpy(out.plane(i, 0), xv.plane(i, c0), sizeof(S) * plane_sz * len);
  return t.make(std::move(out), {x.id},
                [x, c0, len, plane_sz](Tape<S>& tp, const Tensor<S>& gout) {
                  if (!tp.needs_grad(x.id)) return;
                  Tensor<S>& dx = tp.grad_buf(x.id);
                  for (int i = 0; i < gout.n; ++i) {
                    const S* g = gout.plane(i, 0);
                    S* d = dx.plane(i, c0);
                    for (std::size_t j = 0; j < plane_sz * len; ++j) d[j] += g[j];
                  }
                });
}

template <typename S>
Var upsample_nearest2x(Tape<S>& t, Var x) {
  const Tensor<S>& xv = t.val(x);
  Tensor<S> out(xv.n, xv.c, 2 * xv.h, 2 * xv.w);
  for (int i = 0; i < xv.n; ++i)
    for (int ch = 0; ch < xv.c; ++ch) {
      const S* p = xv.plane(i, ch);
      S* q = out.plane(i, ch);
      for (int y = 0; y < xv.h; ++y)
        for (int xx = 0; xx < xv.w; ++xx) {
          const S val = p[static_cast<std::size_t>(y) * xv.w + xx];
          S* o = q + static_cast<std::size_t>(2 * y) * out.w + 2 * xx;
          o[0] = val;
          o[1] = val;
          o[out.w] = val;
          o[out.w + 1] = val;
        }
    }
  return t.make(std::move(out), {x.id}, [x](Tape<S>& tp, const Tensor<S>& gout) {
    if (!tp.needs_grad(x.id)) return;
    Tensor<S>& dx = tp.grad_buf(x.id);
    for (int i = 0; i < dx.n; ++i)
      for (int ch = 0; ch < dx.c; ++ch) {
        const S* g = gout.plane(i, ch);
        S* d = dx.plane(i, ch);
        for (int y = 0; y < dx.h; ++y)
          for (int xx = 0; xx < dx.w; ++xx) {
            const S* o = g + static_cast<std::size_t>(2 * y) * gout.w + 2 * xx;
            d[static_cast<std::size_t>(y) * dx.w + xx] += o[0] + o[1] + o[gout.w] + o[gout.w + 1];
          }
      }
  });
}

// Per-pixel softmax over exactly two channels, stabilized by max subtraction.
template <typename S>
Var softmax_pair(Tape<S>& t, Var x) {
  const Tensor<S>& xv = t.val(x);
  if (xv.c != 2) throw std::invalid_argument("softmax_pair: needs 2 channels, got " +
                                             xv.shape_str());
  Tensor<S> out(xv.n, 2, xv.h, xv.w);
  const std::size_t plane_sz = static_cast<std::size_t>(xv.h) * xv.w;
  for (int i = 0; i < xv.n; ++i) {
    const S* a = xv.plane(i, 0);
    const S* b = xv.plane(i, 1);
    S* p0 = out.plane(i, 0);
    S* p1 = out.plane(i, 1);
    for (std::size_t j = 0; j < plane_sz; ++j) {
      const S mx = a[j] > b[j] ? a[j] : b[j];
      const S ea = std::exp(a[j] - mx), eb = std::exp(b[j] - mx);
      const S z = ea + eb;
      p0[j] = ea / z;
      p1[j] = eb / z;
    }
  }
  return t.make(std::move(out), {x.id},
                [x, plane_sz](Tape<S>& tp, const Tensor<S>& gout) {
                  if (!tp.needs_grad(x.id)) return;
                  // Recompute the probabilities from the input.
                  const Tensor<S>& xv = tp.val(x);
                  Tensor<S>& dx = tp.grad_buf(x.id);
                  for (int i = 0; i < xv.n; ++i) {
                    const S* a = xv.plane(i, 0);
                    const S* b = xv.plane(i, 1);
                    const S* g0 = gout.plane(i, 0);
                    const S* g1 = gout.plane(i, 1);
                    S* d0 = dx.plane(i, 0);
                    S* d1 = dx.plane(i, 1);
                    for (std::size_t j = 0; j < plane_sz; ++j) {
                      const S mx = a[j] > b[j] ? a[j] : b[j];
                      const S ea = std::exp(a[j] - mx), eb = std::exp(b[j] - mx);
                      const S z = ea + eb;
                      const S p0 = ea / z, p1 = eb / z;
                      const S dot = g0[j] * p0 + g1[j] * p1;
                      d0[j] += p0 * (g0[j] - dot);
                      d1[j] += p1 * (g1[j] - dot);
                    }
                  }
                });
}

// out = g[:,0] * a + g[:,1] * b with the gate broadcast across channels.
// Rejects gate pairs that do not sum to one within `tol`.
template <typename S>
Var gate_blend(Tape<S>& t, Var gates, Var a, Var b, S tol = S(1e-4)) {
  const Tensor<S>& gv = t.val(gates);
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  check_same_shape(av, bv, "gate_blend");
  if (gv.c != 2 || gv.n != av.n || gv.h != av.h || gv.w != av.w)
    throw std::invalid_argument("gate_blend: gates " + gv.shape_str() +
                                " do not match features " + av.shape_str());
  const std::size_t plane_sz = static_cast<std::size_t>(av.h) * av.w;
  for (int i = 0; i < gv.n; ++i) {
    const S* g0 = gv.plane(i, 0);
    const S* g1 = gv.plane(i, 1);
    for (std::size_t j = 0; j < plane_sz; ++j)
      if (std::abs(g0[j] + g1[j] - S(1)) > tol)
        throw std::invalid_argument("gate_blend: gates are not normalized");
  }
  Tensor<S> out(av.n, av.c, av.h, av.w);
  for (int i = 0; i < av.n; ++i) {
    const S* g0 = gv.plane(i, 0);
    const S* g1 = gv.plane(i, 1);
    for (int ch = 0; ch < av.c; ++ch) {
      const S* pa = av.plane(i, ch);
      const S* pb = bv.plane(i, ch);
      S* q = out.plane(i, ch);
      for (std::size_t j = 0; j < plane_sz; ++j) q[j] = g0[j] * pa[j] + g1[j] * pb[j];
    }
  }
  return t.make(std::move(out), {gates.id, a.id, b.id},
                [gates, a, b, plane_sz](Tape<S>& tp, const Tensor<S>& gout) {
                  const Tensor<S>& gv = tp.val(gates);
                  const Tensor<S>& av = tp.val(a);
                  const Tensor<S>& bv = tp.val(b);
                  const bool need_da = tp.needs_grad(a.id);
                  const bool need_db = tp.needs_grad(b.id);
                  const bool need_dg = tp.needs_grad(gates.id);
                  for (int i = 0; i < av.n; ++i) {
                    const S* g0 = gv.plane(i, 0);
                    const S* g1 = gv.plane(i, 1);
                    for (int ch = 0; ch < av.c; ++ch) {
                      const S* go = gout.plane(i, ch);
                      if (need_da) {
                        S* d = tp.grad_buf(a.id).plane(i, ch);
                        for (std::size_t j = 0; j < plane_sz; ++j) d[j] += g0[j] * go[j];
                      }
                      if (need_db) {
                        S* d = tp.grad_buf(b.id).plane(i, ch);
                        for (std::size_t j = 0; j < plane_sz; ++j) d[j] += g1[j] * go[j];
                      }
                      if (need_dg) {
                        Tensor<S>& dg = tp.grad_buf(gates.id);
                        S* d0 = dg.plane(i, 0);
                        S* d1 = dg.plane(i, 1);
                        const S* pa = av.plane(i, ch);
                        const S* pb = bv.plane(i, ch);
                        for (std::size_t j = 0; j < plane_sz; ++j) {
                          d0[j] += pa[j] * go[j];
                          d1[j] += pb[j] * go[j];
                        }
                      }
                    }
                  }
                });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  check_same_shape(av, bv, "add");
  Tensor<S> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
  return t.make(std::move(out), {a.id, b.id}, [a, b](Tape<S>& tp, const Tensor<S>& gout) {
    for (Var v : {a, b}) {
      if (!tp.needs_grad(v.id)) continue;
      Tensor<S>& d = tp.grad_buf(v.id);
      for (std::size_t i = 0; i < gout.size(); ++i) d.v[i] += gout.v[i];
    }
  });
}

// Mean over elements of -[y*log(p) + (1-y)*log(1-p)] with p clamped away from
// {0,1}. The target is plain data, not a differentiable input.
template <typename S>
Var pixel_ce(Tape<S>& t, Var p, const Tensor<S>& target, S clamp_eps = S(1e-7)) {
  const Tensor<S>& pv = t.val(p);
  check_same_shape(pv, target, "pixel_ce");
  if (pv.empty()) throw std::invalid_argument("pixel_ce: empty input");
  const S lo = clamp_eps, hi = S(1) - clamp_eps;
  double acc = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const S pc = std::min(std::max(pv.v[i], lo), hi);
    const double y = target.v[i];
    acc -= y * std::log(static_cast<double>(pc)) +
           (1.0 - y) * std::log(1.0 - static_cast<double>(pc));
  }
  const double inv_m = 1.0 / static_cast<double>(pv.size());
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc * inv_m));
  // The closure owns a copy of the target so the caller's tensor may go away.
  auto tgt = t.grad_enabled() ? std::make_shared<Tensor<S>>(target) : nullptr;
  return t.make(std::move(out), {p.id},
                [p, tgt, lo, hi, inv_m](Tape<S>& tp, const Tensor<S>& gout) {
                  if (!tp.needs_grad(p.id)) return;
                  const Tensor<S>& pv = tp.val(p);
                  Tensor<S>& dp = tp.grad_buf(p.id);
                  const S gl = gout.v[0];
                  for (std::size_t i = 0; i < pv.size(); ++i) {
                    if (pv.v[i] <= lo || pv.v[i] >= hi) continue;  // clamped: no gradient
                    const double y = tgt->v[i];
                    dp.v[i] += static_cast<S>(gl * inv_m *
                                              (-y / pv.v[i] + (1.0 - y) / (1.0 - pv.v[i])));
                  }
                });
}

// Weighted sum of scalar nodes.
template <typename S>
Var weighted_sum(Tape<S>& t, const std::vector<Var>& xs, const std::vector<S>& ws) {
  if (xs.size() != ws.size() || xs.empty())
    throw std::invalid_argument("weighted_sum: size mismatch");
  double acc = 0;
  std::vector<int> ids;
  ids.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<S>& xv = t.val(xs[i]);
    if (xv.size() != 1) throw std::invalid_argument("weighted_sum: inputs must be scalars");
    acc += static_cast<double>(ws[i]) * xv.v[0];
    ids.push_back(xs[i].id);
  }
  return t.make(Tensor<S>::scalar(static_cast<S>(acc)), ids,
                [xs, ws](Tape<S>& tp, const Tensor<S>& gout) {
                  for (std::size_t i = 0; i < xs.size(); ++i)
                    if (tp.needs_grad(xs[i].id)) tp.grad_buf(xs[i].id).v[0] += ws[i] * gout.v[0];
                });
}

// sum(x ⊙ r): scalar projection used by gradient checks.
template <typename S>
Var inner(Tape<S>& t, Var x, Tensor<S> r) {
  const Tensor<S>& xv = t.val(x);
  check_same_shape(xv, r, "inner");
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv.v[i]) * r.v[i];
  return t.make(Tensor<S>::scalar(static_cast<S>(acc)), {x.id},
                [x, r = std::move(r)](Tape<S>& tp, const Tensor<S>& gout) {
                  if (!tp.needs_grad(x.id)) return;
                  Tensor<S>& dx = tp.grad_buf(x.id);
                  for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += gout.v[0] * r.v[i];
                });
}

}  // namespace ddm
