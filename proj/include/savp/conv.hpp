#pragma once

#include <array>

#include "savp/ops.hpp"

namespace savp {

enum class Pad { valid, same };

namespace detail {

// "same" keeps out = ceil(in/stride) with zeros, extra pixel on the
// bottom/right when the total is odd. "valid" pads nothing.
struct AxisPlan {
  int64_t out, before, after;
};

inline AxisPlan plan_axis(int64_t in, int64_t k, int64_t stride, Pad pad) {
  SAVP_CHECK(stride >= 1, "conv: stride must be >= 1, got ", stride);
  if (pad == Pad::valid) {
    SAVP_CHECK(in >= k, "conv: kernel extent ", k, " larger than input extent ", in,
               " (valid padding)");
    return {(in - k) / stride + 1, 0, 0};
  }
  int64_t out = (in + stride - 1) / stride;
  int64_t total = std::max<int64_t>((out - 1) * stride + k - in, 0);
  return {out, total / 2, total - total / 2};
}

// im2col, layout [cin*kh*kw, outH*outW]; rows ordered (cin, ky, kx) so GEMM
// accumulation order matches a nested-loop convolution exactly.
template <class T>
void im2col2d(const T* in, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
              int64_t sy, int64_t sx, int64_t padT, int64_t padL, int64_t oh, int64_t ow,
              T* col) {
  int64_t p_total = oh * ow;
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c) {
    const T* chan = in + c * h * w;
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx, ++row) {
        T* dst = col + row * p_total;
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * sy - padT + ky;
          if (iy < 0 || iy >= h) {
            for (int64_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
            continue;
          }
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * sx - padL + kx;
            dst[oy * ow + ox] = (ix >= 0 && ix < w) ? chan[iy * w + ix] : T(0);
          }
        }
      }
    }
  }
}

// im2col with transposed layout [outH*outW, cin*kh*kw]: feeds the batched
// weight-gradient GEMM without a separate transpose pass.
template <class T>
void im2col2d_t(const T* in, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t sy, int64_t sx, int64_t padT, int64_t padL, int64_t oh, int64_t ow,
                T* col) {
  int64_t ck = cin * kh * kw;
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      T* dst = col + (oy * ow + ox) * ck;
      int64_t row = 0;
      for (int64_t c = 0; c < cin; ++c) {
        const T* chan = in + c * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
          int64_t iy = oy * sy - padT + ky;
          for (int64_t kx = 0; kx < kw; ++kx, ++row) {
            int64_t ix = ox * sx - padL + kx;
            dst[row] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? chan[iy * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im2d(const T* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
              int64_t sy, int64_t sx, int64_t padT, int64_t padL, int64_t oh, int64_t ow,
              T* in_grad) {
  int64_t p_total = oh * ow;
  int64_t row = 0;
  for (int64_t c = 0; c < cin; ++c) {
    T* chan = in_grad + c * h * w;
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx, ++row) {
        const T* src = col + row * p_total;
        for (int64_t oy = 0; oy < oh; ++oy) {
          int64_t iy = oy * sy - padT + ky;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * sx - padL + kx;
            if (ix >= 0 && ix < w) chan[iy * w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-d cross-correlation (no kernel flip). input [b,cin,h,w], weight
// [cout,cin,kh,kw], optional bias [cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int64_t stride, Pad padding) {
  SAVP_CHECK(input.rank() == 4, "conv2d: input must be [b,cin,h,w], got ",
             detail::shape_str(input.shape()));
  SAVP_CHECK(weight.rank() == 4, "conv2d: weight must be [cout,cin,kh,kw], got ",
             detail::shape_str(weight.shape()));
  SAVP_CHECK(input.dim(1) == weight.dim(1), "conv2d: channel mismatch: input has ",
             input.dim(1), ", weight expects ", weight.dim(1));
  int64_t b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (bias) SAVP_CHECK(bias->size() == cout, "conv2d: bias size ", bias->size(),
                       " != out channels ", cout);
  auto py = detail::plan_axis(h, kh, stride, padding);
  auto px = detail::plan_axis(w, kw, stride, padding);
  int64_t oh = py.out, ow = px.out, p_total = oh * ow, ck = cin * kh * kw;

  Tensor<T> out({b, cout, oh, ow});
  const T* xd = input.data();
  const T* wd = weight.data();
  T* od = out.data();
#pragma omp parallel for if (b > 1)
  for (int64_t bi = 0; bi < b; ++bi) {
    std::vector<T> col(ck * p_total);
    detail::im2col2d(xd + bi * cin * h * w, cin, h, w, kh, kw, stride, stride, py.before,
                     px.before, oh, ow, col.data());
    detail::gemm_nn(wd, col.data(), od + bi * cout * p_total, cout, ck, p_total);
  }
  if (bias) {
    const T* bd = bias->data();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t c = 0; c < cout; ++c) {
        T* dst = od + (bi * cout + c) * p_total;
        for (int64_t p = 0; p < p_total; ++p) dst[p] += bd[c];
      }
  }

  std::vector<const Tensor<T>*> ins = {&input, &weight};
  if (bias) ins.push_back(bias);
  auto rec = detail::begin_record<T>(ins);
  if (rec.active()) {
    int64_t pi = rec.parent(0), pw = rec.parent(1);
    int64_t pbias = bias ? rec.parent(2) : -1;
    rec.bind_output(out, [input, weight, pi, pw, pbias, b, cin, h, w, cout, kh, kw, stride,
                          py, px, oh, ow, p_total, ck](const std::vector<T>& g, Tape<T>& tp) {
      const T* wd = weight.data();
      const T* xd = input.data();
      if (pi >= 0) {
        T* gi = tp.grad_buffer(pi).data();
#pragma omp parallel for if (b > 1)
        for (int64_t bi = 0; bi < b; ++bi) {
          std::vector<T> dcol(ck * p_total, T(0));
          detail::gemm_tn(wd, g.data() + bi * cout * p_total, dcol.data(), ck, cout, p_total);
          detail::col2im2d(dcol.data(), cin, h, w, kh, kw, stride, stride, py.before,
                           px.before, oh, ow, gi + bi * cin * h * w);
        }
      }
      if (pw >= 0) {
        // dW = sum_b gout_b * col_b^T as one batched GEMM: stack transposed
        // columns [b*P, CK], regroup gout to [cout, b*P]; k runs batch-major,
        // matching the serial per-sample order.
        T* gw = tp.grad_buffer(pw).data();
        std::vector<T> colt(b * p_total * ck);
#pragma omp parallel for if (b > 1)
        for (int64_t bi = 0; bi < b; ++bi)
          detail::im2col2d_t(xd + bi * cin * h * w, cin, h, w, kh, kw, stride, stride,
                             py.before, px.before, oh, ow, colt.data() + bi * p_total * ck);
        std::vector<T> gt(cout * b * p_total);
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t c = 0; c < cout; ++c)
            std::memcpy(gt.data() + (c * b + bi) * p_total,
                        g.data() + (bi * cout + c) * p_total, sizeof(T) * p_total);
        detail::gemm_nn(gt.data(), colt.data(), gw, cout, b * p_total, ck);
      }
      if (pbias >= 0) {
        auto& gb = tp.grad_buffer(pbias);
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t c = 0; c < cout; ++c) {
            const T* src = g.data() + (bi * cout + c) * p_total;
            T acc = T(0);
            for (int64_t p = 0; p < p_total; ++p) acc += src[p];
            gb[c] += acc;
          }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, Pad padding) {
  return conv2d(input, weight, &bias, stride, padding);
}

// 3-d cross-correlation. input [b,cin,t,h,w], weight [cout,cin,kt,kh,kw].
// Per-axis strides and padding modes allow valid-in-time / same-in-space
// stacks.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::array<int64_t, 3> stride, std::array<Pad, 3> padding) {
  SAVP_CHECK(input.rank() == 5, "conv3d: input must be [b,cin,t,h,w], got ",
             detail::shape_str(input.shape()));
  SAVP_CHECK(weight.rank() == 5, "conv3d: weight must be [cout,cin,kt,kh,kw], got ",
             detail::shape_str(weight.shape()));
  SAVP_CHECK(input.dim(1) == weight.dim(1), "conv3d: channel mismatch: input has ",
             input.dim(1), ", weight expects ", weight.dim(1));
  int64_t b = input.dim(0), cin = input.dim(1);
  int64_t t = input.dim(2), h = input.dim(3), w = input.dim(4);
  int64_t cout = weight.dim(0), kt = weight.dim(2), kh = weight.dim(3), kw = weight.dim(4);
  if (bias) SAVP_CHECK(bias->size() == cout, "conv3d: bias size mismatch");
  auto pt = detail::plan_axis(t, kt, stride[0], padding[0]);
  auto py = detail::plan_axis(h, kh, stride[1], padding[1]);
  auto px = detail::plan_axis(w, kw, stride[2], padding[2]);
  int64_t ot = pt.out, oh = py.out, ow = px.out;
  int64_t p_total = ot * oh * ow, ck = cin * kt * kh * kw;
  int64_t in_vol = cin * t * h * w;

  // im2col over (t,h,w); rows ordered (cin, kt, ky, kx). Capture by value:
  // these lambdas outlive this scope inside the backward closure.
  auto build_col = [=](const T* in, T* col) {
    int64_t row = 0;
    for (int64_t c = 0; c < cin; ++c) {
      const T* chan = in + c * t * h * w;
      for (int64_t dt = 0; dt < kt; ++dt)
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx, ++row) {
            T* dst = col + row * p_total;
            int64_t p = 0;
            for (int64_t oz = 0; oz < ot; ++oz) {
              int64_t iz = oz * stride[0] - pt.before + dt;
              for (int64_t oy = 0; oy < oh; ++oy) {
                int64_t iy = oy * stride[1] - py.before + ky;
                for (int64_t ox = 0; ox < ow; ++ox, ++p) {
                  int64_t ix = ox * stride[2] - px.before + kx;
                  bool ok = iz >= 0 && iz < t && iy >= 0 && iy < h && ix >= 0 && ix < w;
                  dst[p] = ok ? chan[(iz * h + iy) * w + ix] : T(0);
                }
              }
            }
          }
    }
  };
  auto scatter_col = [=](const T* col, T* in_grad) {
    int64_t row = 0;
    for (int64_t c = 0; c < cin; ++c) {
      T* chan = in_grad + c * t * h * w;
      for (int64_t dt = 0; dt < kt; ++dt)
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx, ++row) {
            const T* src = col + row * p_total;
            int64_t p = 0;
            for (int64_t oz = 0; oz < ot; ++oz) {
              int64_t iz = oz * stride[0] - pt.before + dt;
              for (int64_t oy = 0; oy < oh; ++oy) {
                int64_t iy = oy * stride[1] - py.before + ky;
                for (int64_t ox = 0; ox < ow; ++ox, ++p) {
                  int64_t ix = ox * stride[2] - px.before + kx;
                  if (iz >= 0 && iz < t && iy >= 0 && iy < h && ix >= 0 && ix < w)
                    chan[(iz * h + iy) * w + ix] += src[p];
                }
              }
            }
          }
    }
  };

  Tensor<T> out({b, cout, ot, oh, ow});
  const T* xd = input.data();
  const T* wd = weight.data();
  T* od = out.data();
#pragma omp parallel for if (b > 1)
  for (int64_t bi = 0; bi < b; ++bi) {
    std::vector<T> col(ck * p_total);
    build_col(xd + bi * in_vol, col.data());
    detail::gemm_nn(wd, col.data(), od + bi * cout * p_total, cout, ck, p_total);
  }
  if (bias) {
    const T* bd = bias->data();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t c = 0; c < cout; ++c) {
        T* dst = od + (bi * cout + c) * p_total;
        for (int64_t p = 0; p < p_total; ++p) dst[p] += bd[c];
      }
  }

  std::vector<const Tensor<T>*> ins = {&input, &weight};
  if (bias) ins.push_back(bias);
  auto rec = detail::begin_record<T>(ins);
  if (rec.active()) {
    int64_t pi = rec.parent(0), pw = rec.parent(1);
    int64_t pbias = bias ? rec.parent(2) : -1;
    rec.bind_output(out, [input, weight, build_col, scatter_col, pi, pw, pbias, b, cout,
                          p_total, ck, in_vol](const std::vector<T>& g, Tape<T>& tp) {
      const T* wd = weight.data();
      const T* xd = input.data();
      if (pi >= 0) {
        T* gi = tp.grad_buffer(pi).data();
#pragma omp parallel for if (b > 1)
        for (int64_t bi = 0; bi < b; ++bi) {
          std::vector<T> dcol(ck * p_total, T(0));
          detail::gemm_tn(wd, g.data() + bi * cout * p_total, dcol.data(), ck, cout, p_total);
          scatter_col(dcol.data(), gi + bi * in_vol);
        }
      }
      if (pw >= 0) {
        T* gw = tp.grad_buffer(pw).data();
        std::vector<T> col(ck * p_total);
        for (int64_t bi = 0; bi < b; ++bi) {
          build_col(xd + bi * in_vol, col.data());
          detail::gemm_nt(g.data() + bi * cout * p_total, col.data(), gw, cout, p_total, ck);
        }
      }
      if (pbias >= 0) {
        auto& gb = tp.grad_buffer(pbias);
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t c = 0; c < cout; ++c) {
            const T* src = g.data() + (bi * cout + c) * p_total;
            T acc = T(0);
            for (int64_t p = 0; p < p_total; ++p) acc += src[p];
            gb[c] += acc;
          }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int64_t stride, Pad padding) {
  return conv3d(input, weight, bias, {stride, stride, stride}, {padding, padding, padding});
}

// Non-overlapping window means; spatial extents must divide evenly.
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int64_t window) {
  SAVP_CHECK(input.rank() == 4, "avg_pool2d: input must be [b,c,h,w]");
  SAVP_CHECK(window >= 1, "avg_pool2d: window must be >= 1");
  int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  SAVP_CHECK(h % window == 0 && w % window == 0, "avg_pool2d: extents ", h, "x", w,
             " not divisible by window ", window);
  int64_t oh = h / window, ow = w / window;
  Tensor<T> out({b, c, oh, ow});
  const T* xd = input.data();
  T* od = out.data();
  T inv = T(1) / static_cast<T>(window * window);
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* src = xd + bc * h * w;
    T* dst = od + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        T acc = T(0);
        for (int64_t dy = 0; dy < window; ++dy)
          for (int64_t dx = 0; dx < window; ++dx)
            acc += src[(oy * window + dy) * w + ox * window + dx];
        dst[oy * ow + ox] = acc * inv;
      }
  }
  auto rec = detail::begin_record<T>({&input});
  if (rec.active()) {
    int64_t pi = rec.parent(0);
    rec.bind_output(out, [pi, b, c, h, w, oh, ow, window, inv](const std::vector<T>& g,
                                                               Tape<T>& tp) {
      T* gi = tp.grad_buffer(pi).data();
      for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* src = g.data() + bc * oh * ow;
        T* dst = gi + bc * h * w;
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            T v = src[oy * ow + ox] * inv;
            for (int64_t dy = 0; dy < window; ++dy)
              for (int64_t dx = 0; dx < window; ++dx)
                dst[(oy * window + dy) * w + ox * window + dx] += v;
          }
      }
    });
  }
  return out;
}

// Mean over all spatial positions: [b,c,h,w] -> [b,c].
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  SAVP_CHECK(input.rank() == 4, "global_avg_pool: input must be [b,c,h,w]");
  int64_t bc = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> out({input.dim(0), input.dim(1)});
  const T* xd = input.data();
  T inv = T(1) / static_cast<T>(hw);
  for (int64_t i = 0; i < bc; ++i) {
    T acc = T(0);
    for (int64_t p = 0; p < hw; ++p) acc += xd[i * hw + p];
    out.data()[i] = acc * inv;
  }
  auto rec = detail::begin_record<T>({&input});
  if (rec.active()) {
    int64_t pi = rec.parent(0);
    rec.bind_output(out, [pi, bc, hw, inv](const std::vector<T>& g, Tape<T>& tp) {
      T* gi = tp.grad_buffer(pi).data();
      for (int64_t i = 0; i < bc; ++i) {
        T v = g[i] * inv;
        for (int64_t p = 0; p < hw; ++p) gi[i * hw + p] += v;
      }
    });
  }
  return out;
}

// Bilinear upsampling on a corner-aligned grid: output corners sample input
// corners exactly, interior positions at i*(in-1)/(out-1).
template <class T>
Tensor<T> upsample_bilinear2d(const Tensor<T>& input, int64_t factor) {
  SAVP_CHECK(input.rank() == 4, "upsample_bilinear2d: input must be [b,c,h,w]");
  SAVP_CHECK(factor >= 1, "upsample_bilinear2d: factor must be >= 1");
  int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int64_t oh = h * factor, ow = w * factor;

  auto grid = [](int64_t out, int64_t in) {
    std::vector<std::tuple<int64_t, int64_t, double>> m(out);  // (lo, hi, frac)
    for (int64_t i = 0; i < out; ++i) {
      double pos = out == 1 ? 0.0
                            : static_cast<double>(i) * static_cast<double>(in - 1) /
                                  static_cast<double>(out - 1);
      int64_t lo = static_cast<int64_t>(pos);
      int64_t hi = std::min(lo + 1, in - 1);
      m[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return m;
  };
  auto gy = grid(oh, h);
  auto gx = grid(ow, w);

  Tensor<T> out({b, c, oh, ow});
  const T* xd = input.data();
  T* od = out.data();
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const T* src = xd + bc * h * w;
    T* dst = od + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      auto [y0, y1, fy] = gy[oy];
      for (int64_t ox = 0; ox < ow; ++ox) {
        auto [x0, x1, fx] = gx[ox];
        double v00 = src[y0 * w + x0], v01 = src[y0 * w + x1];
        double v10 = src[y1 * w + x0], v11 = src[y1 * w + x1];
        double top = v00 + (v01 - v00) * fx;
        double bot = v10 + (v11 - v10) * fx;
        dst[oy * ow + ox] = static_cast<T>(top + (bot - top) * fy);
      }
    }
  }
  auto rec = detail::begin_record<T>({&input});
  if (rec.active()) {
    int64_t pi = rec.parent(0);
    rec.bind_output(out, [pi, gy, gx, b, c, h, w, oh, ow](const std::vector<T>& g,
                                                          Tape<T>& tp) {
      T* gi = tp.grad_buffer(pi).data();
      for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* src = g.data() + bc * oh * ow;
        T* dst = gi + bc * h * w;
        for (int64_t oy = 0; oy < oh; ++oy) {
          auto [y0, y1, fy] = gy[oy];
          for (int64_t ox = 0; ox < ow; ++ox) {
            auto [x0, x1, fx] = gx[ox];
            T gv = src[oy * ow + ox];
            dst[y0 * w + x0] += gv * static_cast<T>((1 - fy) * (1 - fx));
            dst[y0 * w + x1] += gv * static_cast<T>((1 - fy) * fx);
            dst[y1 * w + x0] += gv * static_cast<T>(fy * (1 - fx));
            dst[y1 * w + x1] += gv * static_cast<T>(fy * fx);
          }
        }
      }
    });
  }
  return out;
}

// Per-sample kernel warp: each batch element carries its own predicted
// kernels. image [b,c,h,w] (*) kernels [b,nk,kh,kw] -> [b,nk,c,h,w], "same"
// zero padding, stride 1. Gradients flow to both image and kernels.
template <class T>
Tensor<T> cdna_warp(const Tensor<T>& image, const Tensor<T>& kernels) {
  SAVP_CHECK(image.rank() == 4, "cdna_warp: image must be [b,c,h,w]");
  SAVP_CHECK(kernels.rank() == 4, "cdna_warp: kernels must be [b,nk,kh,kw]");
  SAVP_CHECK(image.dim(0) == kernels.dim(0), "cdna_warp: batch mismatch: ", image.dim(0),
             " vs ", kernels.dim(0));
  int64_t b = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  int64_t nk = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  int64_t padT = (kh - 1) / 2, padL = (kw - 1) / 2;

  Tensor<T> out({b, nk, c, h, w});
  const T* img = image.data();
  const T* ker = kernels.data();
  T* od = out.data();
#pragma omp parallel for if (b > 1)
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t n = 0; n < nk; ++n) {
      const T* kk = ker + (bi * nk + n) * kh * kw;
      for (int64_t ci = 0; ci < c; ++ci) {
        const T* src = img + (bi * c + ci) * h * w;
        T* dst = od + (((bi * nk + n) * c + ci)) * h * w;
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) {
            T acc = T(0);
            for (int64_t ky = 0; ky < kh; ++ky) {
              int64_t iy = y - padT + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t ix = x - padL + kx;
                if (ix < 0 || ix >= w) continue;
                acc += kk[ky * kw + kx] * src[iy * w + ix];
              }
            }
            dst[y * w + x] = acc;
          }
      }
    }
  }
  auto rec = detail::begin_record<T>({&image, &kernels});
  if (rec.active()) {
    int64_t pimg = rec.parent(0), pker = rec.parent(1);
    rec.bind_output(out, [image, kernels, pimg, pker, b, c, h, w, nk, kh, kw, padT,
                          padL](const std::vector<T>& g, Tape<T>& tp) {
      const T* img = image.data();
      const T* ker = kernels.data();
      T* gimg = pimg >= 0 ? tp.grad_buffer(pimg).data() : nullptr;
      T* gker = pker >= 0 ? tp.grad_buffer(pker).data() : nullptr;
#pragma omp parallel for if (b > 1)
      for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t n = 0; n < nk; ++n) {
          const T* kk = ker + (bi * nk + n) * kh * kw;
          T* gk = gker ? gker + (bi * nk + n) * kh * kw : nullptr;
          for (int64_t ci = 0; ci < c; ++ci) {
            const T* src = img + (bi * c + ci) * h * w;
            const T* go = g.data() + (((bi * nk + n) * c + ci)) * h * w;
            T* gi = gimg ? gimg + (bi * c + ci) * h * w : nullptr;
            for (int64_t y = 0; y < h; ++y)
              for (int64_t x = 0; x < w; ++x) {
                T gv = go[y * w + x];
                if (gv == T(0)) continue;
                for (int64_t ky = 0; ky < kh; ++ky) {
                  int64_t iy = y - padT + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t ix = x - padL + kx;
                    if (ix < 0 || ix >= w) continue;
                    if (gi) gi[iy * w + ix] += gv * kk[ky * kw + kx];
                    if (gk) gk[ky * kw + kx] += gv * src[iy * w + ix];
                  }
                }
              }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace savp
