#pragma once

// Shared test helpers: finite-difference gradient checking and independent
// numeric oracles. Everything here is deliberately written against the
// mathematical definitions, not the library's implementation paths.

#include <cmath>
#include <functional>
#include <vector>

#include "savp/conv.hpp"
#include "savp/ops.hpp"
#include "savp/rng.hpp"
#include "savp/tensor.hpp"

namespace testutil {

using savp::Shape;
using savp::Tensor;

inline Tensor<double> random_tensor(Shape shape, savp::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// rel error with an absolute floor so near-zero gradients do not blow up
// the ratio.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences against tape gradients.
// forward() must recompute the scalar loss from the current leaf values.
// Returns the worst relative error across all leaf elements.
inline double finite_diff_check(const std::function<Tensor<double>()>& forward,
                                std::vector<Tensor<double>*> leaves, double h = 1e-5) {
  std::vector<Tensor<double>> grads;
  {
    savp::Tape<double> tape;
    savp::TapeScope<double> scope(tape);
    for (auto* leaf : leaves) leaf->set_requires_grad(true);
    Tensor<double> loss = forward();
    tape.backward(loss);
    for (auto* leaf : leaves) grads.push_back(tape.grad(*leaf));
  }
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>* leaf = leaves[li];
    for (int64_t i = 0; i < leaf->size(); ++i) {
      double saved = leaf->data()[i];
      leaf->data()[i] = saved + h;
      double fp = forward().value();
      leaf->data()[i] = saved - h;
      double fm = forward().value();
      leaf->data()[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(grads[li].data()[i], numeric));
    }
  }
  return worst;
}

// Like finite_diff_check, but probing only `samples` randomly chosen
// elements across the leaves — for losses through whole networks, where
// exhaustive probing is too slow.
inline double finite_diff_check_sampled(const std::function<Tensor<double>()>& forward,
                                        std::vector<Tensor<double>*> leaves, int samples,
                                        savp::Rng& rng, double h = 1e-5) {
  std::vector<Tensor<double>> grads;
  {
    savp::Tape<double> tape;
    savp::TapeScope<double> scope(tape);
    for (auto* leaf : leaves) leaf->set_requires_grad(true);
    Tensor<double> loss = forward();
    tape.backward(loss);
    for (auto* leaf : leaves) grads.push_back(tape.grad(*leaf));
  }
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    size_t li = static_cast<size_t>(rng.index(static_cast<int64_t>(leaves.size())));
    int64_t i = rng.index(leaves[li]->size());
    double saved = leaves[li]->data()[i];
    leaves[li]->data()[i] = saved + h;
    double fp = forward().value();
    leaves[li]->data()[i] = saved - h;
    double fm = forward().value();
    leaves[li]->data()[i] = saved;
    double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, rel_err(grads[li].data()[i], numeric));
  }
  return worst;
}

// Plain nested-loop cross-correlation, accumulation ordered (cin, ky, kx)
// with bias added last — the summation order the library promises to match
// bit-for-bit.
inline Tensor<double> conv2d_ref(const Tensor<double>& input, const Tensor<double>& weight,
                                 const Tensor<double>* bias, int64_t stride, savp::Pad pad) {
  int64_t b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  auto axis = [&](int64_t in, int64_t k) {
    if (pad == savp::Pad::valid) return std::tuple<int64_t, int64_t>{(in - k) / stride + 1, 0};
    int64_t out = (in + stride - 1) / stride;
    int64_t total = std::max<int64_t>((out - 1) * stride + k - in, 0);
    return std::tuple<int64_t, int64_t>{out, total / 2};
  };
  auto [oh, padT] = axis(h, kh);
  auto [ow, padL] = axis(w, kw);
  Tensor<double> out({b, cout, oh, ow});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride - padT + ky;
                int64_t ix = ox * stride - padL + kx;
                double v = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                               ? input.at({bi, ci, iy, ix})
                               : 0.0;
                acc += weight.at({co, ci, ky, kx}) * v;
              }
          if (bias) acc += bias->data()[co];
          out.data()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
        }
  return out;
}

inline Tensor<double> conv3d_ref(const Tensor<double>& input, const Tensor<double>& weight,
                                 const Tensor<double>* bias, std::array<int64_t, 3> stride,
                                 std::array<savp::Pad, 3> pad) {
  int64_t b = input.dim(0), cin = input.dim(1);
  int64_t t = input.dim(2), h = input.dim(3), w = input.dim(4);
  int64_t cout = weight.dim(0), kt = weight.dim(2), kh = weight.dim(3), kw = weight.dim(4);
  auto axis = [&](int64_t in, int64_t k, int64_t s, savp::Pad p) {
    if (p == savp::Pad::valid) return std::tuple<int64_t, int64_t>{(in - k) / s + 1, 0};
    int64_t out = (in + s - 1) / s;
    int64_t total = std::max<int64_t>((out - 1) * s + k - in, 0);
    return std::tuple<int64_t, int64_t>{out, total / 2};
  };
  auto [ot, padF] = axis(t, kt, stride[0], pad[0]);
  auto [oh, padT] = axis(h, kh, stride[1], pad[1]);
  auto [ow, padL] = axis(w, kw, stride[2], pad[2]);
  Tensor<double> out({b, cout, ot, oh, ow});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oz = 0; oz < ot; ++oz)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t dz = 0; dz < kt; ++dz)
                for (int64_t ky = 0; ky < kh; ++ky)
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t iz = oz * stride[0] - padF + dz;
                    int64_t iy = oy * stride[1] - padT + ky;
                    int64_t ix = ox * stride[2] - padL + kx;
                    double v = (iz >= 0 && iz < t && iy >= 0 && iy < h && ix >= 0 && ix < w)
                                   ? input.at({bi, ci, iz, iy, ix})
                                   : 0.0;
                    acc += weight.at({co, ci, dz, ky, kx}) * v;
                  }
            if (bias) acc += bias->data()[co];
            out.data()[(((bi * cout + co) * ot + oz) * oh + oy) * ow + ox] = acc;
          }
  return out;
}

// Top singular value via cyclic Jacobi eigen-iteration on W W^T.
// Independent of the library's power-iteration path.
inline double svd_top_singular_value(const std::vector<double>& w, int64_t rows, int64_t cols) {
  std::vector<double> a(rows * rows, 0.0);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < rows; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < cols; ++k) acc += w[i * cols + k] * w[j * cols + k];
      a[i * rows + j] = acc;
    }
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < rows; ++p)
      for (int64_t q = p + 1; q < rows; ++q) off += a[p * rows + q] * a[p * rows + q];
    if (off < 1e-24) break;
    for (int64_t p = 0; p < rows; ++p)
      for (int64_t q = p + 1; q < rows; ++q) {
        double apq = a[p * rows + q];
        if (std::abs(apq) < 1e-30) continue;
        double app = a[p * rows + p], aqq = a[q * rows + q];
        double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        double c = std::cos(theta), s = std::sin(theta);
        for (int64_t k = 0; k < rows; ++k) {
          double akp = a[k * rows + p], akq = a[k * rows + q];
          a[k * rows + p] = c * akp - s * akq;
          a[k * rows + q] = s * akp + c * akq;
        }
        for (int64_t k = 0; k < rows; ++k) {
          double apk = a[p * rows + k], aqk = a[q * rows + k];
          a[p * rows + k] = c * apk - s * aqk;
          a[q * rows + k] = s * apk + c * aqk;
        }
      }
  }
  double lmax = 0.0;
  for (int64_t i = 0; i < rows; ++i) lmax = std::max(lmax, a[i * rows + i]);
  return std::sqrt(std::max(lmax, 0.0));
}

inline double svd_top_singular_value(const Tensor<double>& w2d) {
  return svd_top_singular_value(w2d.values(), w2d.dim(0), w2d.dim(1));
}

}  // namespace testutil
