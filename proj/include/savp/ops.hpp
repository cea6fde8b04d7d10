#pragma once

#include <bit>
#include <cmath>

#include "savp/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace savp {

namespace detail {

// Branch-free polynomial expf (Cephes-style, ~2 ulp). Keeps elementwise
// float loops vectorizable; doubles go through libm, so f64 reference and
// gradient-check builds see full precision.
inline float fast_expf(float x) {
  x = std::min(88.0f, std::max(-87.0f, x));
  float n = std::floor(x * 1.44269504088896341f + 0.5f);
  float f = (x - n * 0.693359375f) - n * (-2.12194440e-4f);
  float p = 1.9875691500e-4f;
  p = p * f + 1.3981999507e-3f;
  p = p * f + 8.3334519073e-3f;
  p = p * f + 4.1665795894e-2f;
  p = p * f + 1.6666665459e-1f;
  p = p * f + 5.0000001201e-1f;
  p = p * f * f + f + 1.0f;
  int32_t ni = static_cast<int32_t>(n);
  return p * std::bit_cast<float>((ni + 127) << 23);
}

template <class T>
T exp_scalar(T v) {
  if constexpr (std::is_same_v<T, float>)
    return fast_expf(v);
  else
    return std::exp(v);
}

template <class T>
T sigmoid_scalar(T v) {
  if constexpr (std::is_same_v<T, float>) {
    return 1.0f / (1.0f + fast_expf(-v));
  } else {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (T(1) + e);
  }
}

template <class T>
T tanh_scalar(T v) {
  if constexpr (std::is_same_v<T, float>) {
    float e = fast_expf(-2.0f * v);
    return (1.0f - e) / (1.0f + e);
  } else {
    return std::tanh(v);
  }
}

}  // namespace detail

// ---- small GEMM kernels ----
// Parallelized over output rows only: every element is produced by exactly
// one thread with a fixed-order inner loop, so results are bit-deterministic
// regardless of thread count.
namespace detail {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for if (M * K * N > 16384)
  for (int64_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      T av = a[k];
      const T* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B^T, with B stored [N,K]. B is transposed into a
// scratch buffer so the inner loop runs contiguous in j and vectorizes
// (a strict-FP dot-product reduction would not).
template <class T>
void gemm_nt(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
  std::vector<T> bt(K * N);
  for (int64_t j = 0; j < N; ++j)
    for (int64_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_nn(A, bt.data(), C, M, K, N);
}

// C[M,N] += A^T * B, with A stored [K,M]
template <class T>
void gemm_tn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for if (M * K * N > 16384)
  for (int64_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      T av = A[k * M + i];
      const T* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  SAVP_CHECK(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 inputs, got ",
             detail::shape_str(a.shape()), " and ", detail::shape_str(b.shape()));
  SAVP_CHECK(a.dim(1) == b.dim(0), "matmul: inner dimensions differ: ",
             detail::shape_str(a.shape()), " x ", detail::shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n);
  auto rec = detail::begin_record<T>({&a, &b});
  if (rec.active()) {
    int64_t pa = rec.parent(0), pb = rec.parent(1);
    rec.bind_output(out, [a, b, m, k, n, pa, pb](const std::vector<T>& g, Tape<T>& tp) {
      if (pa >= 0)  // dA = dC * B^T
        detail::gemm_nt(g.data(), b.data(), tp.grad_buffer(pa).data(), m, n, k);
      if (pb >= 0)  // dB = A^T * dC
        detail::gemm_tn(a.data(), g.data(), tp.grad_buffer(pb).data(), k, m, n);
    });
  }
  return out;
}

// ---- activations ----

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op<T>(x, [](T v) { return v > T(0) ? v : T(0); },
                             [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = T(0.2)) {
  return detail::unary_op<T>(x, [alpha](T v) { return v > T(0) ? v : alpha * v; },
                             [alpha](T v, T) { return v > T(0) ? T(1) : alpha; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(x, [](T v) { return detail::sigmoid_scalar(v); },
                             [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_op<T>(x, [](T v) { return detail::tanh_scalar(v); },
                             [](T, T y) { return T(1) - y * y; });
}

// log(1 + e^x) in overflow-safe form; derivative is sigmoid(x).
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  auto fwd = [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); };
  return detail::unary_op<T>(x, fwd, [](T v, T) { return detail::sigmoid_scalar(v); });
}

// Max-subtracted softmax along one axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  SAVP_CHECK(axis >= 0 && axis < x.rank(), "softmax: axis ", axis, " invalid for ",
             detail::shape_str(x.shape()));
  auto [outer, inner] = detail::axis_blocks(x.shape(), axis);
  int64_t ext = x.dim(axis);
  Tensor<T> out(x.shape());
  const T* xd = x.data();
  T* od = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const T* lane = xd + o * ext * inner + i;
      T* olane = od + o * ext * inner + i;
      T mx = lane[0];
      for (int64_t e = 1; e < ext; ++e) mx = std::max(mx, lane[e * inner]);
      T denom = T(0);
      for (int64_t e = 0; e < ext; ++e) {
        T v = detail::exp_scalar(lane[e * inner] - mx);
        olane[e * inner] = v;
        denom += v;
      }
      for (int64_t e = 0; e < ext; ++e) olane[e * inner] /= denom;
    }
  }
  auto rec = detail::begin_record<T>({&x});
  if (rec.active()) {
    int64_t px = rec.parent(0);
    rec.bind_output(out, [out, px, outer, inner, ext](const std::vector<T>& g, Tape<T>& tp) {
      auto& acc = tp.grad_buffer(px);
      const T* yd = out.data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          int64_t base = o * ext * inner + i;
          T dot = T(0);
          for (int64_t e = 0; e < ext; ++e) dot += g[base + e * inner] * yd[base + e * inner];
          for (int64_t e = 0; e < ext; ++e) {
            int64_t ix = base + e * inner;
            acc[ix] += yd[ix] * (g[ix] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---- instance normalization ----
// Rank-4 [b,c,h,w]: normalize over spatial positions per (batch, channel).
// Rank-2 [b,n]: normalize over features per row.
// gamma/beta, when given, are length-C (rank-4) or length-N (rank-2).
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps, const Tensor<T>* gamma = nullptr,
                        const Tensor<T>* beta = nullptr) {
  SAVP_CHECK(x.rank() == 4 || x.rank() == 2,
             "instance_norm: expected rank-4 or rank-2, got ", detail::shape_str(x.shape()));
  int64_t groups, glen, chans;
  if (x.rank() == 4) {
    groups = x.dim(0) * x.dim(1);
    glen = x.dim(2) * x.dim(3);
    chans = x.dim(1);
  } else {
    groups = x.dim(0);
    glen = x.dim(1);
    chans = x.dim(1);
  }
  SAVP_CHECK(glen >= 2, "instance_norm: normalized group has ", glen,
             " element(s); need at least 2");
  bool affine = gamma != nullptr;
  if (affine) {
    SAVP_CHECK(beta != nullptr, "instance_norm: gamma given without beta");
    SAVP_CHECK(gamma->size() == chans && beta->size() == chans,
               "instance_norm: affine params must have ", chans, " elements");
  }

  Tensor<T> out(x.shape());
  std::vector<T> means(groups), inv_stds(groups);
  const T* xd = x.data();
  T* od = out.data();
  for (int64_t gi = 0; gi < groups; ++gi) {
    const T* px = xd + gi * glen;
    T mean = T(0);
    for (int64_t i = 0; i < glen; ++i) mean += px[i];
    mean /= static_cast<T>(glen);
    T var = T(0);
    for (int64_t i = 0; i < glen; ++i) {
      T d = px[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(glen);
    T inv = T(1) / std::sqrt(var + eps);
    means[gi] = mean;
    inv_stds[gi] = inv;
    int64_t c = x.rank() == 4 ? gi % chans : -1;
    T g = affine ? (x.rank() == 4 ? gamma->data()[c] : T(1)) : T(1);
    T bmod = affine ? (x.rank() == 4 ? beta->data()[c] : T(0)) : T(0);
    T* po = od + gi * glen;
    if (x.rank() == 2 && affine) {
      const T* gd = gamma->data();
      const T* bd = beta->data();
      for (int64_t i = 0; i < glen; ++i) po[i] = (px[i] - mean) * inv * gd[i] + bd[i];
    } else {
      for (int64_t i = 0; i < glen; ++i) po[i] = (px[i] - mean) * inv * g + bmod;
    }
  }

  std::vector<const Tensor<T>*> inputs = {&x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  auto rec = detail::begin_record<T>(inputs);
  if (rec.active()) {
    int64_t px_id = rec.parent(0);
    int64_t pg = affine ? rec.parent(1) : -1;
    int64_t pb = affine ? rec.parent(2) : -1;
    Tensor<T> gamma_copy = affine ? *gamma : Tensor<T>();
    bool rank4 = x.rank() == 4;
    rec.bind_output(out, [x, gamma_copy, means, inv_stds, px_id, pg, pb, groups, glen,
                          chans, affine, rank4](const std::vector<T>& g, Tape<T>& tp) {
      const T* xd = x.data();
      for (int64_t gi = 0; gi < groups; ++gi) {
        const T* pxv = xd + gi * glen;
        const T* gv = g.data() + gi * glen;
        T mean = means[gi];
        T inv = inv_stds[gi];
        int64_t c = rank4 ? gi % chans : -1;
        // dL/dxhat, then the standard normalization backward per group.
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (int64_t i = 0; i < glen; ++i) {
          T xhat = (pxv[i] - mean) * inv;
          T gamma_v = affine ? (rank4 ? gamma_copy.data()[c] : gamma_copy.data()[i]) : T(1);
          T dxhat = gv[i] * gamma_v;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        if (px_id >= 0) {
          auto& accx = tp.grad_buffer(px_id);
          T* pa = accx.data() + gi * glen;
          T n = static_cast<T>(glen);
          for (int64_t i = 0; i < glen; ++i) {
            T xhat = (pxv[i] - mean) * inv;
            T gamma_v = affine ? (rank4 ? gamma_copy.data()[c] : gamma_copy.data()[i]) : T(1);
            T dxhat = gv[i] * gamma_v;
            pa[i] += inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
          }
        }
        if (pg >= 0 || pb >= 0) {
          for (int64_t i = 0; i < glen; ++i) {
            T xhat = (pxv[i] - mean) * inv;
            int64_t ci = rank4 ? c : i;
            if (pg >= 0) tp.grad_buffer(pg)[ci] += gv[i] * xhat;
            if (pb >= 0) tp.grad_buffer(pb)[ci] += gv[i];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace savp
