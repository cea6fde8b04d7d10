#pragma once

#include <string>

#include "savp/conv.hpp"
#include "savp/ops.hpp"
#include "savp/rng.hpp"

namespace savp {

inline constexpr double kNormEps = 1e-6;

// ---- initialization ----
// Weights: uniform(-s, s), s = sqrt(1/fan_in). Biases zero; LSTM forget-gate
// bias slices get +1 after the fact.

template <class T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  T s = static_cast<T>(std::sqrt(1.0 / static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-s, s));
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> init_conv_weight(int64_t cout, int64_t cin, int64_t kh, int64_t kw, Rng& rng) {
  return init_uniform<T>({cout, cin, kh, kw}, cin * kh * kw, rng);
}

template <class T>
Tensor<T> init_conv3d_weight(int64_t cout, int64_t cin, int64_t kt, int64_t kh, int64_t kw,
                             Rng& rng) {
  return init_uniform<T>({cout, cin, kt, kh, kw}, cin * kt * kh * kw, rng);
}

template <class T>
Tensor<T> init_zeros(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> init_const(Shape shape, T v) {
  Tensor<T> t(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

// ---- fully-connected layer ----

template <class T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng)
      : w(init_uniform<T>({in, out}, in, rng)), b(init_zeros<T>({out})) {}

  Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w), b); }

  template <class F>
  void visit(const std::string& prefix, F&& cb) {
    cb(prefix + ".w", w);
    cb(prefix + ".b", b);
  }
};

// ---- convolutional LSTM ----
// Gate packing along the channel axis: [input, forget, transform, output].
// Pre-activations are instance-normalized (single norm over the packed
// channels equals per-gate norms), gate biases apply after the norm so the
// +1 forget bias is not cancelled by mean subtraction. The updated cell is
// normalized again for the output path; the raw cell is carried as state.

template <class T>
struct ConvLSTMCell {
  int64_t in_ch = 0, hidden_ch = 0, ksize = 0;
  Tensor<T> w_x;      // [4*hidden, in, k, k]
  Tensor<T> w_h;      // [4*hidden, hidden, k, k]
  Tensor<T> bias;     // [4*hidden]
  Tensor<T> gamma_g, beta_g;  // affine for gate pre-activations [4*hidden]
  Tensor<T> gamma_c, beta_c;  // affine for the cell norm [hidden]

  ConvLSTMCell() = default;
  ConvLSTMCell(int64_t in, int64_t hidden, int64_t k, Rng& rng)
      : in_ch(in),
        hidden_ch(hidden),
        ksize(k),
        w_x(init_conv_weight<T>(4 * hidden, in, k, k, rng)),
        w_h(init_conv_weight<T>(4 * hidden, hidden, k, k, rng)),
        bias(init_zeros<T>({4 * hidden})),
        gamma_g(init_const<T>({4 * hidden}, T(1))),
        beta_g(init_zeros<T>({4 * hidden})),
        gamma_c(init_const<T>({hidden}, T(1))),
        beta_c(init_zeros<T>({hidden})) {
    for (int64_t i = hidden; i < 2 * hidden; ++i) bias.data()[i] = T(1);  // forget gate
  }

  template <class F>
  void visit(const std::string& prefix, F&& cb) {
    cb(prefix + ".w_x", w_x);
    cb(prefix + ".w_h", w_h);
    cb(prefix + ".bias", bias);
    cb(prefix + ".gamma_g", gamma_g);
    cb(prefix + ".beta_g", beta_g);
    cb(prefix + ".gamma_c", gamma_c);
    cb(prefix + ".beta_c", beta_c);
  }
};

template <class T>
struct LSTMState {
  Tensor<T> h, c;
};

template <class T>
LSTMState<T> convlstm_step(const ConvLSTMCell<T>& cell, const Tensor<T>& x,
                           const LSTMState<T>& state) {
  SAVP_CHECK(x.rank() == 4 && x.dim(1) == cell.in_ch, "convlstm_step: input ",
             detail::shape_str(x.shape()), " does not match cell input channels ",
             cell.in_ch);
  SAVP_CHECK(state.h.dim(2) == x.dim(2) && state.h.dim(3) == x.dim(3),
             "convlstm_step: state spatial dims ", detail::shape_str(state.h.shape()),
             " differ from input ", detail::shape_str(x.shape()));
  int64_t hc = cell.hidden_ch;
  auto pre = add(conv2d<T>(x, cell.w_x, nullptr, 1, Pad::same),
                 conv2d<T>(state.h, cell.w_h, nullptr, 1, Pad::same));
  auto normed = instance_norm<T>(pre, static_cast<T>(kNormEps), &cell.gamma_g, &cell.beta_g);
  auto acts = add(normed, reshape(cell.bias, {4 * hc, 1, 1}));
  auto gate_i = sigmoid(slice_axis(acts, 1, 0, hc));
  auto gate_f = sigmoid(slice_axis(acts, 1, hc, hc));
  auto gate_g = tanh(slice_axis(acts, 1, 2 * hc, hc));
  auto gate_o = sigmoid(slice_axis(acts, 1, 3 * hc, hc));
  auto c_next = add(mul(gate_f, state.c), mul(gate_i, gate_g));
  auto c_normed = instance_norm<T>(c_next, static_cast<T>(kNormEps), &cell.gamma_c,
                                   &cell.beta_c);
  auto h_next = mul(gate_o, tanh(c_normed));
  return {h_next, c_next};
}

template <class T>
LSTMState<T> convlstm_zero_state(const ConvLSTMCell<T>& cell, int64_t batch, int64_t h,
                                 int64_t w) {
  return {Tensor<T>({batch, cell.hidden_ch, h, w}), Tensor<T>({batch, cell.hidden_ch, h, w})};
}

// ---- fully-connected LSTM (no normalization) ----

template <class T>
struct FCLSTMCell {
  int64_t in_size = 0, hidden_size = 0;
  Tensor<T> w_x;   // [in, 4*hidden]
  Tensor<T> w_h;   // [hidden, 4*hidden]
  Tensor<T> bias;  // [4*hidden]

  FCLSTMCell() = default;
  FCLSTMCell(int64_t in, int64_t hidden, Rng& rng)
      : in_size(in),
        hidden_size(hidden),
        w_x(init_uniform<T>({in, 4 * hidden}, in, rng)),
        w_h(init_uniform<T>({hidden, 4 * hidden}, hidden, rng)),
        bias(init_zeros<T>({4 * hidden})) {
    for (int64_t i = hidden; i < 2 * hidden; ++i) bias.data()[i] = T(1);
  }

  template <class F>
  void visit(const std::string& prefix, F&& cb) {
    cb(prefix + ".w_x", w_x);
    cb(prefix + ".w_h", w_h);
    cb(prefix + ".bias", bias);
  }
};

template <class T>
LSTMState<T> fclstm_step(const FCLSTMCell<T>& cell, const Tensor<T>& x,
                         const LSTMState<T>& state) {
  SAVP_CHECK(x.rank() == 2 && x.dim(1) == cell.in_size, "fclstm_step: input ",
             detail::shape_str(x.shape()), " does not match cell input size ",
             cell.in_size);
  int64_t hs = cell.hidden_size;
  auto acts = add(add(matmul(x, cell.w_x), matmul(state.h, cell.w_h)), cell.bias);
  auto gate_i = sigmoid(slice_axis(acts, 1, 0, hs));
  auto gate_f = sigmoid(slice_axis(acts, 1, hs, hs));
  auto gate_g = tanh(slice_axis(acts, 1, 2 * hs, hs));
  auto gate_o = sigmoid(slice_axis(acts, 1, 3 * hs, hs));
  auto c_next = add(mul(gate_f, state.c), mul(gate_i, gate_g));
  auto h_next = mul(gate_o, tanh(c_next));
  return {h_next, c_next};
}

template <class T>
LSTMState<T> fclstm_zero_state(const FCLSTMCell<T>& cell, int64_t batch) {
  return {Tensor<T>({batch, cell.hidden_size}), Tensor<T>({batch, cell.hidden_size})};
}

// ---- spectral normalization ----
// Raw weight plus persistent power-iteration vectors. u and v update in
// place on every use (training state, not differentiated); the returned
// tensor is w / sigma_hat with gradients flowing through both w and
// sigma_hat = u^T W v.

template <class T>
struct SpectralWeight {
  Tensor<T> w;     // raw parameter, rank >= 2; rows = dim(0), cols = rest
  Tensor<T> u, v;  // unit vectors [rows], [cols]

  SpectralWeight() = default;
  explicit SpectralWeight(Tensor<T> weight, Rng& rng) : w(std::move(weight)) {
    int64_t rows = w.dim(0), cols = w.size() / rows;
    u = Tensor<T>({rows});
    v = Tensor<T>({cols});
    for (int64_t i = 0; i < rows; ++i) u.data()[i] = static_cast<T>(rng.normal());
    for (int64_t i = 0; i < cols; ++i) v.data()[i] = static_cast<T>(rng.normal());
    normalize_vec(u.data(), rows);
    normalize_vec(v.data(), cols);
    // Warm-start so the estimate is already aligned when training begins;
    // afterwards u, v track the slowly moving weight.
    bool all_zero = true;
    for (int64_t i = 0; i < w.size() && all_zero; ++i) all_zero = w.data()[i] == T(0);
    if (!all_zero) power_iterate(w, u, v, 30);
  }

  template <class F>
  void visit(const std::string& prefix, F&& cb) {
    cb(prefix + ".w", w);
  }
  // Buffers serialized alongside parameters but never optimized.
  template <class F>
  void visit_buffers(const std::string& prefix, F&& cb) {
    cb(prefix + ".u", u);
    cb(prefix + ".v", v);
  }

 private:
  static void normalize_vec(T* p, int64_t n) {
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += p[i] * p[i];
    s = std::sqrt(s);
    SAVP_CHECK(s > T(0), "spectral_normalize: zero vector during power iteration "
               "(zero weight matrix?)");
    for (int64_t i = 0; i < n; ++i) p[i] /= s;
  }

  static void power_iterate(const Tensor<T>& w, Tensor<T>& u, Tensor<T>& v, int iters) {
    int64_t rows = w.dim(0), cols = w.size() / rows;
    const T* wd = w.data();
    T* vd = v.data();
    T* ud = u.data();
    for (int it = 0; it < iters; ++it) {
      for (int64_t j = 0; j < cols; ++j) {
        T acc = T(0);
        for (int64_t i = 0; i < rows; ++i) acc += wd[i * cols + j] * ud[i];
        vd[j] = acc;
      }
      normalize_vec(vd, cols);
      for (int64_t i = 0; i < rows; ++i) {
        T acc = T(0);
        for (int64_t j = 0; j < cols; ++j) acc += wd[i * cols + j] * vd[j];
        ud[i] = acc;
      }
      normalize_vec(ud, rows);
    }
  }

  template <class U>
  friend Tensor<U> spectral_normalize(SpectralWeight<U>&, int);
};

template <class T>
Tensor<T> spectral_normalize(SpectralWeight<T>& sw, int power_iters = 1) {
  SAVP_CHECK(power_iters >= 1, "spectral_normalize: power_iters must be >= 1");
  int64_t rows = sw.w.dim(0), cols = sw.w.size() / rows;
  const T* wd = sw.w.data();
  bool all_zero = true;
  for (int64_t i = 0; i < sw.w.size() && all_zero; ++i) all_zero = wd[i] == T(0);
  SAVP_CHECK(!all_zero, "spectral_normalize: zero weight matrix, sigma undefined");

  // Power iteration on raw values; u, v are buffers outside the tape.
  SpectralWeight<T>::power_iterate(sw.w, sw.u, sw.v, power_iters);

  auto w2 = reshape(sw.w, {rows, cols});
  auto u_row = reshape(sw.u.detach(), {1, rows});
  auto v_col = reshape(sw.v.detach(), {cols, 1});
  auto sigma = reshape(matmul(u_row, matmul(w2, v_col)), {1});
  SAVP_CHECK(sigma.value() != T(0), "spectral_normalize: estimated sigma is zero");
  return divide(sw.w, sigma);
}

}  // namespace savp
