#pragma once

#include <optional>
#include <string>
#include <vector>

#include "savp/layers.hpp"

namespace savp {

enum class Variant { deterministic, vae, gan, savp };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::deterministic: return "deterministic";
    case Variant::vae: return "vae";
    case Variant::gan: return "gan";
    case Variant::savp: return "savp";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "deterministic") return Variant::deterministic;
  if (s == "vae") return Variant::vae;
  if (s == "gan") return Variant::gan;
  if (s == "savp") return Variant::savp;
  throw Error(detail::str("unknown variant '", s, "'"));
}

inline bool variant_has_encoder(Variant v) { return v == Variant::vae || v == Variant::savp; }
inline bool variant_has_gan(Variant v) { return v == Variant::gan || v == Variant::savp; }
inline bool variant_is_stochastic(Variant v) { return v != Variant::deterministic; }

struct ModelConfig {
  Variant variant = Variant::vae;
  int64_t channels = 1;
  int64_t height = 16;
  int64_t width = 16;
  int64_t latent_dim = 8;   // per-step code length; 0 for deterministic
  int64_t action_dim = 0;   // 0 when not action-conditioned
  int64_t num_kernels = 6;  // predicted warp kernels per step
  int64_t kernel_size = 5;
  int64_t horizon = 8;      // discriminator clip length
  int64_t base_channels = 8;
};

// conv(3x3 stride s, same) -> instance norm (affine) -> ReLU / leaky ReLU
template <class T>
struct ConvBlock {
  Tensor<T> w, b, gamma, beta;
  int64_t stride = 1;
  T leak = T(0);  // 0 = plain ReLU

  ConvBlock() = default;
  ConvBlock(int64_t cin, int64_t cout, int64_t k, int64_t stride_, T leak_, Rng& rng)
      : w(init_conv_weight<T>(cout, cin, k, k, rng)),
        b(init_zeros<T>({cout})),
        gamma(init_const<T>({cout}, T(1))),
        beta(init_zeros<T>({cout})),
        stride(stride_),
        leak(leak_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = instance_norm<T>(conv2d(x, w, &b, stride, Pad::same),
                              static_cast<T>(kNormEps), &gamma, &beta);
    return leak > T(0) ? leaky_relu(y, leak) : relu(y);
  }

  template <class F>
  void visit(const std::string& p, F&& cb) {
    cb(p + ".w", w);
    cb(p + ".b", b);
    cb(p + ".gamma", gamma);
    cb(p + ".beta", beta);
  }
};

// ---- generator ----
// Three conv-LSTM levels at full/half/quarter resolution with a skip
// connection from the first level into the final decoder conv. Latent codes
// pass through a fully-connected LSTM, then get broadcast spatially and
// concatenated (with actions, when present) onto every conv input of the
// main network. Heads: per-step warp kernels (fully-connected, spatial
// softmax), a synthesized frame (sigmoid), and a compositing mask (softmax
// over num_kernels + 3 components: warps, first frame, previous frame,
// synthesized frame).

template <class T>
struct Generator {
  ModelConfig cfg;
  ConvBlock<T> conv1, conv2, conv3;
  ConvLSTMCell<T> lstm1, lstm2, lstm3;
  ConvBlock<T> dec2, dec1;
  Linear<T> kernel_fc;
  ConvBlock<T> synth_a;
  Tensor<T> synth_w, synth_b;
  ConvBlock<T> mask_a;
  Tensor<T> mask_w, mask_b;
  FCLSTMCell<T> latent_lstm;

  Generator() = default;
  Generator(const ModelConfig& cfg_, Rng& rng) : cfg(cfg_) {
    SAVP_CHECK(cfg.height % 4 == 0 && cfg.width % 4 == 0 && cfg.height >= 8,
               "generator: frame size must be a multiple of 4 and at least 8, got ",
               cfg.height, "x", cfg.width);
    int64_t aux = aux_channels();
    int64_t c = cfg.channels, bc = cfg.base_channels;
    int64_t ch1 = bc, ch2 = bc + bc / 2, ch3 = 2 * bc;
    conv1 = ConvBlock<T>(c + aux, ch1, 3, 1, T(0), rng);
    lstm1 = ConvLSTMCell<T>(ch1 + aux, ch1, 3, rng);
    conv2 = ConvBlock<T>(ch1 + aux, ch2, 3, 1, T(0), rng);
    lstm2 = ConvLSTMCell<T>(ch2 + aux, ch2, 3, rng);
    conv3 = ConvBlock<T>(ch2 + aux, ch3, 3, 1, T(0), rng);
    lstm3 = ConvLSTMCell<T>(ch3 + aux, ch3, 3, rng);
    dec2 = ConvBlock<T>(ch3 + aux, ch2, 3, 1, T(0), rng);
    dec1 = ConvBlock<T>(ch2 + ch1 + aux, bc, 3, 1, T(0), rng);
    int64_t deep = ch3 * (cfg.height / 4) * (cfg.width / 4);
    kernel_fc = Linear<T>(deep, cfg.num_kernels * cfg.kernel_size * cfg.kernel_size, rng);
    synth_a = ConvBlock<T>(bc, bc, 3, 1, T(0), rng);
    synth_w = init_conv_weight<T>(c, bc, 3, 3, rng);
    synth_b = init_zeros<T>({c});
    mask_a = ConvBlock<T>(bc, bc, 3, 1, T(0), rng);
    mask_w = init_conv_weight<T>(cfg.num_kernels + 3, bc, 3, 3, rng);
    mask_b = init_zeros<T>({cfg.num_kernels + 3});
    if (cfg.latent_dim > 0) latent_lstm = FCLSTMCell<T>(cfg.latent_dim, cfg.latent_dim, rng);
  }

  int64_t aux_channels() const { return cfg.latent_dim + cfg.action_dim; }

  template <class F>
  void visit(const std::string& p, F&& cb) {
    conv1.visit(p + ".conv1", cb);
    lstm1.visit(p + ".lstm1", cb);
    conv2.visit(p + ".conv2", cb);
    lstm2.visit(p + ".lstm2", cb);
    conv3.visit(p + ".conv3", cb);
    lstm3.visit(p + ".lstm3", cb);
    dec2.visit(p + ".dec2", cb);
    dec1.visit(p + ".dec1", cb);
    kernel_fc.visit(p + ".kernel_fc", cb);
    synth_a.visit(p + ".synth_a", cb);
    cb(p + ".synth_w", synth_w);
    cb(p + ".synth_b", synth_b);
    mask_a.visit(p + ".mask_a", cb);
    cb(p + ".mask_w", mask_w);
    cb(p + ".mask_b", mask_b);
    if (cfg.latent_dim > 0) latent_lstm.visit(p + ".latent_lstm", cb);
  }
};

template <class T>
struct GeneratorState {
  LSTMState<T> s1, s2, s3;
  LSTMState<T> latent;
  Tensor<T> first_frame;  // skip input, constant across the rollout
};

template <class T>
GeneratorState<T> generator_init_state(const Generator<T>& gen, const Tensor<T>& first_frame) {
  int64_t b = first_frame.dim(0), h = first_frame.dim(2), w = first_frame.dim(3);
  GeneratorState<T> st;
  st.s1 = convlstm_zero_state(gen.lstm1, b, h, w);
  st.s2 = convlstm_zero_state(gen.lstm2, b, h / 2, w / 2);
  st.s3 = convlstm_zero_state(gen.lstm3, b, h / 4, w / 4);
  if (gen.cfg.latent_dim > 0) st.latent = fclstm_zero_state(gen.latent_lstm, b);
  st.first_frame = first_frame;
  return st;
}

template <class T>
struct StepDiagnostics {
  Tensor<T> kernels;  // [b, nk, k, k], each kernel sums to 1
  Tensor<T> mask;     // [b, nk+3, h, w], softmax over components
  Tensor<T> synth;    // [b, c, h, w], sigmoid output
};

template <class T>
struct StepResult {
  Tensor<T> frame;
  GeneratorState<T> state;
  StepDiagnostics<T> diag;
};

namespace detail {
template <class T>
void check_head_finite(const Tensor<T>& t, const char* head) {
  const T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i)
    SAVP_CHECK(!std::isnan(static_cast<double>(p[i])), "generator_step: NaN in ", head,
               " head output");
}
}  // namespace detail

template <class T>
StepResult<T> generator_step(const Generator<T>& gen, const GeneratorState<T>& state,
                             const Tensor<T>& prev_frame, const Tensor<T>* z,
                             const Tensor<T>* action = nullptr) {
  const auto& cfg = gen.cfg;
  int64_t b = prev_frame.dim(0), h = prev_frame.dim(2), w = prev_frame.dim(3);
  SAVP_CHECK(prev_frame.dim(1) == cfg.channels, "generator_step: frame channels ",
             prev_frame.dim(1), " != configured ", cfg.channels);
  if (cfg.latent_dim > 0)
    SAVP_CHECK(z && z->dim(1) == cfg.latent_dim, "generator_step: latent code length ",
               z ? z->dim(1) : 0, " != configured ", cfg.latent_dim);
  if (cfg.action_dim > 0)
    SAVP_CHECK(action && action->dim(1) == cfg.action_dim,
               "generator_step: action length mismatch");

  StepResult<T> out;
  out.state = state;

  // Encoded latent + action vector, replicated at each resolution.
  std::vector<Tensor<T>> aux_vec;
  if (cfg.latent_dim > 0) {
    out.state.latent = fclstm_step(gen.latent_lstm, *z, state.latent);
    aux_vec.push_back(out.state.latent.h);
  }
  if (cfg.action_dim > 0) aux_vec.push_back(*action);
  bool has_aux = !aux_vec.empty();
  Tensor<T> aux_full, aux_half, aux_quarter;
  if (has_aux) {
    Tensor<T> joined = aux_vec.size() == 1 ? aux_vec[0] : concat(aux_vec, 1);
    aux_full = expand_hw(joined, h, w);
    aux_half = expand_hw(joined, h / 2, w / 2);
    aux_quarter = expand_hw(joined, h / 4, w / 4);
  }
  auto with_aux = [&](const Tensor<T>& x, const Tensor<T>& aux) {
    return has_aux ? concat<T>({x, aux}, 1) : x;
  };

  auto e1 = gen.conv1.forward(with_aux(prev_frame, aux_full));
  out.state.s1 = convlstm_step(gen.lstm1, with_aux(e1, aux_full), state.s1);
  auto p1 = avg_pool2d(out.state.s1.h, 2);
  auto e2 = gen.conv2.forward(with_aux(p1, aux_half));
  out.state.s2 = convlstm_step(gen.lstm2, with_aux(e2, aux_half), state.s2);
  auto p2 = avg_pool2d(out.state.s2.h, 2);
  auto e3 = gen.conv3.forward(with_aux(p2, aux_quarter));
  out.state.s3 = convlstm_step(gen.lstm3, with_aux(e3, aux_quarter), state.s3);

  // Kernel head from the deepest feature map; spatial softmax guarantees
  // each kernel is a convex weighting.
  int64_t nk = cfg.num_kernels, ks = cfg.kernel_size;
  auto deep = reshape(out.state.s3.h, {b, out.state.s3.h.size() / b});
  auto kernels_flat = softmax(reshape(gen.kernel_fc.forward(deep), {b, nk, ks * ks}), 2);
  auto kernels = reshape(kernels_flat, {b, nk, ks, ks});
  detail::check_head_finite(kernels, "kernel");

  auto d2 = gen.dec2.forward(with_aux(upsample_bilinear2d(out.state.s3.h, 2), aux_half));
  auto d1_in = has_aux ? concat<T>({upsample_bilinear2d(d2, 2), out.state.s1.h, aux_full}, 1)
                       : concat<T>({upsample_bilinear2d(d2, 2), out.state.s1.h}, 1);
  auto d1 = gen.dec1.forward(d1_in);

  auto synth = sigmoid(conv2d(gen.synth_a.forward(d1), gen.synth_w, &gen.synth_b, 1,
                              Pad::same));
  detail::check_head_finite(synth, "synthesis");
  auto mask = softmax(conv2d(gen.mask_a.forward(d1), gen.mask_w, &gen.mask_b, 1, Pad::same),
                      1);
  detail::check_head_finite(mask, "mask");

  // Composite: sum of mask-weighted candidates (warps, first, prev, synth).
  auto warped = cdna_warp(prev_frame, kernels);  // [b, nk, c, h, w]
  Tensor<T> composite;
  for (int64_t i = 0; i < nk + 3; ++i) {
    Tensor<T> cand;
    if (i < nk)
      cand = reshape(slice_axis(warped, 1, i, 1), {b, cfg.channels, h, w});
    else if (i == nk)
      cand = state.first_frame;
    else if (i == nk + 1)
      cand = prev_frame;
    else
      cand = synth;
    auto weighted = mul(slice_axis(mask, 1, i, 1), cand);
    composite = i == 0 ? weighted : add(composite, weighted);
  }
  out.frame = clamp(composite, T(0), T(1));
  out.diag = {kernels, mask, synth};
  return out;
}

// Rollout producing predictions for frames 1..T. teacher_forcing[t] selects
// the source of input frame t: ground truth when true (mandatory for the
// context), the previous prediction otherwise.
template <class T>
std::vector<Tensor<T>> generator_rollout(const Generator<T>& gen,
                                         const std::vector<Tensor<T>>& gt_frames,
                                         const std::vector<Tensor<T>>& latents,
                                         const std::vector<bool>& teacher_forcing,
                                         int64_t context,
                                         const std::vector<Tensor<T>>* actions = nullptr,
                                         std::vector<StepDiagnostics<T>>* diags = nullptr) {
  int64_t horizon = static_cast<int64_t>(teacher_forcing.size());
  SAVP_CHECK(static_cast<int64_t>(latents.size()) == horizon,
             "generator_rollout: latent count ", latents.size(),
             " does not match horizon ", horizon);
  SAVP_CHECK(context >= 1, "generator_rollout: context must be >= 1");
  SAVP_CHECK(!gt_frames.empty(), "generator_rollout: no ground-truth frames");
  if (actions)
    SAVP_CHECK(static_cast<int64_t>(actions->size()) >= horizon,
               "generator_rollout: action count ", actions->size(), " < horizon ", horizon);
  for (int64_t t = 0; t < std::min<int64_t>(context, horizon); ++t)
    SAVP_CHECK(teacher_forcing[t], "generator_rollout: context step ", t,
               " must be teacher-forced");

  auto state = generator_init_state(gen, gt_frames[0]);
  std::vector<Tensor<T>> preds;
  preds.reserve(horizon);
  Tensor<T> last_pred;
  for (int64_t t = 0; t < horizon; ++t) {
    Tensor<T> input;
    if (teacher_forcing[t]) {
      SAVP_CHECK(t < static_cast<int64_t>(gt_frames.size()),
                 "generator_rollout: teacher forcing at step ", t,
                 " needs ground-truth frame ", t);
      input = gt_frames[t];
    } else {
      input = last_pred;
    }
    const Tensor<T>* z = gen.cfg.latent_dim > 0 ? &latents[t] : nullptr;
    const Tensor<T>* a = actions && gen.cfg.action_dim > 0 ? &(*actions)[t] : nullptr;
    auto step = generator_step(gen, state, input, z, a);
    state = std::move(step.state);
    last_pred = step.frame;
    preds.push_back(step.frame);
    if (diags) diags->push_back(step.diag);
  }
  return preds;
}

// ---- encoder ----
// Pairs of adjacent frames, channel-concatenated, through three stride-2
// conv blocks (leaky ReLU), pooled over all spatial positions, then two
// fully-connected heads for mu and log sigma (clamped to [-10, 10]).

template <class T>
struct Encoder {
  int64_t channels = 1, latent_dim = 8;
  ConvBlock<T> b1, b2, b3;
  Linear<T> fc_mu, fc_logsig;

  Encoder() = default;
  Encoder(int64_t channels_, int64_t latent_dim_, int64_t base, Rng& rng)
      : channels(channels_), latent_dim(latent_dim_) {
    b1 = ConvBlock<T>(2 * channels, base, 3, 2, T(0.2), rng);
    b2 = ConvBlock<T>(base, 2 * base, 3, 2, T(0.2), rng);
    b3 = ConvBlock<T>(2 * base, 2 * base, 3, 2, T(0.2), rng);
    fc_mu = Linear<T>(2 * base, latent_dim, rng);
    fc_logsig = Linear<T>(2 * base, latent_dim, rng);
  }

  template <class F>
  void visit(const std::string& p, F&& cb) {
    b1.visit(p + ".b1", cb);
    b2.visit(p + ".b2", cb);
    b3.visit(p + ".b3", cb);
    fc_mu.visit(p + ".fc_mu", cb);
    fc_logsig.visit(p + ".fc_logsig", cb);
  }
};

template <class T>
std::pair<Tensor<T>, Tensor<T>> encoder_posterior(const Encoder<T>& enc,
                                                  const Tensor<T>& frame_t,
                                                  const Tensor<T>& frame_t1) {
  SAVP_CHECK(frame_t.shape() == frame_t1.shape(), "encoder_posterior: frame shapes differ: ",
             detail::shape_str(frame_t.shape()), " vs ", detail::shape_str(frame_t1.shape()));
  auto x = concat<T>({frame_t, frame_t1}, 1);
  auto f = enc.b3.forward(enc.b2.forward(enc.b1.forward(x)));
  auto pooled = global_avg_pool(f);
  auto mu = enc.fc_mu.forward(pooled);
  auto logsig = clamp(enc.fc_logsig.forward(pooled), T(-10), T(10));
  return {mu, logsig};
}

// ---- latent tracks ----

enum class LatentSource { prior, posterior };

template <class T>
struct LatentTrack {
  LatentSource source = LatentSource::prior;
  std::vector<Tensor<T>> z;                // per step, [b, nz]
  std::vector<Tensor<T>> mu, logsig;       // posterior only
};

template <class T>
LatentTrack<T> sample_latents_prior(int64_t batch, int64_t steps, int64_t nz, Rng& rng) {
  LatentTrack<T> track;
  track.source = LatentSource::prior;
  for (int64_t t = 0; t < steps; ++t) {
    Tensor<T> z({batch, nz});
    for (int64_t i = 0; i < z.size(); ++i) z.data()[i] = static_cast<T>(rng.normal());
    track.z.push_back(std::move(z));
  }
  return track;
}

template <class T>
LatentTrack<T> zero_latents(int64_t batch, int64_t steps, int64_t nz) {
  LatentTrack<T> track;
  track.source = LatentSource::prior;
  for (int64_t t = 0; t < steps; ++t) track.z.emplace_back(Shape{batch, std::max<int64_t>(nz, 1)});
  return track;
}

// Reparametrized draw: z = mu + exp(logsig) * eps, differentiable through
// mu and logsig.
template <class T>
Tensor<T> reparametrize(const Tensor<T>& mu, const Tensor<T>& logsig, const Tensor<T>& eps) {
  return add(mu, mul(exp(logsig), eps));
}

template <class T>
LatentTrack<T> sample_latents_posterior(std::vector<Tensor<T>> mu,
                                        std::vector<Tensor<T>> logsig, Rng& rng) {
  SAVP_CHECK(mu.size() == logsig.size(), "sample_latents_posterior: mu/logsig length mismatch");
  LatentTrack<T> track;
  track.source = LatentSource::posterior;
  for (size_t t = 0; t < mu.size(); ++t) {
    Tensor<T> eps(mu[t].shape());
    for (int64_t i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<T>(rng.normal());
    track.z.push_back(reparametrize(mu[t], logsig[t], eps));
  }
  track.mu = std::move(mu);
  track.logsig = std::move(logsig);
  return track;
}

// ---- video discriminator ----
// 3-d conv stack, spectral normalization on every weight, leaky ReLU, one
// logit per clip. First conv is valid along time, so clips must be at least
// 3 frames long.

template <class T>
struct Discriminator {
  int64_t channels = 1, horizon = 8;
  SpectralWeight<T> c1, c2, c3, c4;
  Tensor<T> b1, b2, b3, b4;
  SpectralWeight<T> fc_w;  // [1, flat]
  Tensor<T> fc_b;
  int64_t flat = 0;

  Discriminator() = default;
  Discriminator(const ModelConfig& cfg, Rng& rng) : channels(cfg.channels), horizon(cfg.horizon) {
    SAVP_CHECK(cfg.horizon >= 3, "discriminator: clip length must be >= 3, got ", cfg.horizon);
    int64_t bc = cfg.base_channels;
    c1 = SpectralWeight<T>(init_conv3d_weight<T>(bc, cfg.channels, 3, 3, 3, rng), rng);
    c2 = SpectralWeight<T>(init_conv3d_weight<T>(2 * bc, bc, 3, 3, 3, rng), rng);
    c3 = SpectralWeight<T>(init_conv3d_weight<T>(2 * bc, 2 * bc, 3, 3, 3, rng), rng);
    c4 = SpectralWeight<T>(init_conv3d_weight<T>(2 * bc, 2 * bc, 3, 3, 3, rng), rng);
    b1 = init_zeros<T>({bc});
    b2 = init_zeros<T>({2 * bc});
    b3 = init_zeros<T>({2 * bc});
    b4 = init_zeros<T>({2 * bc});
    auto ceil_div = [](int64_t a, int64_t b) { return (a + b - 1) / b; };
    int64_t t1 = cfg.horizon - 2;
    int64_t t3 = ceil_div(t1, 2), t4 = ceil_div(t3, 2);
    int64_t h4 = ceil_div(ceil_div(ceil_div(cfg.height, 2), 2), 2);
    int64_t w4 = ceil_div(ceil_div(ceil_div(cfg.width, 2), 2), 2);
    flat = 2 * bc * t4 * h4 * w4;
    fc_w = SpectralWeight<T>(init_uniform<T>({1, flat}, flat, rng), rng);
    fc_b = init_zeros<T>({1});
  }

  template <class F>
  void visit(const std::string& p, F&& cb) {
    c1.visit(p + ".c1", cb);
    cb(p + ".b1", b1);
    c2.visit(p + ".c2", cb);
    cb(p + ".b2", b2);
    c3.visit(p + ".c3", cb);
    cb(p + ".b3", b3);
    c4.visit(p + ".c4", cb);
    cb(p + ".b4", b4);
    fc_w.visit(p + ".fc", cb);
    cb(p + ".fc_b", fc_b);
  }
  template <class F>
  void visit_buffers(const std::string& p, F&& cb) {
    c1.visit_buffers(p + ".c1", cb);
    c2.visit_buffers(p + ".c2", cb);
    c3.visit_buffers(p + ".c3", cb);
    c4.visit_buffers(p + ".c4", cb);
    fc_w.visit_buffers(p + ".fc", cb);
  }

  std::vector<Tensor<T>> snapshot_buffers() const {
    return {c1.u.clone(), c1.v.clone(), c2.u.clone(), c2.v.clone(), c3.u.clone(),
            c3.v.clone(), c4.u.clone(), c4.v.clone(), fc_w.u.clone(), fc_w.v.clone()};
  }
  void restore_buffers(const std::vector<Tensor<T>>& snap) {
    Tensor<T>* slots[] = {&c1.u, &c1.v, &c2.u, &c2.v, &c3.u,
                          &c3.v, &c4.u, &c4.v, &fc_w.u, &fc_w.v};
    for (size_t i = 0; i < snap.size(); ++i)
      std::copy(snap[i].data(), snap[i].data() + snap[i].size(), slots[i]->data());
  }
};

// video: [b, c, t, h, w] -> logits [b]
template <class T>
Tensor<T> discriminator_score(Discriminator<T>& d, const Tensor<T>& video,
                              int power_iters = 1) {
  SAVP_CHECK(video.rank() == 5, "discriminator_score: video must be [b,c,t,h,w], got ",
             detail::shape_str(video.shape()));
  SAVP_CHECK(video.dim(1) == d.channels, "discriminator_score: channel mismatch");
  SAVP_CHECK(video.dim(2) >= 3, "discriminator_score: clip length ", video.dim(2),
             " shorter than the receptive depth (3) of the first conv");
  int64_t b = video.dim(0);
  T leak = T(0.2);
  auto w1 = spectral_normalize(d.c1, power_iters);
  auto h1 = leaky_relu(conv3d(video, w1, &d.b1, {1, 1, 1},
                              {Pad::valid, Pad::same, Pad::same}),
                       leak);
  auto w2 = spectral_normalize(d.c2, power_iters);
  auto h2 = leaky_relu(conv3d(h1, w2, &d.b2, {1, 2, 2}, {Pad::same, Pad::same, Pad::same}),
                       leak);
  auto w3 = spectral_normalize(d.c3, power_iters);
  auto h3 = leaky_relu(conv3d(h2, w3, &d.b3, {2, 2, 2}, {Pad::same, Pad::same, Pad::same}),
                       leak);
  auto w4 = spectral_normalize(d.c4, power_iters);
  auto h4 = leaky_relu(conv3d(h3, w4, &d.b4, {2, 2, 2}, {Pad::same, Pad::same, Pad::same}),
                       leak);
  SAVP_CHECK(h4.size() / b == d.flat, "discriminator_score: clip shape produces ",
             h4.size() / b, " features, discriminator was built for ", d.flat,
             " (clip length ", video.dim(2), " vs configured ", d.horizon, ")");
  auto flat = reshape(h4, {b, d.flat});
  auto wf = reshape(spectral_normalize(d.fc_w, power_iters), {d.flat, 1});
  auto logits = add(matmul(flat, wf), d.fc_b);
  return reshape(logits, {b});
}

// Stacks per-step frames [b,c,h,w] into a clip [b,c,t,h,w].
template <class T>
Tensor<T> stack_video(const std::vector<Tensor<T>>& frames) {
  SAVP_CHECK(!frames.empty(), "stack_video: no frames");
  int64_t b = frames[0].dim(0), c = frames[0].dim(1);
  int64_t h = frames[0].dim(2), w = frames[0].dim(3);
  std::vector<Tensor<T>> reshaped;
  reshaped.reserve(frames.size());
  for (const auto& f : frames) reshaped.push_back(reshape(f, {b, c, 1, h, w}));
  return concat(reshaped, 2);
}

// ---- per-variant model bundle ----

template <class T>
struct ModelSet {
  ModelConfig cfg;
  Generator<T> g;
  std::optional<Encoder<T>> e;
  std::optional<Discriminator<T>> d;      // sees prior-code rollouts
  std::optional<Discriminator<T>> d_vae;  // sees posterior-code rollouts

  template <class F>
  void visit_group(const std::string& group, F&& cb) {
    if (group == "g") g.visit("g", cb);
    if (group == "e" && e) e->visit("e", cb);
    if (group == "d" && d) d->visit("d", cb);
    if (group == "dvae" && d_vae) d_vae->visit("dvae", cb);
  }
  template <class F>
  void visit_all(F&& cb) {
    g.visit("g", cb);
    if (e) e->visit("e", cb);
    if (d) d->visit("d", cb);
    if (d_vae) d_vae->visit("dvae", cb);
  }
  template <class F>
  void visit_all_buffers(F&& cb) {
    if (d) d->visit_buffers("d", cb);
    if (d_vae) d_vae->visit_buffers("dvae", cb);
  }
};

template <class T>
ModelSet<T> build_models(ModelConfig cfg, Rng& rng) {
  if (cfg.variant == Variant::deterministic) cfg.latent_dim = 0;
  ModelSet<T> m;
  m.cfg = cfg;
  m.g = Generator<T>(cfg, rng);
  if (variant_has_encoder(cfg.variant))
    m.e = Encoder<T>(cfg.channels, cfg.latent_dim, cfg.base_channels, rng);
  if (variant_has_gan(cfg.variant)) m.d = Discriminator<T>(cfg, rng);
  if (cfg.variant == Variant::savp) m.d_vae = Discriminator<T>(cfg, rng);
  return m;
}

}  // namespace savp
