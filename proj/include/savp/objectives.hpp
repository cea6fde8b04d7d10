#pragma once

#include <map>
#include <optional>

#include "savp/model.hpp"

namespace savp {

enum class ReconNorm { l1, l2 };

inline ReconNorm recon_norm_from_name(const std::string& s) {
  if (s == "l1") return ReconNorm::l1;
  if (s == "l2") return ReconNorm::l2;
  throw Error(detail::str("unknown reconstruction norm '", s, "'"));
}

template <class T>
struct LossWeights {
  T lambda_recon = T(1);
  T lambda_kl = T(0);
  int64_t anneal_start = 0;
  int64_t anneal_end = 0;

  void validate() const {
    SAVP_CHECK(lambda_recon > T(0), "LossWeights: lambda_recon must be > 0");
    SAVP_CHECK(lambda_kl >= T(0), "LossWeights: lambda_kl must be >= 0");
    SAVP_CHECK(anneal_start <= anneal_end, "LossWeights: anneal window [", anneal_start,
               ",", anneal_end, "] is reversed");
  }
};

// Global elementwise mean of |x - xhat| or (x - xhat)^2: per-frame means
// summed over time, divided by the horizon.
template <class T>
Tensor<T> loss_reconstruction(const std::vector<Tensor<T>>& target,
                              const std::vector<Tensor<T>>& pred, ReconNorm norm) {
  SAVP_CHECK(target.size() == pred.size() && !target.empty(),
             "loss_reconstruction: got ", target.size(), " target frames vs ",
             pred.size(), " predictions");
  Tensor<T> acc;
  for (size_t t = 0; t < target.size(); ++t) {
    SAVP_CHECK(target[t].shape() == pred[t].shape(),
               "loss_reconstruction: frame ", t, " shape mismatch: ",
               detail::shape_str(target[t].shape()), " vs ",
               detail::shape_str(pred[t].shape()));
    auto diff = sub(target[t], pred[t]);
    auto term = norm == ReconNorm::l1 ? mean_all(abs(diff)) : mean_all(square(diff));
    acc = t == 0 ? term : add(acc, term);
  }
  return scale(acc, T(1) / static_cast<T>(target.size()));
}

// KL(q || N(0,1)) in closed form: 0.5 (mu^2 + sigma^2 - 1 - log sigma^2),
// summed over time and latent dims, mean over batch.
template <class T>
Tensor<T> loss_kl(const std::vector<Tensor<T>>& mu, const std::vector<Tensor<T>>& logsig) {
  SAVP_CHECK(mu.size() == logsig.size() && !mu.empty(),
             "loss_kl: mu/logsig track lengths differ");
  int64_t batch = mu[0].dim(0);
  Tensor<T> acc;
  for (size_t t = 0; t < mu.size(); ++t) {
    auto var = exp(scale(logsig[t], T(2)));
    auto elem = sub(add(square(mu[t]), var), add_scalar(scale(logsig[t], T(2)), T(1)));
    auto term = sum_all(elem);
    acc = t == 0 ? term : add(acc, term);
  }
  return scale(acc, T(0.5) / static_cast<T>(batch));
}

// Binary cross-entropy for the discriminator, in the overflow-safe logit
// form: -mean log D(real) - mean log(1 - D(fake)).
template <class T>
Tensor<T> loss_gan_discriminator(const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
  return add(mean_all(softplus(neg(real_logits))), mean_all(softplus(fake_logits)));
}

// Non-saturating generator loss: -mean log D(fake).
template <class T>
Tensor<T> loss_gan_generator(const Tensor<T>& fake_logits) {
  return mean_all(softplus(neg(fake_logits)));
}

// 0 before the window, lambda_kl after, linear inside.
template <class T>
T kl_anneal_weight(int64_t iter, const LossWeights<T>& w) {
  SAVP_CHECK(iter >= 0, "kl_anneal_weight: negative iteration ", iter);
  if (iter < w.anneal_start) return T(0);
  if (iter >= w.anneal_end) return w.lambda_kl;
  return w.lambda_kl * static_cast<T>(iter - w.anneal_start) /
         static_cast<T>(w.anneal_end - w.anneal_start);
}

template <class T>
struct Batch {
  std::vector<Tensor<T>> frames;   // x_0 .. x_T (context + future)
  std::vector<Tensor<T>> actions;  // empty when not action-conditioned
};

enum class AssembleMode { full, d_only, ge_only };

template <class T>
struct Objective {
  Tensor<T> ge_loss;                  // generator(+encoder) objective, live graph
  std::optional<Tensor<T>> d_loss;    // prior-path discriminator, detached fakes
  std::optional<Tensor<T>> d_vae_loss;
  std::map<std::string, double> terms;
};

// Builds the per-variant objective on the active tape.
//   deterministic: lambda_recon * recon, zero latents
//   vae:  lambda_recon * recon + anneal(iter) * KL, posterior codes
//   gan:  LGAN + lambda_recon * recon, prior codes
//   savp: posterior rollout -> recon + KL + D_vae term; prior rollout -> D term
// Encoder gradients only flow through the posterior path; D losses see
// detached fakes. rng is consumed in a fixed order (posterior codes, then
// prior codes) so identical seeds give identical rollouts across variants.
template <class T>
Objective<T> assemble_objective(ModelSet<T>& models, const Batch<T>& batch,
                                const LossWeights<T>& weights, ReconNorm norm,
                                int64_t iter, Rng& rng,
                                const std::vector<bool>& teacher_forcing, int64_t context,
                                AssembleMode mode = AssembleMode::full) {
  const Variant variant = models.cfg.variant;
  weights.validate();
  SAVP_CHECK(batch.frames.size() >= 2, "assemble_objective: batch needs at least 2 frames");
  int64_t horizon = static_cast<int64_t>(batch.frames.size()) - 1;
  SAVP_CHECK(static_cast<int64_t>(teacher_forcing.size()) == horizon,
             "assemble_objective: teacher-forcing flags (", teacher_forcing.size(),
             ") must cover the horizon (", horizon, ")");
  if (variant_has_encoder(variant))
    SAVP_CHECK(models.e.has_value(), "assemble_objective: variant '",
               variant_name(variant), "' requires an encoder");
  if (variant_has_gan(variant))
    SAVP_CHECK(models.d.has_value(), "assemble_objective: variant '",
               variant_name(variant), "' requires a discriminator");
  if (variant == Variant::savp)
    SAVP_CHECK(models.d_vae.has_value(), "assemble_objective: savp requires both "
               "discriminators");
  int64_t b = batch.frames[0].dim(0);
  bool need_ge = mode != AssembleMode::d_only;
  bool need_d = variant_has_gan(variant) && mode != AssembleMode::ge_only;

  std::vector<Tensor<T>> target(batch.frames.begin() + 1, batch.frames.end());
  const std::vector<Tensor<T>>* actions =
      batch.actions.empty() ? nullptr : &batch.actions;

  Objective<T> out;

  // Latent tracks, fixed draw order.
  LatentTrack<T> posterior_track, prior_track;
  bool use_posterior = variant_has_encoder(variant);
  bool use_prior = variant == Variant::gan || variant == Variant::savp;
  auto encode_track = [&]() {
    std::vector<Tensor<T>> mu, logsig;
    for (int64_t t = 0; t < horizon; ++t) {
      auto [m, ls] = encoder_posterior(*models.e, batch.frames[t], batch.frames[t + 1]);
      mu.push_back(m);
      logsig.push_back(ls);
    }
    return sample_latents_posterior(std::move(mu), std::move(logsig), rng);
  };

  auto rollout = [&](const LatentTrack<T>& track) {
    return generator_rollout(models.g, batch.frames, track.z, teacher_forcing, context,
                             actions);
  };

  // Pass 1: the GE graph (skipped in d_only mode, where rollouts and encoder
  // passes run without recording).
  std::optional<TapePause<T>> pause;
  if (!need_ge) pause.emplace();

  if (use_posterior) posterior_track = encode_track();
  if (use_prior)
    prior_track = sample_latents_prior<T>(b, horizon, models.cfg.latent_dim, rng);

  std::vector<Tensor<T>> posterior_preds, prior_preds;
  if (use_posterior) posterior_preds = rollout(posterior_track);
  if (use_prior) prior_preds = rollout(prior_track);
  if (variant == Variant::deterministic) {
    auto zeros = zero_latents<T>(b, horizon, models.cfg.latent_dim);
    posterior_preds = rollout(zeros);  // zero-latent rollout doubles as the recon path
  }

  if (need_ge) {
    const auto& recon_preds = variant == Variant::gan ? prior_preds : posterior_preds;
    auto recon = loss_reconstruction(target, recon_preds, norm);
    out.terms["recon"] = static_cast<double>(recon.value());
    Tensor<T> ge = scale(recon, weights.lambda_recon);
    if (use_posterior) {
      auto kl = loss_kl(posterior_track.mu, posterior_track.logsig);
      T klw = kl_anneal_weight(iter, weights);
      out.terms["kl"] = static_cast<double>(kl.value());
      out.terms["kl_weight"] = static_cast<double>(klw);
      ge = add(ge, scale(kl, klw));
    }
    if (variant_has_gan(variant)) {
      auto fake_prior = stack_video(prior_preds);
      auto g_gan = loss_gan_generator(discriminator_score(*models.d, fake_prior));
      out.terms["gan_g"] = static_cast<double>(g_gan.value());
      ge = add(ge, g_gan);
      if (variant == Variant::savp) {
        auto fake_post = stack_video(posterior_preds);
        auto g_gan_vae =
            loss_gan_generator(discriminator_score(*models.d_vae, fake_post));
        out.terms["gan_g_vae"] = static_cast<double>(g_gan_vae.value());
        ge = add(ge, g_gan_vae);
      }
    }
    out.ge_loss = ge;
    out.terms["loss_ge"] = static_cast<double>(ge.value());
  }
  pause.reset();

  // Pass 2: discriminator losses on detached fakes and real futures.
  if (need_d) {
    auto detach_all = [](const std::vector<Tensor<T>>& xs) {
      std::vector<Tensor<T>> out;
      out.reserve(xs.size());
      for (const auto& x : xs) out.push_back(x.detach());
      return out;
    };
    auto real = stack_video(target);  // ground truth carries no gradients
    auto real_logits_d = discriminator_score(*models.d, real);
    auto fake_prior = stack_video(detach_all(prior_preds));
    auto d_loss = loss_gan_discriminator(real_logits_d,
                                         discriminator_score(*models.d, fake_prior));
    out.d_loss = d_loss;
    out.terms["loss_d"] = static_cast<double>(d_loss.value());
    if (variant == Variant::savp) {
      auto real_logits_v = discriminator_score(*models.d_vae, real);
      auto fake_post = stack_video(detach_all(posterior_preds));
      auto dv_loss = loss_gan_discriminator(
          real_logits_v, discriminator_score(*models.d_vae, fake_post));
      out.d_vae_loss = dv_loss;
      out.terms["loss_d_vae"] = static_cast<double>(dv_loss.value());
    }
  }
  return out;
}

}  // namespace savp
