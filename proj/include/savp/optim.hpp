#pragma once

#include <map>

#include "savp/tensor.hpp"

namespace savp {

template <class T>
struct AdamConfig {
  T lr = T(0.001);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  void validate() const {
    SAVP_CHECK(lr > T(0), "Adam: learning rate must be positive");
    SAVP_CHECK(beta1 > T(0) && beta1 < T(1) && beta2 > T(0) && beta2 < T(1),
               "Adam: betas must lie in (0, 1)");
  }
};

// Bias-corrected Adam over a named parameter list. Moments are keyed by
// parameter name so they survive checkpointing.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig<T> cfg) : cfg_(cfg) { cfg_.validate(); }

  const AdamConfig<T>& config() const { return cfg_; }
  int64_t step_count() const { return steps_; }

  void step(std::vector<std::pair<std::string, Tensor<T>>>& params, Tape<T>& tape, T lr_t) {
    ++steps_;
    T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(steps_));
    T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(steps_));
    for (auto& [name, param] : params) {
      Tensor<T> grad = tape.grad(param);
      const T* g = grad.data();
      for (int64_t i = 0; i < grad.size(); ++i)
        SAVP_CHECK(std::isfinite(static_cast<double>(g[i])),
                   "Adam: non-finite gradient in parameter '", name, "'");
      auto it = moments_.find(name);
      if (it == moments_.end())
        it = moments_.emplace(name, Moments{Tensor<T>(param.shape()), Tensor<T>(param.shape())})
                 .first;
      T* m = it->second.m.data();
      T* v = it->second.v.data();
      T* p = param.data();
      for (int64_t i = 0; i < param.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
        T m_hat = m[i] / bc1;
        T v_hat = v[i] / bc2;
        p[i] -= lr_t * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  // Checkpoint access: moments plus the step counter.
  template <class F>
  void visit_state(const std::string& prefix, F&& cb) {
    for (auto& [name, mom] : moments_) {
      cb(prefix + "/m/" + name, mom.m);
      cb(prefix + "/v/" + name, mom.v);
    }
  }
  void set_step_count(int64_t n) { steps_ = n; }
  void restore_moment(const std::string& key, const std::string& prefix, Tensor<T> value) {
    // key is "<prefix>/m/<param>" or "<prefix>/v/<param>"
    std::string rest = key.substr(prefix.size() + 1);
    bool is_m = rest.rfind("m/", 0) == 0;
    std::string pname = rest.substr(2);
    auto it = moments_.find(pname);
    if (it == moments_.end())
      it = moments_.emplace(pname, Moments{Tensor<T>(value.shape()), Tensor<T>(value.shape())})
               .first;
    (is_m ? it->second.m : it->second.v) = std::move(value);
  }

 private:
  struct Moments {
    Tensor<T> m, v;
  };
  AdamConfig<T> cfg_;
  int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

// Constant for the first two thirds of training, then linear to zero.
template <class T>
T lr_schedule(int64_t iter, int64_t total_iters, T base_lr) {
  SAVP_CHECK(iter >= 0 && iter < total_iters, "lr_schedule: iteration ", iter,
             " outside [0, ", total_iters, ")");
  int64_t decay_start = (2 * total_iters) / 3;
  if (iter < decay_start) return base_lr;
  return base_lr * static_cast<T>(total_iters - iter) /
         static_cast<T>(total_iters - decay_start);
}

// Probability of feeding the ground-truth frame: 1 before the window, 0
// after, linear in between.
inline double scheduled_sampling_prob(int64_t iter, int64_t window_start,
                                      int64_t window_end) {
  SAVP_CHECK(window_start <= window_end, "scheduled_sampling_prob: reversed window");
  if (iter < window_start) return 1.0;
  if (iter >= window_end) return 0.0;
  return 1.0 - static_cast<double>(iter - window_start) /
                   static_cast<double>(window_end - window_start);
}

}  // namespace savp
