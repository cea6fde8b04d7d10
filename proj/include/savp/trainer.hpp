#pragma once

#include <functional>

#include "savp/objectives.hpp"
#include "savp/optim.hpp"
#include "savp/serialize.hpp"
#include "savp/synthdata.hpp"

namespace savp {

template <class T>
struct TrainConfig {
  int64_t iterations = 5000;
  int64_t batch_size = 8;
  AdamConfig<T> adam;  // lr/beta defaults resolved per variant by the config layer
  LossWeights<T> weights;
  int64_t sampling_start = 500, sampling_end = 3000;  // scheduled-sampling window
  int64_t context = 2;
  int64_t horizon = 8;
  uint64_t seed = 0;
  int64_t checkpoint_every = 1000;
  ReconNorm norm = ReconNorm::l1;

  void validate() const {
    SAVP_CHECK(iterations > 0, "TrainConfig: iterations must be > 0");
    SAVP_CHECK(batch_size > 0, "TrainConfig: batch size must be > 0");
    SAVP_CHECK(context >= 1, "TrainConfig: context must be >= 1");
    SAVP_CHECK(horizon >= 1, "TrainConfig: horizon must be >= 1");
    SAVP_CHECK(sampling_start <= sampling_end, "TrainConfig: sampling window reversed");
    adam.validate();
    weights.validate();
  }
};

// Gathers batch rows from the dataset into per-timestep tensors.
template <class T>
Batch<T> make_batch(const VideoData& ds, const std::vector<int64_t>& ids, int64_t context,
                    int64_t horizon) {
  SAVP_CHECK(ds.total_frames >= horizon + 1, "make_batch: dataset has ", ds.total_frames,
             " frames per video, need ", horizon + 1);
  SAVP_CHECK(context <= horizon, "make_batch: context ", context, " exceeds horizon ",
             horizon);
  int64_t b = static_cast<int64_t>(ids.size());
  int64_t fe = ds.frame_elems();
  Batch<T> batch;
  for (int64_t t = 0; t <= horizon; ++t) {
    Tensor<T> frame({b, ds.channels, ds.height, ds.width});
    for (int64_t i = 0; i < b; ++i) {
      const float* src = ds.frame(ids[i], t);
      T* dst = frame.data() + i * fe;
      for (int64_t j = 0; j < fe; ++j) dst[j] = static_cast<T>(src[j]);
    }
    batch.frames.push_back(std::move(frame));
  }
  if (!ds.actions.empty()) {
    for (int64_t t = 0; t < horizon; ++t) {
      Tensor<T> act({b, 2});
      for (int64_t i = 0; i < b; ++i) {
        const float* src = ds.action(ids[i], t);
        act.data()[i * 2] = static_cast<T>(src[0]);
        act.data()[i * 2 + 1] = static_cast<T>(src[1]);
      }
      batch.actions.push_back(std::move(act));
    }
  }
  return batch;
}

template <class T>
struct TrainState {
  ModelSet<T> models;
  Adam<T> opt_g, opt_e, opt_d, opt_dvae;
  Rng train_rng;
  int64_t iter = 0;

  std::vector<std::pair<std::string, Tensor<T>>> params(const std::string& group) {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    models.visit_group(group, [&](const std::string& n, Tensor<T>& t) {
      out.emplace_back(n, t);
    });
    return out;
  }
};

template <class T>
TrainState<T> init_train_state(const ModelConfig& mcfg, const TrainConfig<T>& tcfg) {
  tcfg.validate();
  TrainState<T> st;
  Rng init_rng = Rng::substream(tcfg.seed, "init");
  st.models = build_models<T>(mcfg, init_rng);
  st.opt_g = Adam<T>(tcfg.adam);
  st.opt_e = Adam<T>(tcfg.adam);
  st.opt_d = Adam<T>(tcfg.adam);
  st.opt_dvae = Adam<T>(tcfg.adam);
  st.train_rng = Rng::substream(tcfg.seed, "train");
  return st;
}

// One optimization step: for adversarial variants, one update of D (and
// D_vae) on current generator outputs, then one update of G (and E).
// Deterministic given (state, batch, rng state).
template <class T>
std::map<std::string, double> train_step(TrainState<T>& st, const TrainConfig<T>& cfg,
                                         const Batch<T>& batch) {
  const Variant variant = st.models.cfg.variant;
  int64_t iter = st.iter;
  T lr_t = lr_schedule(iter, cfg.iterations, cfg.adam.lr);

  double p_tf = scheduled_sampling_prob(iter, cfg.sampling_start, cfg.sampling_end);
  std::vector<bool> tf(cfg.horizon);
  for (int64_t t = 0; t < cfg.horizon; ++t)
    tf[t] = t < cfg.context ? true : st.train_rng.bernoulli(p_tf);

  std::map<std::string, double> log;
  if (variant_has_gan(variant)) {
    Tape<T> tape_d;
    Objective<T> obj;
    {
      TapeScope<T> scope(tape_d);
      obj = assemble_objective(st.models, batch, cfg.weights, cfg.norm, iter, st.train_rng,
                               tf, cfg.context, AssembleMode::d_only);
      Tensor<T> d_total = *obj.d_loss;
      if (obj.d_vae_loss) d_total = add(d_total, *obj.d_vae_loss);
      tape_d.backward(d_total);
    }
    auto d_params = st.params("d");
    st.opt_d.step(d_params, tape_d, lr_t);
    if (obj.d_vae_loss) {
      auto dv_params = st.params("dvae");
      st.opt_dvae.step(dv_params, tape_d, lr_t);
    }
    for (const auto& [k, v] : obj.terms) log[k] = v;
  }

  {
    Tape<T> tape_g;
    Objective<T> obj;
    {
      TapeScope<T> scope(tape_g);
      obj = assemble_objective(st.models, batch, cfg.weights, cfg.norm, iter, st.train_rng,
                               tf, cfg.context, AssembleMode::ge_only);
      tape_g.backward(obj.ge_loss);
    }
    auto g_params = st.params("g");
    st.opt_g.step(g_params, tape_g, lr_t);
    if (variant_has_encoder(variant)) {
      auto e_params = st.params("e");
      st.opt_e.step(e_params, tape_g, lr_t);
    }
    for (const auto& [k, v] : obj.terms) log[k] = v;
  }
  log["lr"] = static_cast<double>(lr_t);
  log["p_teacher_forcing"] = p_tf;

  for (const auto& [k, v] : log)
    SAVP_CHECK(std::isfinite(v), "train_step: non-finite loss '", k, "' at iteration ",
               iter);
  ++st.iter;
  return log;
}

// Draws a batch of video indices and runs one step.
template <class T>
std::map<std::string, double> train_step_on_dataset(TrainState<T>& st,
                                                    const TrainConfig<T>& cfg,
                                                    const VideoData& ds) {
  SAVP_CHECK(ds.num_videos > 0, "train: empty dataset");
  std::vector<int64_t> ids(cfg.batch_size);
  for (auto& id : ids) id = st.train_rng.index(ds.num_videos);
  auto batch = make_batch<T>(ds, ids, cfg.context, cfg.horizon);
  return train_step(st, cfg, batch);
}

// ---- checkpoints (SVPC) ----
// magic, version, config digest, iteration, named tensor records
// (parameters, optimizer moments and step counts, spectral-norm buffers,
// model-rebuild scalars), then named RNG state blobs.

namespace detail {
template <class T>
Tensor<T> scalar_record(T v) {
  return Tensor<T>::scalar(v);
}
}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, TrainState<T>& st, uint64_t config_digest) {
  auto os = open_output(path);
  io::write_bytes(os, "SVPC", 4);
  io::write_pod<uint32_t>(os, 1);
  io::write_pod<uint64_t>(os, config_digest);
  io::write_pod<uint64_t>(os, static_cast<uint64_t>(st.iter));

  std::vector<std::pair<std::string, Tensor<T>>> records;
  st.models.visit_all([&](const std::string& n, Tensor<T>& t) { records.emplace_back(n, t); });
  st.models.visit_all_buffers(
      [&](const std::string& n, Tensor<T>& t) { records.emplace_back("buf/" + n, t); });
  st.opt_g.visit_state("adam/g", [&](const std::string& n, Tensor<T>& t) {
    records.emplace_back(n, t);
  });
  st.opt_e.visit_state("adam/e", [&](const std::string& n, Tensor<T>& t) {
    records.emplace_back(n, t);
  });
  st.opt_d.visit_state("adam/d", [&](const std::string& n, Tensor<T>& t) {
    records.emplace_back(n, t);
  });
  st.opt_dvae.visit_state("adam/dvae", [&](const std::string& n, Tensor<T>& t) {
    records.emplace_back(n, t);
  });
  auto add_scalar = [&](const std::string& n, T v) {
    records.emplace_back(n, detail::scalar_record<T>(v));
  };
  add_scalar("steps/g", static_cast<T>(st.opt_g.step_count()));
  add_scalar("steps/e", static_cast<T>(st.opt_e.step_count()));
  add_scalar("steps/d", static_cast<T>(st.opt_d.step_count()));
  add_scalar("steps/dvae", static_cast<T>(st.opt_dvae.step_count()));
  const ModelConfig& mc = st.models.cfg;
  add_scalar("cfg/variant", static_cast<T>(static_cast<int>(mc.variant)));
  add_scalar("cfg/channels", static_cast<T>(mc.channels));
  add_scalar("cfg/height", static_cast<T>(mc.height));
  add_scalar("cfg/width", static_cast<T>(mc.width));
  add_scalar("cfg/latent_dim", static_cast<T>(mc.latent_dim));
  add_scalar("cfg/action_dim", static_cast<T>(mc.action_dim));
  add_scalar("cfg/num_kernels", static_cast<T>(mc.num_kernels));
  add_scalar("cfg/kernel_size", static_cast<T>(mc.kernel_size));
  add_scalar("cfg/horizon", static_cast<T>(mc.horizon));
  add_scalar("cfg/base_channels", static_cast<T>(mc.base_channels));

  io::write_pod<uint32_t>(os, static_cast<uint32_t>(records.size()));
  for (auto& [name, t] : records) write_tensor_record(os, name, t);

  io::write_pod<uint32_t>(os, 1);  // rng blobs
  io::write_string(os, "train");
  io::write_string(os, st.train_rng.serialize());
}

// Reads the model config scalars out of a checkpoint without loading state.
inline ModelConfig peek_checkpoint_config(const std::string& path) {
  auto is = open_input(path);
  expect_magic(is, "SVPC", "load_checkpoint");
  uint32_t version = io::read_pod<uint32_t>(is);
  SAVP_CHECK(version == 1, "load_checkpoint: unsupported version ", version);
  io::read_pod<uint64_t>(is);  // digest
  io::read_pod<uint64_t>(is);  // iteration
  uint32_t n = io::read_pod<uint32_t>(is);
  ModelConfig mc;
  auto get = [](const RawTensorRecord& rec) {
    if (rec.dtype == 0) return static_cast<int64_t>(std::llround(rec.as<float>().value()));
    return static_cast<int64_t>(std::llround(rec.as<double>().value()));
  };
  for (uint32_t i = 0; i < n; ++i) {
    auto rec = read_tensor_record(is);
    if (rec.name == "cfg/variant") mc.variant = static_cast<Variant>(get(rec));
    else if (rec.name == "cfg/channels") mc.channels = get(rec);
    else if (rec.name == "cfg/height") mc.height = get(rec);
    else if (rec.name == "cfg/width") mc.width = get(rec);
    else if (rec.name == "cfg/latent_dim") mc.latent_dim = get(rec);
    else if (rec.name == "cfg/action_dim") mc.action_dim = get(rec);
    else if (rec.name == "cfg/num_kernels") mc.num_kernels = get(rec);
    else if (rec.name == "cfg/kernel_size") mc.kernel_size = get(rec);
    else if (rec.name == "cfg/horizon") mc.horizon = get(rec);
    else if (rec.name == "cfg/base_channels") mc.base_channels = get(rec);
  }
  return mc;
}

// Restores a full training state. When expected_digest is nonzero, a
// mismatching checkpoint is refused.
template <class T>
void load_checkpoint(const std::string& path, TrainState<T>& st, uint64_t expected_digest) {
  auto is = open_input(path);
  expect_magic(is, "SVPC", "load_checkpoint");
  uint32_t version = io::read_pod<uint32_t>(is);
  SAVP_CHECK(version == 1, "load_checkpoint: unsupported version ", version);
  uint64_t digest = io::read_pod<uint64_t>(is);
  SAVP_CHECK(expected_digest == 0 || digest == expected_digest,
             "load_checkpoint: config digest mismatch (checkpoint ", digest, ", expected ",
             expected_digest, ") — refusing to load");
  st.iter = static_cast<int64_t>(io::read_pod<uint64_t>(is));

  std::map<std::string, Tensor<T>*> param_slots;
  st.models.visit_all([&](const std::string& n, Tensor<T>& t) { param_slots[n] = &t; });
  st.models.visit_all_buffers(
      [&](const std::string& n, Tensor<T>& t) { param_slots["buf/" + n] = &t; });

  uint32_t n_records = io::read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < n_records; ++i) {
    auto rec = read_tensor_record(is);
    auto it = param_slots.find(rec.name);
    if (it != param_slots.end()) {
      auto loaded = rec.as<T>();
      SAVP_CHECK(loaded.shape() == it->second->shape(), "load_checkpoint: '", rec.name,
                 "' shape mismatch");
      std::copy(loaded.data(), loaded.data() + loaded.size(), it->second->data());
    } else if (rec.name.rfind("adam/", 0) == 0) {
      std::string rest = rec.name.substr(5);
      size_t slash = rest.find('/');
      std::string group = rest.substr(0, slash);
      Adam<T>* opt = group == "g" ? &st.opt_g
                     : group == "e" ? &st.opt_e
                     : group == "d" ? &st.opt_d
                                    : &st.opt_dvae;
      opt->restore_moment(rec.name, "adam/" + group, rec.as<T>());
    } else if (rec.name.rfind("steps/", 0) == 0) {
      std::string group = rec.name.substr(6);
      int64_t v = static_cast<int64_t>(std::llround(rec.as<T>().value()));
      if (group == "g") st.opt_g.set_step_count(v);
      else if (group == "e") st.opt_e.set_step_count(v);
      else if (group == "d") st.opt_d.set_step_count(v);
      else if (group == "dvae") st.opt_dvae.set_step_count(v);
    } else if (rec.name.rfind("cfg/", 0) == 0) {
      // consumed by peek_checkpoint_config
    } else {
      throw Error(detail::str("load_checkpoint: unknown record '", rec.name, "'"));
    }
  }
  uint32_t n_rng = io::read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < n_rng; ++i) {
    std::string name = io::read_string(is);
    std::string state = io::read_string(is);
    if (name == "train") st.train_rng.deserialize(state);
  }
}

}  // namespace savp
