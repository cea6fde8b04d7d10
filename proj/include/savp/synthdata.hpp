#pragma once

#include <array>
#include <cmath>
#include <map>

#include "savp/rng.hpp"
#include "savp/serialize.hpp"

namespace savp {

// Bouncing-dot scenes with analytically known future distributions: a
// square sprite starts centered, holds still through the context frames,
// then moves in directions drawn uniformly from K choices — once per video
// or independently at every step. Pixels are binary, so marginal means over
// the dataset are exact mode mixtures.

struct SceneSpec {
  int64_t height = 16, width = 16;
  int64_t sprite_size = 3;     // square side, intensity 1 on 0 background
  int64_t num_directions = 4;  // K, angles 2*pi*k/K starting at +x
  int64_t step_length = 2;     // pixels per moving step
  int64_t hold_frames = 2;     // leading static frames (the context)
  enum class Motion { per_video, per_step };
  Motion motion = Motion::per_video;
  bool with_actions = false;
  uint64_t seed = 0;

  void validate() const {
    SAVP_CHECK(sprite_size >= 1 && sprite_size <= std::min(height, width),
               "SceneSpec: sprite of side ", sprite_size, " does not fit ", height, "x",
               width);
    SAVP_CHECK(num_directions >= 1, "SceneSpec: need at least one direction");
    SAVP_CHECK(step_length >= 0, "SceneSpec: negative step length");
    SAVP_CHECK(hold_frames >= 0, "SceneSpec: negative hold_frames");
  }

  std::string motion_name() const {
    return motion == Motion::per_video ? "per_video" : "per_step";
  }

  // Integer displacement (dy, dx) of direction k.
  std::array<int64_t, 2> displacement(int64_t k) const {
    double angle = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(num_directions);
    auto r = [](double v) { return static_cast<int64_t>(std::llround(v)); };
    return {r(std::sin(angle) * static_cast<double>(step_length)),
            r(std::cos(angle) * static_cast<double>(step_length))};
  }

  int64_t first_moving_frame() const { return std::max<int64_t>(hold_frames, 1); }
  int64_t decisions_per_video(int64_t total_frames) const {
    int64_t moving = std::max<int64_t>(total_frames - first_moving_frame(), 0);
    return motion == Motion::per_video ? 1 : moving;
  }
};

struct VideoData {
  SceneSpec spec;
  int64_t num_videos = 0, total_frames = 0, channels = 1, height = 0, width = 0;
  std::vector<float> frames;      // [n, T, c, h, w] in {0, 1}
  std::vector<float> actions;     // [n, T-1, 2] (dy, dx), empty unless with_actions
  std::vector<int32_t> directions;  // [n, decisions_per_video]
  std::string split_tag = "all";

  int64_t frame_elems() const { return channels * height * width; }
  const float* frame(int64_t v, int64_t t) const {
    return frames.data() + (v * total_frames + t) * frame_elems();
  }
  const float* action(int64_t v, int64_t t) const {
    return actions.data() + (v * (total_frames - 1) + t) * 2;
  }
};

namespace synth {

// Sprite-center positions for every frame given the drawn directions.
// Centers are clamped so the sprite stays fully inside the frame.
inline std::vector<std::array<int64_t, 2>> compute_positions(
    const SceneSpec& spec, const std::vector<int32_t>& dirs, int64_t total_frames) {
  int64_t r_lo = spec.sprite_size / 2;
  int64_t r_hi = spec.sprite_size - 1 - r_lo;
  auto clamp_axis = [&](int64_t v, int64_t extent) {
    return std::min(std::max(v, r_lo), extent - 1 - r_hi);
  };
  std::array<int64_t, 2> pos = {spec.height / 2, spec.width / 2};
  pos = {clamp_axis(pos[0], spec.height), clamp_axis(pos[1], spec.width)};
  std::vector<std::array<int64_t, 2>> out = {pos};
  int64_t first_move = spec.first_moving_frame();
  for (int64_t t = 1; t < total_frames; ++t) {
    if (t >= first_move) {
      int64_t k;
      if (spec.motion == SceneSpec::Motion::per_video)
        k = dirs.at(0);
      else
        k = dirs.at(t - first_move);
      auto d = spec.displacement(k);
      pos = {clamp_axis(pos[0] + d[0], spec.height), clamp_axis(pos[1] + d[1], spec.width)};
    }
    out.push_back(pos);
  }
  return out;
}

inline void render_frame(const SceneSpec& spec, std::array<int64_t, 2> center, float* out) {
  std::fill(out, out + spec.height * spec.width, 0.0f);
  int64_t r_lo = spec.sprite_size / 2;
  int64_t y0 = center[0] - r_lo, x0 = center[1] - r_lo;
  for (int64_t dy = 0; dy < spec.sprite_size; ++dy)
    for (int64_t dx = 0; dx < spec.sprite_size; ++dx) {
      int64_t y = y0 + dy, x = x0 + dx;
      if (y >= 0 && y < spec.height && x >= 0 && x < spec.width)
        out[y * spec.width + x] = 1.0f;
    }
}

inline void render_video(const SceneSpec& spec, const std::vector<int32_t>& dirs,
                         int64_t total_frames, float* out) {
  auto positions = compute_positions(spec, dirs, total_frames);
  for (int64_t t = 0; t < total_frames; ++t)
    render_frame(spec, positions[t], out + t * spec.height * spec.width);
}

}  // namespace synth

inline void gen_actions(VideoData& ds);

// Renders n videos; every drawn direction is recorded so rendering is
// reproducible from the metadata alone.
inline VideoData gen_stochastic_videos(const SceneSpec& spec, int64_t n,
                                       int64_t total_frames) {
  spec.validate();
  SAVP_CHECK(total_frames >= 2, "gen_stochastic_videos: need at least 2 frames, got ",
             total_frames);
  SAVP_CHECK(n >= 1, "gen_stochastic_videos: need at least one video");
  VideoData ds;
  ds.spec = spec;
  ds.num_videos = n;
  ds.total_frames = total_frames;
  ds.channels = 1;
  ds.height = spec.height;
  ds.width = spec.width;
  int64_t decisions = spec.decisions_per_video(total_frames);
  ds.frames.resize(n * total_frames * ds.frame_elems());
  ds.directions.resize(n * decisions);
  for (int64_t v = 0; v < n; ++v) {
    Rng rng = Rng::substream(spec.seed, detail::str("video/", v));
    std::vector<int32_t> dirs(decisions);
    for (auto& d : dirs) d = static_cast<int32_t>(rng.index(spec.num_directions));
    std::copy(dirs.begin(), dirs.end(), ds.directions.begin() + v * decisions);
    synth::render_video(spec, dirs, total_frames,
                        ds.frames.data() + v * total_frames * ds.frame_elems());
  }
  if (spec.with_actions) gen_actions(ds);
  return ds;
}

// action_t = the displacement actually applied between frames t and t+1
// (clamping included), so the future is fully determined given actions.
inline void gen_actions(VideoData& ds) {
  SAVP_CHECK(ds.spec.with_actions, "gen_actions: scene is not action-conditioned");
  int64_t decisions = ds.spec.decisions_per_video(ds.total_frames);
  ds.actions.assign(ds.num_videos * (ds.total_frames - 1) * 2, 0.0f);
  for (int64_t v = 0; v < ds.num_videos; ++v) {
    std::vector<int32_t> dirs(ds.directions.begin() + v * decisions,
                              ds.directions.begin() + (v + 1) * decisions);
    auto pos = synth::compute_positions(ds.spec, dirs, ds.total_frames);
    for (int64_t t = 0; t + 1 < ds.total_frames; ++t) {
      float* a = ds.actions.data() + (v * (ds.total_frames - 1) + t) * 2;
      a[0] = static_cast<float>(pos[t + 1][0] - pos[t][0]);
      a[1] = static_cast<float>(pos[t + 1][1] - pos[t][1]);
    }
  }
}

// ---- persistence (SVPD) ----

inline void write_dataset(const std::string& path, const VideoData& ds) {
  auto os = open_output(path);
  io::write_bytes(os, "SVPD", 4);
  io::write_pod<uint32_t>(os, 1);  // format version
  std::string spec_block = detail::str(
      "height=", ds.spec.height, "\nwidth=", ds.spec.width,
      "\nsprite_size=", ds.spec.sprite_size, "\nnum_directions=", ds.spec.num_directions,
      "\nstep_length=", ds.spec.step_length, "\nhold_frames=", ds.spec.hold_frames,
      "\nmotion=", ds.spec.motion_name(), "\nwith_actions=", ds.spec.with_actions ? 1 : 0,
      "\nseed=", ds.spec.seed, "\nsplit=", ds.split_tag, "\nnum_videos=", ds.num_videos,
      "\ntotal_frames=", ds.total_frames, "\n");
  io::write_string(os, spec_block);
  uint32_t n_records = 1 + (ds.actions.empty() ? 0 : 1) + (ds.directions.empty() ? 0 : 1);
  io::write_pod<uint32_t>(os, n_records);
  auto frames = Tensor<float>::from_values(
      {ds.num_videos, ds.total_frames, ds.channels, ds.height, ds.width}, ds.frames);
  write_tensor_record(os, "frames", frames);
  if (!ds.actions.empty()) {
    auto actions = Tensor<float>::from_values({ds.num_videos, ds.total_frames - 1, 2},
                                              ds.actions);
    write_tensor_record(os, "actions", actions);
  }
  if (!ds.directions.empty()) {
    std::vector<float> dirs(ds.directions.begin(), ds.directions.end());
    int64_t per = static_cast<int64_t>(ds.directions.size()) / ds.num_videos;
    write_tensor_record(os, "directions",
                        Tensor<float>::from_values({ds.num_videos, per}, std::move(dirs)));
  }
}

inline std::map<std::string, std::string> parse_kv_block(const std::string& block) {
  std::map<std::string, std::string> kv;
  size_t pos = 0;
  while (pos < block.size()) {
    size_t eol = block.find('\n', pos);
    if (eol == std::string::npos) eol = block.size();
    std::string line = block.substr(pos, eol - pos);
    size_t eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    pos = eol + 1;
  }
  return kv;
}

inline VideoData read_dataset(const std::string& path) {
  auto is = open_input(path);
  expect_magic(is, "SVPD", "read_dataset");
  uint32_t version = io::read_pod<uint32_t>(is);
  SAVP_CHECK(version == 1, "read_dataset: unsupported format version ", version);
  auto kv = parse_kv_block(io::read_string(is));
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    SAVP_CHECK(it != kv.end(), "read_dataset: missing spec key '", k, "'");
    return it->second;
  };
  VideoData ds;
  ds.spec.height = std::stoll(need("height"));
  ds.spec.width = std::stoll(need("width"));
  ds.spec.sprite_size = std::stoll(need("sprite_size"));
  ds.spec.num_directions = std::stoll(need("num_directions"));
  ds.spec.step_length = std::stoll(need("step_length"));
  ds.spec.hold_frames = std::stoll(need("hold_frames"));
  ds.spec.motion = need("motion") == "per_video" ? SceneSpec::Motion::per_video
                                                 : SceneSpec::Motion::per_step;
  ds.spec.with_actions = need("with_actions") == "1";
  ds.spec.seed = std::stoull(need("seed"));
  ds.split_tag = need("split");
  ds.num_videos = std::stoll(need("num_videos"));
  ds.total_frames = std::stoll(need("total_frames"));
  ds.height = ds.spec.height;
  ds.width = ds.spec.width;
  ds.channels = 1;
  uint32_t n_records = io::read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < n_records; ++i) {
    auto rec = read_tensor_record(is);
    if (rec.name == "frames") {
      auto t = rec.as<float>();
      SAVP_CHECK(t.shape() == (Shape{ds.num_videos, ds.total_frames, ds.channels,
                                     ds.height, ds.width}),
                 "read_dataset: frames record shape mismatch");
      ds.frames = t.values();
    } else if (rec.name == "actions") {
      ds.actions = rec.as<float>().values();
    } else if (rec.name == "directions") {
      auto vals = rec.as<float>().values();
      ds.directions.assign(vals.size(), 0);
      for (size_t j = 0; j < vals.size(); ++j)
        ds.directions[j] = static_cast<int32_t>(vals[j]);
    } else {
      throw Error(detail::str("read_dataset: unknown record '", rec.name, "'"));
    }
  }
  SAVP_CHECK(!ds.frames.empty(), "read_dataset: no frames record");
  return ds;
}

// ---- splits ----

inline VideoData take_videos(const VideoData& ds, const std::vector<int64_t>& ids,
                             const std::string& tag) {
  VideoData out;
  out.spec = ds.spec;
  out.num_videos = static_cast<int64_t>(ids.size());
  out.total_frames = ds.total_frames;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.split_tag = tag;
  int64_t fe = ds.frame_elems() * ds.total_frames;
  int64_t decisions = ds.num_videos ? static_cast<int64_t>(ds.directions.size()) / ds.num_videos : 0;
  for (int64_t id : ids) {
    out.frames.insert(out.frames.end(), ds.frames.begin() + id * fe,
                      ds.frames.begin() + (id + 1) * fe);
    if (!ds.actions.empty()) {
      int64_t ae = (ds.total_frames - 1) * 2;
      out.actions.insert(out.actions.end(), ds.actions.begin() + id * ae,
                         ds.actions.begin() + (id + 1) * ae);
    }
    if (decisions)
      out.directions.insert(out.directions.end(), ds.directions.begin() + id * decisions,
                            ds.directions.begin() + (id + 1) * decisions);
  }
  return out;
}

struct DatasetSplits {
  VideoData train, val, test;
};

inline DatasetSplits split(const VideoData& ds, std::array<double, 3> fractions,
                           uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  SAVP_CHECK(std::abs(total - 1.0) < 1e-9, "split: fractions sum to ", total, ", expected 1");
  for (double f : fractions) SAVP_CHECK(f >= 0, "split: negative fraction");
  std::vector<int64_t> ids(ds.num_videos);
  for (int64_t i = 0; i < ds.num_videos; ++i) ids[i] = i;
  Rng rng = Rng::substream(seed, "split");
  for (int64_t i = ds.num_videos - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.index(i + 1)]);
  auto cut = [&](double cum) {
    return static_cast<int64_t>(std::floor(cum * static_cast<double>(ds.num_videos) + 1e-9));
  };
  int64_t c1 = cut(fractions[0]);
  int64_t c2 = cut(fractions[0] + fractions[1]);
  DatasetSplits out;
  out.train = take_videos(ds, {ids.begin(), ids.begin() + c1}, "train");
  out.val = take_videos(ds, {ids.begin() + c1, ids.begin() + c2}, "val");
  out.test = take_videos(ds, {ids.begin() + c2, ids.end()}, "test");
  return out;
}

}  // namespace savp
