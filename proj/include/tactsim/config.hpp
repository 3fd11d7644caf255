// Layered run configuration: defaults < config file < environment
// overrides < command-line --set flags. Values are addressed by dotted
// paths ("world.stiffness_n_per_mm"). Environment overrides use the
// prefix TACTSIM_ with "__" as the path separator, e.g.
// TACTSIM_world__stiffness_n_per_mm=80.
#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tactsim/common.hpp"

extern "C" char** environ;

namespace tactsim {

using Json = nlohmann::json;

inline Json defaultConfig() {
  Json j;
  j["world"] = {
      {"stiffness_n_per_mm", 50.0},
      {"friction_coeff", 0.3},
      {"compliance_mm_per_ns", 0.4},   // servo compliance, mm/s per N
      {"substep_hz", kImuRateHz},
      {"max_penetration_mm", 2.0},
      {"slip_reg_mm_per_s", 0.5},      // friction smoothing velocity
      {"slot", {{"width_mm", 23.0}, {"depth_mm", 23.0}, {"wall_height_mm", 14.0}}},
      {"seat_depth_mm", 10.0},
      {"edge_band_mm", 2.0},
  };
  j["tip"] = {
      {"mass_g", 14.0},
      {"inertia_g_mm2", 316.0},
      {"trans_natural_hz", 300.0},
      {"trans_damping_ratio", 0.3},
      {"tors_natural_hz", 200.0},
      {"tors_damping_ratio", 0.3},
      {"lever_separation_mm", 4.0},    // effective seesaw half-arm along the jaw axis
      {"lever_drop_mm", 20.0},         // grasp center to sensor, downward
      {"torsion_share", 0.5},          // torque fraction routed to tip torsion
      {"force_couple_gain", 1.0},      // torque-free differential sensing gain
      {"noise_sigma_acc_g", 0.01},
      {"noise_sigma_gyro_dps", 1.0},
      {"max_translation_um", 2000.0},
  };
  j["pipeline"] = {
      {"ring_capacity_s", 2.0},
      {"onset_k", 6.0},
      {"onset_persist", 3},
      {"calib_sigma_acc_g", 0.01},
      {"calib_sigma_gyro_dps", 1.0},
      {"dir_tilt_floor_mrad", 1.0},    // tilt floor below which we say uncertain
      {"dir_dominance_ratio", 1.5},
      {"antiphase_corr_max", -0.5},
      {"release_tilt_mrad", 0.8},
  };
  j["controller"] = {
      {"force_limit_n", 5.0},
      {"kp_mm_per_s_per_n", 10.0},
      {"ki_mm_per_s_per_ns", 50.0},
      {"antiwindup_ns", 3.0},
      {"descend_mm_per_s", 6.0},
      {"slide_mm_per_s", 4.0},
      {"slide_down_bias_mm_per_s", 1.0},
      {"contact_dwell_s", 0.15},
      {"uncertain_probe_s", 0.5},
      {"timeout_s", 30.0},
  };
  j["policy"] = {
      {"width", 64},
      {"heads", 4},
      {"tactile_layers", 2},
      {"fusion_layers", 2},
      {"pooled_tokens", 4},
      {"cond_dim", 512},
      {"vision_tokens", 8},
      {"vision_channels", {8, 16, 32, 64}},
      {"denoiser_widths", {32, 64, 64}},
      {"diffusion_steps", 100},
      {"inference_steps", 16},
      {"beta_start", 1e-3},
      {"beta_end", 0.2},
      {"ensemble_decay", 0.1},
      {"train_steps", 1200},
      {"batch_size", 8},
      {"learning_rate", 1e-3},
      {"max_grad_norm", 100.0},
      {"slice_stride", 2},
      {"pos_scale_mm", 5.0},
      {"rot_scale_rad", 0.05},
      {"force_noise_sigma_n", 0.5},
  };
  j["camera"] = {
      {"mm_per_px", 0.5},
      {"occlusion", true},
      {"occluder_halfwidth_mm", 16.0},
  };
  j["eval"] = {
      {"object", "prism40"},
      {"deltas_mm", {1.0, 2.0, 3.0}},
      {"rollouts_per_direction", 2},
      {"expert_seeds_per_cell", 10},
      {"timeout_s", 20.0},
      {"slot_jitter_mm", 3.0},
      {"transverse_jitter_mm", 0.5},
  };
  j["demos"] = {
      {"per_edge", 10},
      {"delta_min_mm", 1.0},
      {"delta_max_mm", 3.0},
  };
  return j;
}

inline void mergeInto(Json& base, const Json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
      mergeInto(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

inline Json parseScalar(const std::string& text) {
  // Try JSON first so numbers/bools/arrays work; fall back to string.
  auto j = Json::parse(text, nullptr, false);
  if (!j.is_discarded()) return j;
  return Json(text);
}

inline void setByPath(Json& j, const std::string& path, const Json& value) {
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

class Config {
 public:
  Config() : root_(defaultConfig()) {}
  explicit Config(Json root) : root_(std::move(root)) {}

  static Config load(const std::string& file_path, const std::vector<std::string>& set_flags = {},
                     const char* const* envp = nullptr) {
    Json root = defaultConfig();
    if (!file_path.empty()) {
      std::ifstream in(file_path);
      if (!in) throw ConfigError("cannot open config file: " + file_path);
      Json file_json;
      try {
        in >> file_json;
      } catch (const std::exception& e) {
        throw ConfigError("bad config file " + file_path + ": " + e.what());
      }
      mergeInto(root, file_json);
    }
    applyEnv(root, envp);
    for (const auto& kv : set_flags) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
      setByPath(root, kv.substr(0, eq), parseScalar(kv.substr(eq + 1)));
    }
    return Config(root);
  }

  const Json& json() const { return root_; }

  template <typename T>
  T get(const std::string& path) const {
    const Json* node = resolve(path);
    if (!node) throw ConfigError("missing config key: " + path);
    try {
      return node->get<T>();
    } catch (const std::exception& e) {
      throw ConfigError("bad value for " + path + ": " + e.what());
    }
  }

  template <typename T>
  T get(const std::string& path, const T& fallback) const {
    const Json* node = resolve(path);
    if (!node) return fallback;
    return node->get<T>();
  }

  std::uint64_t hash() const { return fnv1a(root_.dump()); }

 private:
  static void applyEnv(Json& root, const char* const* envp) {
    const char* const* env = envp ? envp : ::environ;
    if (!env) return;
    for (const char* const* e = env; *e; ++e) {
      std::string entry(*e);
      if (entry.rfind("TACTSIM_", 0) != 0) continue;
      const auto eq = entry.find('=');
      if (eq == std::string::npos) continue;
      std::string key = entry.substr(8, eq - 8);
      for (std::size_t pos = 0; (pos = key.find("__", pos)) != std::string::npos;) key.replace(pos, 2, ".");
      setByPath(root, key, parseScalar(entry.substr(eq + 1)));
    }
  }

  const Json* resolve(const std::string& path) const {
    const Json* node = &root_;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(key)) return nullptr;
      node = &(*node)[key];
      if (dot == std::string::npos) return node;
      start = dot + 1;
    }
  }

  Json root_;
};

}  // namespace tactsim
