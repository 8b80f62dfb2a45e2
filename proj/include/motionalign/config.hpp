#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "motionalign/pipeline.hpp"
#include "motionalign/synthetic.hpp"

namespace motionalign {

namespace config_detail {

using nlohmann::json;

// Reads the listed keys of an object into their targets; any other key is an error.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::kSchemaViolation, where_ + ": expected an object");
  }
  // Call after all reads.
  void done() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw Error(ErrorCode::kSchemaViolation, where_ + ": unknown key '" + key + "'");
  }

  template <class T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::kSchemaViolation, where_ + "." + key + ": wrong type");
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

inline void apply_config(const nlohmann::json& j, PipelineConfig& cfg) {
  config_detail::ObjectReader r(j, "config");
  r.read("t_len", cfg.t_len);
  r.read("top_k_cmps", cfg.top_k_cmps);
  if (const auto* m = r.child("method")) {
    if (!m->is_string()) throw Error(ErrorCode::kSchemaViolation, "config.method: expected a string");
    cfg.method = parse_method(m->get<std::string>());
  }
  r.read("codebook_size", cfg.codebook_size);
  r.read("seed", cfg.seed);
  r.read("workers", cfg.workers);
  r.read("operating_points", cfg.operating_points);
  r.read("fallback_interval_length", cfg.fallback_interval_length);
  r.read("fallback_interval_stride", cfg.fallback_interval_stride);
  if (const auto* c = r.child("ransac")) {
    config_detail::ObjectReader s(*c, r.path("ransac"));
    s.read("seed", cfg.ransac.seed);
    s.read("confidence", cfg.ransac.confidence);
    s.read("max_iterations", cfg.ransac.max_iterations);
    s.read("tau_scale", cfg.ransac.tau_scale);
    s.read("min_inlier_matches", cfg.ransac.min_inlier_matches);
    s.done();
  }
  if (const auto* c = r.child("tps_rpm")) {
    config_detail::ObjectReader s(*c, r.path("tps_rpm"));
    auto& p = cfg.ttps.rpm;
    s.read("t_init_factor", p.t_init_factor);
    s.read("anneal_rate", p.anneal_rate);
    s.read("t_final_factor", p.t_final_factor);
    s.read("lambda_init", p.lambda_init);
    s.read("sinkhorn_iters", p.sinkhorn_iters);
    s.read("sinkhorn_tolerance", p.sinkhorn_tolerance);
    s.read("outlier_temperature", p.outlier_temperature);
    s.read("iterations_per_temperature", p.iterations_per_temperature);
    s.read("newton_polish", p.newton_polish);
    s.done();
  }
  if (const auto* c = r.child("edges")) {
    config_detail::ObjectReader s(*c, r.path("edges"));
    auto& e = cfg.ttps.edges;
    s.read("sigma_factor", e.sigma_factor);
    s.read("prune_threshold", e.prune_threshold);
    s.read("max_points", e.max_points);
    s.read("seed", e.seed);
    s.done();
  }
  if (const auto* c = r.child("ttps")) {
    config_detail::ObjectReader s(*c, r.path("ttps"));
    s.read("min_pairs", cfg.ttps.min_pairs);
    s.done();
  }
  if (const auto* c = r.child("eval")) {
    config_detail::ObjectReader s(*c, r.path("eval"));
    s.read("error_threshold", cfg.eval.error_threshold);
    s.read("iou_threshold", cfg.eval.iou_threshold);
    s.done();
  }
  r.done();
}

inline nlohmann::json config_json(const PipelineConfig& cfg) {
  const auto& p = cfg.ttps.rpm;
  const auto& e = cfg.ttps.edges;
  return {{"t_len", cfg.t_len},
          {"top_k_cmps", cfg.top_k_cmps},
          {"method", method_name(cfg.method)},
          {"codebook_size", cfg.codebook_size},
          {"seed", cfg.seed},
          {"workers", cfg.workers},
          {"operating_points", cfg.operating_points},
          {"fallback_interval_length", cfg.fallback_interval_length},
          {"fallback_interval_stride", cfg.fallback_interval_stride},
          {"ransac",
           {{"seed", cfg.ransac.seed},
            {"confidence", cfg.ransac.confidence},
            {"max_iterations", cfg.ransac.max_iterations},
            {"tau_scale", cfg.ransac.tau_scale},
            {"min_inlier_matches", cfg.ransac.min_inlier_matches}}},
          {"tps_rpm",
           {{"t_init_factor", p.t_init_factor},
            {"anneal_rate", p.anneal_rate},
            {"t_final_factor", p.t_final_factor},
            {"lambda_init", p.lambda_init},
            {"sinkhorn_iters", p.sinkhorn_iters},
            {"sinkhorn_tolerance", p.sinkhorn_tolerance},
            {"outlier_temperature", p.outlier_temperature},
            {"iterations_per_temperature", p.iterations_per_temperature},
            {"newton_polish", p.newton_polish}}},
          {"edges",
           {{"sigma_factor", e.sigma_factor},
            {"prune_threshold", e.prune_threshold},
            {"max_points", e.max_points},
            {"seed", e.seed}}},
          {"ttps", {{"min_pairs", cfg.ttps.min_pairs}}},
          {"eval", {{"error_threshold", cfg.eval.error_threshold}, {"iou_threshold", cfg.eval.iou_threshold}}}};
}

inline void apply_synthetic_config(const nlohmann::json& j, SyntheticSpec& spec) {
  config_detail::ObjectReader r(j, "synthetic");
  r.read("n_shots", spec.n_shots);
  r.read("frames_per_shot", spec.frames_per_shot);
  r.read("width", spec.width);
  r.read("height", spec.height);
  r.read("n_programs", spec.n_programs);
  r.read("object_size", spec.object_size);
  r.read("scale_jitter", spec.scale_jitter);
  r.read("rotation_jitter", spec.rotation_jitter);
  r.read("warp_magnitude", spec.warp_magnitude);
  r.read("trajectories_per_frame", spec.trajectories_per_frame);
  r.read("trajectory_noise", spec.trajectory_noise);
  r.read("trajectory_outlier_rate", spec.trajectory_outlier_rate);
  r.read("mask_error_rate", spec.mask_error_rate);
  r.read("mask_dilation", spec.mask_dilation);
  r.read("clutter_segments", spec.clutter_segments);
  r.read("random_phase", spec.random_phase);
  r.read("seed", spec.seed);
  r.done();
}

inline nlohmann::json synthetic_json(const SyntheticSpec& s) {
  return {{"n_shots", s.n_shots},
          {"frames_per_shot", s.frames_per_shot},
          {"width", s.width},
          {"height", s.height},
          {"n_programs", s.n_programs},
          {"object_size", s.object_size},
          {"scale_jitter", s.scale_jitter},
          {"rotation_jitter", s.rotation_jitter},
          {"warp_magnitude", s.warp_magnitude},
          {"trajectories_per_frame", s.trajectories_per_frame},
          {"trajectory_noise", s.trajectory_noise},
          {"trajectory_outlier_rate", s.trajectory_outlier_rate},
          {"mask_error_rate", s.mask_error_rate},
          {"mask_dilation", s.mask_dilation},
          {"clutter_segments", s.clutter_segments},
          {"random_phase", s.random_phase},
          {"seed", s.seed}};
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchemaViolation, path.string() + ": " + e.what());
  }
}

// A config file holds pipeline keys at the top level and, optionally, a
// "synthetic" object for the generator.
inline void load_config_file(const std::filesystem::path& path, PipelineConfig& cfg, SyntheticSpec* spec = nullptr) {
  nlohmann::json j = read_json_file(path);
  if (!j.is_object()) throw Error(ErrorCode::kSchemaViolation, path.string() + ": expected an object");
  if (j.contains("synthetic")) {
    if (spec) apply_synthetic_config(j.at("synthetic"), *spec);
    j.erase("synthetic");
  }
  apply_config(j, cfg);
}

}  // namespace motionalign
