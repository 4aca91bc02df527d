#include "legslam/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "legslam/factors.hpp"

namespace legslam {

// ---------------------------------------------------------------------------
// Configuration

PipelineToggles PipelineToggles::parse(const std::string& name) {
  PipelineToggles t{false, false, false};
  std::size_t start = 0;
  bool base = false;
  while (start <= name.size()) {
    const std::size_t end = std::min(name.find('+', start), name.size());
    const std::string tok = name.substr(start, end - start);
    if (tok == "r") {
      base = true;
    } else if (tok == "o") {
      t.optical_flow_dual_stream = true;
    } else if (tok == "i") {
      t.gicp_factors = true;
    } else if (tok == "d") {
      t.depth_to_map_factors = true;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown toggle '" + tok + "' in '" + name + "'");
    }
    start = end + 1;
  }
  if (!base) throw Error(ErrorCode::InvalidArgument, "configuration '" + name + "' must include r");
  return t;
}

std::string PipelineToggles::name() const {
  std::string s = "r";
  if (optical_flow_dual_stream) s += "+o";
  if (gicp_factors) s += "+i";
  if (depth_to_map_factors) s += "+d";
  return s;
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.registration.max_per_cell = 16;
  c.frame_lm.max_iterations = 10;
  c.window_lm.max_iterations = 10;
  // Per 30 Hz frame interval; legged and clean IMU agree to millimeters.
  c.swap.thresholds.translation = 0.03;
  c.swap.thresholds.rotation = deg2rad(2.0);
  // Inflated over the sensor datasheet value to absorb model error.
  c.imu_noise.accel_noise_density = 0.05;
  return c;
}

PipelineConfig PipelineConfig::from_toggles(const std::string& name) {
  PipelineConfig c = defaults();
  c.toggles = PipelineToggles::parse(name);
  return c;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::ParseError, "bad value '" + value + "' for key '" + key + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v);
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v);
}

}  // namespace

void apply_config_overrides(PipelineConfig& c, const std::map<std::string, std::string>& values) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto dbl = [](double& f) -> Setter { return [&f](const auto& k, const auto& v) { f = parse_double(k, v); }; };
  auto deg = [](double& f) -> Setter {
    return [&f](const auto& k, const auto& v) { f = deg2rad(parse_double(k, v)); };
  };
  auto num = [](int& f) -> Setter { return [&f](const auto& k, const auto& v) { f = parse_int(k, v); }; };
  auto flag = [](bool& f) -> Setter { return [&f](const auto& k, const auto& v) { f = parse_bool(k, v); }; };
  const std::map<std::string, Setter> table = {
      {"toggles",
       [&c](const auto& k, const auto& v) {
         try {
           c.toggles = PipelineToggles::parse(v);
         } catch (const Error&) {
           bad_value(k, v);
         }
       }},
      {"keyframe.min_tracked_ratio", dbl(c.keyframe.min_tracked_ratio)},
      {"keyframe.max_translation", dbl(c.keyframe.max_translation)},
      {"keyframe.max_rotation_deg", dbl(c.keyframe.max_rotation_deg)},
      {"keyframe.max_frames", num(c.keyframe.max_frames)},
      {"submap.radius", dbl(c.submap.radius)},
      {"submap.time_window", dbl(c.submap.time_window)},
      {"submap.max_keyframes", num(c.submap.max_keyframes)},
      {"map_points.min_parallax_deg", dbl(c.map_points.min_parallax_deg)},
      {"map_points.max_depth", dbl(c.map_points.max_depth)},
      {"window_size", num(c.window_size)},
      {"depth_factor_threshold", num(c.depth_factor_threshold)},
      {"max_plane_factors", num(c.max_plane_factors)},
      {"use_imu", flag(c.use_imu)},
      {"use_legged", flag(c.use_legged)},
      {"use_pnp", flag(c.use_pnp)},
      {"imu_prediction_only", flag(c.imu_prediction_only)},
      {"lost_frames_before_gicp", num(c.lost_frames_before_gicp)},
      {"pyramid_levels", num(c.pyramid_levels)},
      {"detector.max_features", num(c.detector.max_features)},
      {"detector.fast_threshold", num(c.detector.fast_threshold)},
      {"detector.cell_size", num(c.detector.cell_size)},
      {"flow.min_tracked", num(c.flow.min_tracked)},
      {"planes.max_per_cell", num(c.planes.max_per_cell)},
      {"registration.max_per_cell", num(c.registration.max_per_cell)},
      {"gicp.information_scale", dbl(c.gicp_information_scale)},
      {"gicp.weak_ratio", dbl(c.gicp_weak_ratio)},
      {"gicp.max_iters", num(c.gicp.max_iters)},
      {"weights.reproj_sigma_px", dbl(c.weights.reproj_sigma_px)},
      {"weights.plane_sigma_m", dbl(c.weights.plane_sigma_m)},
      {"weights.depth_sigma_const", dbl(c.weights.depth_sigma_const)},
      {"weights.depth_sigma_quad", dbl(c.weights.depth_sigma_quad)},
      {"weights.robust", flag(c.weights.robust)},
      {"previous_velocity_sigma", dbl(c.previous_velocity_sigma)},
      {"swap.adaptive_legged", flag(c.swap.adaptive_legged)},
      {"swap.translation", dbl(c.swap.thresholds.translation)},
      {"swap.rotation_deg", deg(c.swap.thresholds.rotation)},
      {"frame_lm.max_iterations", num(c.frame_lm.max_iterations)},
      {"window_lm.max_iterations", num(c.window_lm.max_iterations)},
      {"imu.gyro_noise_density", dbl(c.imu_noise.gyro_noise_density)},
      {"imu.accel_noise_density", dbl(c.imu_noise.accel_noise_density)},
      {"imu.gyro_random_walk", dbl(c.imu_noise.gyro_random_walk)},
      {"imu.accel_random_walk", dbl(c.imu_noise.accel_random_walk)},
      {"legged.sigma_t_per_meter", dbl(c.legged_noise.sigma_t_per_meter)},
      {"legged.sigma_r_deg_per_meter", deg(c.legged_noise.sigma_r_per_meter)},
  };
  for (const auto& [key, value] : values) {
    const auto it = table.find(key);
    if (it == table.end()) throw Error(ErrorCode::ParseError, "unknown configuration key '" + key + "'");
    it->second(key, value);
  }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  PipelineConfig c = PipelineConfig::defaults();
  apply_config_overrides(c, read_key_value_file(path));
  return c;
}

// ---------------------------------------------------------------------------
// Keyframes, map points, submap

bool select_keyframe(const TrackingReport& report, const Keyframe& last, const KeyframePolicy& policy) {
  const Se3d rel = last.state.pose.inverse() * report.pose;
  return report.tracked_map_ratio < policy.min_tracked_ratio || rel.translation().norm() > policy.max_translation ||
         rotation_angle(rel) > deg2rad(policy.max_rotation_deg) ||
         report.frame_index - last.frame_index > policy.max_frames;
}

namespace {

Vector3d bearing(const Pixel2& px, const CameraIntrinsics& k) {
  return Vector3d((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy, 1.0).normalized();
}

}  // namespace

std::optional<Point3> triangulate_midpoint(const Se3d& T_w_c1, const Pixel2& px1, const Se3d& T_w_c2,
                                           const Pixel2& px2, const CameraIntrinsics& k,
                                           double min_parallax_deg) {
  const Vector3d d1 = T_w_c1.rotation() * bearing(px1, k);
  const Vector3d d2 = T_w_c2.rotation() * bearing(px2, k);
  const double c = std::clamp(d1.dot(d2), -1.0, 1.0);
  if (std::acos(c) < deg2rad(min_parallax_deg)) return std::nullopt;
  const Vector3d b = T_w_c2.translation() - T_w_c1.translation();
  const double denom = 1.0 - c * c;
  const double s = (d1.dot(b) - c * d2.dot(b)) / denom;
  const double t = (c * d1.dot(b) - d2.dot(b)) / denom;
  if (!(s > 0.0) || !(t > 0.0)) return std::nullopt;
  const Point3 p = 0.5 * (T_w_c1.translation() + s * d1 + T_w_c2.translation() + t * d2);
  if (!((T_w_c1.inverse() * p).z() > kDefaultMinDepth) || !((T_w_c2.inverse() * p).z() > kDefaultMinDepth)) {
    return std::nullopt;
  }
  return p;
}

std::vector<std::optional<Point3>> create_map_points(const Se3d& T_w_c, std::span<const MapPointCandidate> candidates,
                                                     const CameraIntrinsics& k, const MapPointPolicy& policy) {
  std::vector<std::optional<Point3>> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.depth > policy.min_depth && c.depth < policy.max_depth) {
      out.emplace_back(T_w_c * unproject<double>(c.pixel, c.depth, k));
    } else if (c.anchor_T_w_c) {
      out.push_back(triangulate_midpoint(*c.anchor_T_w_c, c.anchor_pixel, T_w_c, c.pixel, k, policy.min_parallax_deg));
    } else {
      out.emplace_back();
    }
  }
  return out;
}

Submap build_local_submap(std::span<const Keyframe> keyframes, const Se3d& current_pose, double current_time,
                          const Se3d& T_b_c, const SubmapPolicy& policy) {
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    const double d = (keyframes[i].state.pose.translation() - current_pose.translation()).norm();
    if (d <= policy.radius && std::abs(current_time - keyframes[i].timestamp) <= policy.time_window) {
      near.emplace_back(d, i);
    }
  }
  std::sort(near.begin(), near.end());
  if (static_cast<int>(near.size()) > policy.max_keyframes) near.resize(static_cast<std::size_t>(policy.max_keyframes));
  Submap out;
  for (const auto& [d, i] : near) {
    const Keyframe& kf = keyframes[i];
    const Se3d T_w_c = kf.state.pose * T_b_c;
    out.keyframe_ids.push_back(kf.id);
    for (const auto& p : kf.planes.points) {
      out.points.push_back(T_w_c * p);
      out.sources.emplace_back(kf.id, p);
    }
  }
  if (out.points.empty()) throw Error(ErrorCode::EmptySubmap, "no keyframe plane points near the current pose");
  out.tree = KdTree3(out.points);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool brackets(double first, double last, double t0, double t1) { return first <= t0 && last >= t1; }

}  // namespace

Pipeline::Pipeline(const PipelineConfig& config, const CameraIntrinsics& camera, const Se3d& T_b_c)
    : config_(config), camera_(camera), T_b_c_(T_b_c) {
  camera_.validate();
  if (config_.window_size < 2) throw Error(ErrorCode::InvalidArgument, "window size must be at least two");
}

void Pipeline::add_imu(std::span<const ImuSample> samples) {
  for (const auto& s : samples) {
    if (!imu_.empty() && !(s.timestamp > imu_.back().timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "IMU samples out of order");
    }
    imu_.push_back(s);
  }
}

void Pipeline::add_legged(std::span<const LeggedOdomSample> samples) {
  for (const auto& s : samples) {
    if (!legged_.empty() && !(s.timestamp > legged_.back().timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "legged odometry samples out of order");
    }
    legged_.push_back(s);
  }
}

double Pipeline::depth_at(const DepthImage& depth, const Pixel2& px) const {
  const long u = std::lround(px.x()), v = std::lround(px.y());
  if (u < 0 || v < 0 || u >= depth.cols() || v >= depth.rows()) return 0.0;
  const double z = depth(v, u) / camera_.depth_scale;
  return z > config_.map_points.min_depth && z < config_.map_points.max_depth ? z : 0.0;
}

void Pipeline::detect_new_features(const GrayImage& gray, const Se3d& T_w_c) {
  const int budget = config_.detector.max_features - static_cast<int>(features_.size());
  if (budget <= 0) return;
  GridMask mask(static_cast<int>(gray.cols()), static_cast<int>(gray.rows()), config_.detector.cell_size);
  for (const auto& f : features_) mask.mark(f.pixel);
  DetectorConfig dc = config_.detector;
  dc.max_features = budget;
  for (auto& f : detect_features(gray, dc, &mask)) {
    anchors_.push_back(TrackAnchor{T_w_c, f.pixel});
    features_.push_back(f);
  }
}

namespace {

struct RegistrationCloud {
  std::shared_ptr<const std::vector<CovariancePoint>> cloud;
  std::shared_ptr<const GicpTarget> target;
};

RegistrationCloud make_registration_cloud(const DepthImage& depth, const CameraIntrinsics& k,
                                          const PipelineConfig& c) {
  RegistrationCloud out;
  try {
    const PlaneFeatureCloud pts = extract_plane_features(depth, k, c.registration);
    auto cov = std::make_shared<std::vector<CovariancePoint>>(estimate_point_covariances(pts.points, c.covariance_k));
    out.target = std::make_shared<GicpTarget>(*cov);
    out.cloud = std::move(cov);
  } catch (const Error&) {
    // Too little valid depth: the frame simply has no registration cloud.
  }
  return out;
}

PlaneFeatureCloud safe_plane_features(const DepthImage& depth, const CameraIntrinsics& k,
                                      const PlaneExtractionConfig& c) {
  try {
    return extract_plane_features(depth, k, c);
  } catch (const Error&) {
    return {};
  }
}

}  // namespace

std::optional<RelativeConstraint> Pipeline::gicp_constraint(const std::vector<CovariancePoint>& source,
                                                            const GicpTarget& target, const Se3d& T_init) const {
  try {
    const GicpResult g = gicp_align(source, target, T_init, config_.gicp);
    if (!g.converged) return std::nullopt;
    const Matrix6d info =
        gicp_factor_information(g.information, g.pose, config_.gicp_information_scale, config_.gicp_weak_ratio);
    if (!(info.norm() > 0.0) || !info.allFinite()) return std::nullopt;
    return RelativeConstraint{g.pose, info};
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::vector<PlaneObservation> Pipeline::associate_planes(const PlaneFeatureCloud& planes, const Se3d& T_w_b) const {
  std::vector<PlaneObservation> out;
  if (!submap_ || planes.empty() || static_cast<int>(submap_->tree.size()) < config_.plane_fit.k) return out;
  const Se3d T_w_c = T_w_b * T_b_c_;
  const std::size_t cap = static_cast<std::size_t>(std::max(1, config_.max_plane_factors));
  const std::size_t stride = (planes.size() + cap - 1) / cap;
  for (std::size_t i = 0; i < planes.size(); i += stride) {
    const Point3& p_c = planes.points[i];
    const Point3 q = T_w_c * p_c;
    const FittedPlane f = fit_plane_knn(q, submap_->tree, config_.plane_fit, T_w_c.translation());
    if (!f.valid) continue;
    out.push_back({p_c, f.normal, f.centroid});
  }
  return out;
}

void Pipeline::make_keyframe(int frame_index, double timestamp, const DepthImage& depth, PlaneFeatureCloud planes,
                             std::shared_ptr<const std::vector<CovariancePoint>> cloud,
                             std::shared_ptr<const GicpTarget> target) {
  const Se3d T_w_c = state_.pose * T_b_c_;
  std::vector<std::size_t> idx;
  std::vector<MapPointCandidate> cand;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].map_point_id) continue;
    MapPointCandidate c;
    c.pixel = features_[i].pixel;
    c.depth = depth_at(depth, c.pixel);
    if (anchors_[i]) {
      c.anchor_T_w_c = anchors_[i]->T_w_c;
      c.anchor_pixel = anchors_[i]->pixel;
    }
    idx.push_back(i);
    cand.push_back(c);
  }
  const auto created = create_map_points(T_w_c, cand, camera_, config_.map_points);
  for (std::size_t j = 0; j < created.size(); ++j) {
    if (!created[j]) continue;
    const std::uint64_t id = map_points_.size();
    map_points_.push_back(MapPoint{id, *created[j], 0});
    features_[idx[j]].map_point_id = id;
  }

  Keyframe kf;
  kf.id = keyframes_.size();
  kf.frame_index = frame_index;
  kf.timestamp = timestamp;
  kf.state = state_;
  kf.planes = std::move(planes);
  kf.registration_cloud = std::move(cloud);
  kf.registration_target = std::move(target);
  for (const auto& f : features_) {
    if (!f.map_point_id) continue;
    kf.observations.push_back({*f.map_point_id, f.pixel, f.level, depth_at(depth, f.pixel)});
    ++map_points_[*f.map_point_id].observations;
  }
  keyframes_.push_back(std::move(kf));
}

void Pipeline::run_local_window() {
  const std::size_t n = keyframes_.size();
  if (n < 2) return;
  const std::size_t first = n - std::min<std::size_t>(n, static_cast<std::size_t>(config_.window_size));
  LocalWindowProblem wp;
  wp.camera = camera_;
  wp.T_b_c = T_b_c_;
  wp.gravity = gravity_;
  std::map<std::uint64_t, int> point_index;
  std::vector<std::uint64_t> point_ids;
  const bool use_imu = config_.use_imu || config_.imu_prediction_only;
  const bool use_legged = config_.use_legged && !config_.imu_prediction_only;

  for (std::size_t k = first; k < n; ++k) {
    const Keyframe& kf = keyframes_[k];
    WindowKeyframe wk;
    wk.state = kf.state;
    wk.fixed = k == first;
    if (k > first) {
      const Keyframe& prev = keyframes_[k - 1];
      if (use_imu && !imu_.empty() &&
          brackets(imu_.front().timestamp, imu_.back().timestamp, prev.timestamp, kf.timestamp)) {
        try {
          wk.from_previous.imu =
              imu_preintegrate(slice_imu(imu_, prev.timestamp, kf.timestamp), prev.state.bias, config_.imu_noise);
        } catch (const Error&) {
        }
      }
      if (use_legged && !legged_.empty() &&
          brackets(legged_.front().timestamp, legged_.back().timestamp, prev.timestamp, kf.timestamp)) {
        const auto m = legged_relative_pose(legged_, prev.timestamp, kf.timestamp, config_.legged_noise);
        wk.from_previous.legged = RelativeConstraint{m.pose, m.covariance.inverse()};
      }
      if (config_.toggles.gicp_factors && kf.registration_cloud && prev.registration_target) {
        const Se3d init = (prev.state.pose * T_b_c_).inverse() * (kf.state.pose * T_b_c_);
        wk.from_previous.gicp = gicp_constraint(*kf.registration_cloud, *prev.registration_target, init);
      }
    }
    for (const auto& o : kf.observations) {
      auto [it, inserted] = point_index.try_emplace(o.point_id, static_cast<int>(point_ids.size()));
      if (inserted) {
        point_ids.push_back(o.point_id);
        wp.points.push_back(map_points_[o.point_id].position);
      }
      wp.observations.push_back({static_cast<int>(k - first), it->second, o.pixel, o.level, o.depth});
    }
    wp.keyframes.push_back(std::move(wk));
  }

  LocalWindowResult r;
  try {
    r = optimize_local_window(wp, config_.weights, config_.swap, config_.window_lm);
  } catch (const Error&) {
    return;  // keep the tracking estimates
  }
  for (std::size_t k = first; k < n; ++k) keyframes_[k].state = r.states[k - first];
  for (std::size_t i = 0; i < point_ids.size(); ++i) map_points_[point_ids[i]].position = r.points[i];
  state_ = keyframes_.back().state;
}

void Pipeline::rebuild_submap(double timestamp) {
  try {
    submap_ = build_local_submap(keyframes_, state_.pose, timestamp, T_b_c_, config_.submap);
  } catch (const Error&) {
    submap_.reset();
  }
}

void Pipeline::initialize(double timestamp, const GrayImage& gray, const DepthImage& depth, TrackingReport& report) {
  auto t0 = Clock::now();
  state_ = NavState{};
  // Gravity in the first body frame: stationary IMU window, else legged attitude.
  std::vector<ImuSample> window;
  for (const auto& s : imu_) {
    if (s.timestamp <= timestamp + 1e-9 && s.timestamp >= timestamp - 1.0) window.push_back(s);
  }
  if (const auto g = estimate_gravity_stationary(window, Matrix3d::Identity())) {
    gravity_ = g->gravity_world;
    state_.bias.gyro = g->gyro_bias;
  } else if (!legged_.empty() && brackets(legged_.front().timestamp, legged_.back().timestamp, timestamp, timestamp)) {
    gravity_ = gravity_from_legged(Matrix3d::Identity(), interpolate_legged(legged_, timestamp).rotation());
  }
  PlaneFeatureCloud planes = safe_plane_features(depth, camera_, config_.planes);
  RegistrationCloud reg;
  if (config_.toggles.gicp_factors) reg = make_registration_cloud(depth, camera_, config_);
  report.timings.planes_ms = ms_since(t0);

  t0 = Clock::now();
  pyramid_ = build_pyramid(gray, config_.pyramid_levels, config_.flow.lk.window);
  features_.clear();
  anchors_.clear();
  detect_new_features(gray, state_.pose * T_b_c_);
  report.timings.tracking_ms = ms_since(t0);

  t0 = Clock::now();
  make_keyframe(0, timestamp, depth, std::move(planes), reg.cloud, reg.target);
  rebuild_submap(timestamp);
  report.timings.mapping_ms = ms_since(t0);
  cloud_ = reg.cloud;
  target_ = reg.target;
  report.keyframe = true;
  report.features = static_cast<int>(features_.size());
}

TrackingReport Pipeline::process_frame(double timestamp, const GrayImage& gray, const DepthImage& depth,
                                       std::span<const ImuSample> imu, std::span<const LeggedOdomSample> legged) {
  const auto start = Clock::now();
  add_imu(imu);
  add_legged(legged);
  TrackingReport report;
  report.frame_index = frame_count_;
  report.timestamp = timestamp;

  if (frame_count_ == 0) {
    initialize(timestamp, gray, depth, report);
    frames_.push_back({timestamp, 0, Se3d()});
    last_time_ = timestamp;
    ++frame_count_;
    report.timings.total_ms = ms_since(start);
    return report;
  }
  const double dt = timestamp - last_time_;
  if (!(dt > 0.0)) throw Error(ErrorCode::NonMonotonicTimestamps, "frame timestamps must increase");

  // Depth features.
  auto t0 = Clock::now();
  PlaneFeatureCloud planes = safe_plane_features(depth, camera_, config_.planes);
  RegistrationCloud reg;
  if (config_.toggles.gicp_factors) reg = make_registration_cloud(depth, camera_, config_);
  report.timings.planes_ms = ms_since(t0);

  // Proprioceptive predictions.
  t0 = Clock::now();
  const bool use_imu = config_.use_imu || config_.imu_prediction_only;
  const bool use_legged = config_.use_legged && !config_.imu_prediction_only;
  std::optional<ImuPreintegration> pre;
  if (use_imu && !imu_.empty() && brackets(imu_.front().timestamp, imu_.back().timestamp, last_time_, timestamp)) {
    try {
      pre = imu_preintegrate(slice_imu(imu_, last_time_, timestamp), state_.bias, config_.imu_noise);
    } catch (const Error&) {
    }
  }
  std::optional<RelativePoseMeasurement> leg;
  if (use_legged && !legged_.empty() &&
      brackets(legged_.front().timestamp, legged_.back().timestamp, last_time_, timestamp)) {
    leg = legged_relative_pose(legged_, last_time_, timestamp, config_.legged_noise);
  }
  std::optional<NavState> imu_pred;
  bool imu_healthy = false;
  if (pre) {
    imu_pred = predict_state(state_, *pre, gravity_);
    if (config_.imu_prediction_only) {
      imu_healthy = true;
    } else if (leg) {
      imu_healthy = !imu_divergence_check(imu_pred->pose, state_.pose * leg->pose, config_.swap.thresholds).diverged;
    } else {
      imu_healthy = pre->distorted_samples() == 0;
    }
  }
  Se3d seed_pose = state_.pose;
  if (leg) {
    seed_pose = state_.pose * leg->pose;
  } else if (imu_pred && imu_healthy) {
    seed_pose = imu_pred->pose;
  } else if (prev_prev_pose_) {
    seed_pose = constant_velocity_predict(*prev_prev_pose_, state_.pose, prev_dt_, dt);
  }
  report.timings.init_ms = ms_since(t0);

  // Tracking.
  t0 = Clock::now();
  ImagePyramid pyramid = build_pyramid(gray, config_.pyramid_levels, config_.flow.lk.window);
  std::vector<std::optional<Point3>> feature_points(features_.size());
  int with_points = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].map_point_id) {
      feature_points[i] = map_points_[*features_[i].map_point_id].position;
      ++with_points;
    }
  }
  DualStreamResult track;
  if (!features_.empty()) {
    track = dual_stream_track(pyramid_, pyramid, features_, feature_points, seed_pose * T_b_c_, camera_, config_.flow,
                              config_.toggles.optical_flow_dual_stream);
  } else {
    track.tracking_lost = true;
  }
  report.tracking_lost = track.tracking_lost;
  report.tracked_stream1 = track.track.count(StreamTag::ThreeDToTwoD, TrackStatus::Tracked);
  report.tracked_stream2 = track.track.count(StreamTag::TwoDToTwoD, TrackStatus::Tracked);
  report.inliers = track.inliers;

  std::vector<Pixel2> prev_px, cur_px;
  std::vector<std::optional<Point3>> match_points;
  std::vector<Feature> next_features;
  std::vector<std::optional<TrackAnchor>> next_anchors;
  int tracked_points = 0;
  for (std::size_t i = 0; i < track.track.points.size(); ++i) {
    const TrackedPoint& tp = track.track.points[i];
    if (tp.status != TrackStatus::Tracked) continue;
    prev_px.push_back(features_[i].pixel);
    cur_px.push_back(tp.pixel);
    match_points.push_back(feature_points[i]);
    Feature f = features_[i];
    f.pixel = tp.pixel;
    f.bump_track_length();
    if (f.map_point_id) ++tracked_points;
    next_features.push_back(f);
    next_anchors.push_back(anchors_[i]);
  }
  report.tracked_map_ratio = with_points > 0 ? static_cast<double>(tracked_points) / with_points : 0.0;
  lost_streak_ = track.tracking_lost ? lost_streak_ + 1 : 0;
  report.timings.tracking_ms = ms_since(t0);

  // Initialization cascade.
  t0 = Clock::now();
  InitContext ctx;
  ctx.prev_pose = state_.pose;
  ctx.prev_prev_pose = prev_prev_pose_;
  ctx.dt_prev = prev_dt_;
  ctx.dt_cur = dt;
  ctx.T_b_c = T_b_c_;
  ctx.legged = leg;
  ctx.imu_prediction = imu_pred;
  ctx.imu_healthy = imu_healthy;
  ctx.prev_pixels = prev_px;
  ctx.cur_pixels = cur_px;
  ctx.match_points_w = match_points;
  ctx.camera = &camera_;
  ctx.use_pnp = config_.use_pnp && !config_.imu_prediction_only && !track.tracking_lost;
  ctx.cur_cloud = reg.cloud.get();
  ctx.prev_cloud = target_.get();
  ctx.use_gicp = config_.toggles.gicp_factors && !config_.imu_prediction_only && reg.cloud && target_;
  if (ctx.use_gicp && lost_streak_ >= config_.lost_frames_before_gicp) {
    // Long visual outage: re-anchor on depth registration alone.
    ctx.legged.reset();
    ctx.imu_healthy = false;
  }
  ctx.essential = config_.essential;
  ctx.pnp = config_.pnp;
  ctx.gicp = config_.gicp;
  const PosePrediction init = predict_initial_pose(ctx);
  report.init_source = init.source;
  report.timings.init_ms += ms_since(t0);

  // Single-frame optimization.
  t0 = Clock::now();
  SingleFrameProblem sp;
  sp.previous = state_;
  sp.previous_velocity_sigma = config_.previous_velocity_sigma;
  sp.current.pose = init.pose;
  sp.current.bias = state_.bias;
  sp.current.velocity =
      imu_pred ? imu_pred->velocity : Vector3d((init.pose.translation() - state_.pose.translation()) / dt);
  sp.camera = camera_;
  sp.T_b_c = T_b_c_;
  sp.gravity = gravity_;
  if (!track.tracking_lost) {
    for (std::size_t i = 0; i < cur_px.size(); ++i) {
      if (match_points[i]) sp.observations.push_back({*match_points[i], cur_px[i], 0});
    }
  }
  if (config_.toggles.depth_to_map_factors &&
      should_add_depth_factors(static_cast<int>(sp.observations.size()), config_.depth_factor_threshold)) {
    sp.planes = associate_planes(planes, init.pose);
  }
  if (pre) sp.motion.imu = *pre;
  if (leg) sp.motion.legged = RelativeConstraint{leg->pose, leg->covariance.inverse()};
  if (config_.toggles.gicp_factors && reg.cloud && target_) {
    const Se3d T_init = (state_.pose * T_b_c_).inverse() * (init.pose * T_b_c_);
    sp.motion.gicp = gicp_constraint(*reg.cloud, *target_, T_init);
  }
  NavState next{init.pose, sp.current.velocity, state_.bias};
  try {
    const SingleFrameResult r = optimize_single_frame(sp, config_.weights, config_.swap, config_.frame_lm);
    next = r.state;
    report.motion_factor = r.motion_factor;
    report.solver_iterations = r.summary.iterations;
    report.reproj_factors = static_cast<int>(sp.observations.size());
    report.plane_factors = static_cast<int>(sp.planes.size());
    report.imu_factors = r.motion_factor == MotionFactor::Imu ? 1 : 0;
    report.legged_factors = r.motion_factor == MotionFactor::Legged ? 1 : 0;
    report.gicp_factors = sp.motion.gicp ? 1 : 0;
    if (r.motion_factor != MotionFactor::Imu) {
      next.velocity = (next.pose.translation() - state_.pose.translation()) / dt;
    }
  } catch (const Error&) {
    // Nothing to optimize against: the cascade prediction stands.
  }
  report.timings.optimization_ms = ms_since(t0);

  // Bookkeeping and keyframing.
  t0 = Clock::now();
  prev_prev_pose_ = state_.pose;
  prev_dt_ = dt;
  state_ = next;
  features_ = std::move(next_features);
  anchors_ = std::move(next_anchors);
  report.pose = state_.pose;
  report.keyframe = track.tracking_lost || select_keyframe(report, keyframes_.back(), config_.keyframe);
  detect_new_features(gray, state_.pose * T_b_c_);
  if (report.keyframe) {
    make_keyframe(frame_count_, timestamp, depth, std::move(planes), reg.cloud, reg.target);
    run_local_window();
    rebuild_submap(timestamp);
    report.pose = state_.pose;
    frames_.push_back({timestamp, keyframes_.size() - 1, Se3d()});
  } else {
    frames_.push_back({timestamp, keyframes_.size() - 1, keyframes_.back().state.pose.inverse() * state_.pose});
  }
  report.features = static_cast<int>(features_.size());
  report.timings.mapping_ms = ms_since(t0);

  pyramid_ = std::move(pyramid);
  cloud_ = reg.cloud;
  target_ = reg.target;
  last_time_ = timestamp;
  last_tracking_ = std::move(track);
  ++frame_count_;
  report.timings.total_ms = ms_since(start);
  return report;
}

Trajectory Pipeline::trajectory() const {
  Trajectory out;
  out.reserve(frames_.size());
  for (const auto& f : frames_) out.push_back({f.timestamp, keyframes_[f.keyframe].state.pose * f.T_kf_b});
  return out;
}

void write_report_csv(std::span<const TrackingReport> reports, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::fprintf(f,
               "frame,timestamp,tx,ty,tz,qx,qy,qz,qw,init_source,keyframe,lost,features,tracked_stream1,"
               "tracked_stream2,inliers,tracked_map_ratio,reproj_factors,plane_factors,imu_factors,legged_factors,"
               "gicp_factors,motion_factor,iterations,planes_ms,tracking_ms,init_ms,optimization_ms,mapping_ms,"
               "total_ms\n");
  for (const auto& r : reports) {
    const auto& t = r.pose.translation();
    const auto& q = r.pose.quaternion();
    const char* motion = r.motion_factor == MotionFactor::Imu      ? "imu"
                         : r.motion_factor == MotionFactor::Legged ? "legged"
                                                                   : "none";
    std::fprintf(f,
                 "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%s,%d,%d,%d,%d,%d,%d,%.4f,%d,%d,%d,%d,%d,%s,%d,%.3f,%.3f,"
                 "%.3f,%.3f,%.3f,%.3f\n",
                 r.frame_index, r.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w(),
                 std::string(to_string(r.init_source)).c_str(), r.keyframe ? 1 : 0, r.tracking_lost ? 1 : 0,
                 r.features, r.tracked_stream1, r.tracked_stream2, r.inliers, r.tracked_map_ratio, r.reproj_factors,
                 r.plane_factors, r.imu_factors, r.legged_factors, r.gicp_factors, motion, r.solver_iterations,
                 r.timings.planes_ms, r.timings.tracking_ms, r.timings.init_ms, r.timings.optimization_ms,
                 r.timings.mapping_ms, r.timings.total_ms);
  }
  std::fclose(f);
}

SequenceRun run_sequence(Pipeline& pipeline, std::span<const double> frame_times, const FrameLoader& load,
                         std::span<const ImuSample> imu, std::span<const LeggedOdomSample> legged,
                         const FrameCallback& on_frame, double lookahead) {
  SequenceRun out;
  std::size_t ii = 0, li = 0;
  int streak = 0;
  double total_ms = 0.0;
  for (std::size_t f = 0; f < frame_times.size(); ++f) {
    const double t = frame_times[f];
    const std::size_t i0 = ii, l0 = li;
    while (ii < imu.size() && imu[ii].timestamp <= t + lookahead) ++ii;
    while (li < legged.size() && legged[li].timestamp <= t + lookahead) ++li;
    const auto [gray, depth] = load(f);
    TrackingReport r = pipeline.process_frame(t, gray, depth, imu.subspan(i0, ii - i0), legged.subspan(l0, li - l0));
    streak = r.tracking_lost && r.init_source == InitSource::ConstVel ? streak + 1 : 0;
    out.longest_unanchored_loss = std::max(out.longest_unanchored_loss, streak);
    total_ms += r.timings.total_ms;
    if (on_frame) on_frame(f, gray, r, pipeline);
    out.reports.push_back(std::move(r));
  }
  out.trajectory = pipeline.trajectory();
  if (total_ms > 0.0) out.frames_per_second = 1000.0 * static_cast<double>(frame_times.size()) / total_ms;
  return out;
}

}  // namespace legslam
