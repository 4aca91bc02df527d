#pragma once

// Per-frame orchestration: plane extraction, dual-stream tracking, the pose
// initialization cascade, single-frame optimization, keyframing, map-point
// creation, local bundle adjustment and submap maintenance.
//
// The world frame is the body frame of the first processed frame.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "legslam/dataset.hpp"
#include "legslam/depth_plane.hpp"
#include "legslam/flow_tracking.hpp"
#include "legslam/gicp.hpp"
#include "legslam/optimization.hpp"
#include "legslam/pose_init.hpp"

namespace legslam {

/// Ablation switches on top of the always-on visual tracking (r).
struct PipelineToggles {
  bool optical_flow_dual_stream = true;  // o
  bool gicp_factors = true;              // i
  bool depth_to_map_factors = true;      // d

  /// Parses "r", "r+o", "r+i+d", ... Throws InvalidArgument.
  static PipelineToggles parse(const std::string& name);
  std::string name() const;
};

struct KeyframePolicy {
  double min_tracked_ratio = 0.6;
  double max_translation = 0.15;  // m
  double max_rotation_deg = 10.0;
  int max_frames = 30;
};

struct SubmapPolicy {
  double radius = 5.0;         // m
  double time_window = 30.0;   // s
  int max_keyframes = 10;
};

struct MapPointPolicy {
  double min_parallax_deg = 1.0;
  double min_depth = kDefaultMinDepth;
  double max_depth = 6.0;
};

struct PipelineConfig {
  PipelineToggles toggles;
  KeyframePolicy keyframe;
  SubmapPolicy submap;
  MapPointPolicy map_points;
  int window_size = 7;
  /// Depth-to-map factors are added when fewer visual observations remain.
  int depth_factor_threshold = 40;
  int max_plane_factors = 200;

  bool use_imu = true;
  bool use_legged = true;
  bool use_pnp = true;
  /// Cascade restricted to IMU propagation, always trusted (baseline).
  bool imu_prediction_only = false;
  /// Consecutive lost frames after which the cascade re-anchors on GICP
  /// alone (needs i).
  int lost_frames_before_gicp = 5;

  int pyramid_levels = 3;
  DetectorConfig detector;
  FlowConfig flow;
  PlaneExtractionConfig planes;        // submap and depth-to-map points
  PlaneExtractionConfig registration;  // GICP clouds
  PlaneFitConfig plane_fit;
  int covariance_k = 10;
  GicpConfig gicp;
  double gicp_information_scale = 0.1;
  double gicp_weak_ratio = 1e-2;
  EssentialConfig essential;
  PnpConfig pnp;

  FactorWeights weights;
  /// Prior on the previous velocity in single-frame optimization (m/s).
  double previous_velocity_sigma = 0.1;
  SwapPolicy swap;
  LmConfig frame_lm;
  LmConfig window_lm;
  ImuNoise imu_noise;
  LeggedNoiseModel legged_noise;

  static PipelineConfig defaults();
  static PipelineConfig from_toggles(const std::string& name);
};

/// Applies "key = value" overrides. Unknown keys and bad values throw
/// ParseError naming the key.
void apply_config_overrides(PipelineConfig& config, const std::map<std::string, std::string>& values);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct MapPoint {
  std::uint64_t id = 0;
  Point3 position = Point3::Zero();
  int observations = 0;
};

struct KeyframeObservation {
  std::uint64_t point_id = 0;
  Pixel2 pixel = Pixel2::Zero();
  int level = 0;
  double depth = 0.0;  // measured at the keyframe, 0 if invalid
};

struct Keyframe {
  std::uint64_t id = 0;
  int frame_index = 0;
  double timestamp = 0.0;
  NavState state;
  PlaneFeatureCloud planes;  // camera frame
  std::vector<KeyframeObservation> observations;
  /// Registration cloud for keyframe-to-keyframe GICP (empty without i).
  std::shared_ptr<const std::vector<CovariancePoint>> registration_cloud;
  std::shared_ptr<const GicpTarget> registration_target;
};

struct Submap {
  std::vector<Point3> points;  // world frame
  /// Source keyframe id and camera-frame point per submap point.
  std::vector<std::pair<std::uint64_t, Point3>> sources;
  std::vector<std::uint64_t> keyframe_ids;
  KdTree3 tree;
};

/// Keyframes within radius of the current position and time window of the
/// newest keyframe, nearest first, capped. Throws EmptySubmap.
Submap build_local_submap(std::span<const Keyframe> keyframes, const Se3d& current_pose, double current_time,
                          const Se3d& T_b_c, const SubmapPolicy& policy);

struct StageTimings {
  double planes_ms = 0.0;
  double tracking_ms = 0.0;
  double init_ms = 0.0;
  double optimization_ms = 0.0;
  double mapping_ms = 0.0;
  double total_ms = 0.0;
};

struct TrackingReport {
  int frame_index = 0;
  double timestamp = 0.0;
  Se3d pose;  // T_w_b
  InitSource init_source = InitSource::ConstVel;
  bool keyframe = false;
  bool tracking_lost = false;
  int features = 0;
  int tracked_stream1 = 0;
  int tracked_stream2 = 0;
  int inliers = 0;
  /// Tracked features with a map point over features that had one.
  double tracked_map_ratio = 1.0;
  int reproj_factors = 0;
  int plane_factors = 0;
  int imu_factors = 0;
  int legged_factors = 0;
  int gicp_factors = 0;
  MotionFactor motion_factor = MotionFactor::None;
  int solver_iterations = 0;
  StageTimings timings;
};

/// Keyframe iff any clause holds: tracked map-point ratio < min ratio,
/// translation > max, rotation > max, or more than max_frames elapsed.
bool select_keyframe(const TrackingReport& report, const Keyframe& last, const KeyframePolicy& policy);

/// Feature waiting for a map point: current pixel, its metric depth (0 if
/// invalid) and the first sighting used for triangulation.
struct MapPointCandidate {
  Pixel2 pixel = Pixel2::Zero();
  double depth = 0.0;
  std::optional<Se3d> anchor_T_w_c;
  Pixel2 anchor_pixel = Pixel2::Zero();
};

/// Midpoint of the closest approach of two viewing rays. Empty when the ray
/// angle is below min_parallax_deg or the point lies behind either camera.
std::optional<Point3> triangulate_midpoint(const Se3d& T_w_c1, const Pixel2& px1, const Se3d& T_w_c2,
                                           const Pixel2& px2, const CameraIntrinsics& k,
                                           double min_parallax_deg);

/// Depth-valid candidates are unprojected, the rest triangulated against
/// their anchor; anything else stays empty (deferred).
std::vector<std::optional<Point3>> create_map_points(const Se3d& T_w_c, std::span<const MapPointCandidate> candidates,
                                                     const CameraIntrinsics& k, const MapPointPolicy& policy);

class Pipeline {
 public:
  Pipeline(const PipelineConfig& config, const CameraIntrinsics& camera, const Se3d& T_b_c);

  /// Sensor batches must arrive in time order, before the frames they cover.
  void add_imu(std::span<const ImuSample> samples);
  void add_legged(std::span<const LeggedOdomSample> samples);

  TrackingReport process_frame(double timestamp, const GrayImage& gray, const DepthImage& depth,
                               std::span<const ImuSample> imu = {}, std::span<const LeggedOdomSample> legged = {});

  const PipelineConfig& config() const { return config_; }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const std::vector<MapPoint>& map_points() const { return map_points_; }
  const std::optional<Submap>& submap() const { return submap_; }
  const std::optional<DualStreamResult>& last_tracking() const { return last_tracking_; }
  const Vector3d& gravity() const { return gravity_; }

  /// Per-frame poses, each re-expressed through its reference keyframe so
  /// local bundle adjustment updates propagate.
  Trajectory trajectory() const;

 private:
  struct FrameRecord {
    double timestamp;
    std::size_t keyframe;  // index into keyframes_
    Se3d T_kf_b;
  };
  struct TrackAnchor {
    Se3d T_w_c;
    Pixel2 pixel;
  };

  void initialize(double timestamp, const GrayImage& gray, const DepthImage& depth, TrackingReport& report);
  void detect_new_features(const GrayImage& gray, const Se3d& T_w_c);
  double depth_at(const DepthImage& depth, const Pixel2& px) const;
  void make_keyframe(int frame_index, double timestamp, const DepthImage& depth, PlaneFeatureCloud planes,
                     std::shared_ptr<const std::vector<CovariancePoint>> cloud,
                     std::shared_ptr<const GicpTarget> target);
  void run_local_window();
  void rebuild_submap(double timestamp);
  std::vector<PlaneObservation> associate_planes(const PlaneFeatureCloud& planes, const Se3d& T_w_b) const;
  std::optional<RelativeConstraint> gicp_constraint(const std::vector<CovariancePoint>& source,
                                                    const GicpTarget& target, const Se3d& T_init) const;

  PipelineConfig config_;
  CameraIntrinsics camera_;
  Se3d T_b_c_;
  Vector3d gravity_ = Vector3d(0.0, 0.0, -kGravityMagnitude);

  std::vector<ImuSample> imu_;
  std::vector<LeggedOdomSample> legged_;

  int frame_count_ = 0;
  double last_time_ = 0.0;
  double prev_dt_ = 0.0;
  NavState state_;
  std::optional<Se3d> prev_prev_pose_;
  ImagePyramid pyramid_;
  std::vector<Feature> features_;
  std::vector<std::optional<TrackAnchor>> anchors_;
  std::shared_ptr<const std::vector<CovariancePoint>> cloud_;
  std::shared_ptr<const GicpTarget> target_;
  int lost_streak_ = 0;

  std::vector<Keyframe> keyframes_;
  std::vector<MapPoint> map_points_;
  std::optional<Submap> submap_;
  std::vector<FrameRecord> frames_;
  std::optional<DualStreamResult> last_tracking_;
};

struct SequenceRun {
  Trajectory trajectory;
  std::vector<TrackingReport> reports;
  /// Longest run of lost frames whose pose came from constant velocity
  /// alone, i.e. with no sensor anchoring it.
  int longest_unanchored_loss = 0;
  /// Frames over summed per-frame processing time (loading excluded).
  double frames_per_second = 0.0;
};

/// Frames longer than this without any anchor count as a tracking failure.
inline constexpr int kMaxUnanchoredLoss = 30;

using FrameLoader = std::function<std::pair<GrayImage, DepthImage>(std::size_t)>;
using FrameCallback = std::function<void(std::size_t, const GrayImage&, const TrackingReport&, const Pipeline&)>;

/// Feeds every frame with the IMU and legged samples up to lookahead seconds
/// past its stamp (sensor streams run ahead of the camera).
SequenceRun run_sequence(Pipeline& pipeline, std::span<const double> frame_times, const FrameLoader& load,
                         std::span<const ImuSample> imu = {}, std::span<const LeggedOdomSample> legged = {},
                         const FrameCallback& on_frame = {}, double lookahead = 0.05);

/// Run report CSV: one row per frame.
void write_report_csv(std::span<const TrackingReport> reports, const std::filesystem::path& path);

}  // namespace legslam
