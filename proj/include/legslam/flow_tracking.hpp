#pragma once

// Feature detection and the two-stream optical flow tracker: features with
// a usable map point are tracked from their reprojection under the predicted
// pose, the rest from their previous pixel. Both streams are then filtered by
// a fundamental-matrix RANSAC and the surviving tracks mask their grid cells
// against re-detection.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "legslam/geometry.hpp"
#include "legslam/image.hpp"

namespace legslam {

struct Feature {
  Pixel2 pixel = Pixel2::Zero();
  int level = 0;
  std::optional<std::uint64_t> map_point_id;
  std::uint32_t track_length = 0;

  static constexpr std::uint32_t kMaxTrackLength = 1u << 31;
  void bump_track_length() {
    if (track_length < kMaxTrackLength) ++track_length;
  }
};

struct ImagePyramid {
  std::vector<FloatImage> levels;
  std::vector<FloatImage> grad_x;  // Scharr, per level
  std::vector<FloatImage> grad_y;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int width() const { return levels.empty() ? 0 : static_cast<int>(levels[0].cols()); }
  int height() const { return levels.empty() ? 0 : static_cast<int>(levels[0].rows()); }
};

/// Each level is the 2x2 box average of the previous one. Throws TooSmall
/// when the coarsest level cannot hold a patch_size window.
ImagePyramid build_pyramid(const GrayImage& image, int levels, int patch_size = 21);

/// Occupancy grid shared by detection and inlier masking.
class GridMask {
 public:
  GridMask() = default;
  GridMask(int width, int height, int cell_size);

  void mark(const Pixel2& px);
  void mark_all();
  bool occupied(const Pixel2& px) const;
  bool occupied_cell(int row, int col) const { return cells_[static_cast<std::size_t>(row * cols_ + col)] != 0; }
  int cell_size() const { return cell_size_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }

 private:
  int cell_size_ = 1, rows_ = 0, cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct DetectorConfig {
  int cell_size = 24;
  int max_features = 250;
  int fast_threshold = 20;
  /// Minimum Shi-Tomasi response (smallest structure-tensor eigenvalue, mean
  /// over a 5x5 block, gray^2 / px^2).
  double min_corner_score = 20.0;
  int border = 12;
};

/// FAST-9 segment test on a 16-pixel circle; exposed for test oracles.
bool is_fast_corner(const GrayImage& img, int x, int y, int threshold);
double shi_tomasi_score(const GrayImage& img, int x, int y);

/// Best-scoring FAST corner per free grid cell, overall capped at
/// max_features. A null or partially filled mask leaves those cells free.
std::vector<Feature> detect_features(const GrayImage& image, const DetectorConfig& config,
                                     const GridMask* mask = nullptr);

enum class TrackStatus : std::uint8_t { Tracked, Lost, RejectedOutlier };
enum class StreamTag : std::uint8_t { ThreeDToTwoD, TwoDToTwoD };

struct TrackedPoint {
  Pixel2 pixel = Pixel2::Zero();
  TrackStatus status = TrackStatus::Lost;
  StreamTag stream = StreamTag::TwoDToTwoD;
  double fb_error = 0.0;
};

struct TrackResult {
  std::vector<TrackedPoint> points;  // aligned with the input features

  int count(TrackStatus s) const;
  int count(StreamTag tag, TrackStatus s) const;
};

struct LkConfig {
  int window = 21;
  int max_iters = 30;
  double eps = 0.01;
  double fb_threshold = 1.0;
  /// Smallest eigenvalue of the gradient matrix per window pixel.
  double min_eigen = 1.0;
  /// Mean absolute photometric residual at the finest level (gray levels).
  double max_residual = 30.0;
  int border_margin = 2;
};

/// Coarse-to-fine Lucas-Kanade from `seeds`, validated by tracking each
/// result back to `prev`.
TrackResult lk_track(const ImagePyramid& prev, const ImagePyramid& cur, std::span<const Pixel2> points,
                     std::span<const Pixel2> seeds, const LkConfig& config,
                     StreamTag tag = StreamTag::TwoDToTwoD);

struct ReprojectionConfig {
  double min_depth = kDefaultMinDepth;
  double max_depth = kDefaultMaxDepth;
  double border_margin = 10.0;
  double max_seed_displacement = 120.0;
};

struct ReprojectedSeed {
  Pixel2 pixel = Pixel2::Zero();
  bool qualified = false;
};

/// Projects each feature's map point through the predicted current camera
/// pose T_w_c. Entries without a map point come back unqualified.
std::vector<ReprojectedSeed> reproject_map_points(std::span<const Feature> features,
                                                  std::span<const std::optional<Point3>> map_points,
                                                  const Se3d& T_w_c_pred, const CameraIntrinsics& k,
                                                  const ReprojectionConfig& config);

struct FundamentalConfig {
  double sampson_threshold = 1.5;
  int max_iters = 200;
  double confidence = 0.999;
  double min_inlier_ratio = 0.3;
  /// Flow vectors within this distance of the median flow count as coherent.
  double coherence_radius = 2.0;
  std::uint64_t seed = 42;
};

struct FundamentalResult {
  std::vector<std::uint8_t> inliers;
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
  /// Matches passed unfiltered (too few matches or coherent low-parallax flow).
  bool passthrough = false;
  bool warning = false;
};

/// Normalized 8-point inside RANSAC with Sampson-distance inliers and a
/// final refit on the inlier set. Throws DegenerateConfig when no sample
/// yields a usable model.
FundamentalResult fundamental_ransac_filter(std::span<const Pixel2> prev, std::span<const Pixel2> cur,
                                            const FundamentalConfig& config);

/// Normalized 8-point fit on all given matches (>= 8).
std::optional<Eigen::Matrix3d> fundamental_eight_point(std::span<const Pixel2> prev,
                                                       std::span<const Pixel2> cur);

/// Geometric Sampson distance in pixels.
double sampson_distance(const Eigen::Matrix3d& F, const Pixel2& a, const Pixel2& b);

struct FlowConfig {
  LkConfig lk;
  ReprojectionConfig reprojection;
  FundamentalConfig fundamental;
  int min_tracked = 15;
  int mask_cell_size = 24;
};

struct DualStreamResult {
  TrackResult track;
  std::vector<ReprojectedSeed> seeds;
  GridMask mask;
  FundamentalResult fundamental;
  int stream1_candidates = 0;
  int stream2_candidates = 0;
  int inliers = 0;
  bool tracking_lost = false;
};

/// Runs both streams on the previous frame's features. With use_seeding
/// false every feature goes through the unseeded stream. Tracking loss is
/// reported in the result rather than thrown so the caller keeps the tracks.
DualStreamResult dual_stream_track(const ImagePyramid& prev, const ImagePyramid& cur,
                                   std::span<const Feature> features,
                                   std::span<const std::optional<Point3>> map_points, const Se3d& T_w_c_pred,
                                   const CameraIntrinsics& k, const FlowConfig& config, bool use_seeding = true);

/// Debug rendering: tracked inliers green, reprojected seeds red.
RgbImage render_track_overlay(const GrayImage& cur, const DualStreamResult& result);

}  // namespace legslam
