#include "legslam/flow_tracking.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace legslam {

// ---------------------------------------------------------------------------
// Pyramid

namespace {

FloatImage downsample2(const FloatImage& src) {
  const Eigen::Index rows = src.rows() / 2, cols = src.cols() / 2;
  FloatImage dst(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      dst(y, x) = 0.25f * (src(2 * y, 2 * x) + src(2 * y, 2 * x + 1) + src(2 * y + 1, 2 * x) +
                           src(2 * y + 1, 2 * x + 1));
    }
  }
  return dst;
}

void scharr(const FloatImage& img, FloatImage& gx, FloatImage& gy) {
  const Eigen::Index rows = img.rows(), cols = img.cols();
  gx.resize(rows, cols);
  gy.resize(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    const Eigen::Index ym = std::max<Eigen::Index>(y - 1, 0), yp = std::min<Eigen::Index>(y + 1, rows - 1);
    for (Eigen::Index x = 0; x < cols; ++x) {
      const Eigen::Index xm = std::max<Eigen::Index>(x - 1, 0), xp = std::min<Eigen::Index>(x + 1, cols - 1);
      gx(y, x) = (3.0f * (img(ym, xp) - img(ym, xm)) + 10.0f * (img(y, xp) - img(y, xm)) +
                  3.0f * (img(yp, xp) - img(yp, xm))) /
                 32.0f;
      gy(y, x) = (3.0f * (img(yp, xm) - img(ym, xm)) + 10.0f * (img(yp, x) - img(ym, x)) +
                  3.0f * (img(yp, xp) - img(ym, xp))) /
                 32.0f;
    }
  }
}

}  // namespace

ImagePyramid build_pyramid(const GrayImage& image, int levels, int patch_size) {
  if (levels < 1) throw Error(ErrorCode::InvalidArgument, "pyramid needs at least one level");
  const long need = (1L << (levels - 1)) * patch_size;
  if (image.cols() < need || image.rows() < need) {
    throw Error(ErrorCode::TooSmall, "image too small for requested pyramid depth");
  }
  ImagePyramid pyr;
  pyr.levels.reserve(static_cast<std::size_t>(levels));
  pyr.levels.push_back(to_float(image));
  for (int l = 1; l < levels; ++l) pyr.levels.push_back(downsample2(pyr.levels.back()));
  pyr.grad_x.resize(pyr.levels.size());
  pyr.grad_y.resize(pyr.levels.size());
  for (std::size_t l = 0; l < pyr.levels.size(); ++l) scharr(pyr.levels[l], pyr.grad_x[l], pyr.grad_y[l]);
  return pyr;
}

// ---------------------------------------------------------------------------
// Grid mask

GridMask::GridMask(int width, int height, int cell_size)
    : cell_size_(std::max(1, cell_size)),
      rows_((height + cell_size_ - 1) / cell_size_),
      cols_((width + cell_size_ - 1) / cell_size_),
      cells_(static_cast<std::size_t>(rows_ * cols_), 0) {}

void GridMask::mark(const Pixel2& px) {
  const int c = static_cast<int>(std::floor(px.x() / cell_size_));
  const int r = static_cast<int>(std::floor(px.y() / cell_size_));
  if (r < 0 || c < 0 || r >= rows_ || c >= cols_) return;
  cells_[static_cast<std::size_t>(r * cols_ + c)] = 1;
}

void GridMask::mark_all() { std::fill(cells_.begin(), cells_.end(), 1); }

bool GridMask::occupied(const Pixel2& px) const {
  const int c = static_cast<int>(std::floor(px.x() / cell_size_));
  const int r = static_cast<int>(std::floor(px.y() / cell_size_));
  if (r < 0 || c < 0 || r >= rows_ || c >= cols_) return false;
  return cells_[static_cast<std::size_t>(r * cols_ + c)] != 0;
}

// ---------------------------------------------------------------------------
// Detection

namespace {

constexpr std::array<std::array<int, 2>, 16> kCircle = {{{0, -3},
                                                         {1, -3},
                                                         {2, -2},
                                                         {3, -1},
                                                         {3, 0},
                                                         {3, 1},
                                                         {2, 2},
                                                         {1, 3},
                                                         {0, 3},
                                                         {-1, 3},
                                                         {-2, 2},
                                                         {-3, 1},
                                                         {-3, 0},
                                                         {-3, -1},
                                                         {-2, -2},
                                                         {-1, -3}}};

bool has_arc(const std::array<std::uint8_t, 16>& flags, int arc) {
  int run = 0;
  for (int i = 0; i < 16 + arc; ++i) {
    if (flags[static_cast<std::size_t>(i % 16)]) {
      if (++run >= arc) return true;
    } else {
      run = 0;
    }
  }
  return false;
}

}  // namespace

bool is_fast_corner(const GrayImage& img, int x, int y, int threshold) {
  if (x < 3 || y < 3 || x >= img.cols() - 3 || y >= img.rows() - 3) return false;
  const int c = img(y, x);
  const int hi = c + threshold, lo = c - threshold;
  int brighter = 0, darker = 0;
  for (int i = 0; i < 16; i += 4) {
    const int v = img(y + kCircle[i][1], x + kCircle[i][0]);
    brighter += v > hi;
    darker += v < lo;
  }
  if (brighter < 2 && darker < 2) return false;
  std::array<std::uint8_t, 16> b{}, d{};
  for (std::size_t i = 0; i < 16; ++i) {
    const int v = img(y + kCircle[i][1], x + kCircle[i][0]);
    b[i] = v > hi;
    d[i] = v < lo;
  }
  return has_arc(b, 9) || has_arc(d, 9);
}

double shi_tomasi_score(const GrayImage& img, int x, int y) {
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const int u = x + dx, v = y + dy;
      if (u < 1 || v < 1 || u >= img.cols() - 1 || v >= img.rows() - 1) continue;
      const double gx = 0.5 * (static_cast<double>(img(v, u + 1)) - img(v, u - 1));
      const double gy = 0.5 * (static_cast<double>(img(v + 1, u)) - img(v - 1, u));
      sxx += gx * gx;
      sxy += gx * gy;
      syy += gy * gy;
    }
  }
  sxx /= 25.0;
  sxy /= 25.0;
  syy /= 25.0;
  const double tr = 0.5 * (sxx + syy);
  return tr - std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
}

std::vector<Feature> detect_features(const GrayImage& image, const DetectorConfig& config, const GridMask* mask) {
  const int w = static_cast<int>(image.cols()), h = static_cast<int>(image.rows());
  const GridMask grid(w, h, config.cell_size);
  struct Best {
    double score = -1.0;
    int x = 0, y = 0;
  };
  std::vector<Best> best(static_cast<std::size_t>(grid.rows() * grid.cols()));
  const int border = std::max(config.border, 3);
  for (int y = border; y < h - border; ++y) {
    const int row = y / config.cell_size;
    for (int x = border; x < w - border; ++x) {
      const Pixel2 px(x, y);
      if (mask && mask->occupied(px)) continue;
      if (!is_fast_corner(image, x, y, config.fast_threshold)) continue;
      const double s = shi_tomasi_score(image, x, y);
      if (s < config.min_corner_score) continue;
      Best& b = best[static_cast<std::size_t>(row * grid.cols() + x / config.cell_size)];
      if (s > b.score) b = Best{s, x, y};
    }
  }
  std::vector<int> order;
  for (std::size_t i = 0; i < best.size(); ++i) {
    if (best[i].score >= 0.0) order.push_back(static_cast<int>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return best[static_cast<std::size_t>(a)].score > best[static_cast<std::size_t>(b)].score;
  });
  if (static_cast<int>(order.size()) > config.max_features) order.resize(static_cast<std::size_t>(config.max_features));
  std::vector<Feature> out;
  out.reserve(order.size());
  for (int i : order) {
    Feature f;
    f.pixel = Pixel2(best[static_cast<std::size_t>(i)].x, best[static_cast<std::size_t>(i)].y);
    out.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lucas-Kanade

int TrackResult::count(TrackStatus s) const {
  return static_cast<int>(std::count_if(points.begin(), points.end(), [&](const auto& p) { return p.status == s; }));
}

int TrackResult::count(StreamTag tag, TrackStatus s) const {
  return static_cast<int>(
      std::count_if(points.begin(), points.end(), [&](const auto& p) { return p.stream == tag && p.status == s; }));
}

namespace {

inline float sample_clamped(const FloatImage& img, double x, double y) {
  const double xc = std::clamp(x, 0.0, static_cast<double>(img.cols() - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(img.rows() - 1));
  return sample_bilinear(img, static_cast<float>(xc), static_cast<float>(yc));
}

// Level coordinates with pixel centers at integers: a level-l pixel averages
// level-0 pixels [2^l i, 2^l (i+1)).
inline Pixel2 to_level(const Pixel2& p, int level) {
  const double s = std::ldexp(1.0, -level);
  return (p.array() + 0.5).matrix() * s - Pixel2::Constant(0.5);
}
inline Pixel2 from_level(const Pixel2& p, int level) {
  const double s = std::ldexp(1.0, level);
  return (p.array() + 0.5).matrix() * s - Pixel2::Constant(0.5);
}

struct LkOutcome {
  Pixel2 pos = Pixel2::Zero();
  bool ok = false;
};

LkOutcome track_one(const ImagePyramid& from, const ImagePyramid& to, const Pixel2& point, const Pixel2& seed,
                    const LkConfig& cfg) {
  const int r = cfg.window / 2;
  const int n = (2 * r + 1) * (2 * r + 1);
  std::vector<float> tmpl(static_cast<std::size_t>(n)), gxs(static_cast<std::size_t>(n)), gys(static_cast<std::size_t>(n));
  Pixel2 est = seed;
  const int levels = std::min(from.num_levels(), to.num_levels());
  LkOutcome out;
  for (int l = levels - 1; l >= 0; --l) {
    const FloatImage& I0 = from.levels[static_cast<std::size_t>(l)];
    const FloatImage& I1 = to.levels[static_cast<std::size_t>(l)];
    const Pixel2 p = to_level(point, l);
    Pixel2 x = to_level(est, l);
    double hxx = 0.0, hxy = 0.0, hyy = 0.0;
    int idx = 0;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx, ++idx) {
        const double u = p.x() + dx, v = p.y() + dy;
        tmpl[static_cast<std::size_t>(idx)] = sample_clamped(I0, u, v);
        const float gx = sample_clamped(from.grad_x[static_cast<std::size_t>(l)], u, v);
        const float gy = sample_clamped(from.grad_y[static_cast<std::size_t>(l)], u, v);
        gxs[static_cast<std::size_t>(idx)] = gx;
        gys[static_cast<std::size_t>(idx)] = gy;
        hxx += gx * gx;
        hxy += gx * gy;
        hyy += gy * gy;
      }
    }
    const double det = hxx * hyy - hxy * hxy;
    const double tr = 0.5 * (hxx + hyy);
    const double min_eig = (tr - std::sqrt(0.25 * (hxx - hyy) * (hxx - hyy) + hxy * hxy)) / n;
    if (min_eig < cfg.min_eigen || det < 1e-12) {
      if (l == 0) return out;
      continue;  // weak texture at this scale; keep the estimate
    }
    const double span_x = I1.cols() + r, span_y = I1.rows() + r;
    for (int it = 0; it < cfg.max_iters; ++it) {
      double bx = 0.0, by = 0.0;
      idx = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++idx) {
          const double e = sample_clamped(I1, x.x() + dx, x.y() + dy) - tmpl[static_cast<std::size_t>(idx)];
          bx += gxs[static_cast<std::size_t>(idx)] * e;
          by += gys[static_cast<std::size_t>(idx)] * e;
        }
      }
      const Pixel2 delta(-(hyy * bx - hxy * by) / det, -(hxx * by - hxy * bx) / det);
      x += delta;
      if (x.x() < -r || x.y() < -r || x.x() > span_x || x.y() > span_y) return out;
      if (delta.norm() < cfg.eps) break;
    }
    est = from_level(x, l);
  }
  // Photometric consistency at the finest level.
  const FloatImage& I0 = from.levels[0];
  const FloatImage& I1 = to.levels[0];
  double err = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      err += std::abs(sample_clamped(I1, est.x() + dx, est.y() + dy) - sample_clamped(I0, point.x() + dx, point.y() + dy));
    }
  }
  err /= n;
  const double m = cfg.border_margin;
  const bool inside = est.x() >= m && est.y() >= m && est.x() <= I1.cols() - 1 - m && est.y() <= I1.rows() - 1 - m;
  out.pos = est;
  out.ok = inside && err <= cfg.max_residual && est.allFinite();
  return out;
}

}  // namespace

TrackResult lk_track(const ImagePyramid& prev, const ImagePyramid& cur, std::span<const Pixel2> points,
                     std::span<const Pixel2> seeds, const LkConfig& config, StreamTag tag) {
  if (points.size() != seeds.size()) throw Error(ErrorCode::InvalidArgument, "seeds must match points");
  if (config.window % 2 == 0) throw Error(ErrorCode::InvalidArgument, "LK window must be odd");
  TrackResult result;
  result.points.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    TrackedPoint& tp = result.points[i];
    tp.stream = tag;
    const LkOutcome fwd = track_one(prev, cur, points[i], seeds[i], config);
    tp.pixel = fwd.pos;
    if (!fwd.ok) continue;
    const LkOutcome back = track_one(cur, prev, fwd.pos, points[i], config);
    tp.fb_error = back.ok ? (back.pos - points[i]).norm() : std::numeric_limits<double>::infinity();
    if (back.ok && tp.fb_error < config.fb_threshold) tp.status = TrackStatus::Tracked;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reprojection seeding

std::vector<ReprojectedSeed> reproject_map_points(std::span<const Feature> features,
                                                  std::span<const std::optional<Point3>> map_points,
                                                  const Se3d& T_w_c_pred, const CameraIntrinsics& k,
                                                  const ReprojectionConfig& config) {
  if (features.size() != map_points.size()) throw Error(ErrorCode::InvalidArgument, "map points must match features");
  const Se3d T_c_w = T_w_c_pred.inverse();
  std::vector<ReprojectedSeed> out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    out[i].pixel = features[i].pixel;
    if (!map_points[i]) continue;
    const Point3 pc = T_c_w * *map_points[i];
    if (!(pc.z() >= config.min_depth && pc.z() <= config.max_depth)) continue;
    const Pixel2 px(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    if (!k.contains(px, config.border_margin)) continue;
    if ((px - features[i].pixel).norm() >= config.max_seed_displacement) continue;
    out[i].pixel = px;
    out[i].qualified = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fundamental matrix

double sampson_distance(const Eigen::Matrix3d& F, const Pixel2& a, const Pixel2& b) {
  const Eigen::Vector3d x(a.x(), a.y(), 1.0), xp(b.x(), b.y(), 1.0);
  const Eigen::Vector3d Fx = F * x;
  const Eigen::Vector3d Ftxp = F.transpose() * xp;
  const double e = xp.dot(Fx);
  const double den = Fx.x() * Fx.x() + Fx.y() * Fx.y() + Ftxp.x() * Ftxp.x() + Ftxp.y() * Ftxp.y();
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(e) / std::sqrt(den);
}

namespace {

Eigen::Matrix3d normalizing_transform(std::span<const Pixel2> pts, const std::vector<int>& idx) {
  Pixel2 c = Pixel2::Zero();
  for (int i : idx) c += pts[static_cast<std::size_t>(i)];
  c /= static_cast<double>(idx.size());
  double d = 0.0;
  for (int i : idx) d += (pts[static_cast<std::size_t>(i)] - c).norm();
  d /= static_cast<double>(idx.size());
  const double s = d > 1e-12 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d T;
  T << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
  return T;
}

std::optional<Eigen::Matrix3d> eight_point(std::span<const Pixel2> a, std::span<const Pixel2> b,
                                           const std::vector<int>& idx) {
  if (idx.size() < 8) return std::nullopt;
  const Eigen::Matrix3d Ta = normalizing_transform(a, idx);
  const Eigen::Matrix3d Tb = normalizing_transform(b, idx);
  Eigen::Matrix<double, Eigen::Dynamic, 9> A(static_cast<Eigen::Index>(idx.size()), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector3d x = Ta * a[static_cast<std::size_t>(idx[r])].homogeneous();
    const Eigen::Vector3d y = Tb * b[static_cast<std::size_t>(idx[r])].homogeneous();
    A.row(static_cast<Eigen::Index>(r)) << y.x() * x.x(), y.x() * x.y(), y.x(), y.y() * x.x(), y.y() * x.y(), y.y(),
        x.x(), x.y(), 1.0;
  }
  Eigen::Matrix<double, 9, 1> f;
  if (A.rows() < 9) {
    Eigen::Matrix<double, 9, 9> AtA = A.transpose() * A;
    Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(AtA, Eigen::ComputeFullV);
    f = svd.matrixV().col(8);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    f = svd.matrixV().col(8);
  }
  Eigen::Matrix3d Fn;
  Fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd3(Fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd3.singularValues();
  s(2) = 0.0;
  Fn = svd3.matrixU() * s.asDiagonal() * svd3.matrixV().transpose();
  Eigen::Matrix3d F = Tb.transpose() * Fn * Ta;
  const double norm = F.norm();
  if (!std::isfinite(norm) || norm < 1e-300) return std::nullopt;
  return F / norm;
}

std::vector<std::uint8_t> classify(const Eigen::Matrix3d& F, std::span<const Pixel2> a, std::span<const Pixel2> b,
                                   double thr, int& count) {
  std::vector<std::uint8_t> in(a.size(), 0);
  count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (sampson_distance(F, a[i], b[i]) < thr) {
      in[i] = 1;
      ++count;
    }
  }
  return in;
}

}  // namespace

std::optional<Eigen::Matrix3d> fundamental_eight_point(std::span<const Pixel2> prev, std::span<const Pixel2> cur) {
  std::vector<int> idx(prev.size());
  std::iota(idx.begin(), idx.end(), 0);
  return eight_point(prev, cur, idx);
}

FundamentalResult fundamental_ransac_filter(std::span<const Pixel2> prev, std::span<const Pixel2> cur,
                                            const FundamentalConfig& config) {
  if (prev.size() != cur.size()) throw Error(ErrorCode::InvalidArgument, "match lists differ in length");
  FundamentalResult res;
  const int n = static_cast<int>(prev.size());
  if (n < 8) {
    res.inliers.assign(prev.size(), 1);
    res.passthrough = true;
    res.warning = true;
    return res;
  }
  std::mt19937_64 rng(config.seed);
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  int best_count = -1;
  std::vector<std::uint8_t> best_in;
  Eigen::Matrix3d best_F = Eigen::Matrix3d::Zero();
  int iters = config.max_iters;
  std::vector<int> sample(8);
  for (int it = 0; it < iters; ++it) {
    for (int j = 0; j < 8; ++j) {
      std::uniform_int_distribution<int> pick(j, n - 1);
      std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick(rng))]);
      sample[static_cast<std::size_t>(j)] = pool[static_cast<std::size_t>(j)];
    }
    const auto F = eight_point(prev, cur, sample);
    if (!F) continue;
    int count = 0;
    auto in = classify(*F, prev, cur, config.sampson_threshold, count);
    if (count > best_count) {
      best_count = count;
      best_in = std::move(in);
      best_F = *F;
      const double w = static_cast<double>(count) / n;
      const double denom = std::log(std::max(1e-12, 1.0 - std::pow(w, 8)));
      if (denom < 0.0) {
        const double needed = std::log(1.0 - config.confidence) / denom;
        iters = std::min(config.max_iters, std::max(it + 1, static_cast<int>(std::ceil(needed))));
      }
    }
  }
  if (best_count < 0) throw Error(ErrorCode::DegenerateConfig, "all fundamental-matrix samples degenerate");

  std::vector<int> in_idx;
  for (int i = 0; i < n; ++i) {
    if (best_in[static_cast<std::size_t>(i)]) in_idx.push_back(i);
  }
  if (const auto refit = eight_point(prev, cur, in_idx)) {
    int count = 0;
    auto in = classify(*refit, prev, cur, config.sampson_threshold, count);
    if (count >= best_count) {
      best_count = count;
      best_in = std::move(in);
      best_F = *refit;
    }
  }
  res.F = best_F;
  res.inliers = std::move(best_in);

  if (static_cast<double>(best_count) / n < config.min_inlier_ratio) {
    std::vector<double> fx(static_cast<std::size_t>(n)), fy(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      fx[static_cast<std::size_t>(i)] = cur[static_cast<std::size_t>(i)].x() - prev[static_cast<std::size_t>(i)].x();
      fy[static_cast<std::size_t>(i)] = cur[static_cast<std::size_t>(i)].y() - prev[static_cast<std::size_t>(i)].y();
    }
    auto median = [](std::vector<double> v) {
      std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
      return v[v.size() / 2];
    };
    const Pixel2 med(median(fx), median(fy));
    std::vector<double> dev(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      dev[static_cast<std::size_t>(i)] =
          (Pixel2(fx[static_cast<std::size_t>(i)], fy[static_cast<std::size_t>(i)]) - med).norm();
    }
    if (median(dev) < config.coherence_radius) {
      res.inliers.assign(prev.size(), 1);
      res.passthrough = true;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Dual stream

DualStreamResult dual_stream_track(const ImagePyramid& prev, const ImagePyramid& cur,
                                   std::span<const Feature> features,
                                   std::span<const std::optional<Point3>> map_points, const Se3d& T_w_c_pred,
                                   const CameraIntrinsics& k, const FlowConfig& config, bool use_seeding) {
  DualStreamResult out;
  const std::size_t n = features.size();
  if (use_seeding) {
    out.seeds = reproject_map_points(features, map_points, T_w_c_pred, k, config.reprojection);
  } else {
    out.seeds.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.seeds[i].pixel = features[i].pixel;
  }

  std::vector<Pixel2> p1, s1, p2, s2;
  std::vector<std::size_t> i1, i2;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.seeds[i].qualified) {
      p1.push_back(features[i].pixel);
      s1.push_back(out.seeds[i].pixel);
      i1.push_back(i);
    } else {
      p2.push_back(features[i].pixel);
      s2.push_back(features[i].pixel);
      i2.push_back(i);
    }
  }
  out.stream1_candidates = static_cast<int>(i1.size());
  out.stream2_candidates = static_cast<int>(i2.size());

  out.track.points.resize(n);
  const TrackResult r1 = lk_track(prev, cur, p1, s1, config.lk, StreamTag::ThreeDToTwoD);
  const TrackResult r2 = lk_track(prev, cur, p2, s2, config.lk, StreamTag::TwoDToTwoD);
  for (std::size_t j = 0; j < i1.size(); ++j) out.track.points[i1[j]] = r1.points[j];
  for (std::size_t j = 0; j < i2.size(); ++j) out.track.points[i2[j]] = r2.points[j];

  std::vector<std::size_t> tracked;
  std::vector<Pixel2> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.track.points[i].status == TrackStatus::Tracked) {
      tracked.push_back(i);
      a.push_back(features[i].pixel);
      b.push_back(out.track.points[i].pixel);
    }
  }
  try {
    out.fundamental = fundamental_ransac_filter(a, b, config.fundamental);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateConfig) throw;
    out.fundamental = FundamentalResult{};
    out.fundamental.inliers.assign(a.size(), 1);
    out.fundamental.passthrough = true;
    out.fundamental.warning = true;
  }

  out.mask = GridMask(cur.width(), cur.height(), config.mask_cell_size);
  for (std::size_t j = 0; j < tracked.size(); ++j) {
    TrackedPoint& tp = out.track.points[tracked[j]];
    if (out.fundamental.inliers[j]) {
      ++out.inliers;
      out.mask.mark(tp.pixel);
    } else {
      tp.status = TrackStatus::RejectedOutlier;
    }
  }
  out.tracking_lost = out.inliers < config.min_tracked;
  return out;
}

RgbImage render_track_overlay(const GrayImage& cur, const DualStreamResult& result) {
  RgbImage img(cur);
  for (const auto& s : result.seeds) {
    if (s.qualified) draw_cross(img, s.pixel, 3, 255, 0, 0);
  }
  for (const auto& p : result.track.points) {
    if (p.status == TrackStatus::Tracked) draw_cross(img, p.pixel, 2, 0, 255, 0);
  }
  return img;
}

}  // namespace legslam
