#include "core/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/errors.hpp"

namespace rada {

using namespace ad;

namespace {

bool in_view(const Eigen::Vector2d& p, int w, int h) {
  return p.x() >= 0.0 && p.x() <= w - 1.0 && p.y() >= 0.0 && p.y() <= h - 1.0;
}

void check_rotation(const Eigen::Matrix3d& r, const char* what) {
  check_arg(((r.transpose() * r) - Eigen::Matrix3d::Identity())
                    .cwiseAbs()
                    .maxCoeff() <= 1e-6,
            std::string(what) + ": rotation is not orthonormal");
  check_arg(std::abs(r.determinant() - 1.0) <= 1e-6,
            std::string(what) + ": rotation determinant is not 1");
}

}  // namespace

double Camera::depth_at(double u, double v) const {
  if (!has_depth()) return -1.0;
  if (!(u >= 0.0 && u <= width - 1.0 && v >= 0.0 && v <= height - 1.0))
    return -1.0;
  int x0 = std::min(static_cast<int>(std::floor(u)), width - 1);
  int y0 = std::min(static_cast<int>(std::floor(v)), height - 1);
  const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
  const double a = u - x0, b = v - y0;
  const double d00 = depth[static_cast<size_t>(y0) * width + x0];
  const double d01 = depth[static_cast<size_t>(y0) * width + x1];
  const double d10 = depth[static_cast<size_t>(y1) * width + x0];
  const double d11 = depth[static_cast<size_t>(y1) * width + x1];
  if (d00 <= 0 || d01 <= 0 || d10 <= 0 || d11 <= 0) return -1.0;
  return (1 - b) * ((1 - a) * d00 + a * d01) + b * ((1 - a) * d10 + a * d11);
}

WarpSpec WarpSpec::homography(const Eigen::Matrix3d& h, int width_a,
                              int height_a, int width_b, int height_b) {
  check_arg(std::abs(h.determinant()) > 1e-12,
            "homography: matrix is singular");
  check_arg(width_a > 0 && height_a > 0 && width_b > 0 && height_b > 0,
            "homography: image sizes must be positive");
  WarpSpec s;
  s.kind_ = Kind::homography;
  s.h_ = h;
  s.wa_ = width_a;
  s.ha_ = height_a;
  s.wb_ = width_b;
  s.hb_ = height_b;
  return s;
}

WarpSpec WarpSpec::pose_depth(Camera a, Camera b) {
  check_arg(a.width > 0 && a.height > 0 && b.width > 0 && b.height > 0,
            "pose_depth: image sizes must be positive");
  check_rotation(a.r, "camera A");
  check_rotation(b.r, "camera B");
  check_arg(!a.has_depth() ||
                a.depth.size() == static_cast<size_t>(a.width) * a.height,
            "camera A: depth raster size mismatch");
  check_arg(!b.has_depth() ||
                b.depth.size() == static_cast<size_t>(b.width) * b.height,
            "camera B: depth raster size mismatch");
  WarpSpec s;
  s.kind_ = Kind::pose_depth;
  s.cam_a_ = std::move(a);
  s.cam_b_ = std::move(b);
  s.wa_ = s.cam_a_.width;
  s.ha_ = s.cam_a_.height;
  s.wb_ = s.cam_b_.width;
  s.hb_ = s.cam_b_.height;
  return s;
}

Eigen::Matrix3d WarpSpec::rotation_ab() const {
  return cam_b_.r * cam_a_.r.transpose();
}

Eigen::Vector3d WarpSpec::translation_ab() const {
  return cam_b_.t - rotation_ab() * cam_a_.t;
}

std::optional<Eigen::Vector2d> warp_point_raw(const Eigen::Vector2d& p,
                                              const WarpSpec& spec,
                                              bool a_to_b) {
  if (spec.kind() == WarpSpec::Kind::homography) {
    const Eigen::Matrix3d m =
        a_to_b ? spec.h() : Eigen::Matrix3d(spec.h().inverse());
    const Eigen::Vector3d q = m * Eigen::Vector3d(p.x(), p.y(), 1.0);
    if (std::abs(q.z()) < 1e-12) return std::nullopt;
    const Eigen::Vector2d out(q.x() / q.z(), q.y() / q.z());
    if (!in_view(out, spec.dst_width(a_to_b), spec.dst_height(a_to_b)))
      return std::nullopt;
    return out;
  }
  const Camera& src = a_to_b ? spec.camera_a() : spec.camera_b();
  const Camera& dst = a_to_b ? spec.camera_b() : spec.camera_a();
  const double d = src.depth_at(p.x(), p.y());
  if (d <= 0.0) return std::nullopt;
  const Eigen::Matrix3d r_rel = dst.r * src.r.transpose();
  const Eigen::Vector3d t_rel = dst.t - r_rel * src.t;
  const Eigen::Vector3d x =
      d * (src.k.inverse() * Eigen::Vector3d(p.x(), p.y(), 1.0));
  const Eigen::Vector3d y = r_rel * x + t_rel;
  if (y.z() <= 1e-9) return std::nullopt;
  const Eigen::Vector3d q = dst.k * y;
  const Eigen::Vector2d out(q.x() / q.z(), q.y() / q.z());
  if (!in_view(out, dst.width, dst.height)) return std::nullopt;
  return out;
}

std::optional<Eigen::Vector2d> warp_point(const Eigen::Vector2d& p,
                                          const WarpSpec& spec, bool a_to_b) {
  auto fwd = warp_point_raw(p, spec, a_to_b);
  if (!fwd || spec.kind() == WarpSpec::Kind::homography) return fwd;
  auto back = warp_point_raw(*fwd, spec, !a_to_b);
  if (!back || (*back - p).norm() > kOcclusionTolerance) return std::nullopt;
  return fwd;
}

namespace {

// c0*u + c1*v + c2 on (M,1) column tensors
Var lincomb(const Var& u, const Var& v, double c0, double c1, double c2) {
  return add_scalar(add(mul_scalar(u, c0), mul_scalar(v, c1)), c2);
}

}  // namespace

WarpedPoints warp_points(const Var& positions, const WarpSpec& spec,
                         bool a_to_b) {
  check_arg(positions && positions->shape.ndim() == 2 &&
                positions->shape[1] == 2,
            "warp_points: positions must be (N,2)");
  const int n = positions->shape[0];
  WarpedPoints out;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d p(positions->v()[i * 2], positions->v()[i * 2 + 1]);
    if (warp_point(p, spec, a_to_b)) out.kept.push_back(i);
  }
  if (out.kept.empty()) {
    out.positions = constant(Shape{0, 2});
    return out;
  }
  Var s = gather_rows(positions, out.kept);
  const int m = static_cast<int>(out.kept.size());
  Var u = slice_cols(s, 0, 1), v = slice_cols(s, 1, 2);

  if (spec.kind() == WarpSpec::Kind::homography) {
    const Eigen::Matrix3d hm =
        a_to_b ? spec.h() : Eigen::Matrix3d(spec.h().inverse());
    Var p0 = lincomb(u, v, hm(0, 0), hm(0, 1), hm(0, 2));
    Var p1 = lincomb(u, v, hm(1, 0), hm(1, 1), hm(1, 2));
    Var p2 = lincomb(u, v, hm(2, 0), hm(2, 1), hm(2, 2));
    out.positions = concat_cols({div(p0, p2), div(p1, p2)});
    return out;
  }

  const Camera& src = a_to_b ? spec.camera_a() : spec.camera_b();
  const Camera& dst = a_to_b ? spec.camera_b() : spec.camera_a();
  const Eigen::Matrix3d r_rel = dst.r * src.r.transpose();
  const Eigen::Vector3d t_rel = dst.t - r_rel * src.t;
  const Eigen::Matrix3d ki = src.k.inverse();
  Var depth_map = constant(Shape{src.height, src.width, 1}, src.depth);
  Var d = grid_sample(depth_map, s);  // (M,1)
  Var x0 = mul(d, lincomb(u, v, ki(0, 0), ki(0, 1), ki(0, 2)));
  Var x1 = mul(d, lincomb(u, v, ki(1, 0), ki(1, 1), ki(1, 2)));
  Var x2 = mul(d, lincomb(u, v, ki(2, 0), ki(2, 1), ki(2, 2)));
  auto rigid = [&](int row) {
    return add_scalar(add(add(mul_scalar(x0, r_rel(row, 0)),
                              mul_scalar(x1, r_rel(row, 1))),
                          mul_scalar(x2, r_rel(row, 2))),
                      t_rel(row));
  };
  Var y0 = rigid(0), y1 = rigid(1), y2 = rigid(2);
  auto project = [&](int row) {
    return add(add(mul_scalar(y0, dst.k(row, 0)),
                   mul_scalar(y1, dst.k(row, 1))),
               mul_scalar(y2, dst.k(row, 2)));
  };
  Var q0 = project(0), q1 = project(1), q2 = project(2);
  out.positions = concat_cols({div(q0, q2), div(q1, q2)});
  check_arg(out.positions->shape == Shape{m, 2}, "warp_points: internal shape");
  return out;
}

CorrespondenceSet build_correspondences(
    const std::vector<Eigen::Vector2d>& kpts_a,
    const std::vector<Eigen::Vector2d>& kpts_b, const WarpSpec& spec,
    double th_gt) {
  check_arg(th_gt >= 0, "build_correspondences: th_gt must be >= 0");
  CorrespondenceSet set;
  set.th_gt = th_gt;
  if (kpts_a.empty() || kpts_b.empty() || th_gt <= 0) return set;

  struct Claim {
    int index_a;
    double dist;
    Eigen::Vector2d p_ab;
  };
  const int nb = static_cast<int>(kpts_b.size());
  std::vector<Claim> best(static_cast<size_t>(nb),
                          {-1, std::numeric_limits<double>::infinity(), {}});
  for (int i = 0; i < static_cast<int>(kpts_a.size()); ++i) {
    auto q = warp_point(kpts_a[static_cast<size_t>(i)], spec, true);
    if (!q) continue;
    int nearest = -1;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nb; ++j) {
      const double dj = (kpts_b[static_cast<size_t>(j)] - *q).norm();
      if (dj < nearest_d) {
        nearest_d = dj;
        nearest = j;
      }
    }
    if (nearest < 0 || nearest_d >= th_gt) continue;
    Claim& c = best[static_cast<size_t>(nearest)];
    if (nearest_d < c.dist || (nearest_d == c.dist && i < c.index_a)) {
      c = {i, nearest_d, *q};
    }
  }
  std::vector<Correspondence> pairs;
  for (int j = 0; j < nb; ++j) {
    const Claim& c = best[static_cast<size_t>(j)];
    if (c.index_a < 0) continue;
    auto back = warp_point(kpts_b[static_cast<size_t>(j)], spec, false);
    if (!back) continue;
    Correspondence pair;
    pair.index_a = c.index_a;
    pair.index_b = j;
    pair.p_a = kpts_a[static_cast<size_t>(c.index_a)];
    pair.p_b = kpts_b[static_cast<size_t>(j)];
    pair.p_ab = c.p_ab;
    pair.p_ba = *back;
    pairs.push_back(pair);
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const Correspondence& x, const Correspondence& y) {
              return x.index_a < y.index_a;
            });
  set.pairs = std::move(pairs);
  return set;
}

SparseProb reprojection_probability_map(double u, double v, int h, int w) {
  check_arg(h > 0 && w > 0, "probability map: empty image");
  check_arg(u >= 0.0 && u <= w - 1.0 && v >= 0.0 && v <= h - 1.0,
            "probability map: position out of bounds");
  int x0 = std::min(static_cast<int>(std::floor(u)), w - 1);
  int y0 = std::min(static_cast<int>(std::floor(v)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double a = u - x0, b = v - y0;
  const int idx[4] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
  const double wt[4] = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
  SparseProb out;
  for (int k = 0; k < 4; ++k) {
    if (wt[k] <= 0.0) continue;
    bool merged = false;
    for (int m = 0; m < out.count; ++m) {
      if (out.index[static_cast<size_t>(m)] == idx[k]) {
        out.weight[static_cast<size_t>(m)] += wt[k];
        merged = true;
        break;
      }
    }
    if (!merged) {
      out.index[static_cast<size_t>(out.count)] = idx[k];
      out.weight[static_cast<size_t>(out.count)] = wt[k];
      ++out.count;
    }
  }
  return out;
}

}  // namespace rada
