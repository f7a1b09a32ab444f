#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <vector>

#include "core/tensor.hpp"

// Projective machinery shared by supervision and evaluation. Convention used
// everywhere: x right, y down, origin at the top-left pixel center, pixel
// centers at integer coordinates. A point is in view iff 0 <= u <= W-1 and
// 0 <= v <= H-1.
namespace rada {

using ad::Var;

struct Camera {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();  // pinhole intrinsics
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0, height = 0;
  std::vector<double> depth;  // height*width row-major; <= 0 marks holes

  bool has_depth() const { return !depth.empty(); }
  // Clamped bilinear sample; returns <= 0 when the position is outside the
  // image or any contributing pixel has no depth.
  double depth_at(double u, double v) const;
};

class WarpSpec {
 public:
  enum class Kind { homography, pose_depth };

  static WarpSpec homography(const Eigen::Matrix3d& h, int width_a,
                             int height_a, int width_b, int height_b);
  static WarpSpec pose_depth(Camera a, Camera b);

  Kind kind() const { return kind_; }
  const Camera& camera_a() const { return cam_a_; }
  const Camera& camera_b() const { return cam_b_; }
  const Eigen::Matrix3d& h() const { return h_; }
  // relative motion taking camera-A coordinates to camera-B coordinates
  Eigen::Matrix3d rotation_ab() const;
  Eigen::Vector3d translation_ab() const;
  int src_width(bool a_to_b) const { return a_to_b ? wa_ : wb_; }
  int src_height(bool a_to_b) const { return a_to_b ? ha_ : hb_; }
  int dst_width(bool a_to_b) const { return a_to_b ? wb_ : wa_; }
  int dst_height(bool a_to_b) const { return a_to_b ? hb_ : ha_; }

 private:
  WarpSpec() = default;
  Kind kind_ = Kind::homography;
  Eigen::Matrix3d h_ = Eigen::Matrix3d::Identity();
  Camera cam_a_, cam_b_;
  int wa_ = 0, ha_ = 0, wb_ = 0, hb_ = 0;
};

// Maximum forward-backward round-trip discrepancy before a warped point is
// treated as occluded (pose_depth warps only; homographies are exact).
inline constexpr double kOcclusionTolerance = 2.0;

// Warp a single point. Returns nothing when the point leaves the destination
// view, lacks depth, lands behind the camera, or fails the round-trip check.
std::optional<Eigen::Vector2d> warp_point(const Eigen::Vector2d& p,
                                          const WarpSpec& spec,
                                          bool a_to_b = true);

// Same map without the occlusion check; used for round-trip diagnostics.
std::optional<Eigen::Vector2d> warp_point_raw(const Eigen::Vector2d& p,
                                              const WarpSpec& spec,
                                              bool a_to_b = true);

// Differentiable warp of the surviving subset of `positions` (N,2). The kept
// list gives the input row of each output row; values agree with warp_point.
struct WarpedPoints {
  Var positions;          // (M,2)
  std::vector<int> kept;  // M input indices, ascending
};
WarpedPoints warp_points(const Var& positions, const WarpSpec& spec,
                         bool a_to_b = true);

struct Correspondence {
  int index_a = -1, index_b = -1;
  Eigen::Vector2d p_a, p_b, p_ab, p_ba;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  double th_gt = 0;
};

// For each A keypoint: warp into B, take the nearest detected B keypoint,
// keep the pair iff the distance is strictly below th_gt. Each B keypoint is
// claimed by at most one A (closest wins, ties to the lower A index), and a
// pair is kept only when the matched B keypoint warps back into A.
CorrespondenceSet build_correspondences(
    const std::vector<Eigen::Vector2d>& kpts_a,
    const std::vector<Eigen::Vector2d>& kpts_b, const WarpSpec& spec,
    double th_gt);

// Bilinear spread of a subpixel position onto its <= 4 surrounding pixels.
// Weights are positive and sum to 1; indices are flattened row-major.
struct SparseProb {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
  int count = 0;
};
SparseProb reprojection_probability_map(double u, double v, int h, int w);

}  // namespace rada
