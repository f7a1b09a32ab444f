#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/image.hpp"

namespace rada {

// Photometric-only transform: per-channel gain, gamma curve, additive
// Gaussian noise, clamp to [0,1]. Geometry is untouched, so ground-truth
// warps survive it unchanged.
struct DomainShiftParams {
  double gamma = 1.0;
  double brightness_scale = 1.0;
  std::array<double, 3> color_gains{1.0, 1.0, 1.0};
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  // dimmed and blue-shifted, with mild jitter drawn from the seed
  static DomainShiftParams night(std::uint64_t seed);
};

Image domain_shift(const Image& image, const DomainShiftParams& params);

// Procedural test card: smooth gradient background layered with random
// rectangles, disks, and sinusoidal gratings, lightly blurred.
Image synth_base_image(int height, int width, std::uint64_t seed);

struct SynthPairConfig {
  int crop = 480;  // output side length, must be divisible by 32
  int retry_budget = 20;
  double min_overlap = 0.3, max_overlap = 1.0;
  double max_rotation = 0.35;      // radians; all magnitudes are +- bounds
  double max_scale_jitter = 0.15;  // scale drawn from [1-j, 1+j]
  double max_perspective = 1e-4;   // homography bottom-row entries
  double max_translation = 0.25;   // fraction of the crop side
  double pose_depth_probability = 0.5;
  bool apply_domain_shift = true;
};

struct TrainSample {
  Image image_a;  // source domain
  Image image_b;  // warped view, photometrically shifted target domain
  // maps image_a pixel coordinates to image_b
  WarpSpec spec =
      WarpSpec::homography(Eigen::Matrix3d::Identity(), 1, 1, 1, 1);
  std::array<int, 2> domain_labels{0, 1};
  double overlap = 0.0;
};

// Fraction of source pixels (sampled on a stride grid) whose warp lands
// inside the destination view.
double overlap_fraction(const WarpSpec& spec, int stride = 1);

// Crops a view from the base, draws a bounded random homography or a
// planar-scene camera motion, renders the second view from the base, and
// applies the night shift. Redraws until the overlap gate passes; a spent
// retry budget yields nullopt with one line on `log`. Deterministic in
// (base, seed, config).
std::optional<TrainSample> synth_pair(const Image& base, std::uint64_t seed,
                                      const SynthPairConfig& config,
                                      std::ostream* log = nullptr);

// Manifest: one record per line, fields separated by whitespace:
//   image_path k[9] r[9] t[3] depth_path
// (intrinsics and rotation row-major, rotation world-to-camera). Records
// pair up in file order; each complete pair yields two samples, one per
// direction. Malformed or invalid records are skipped with a diagnostic on
// `log`; an unreadable manifest throws. Relative paths resolve against the
// manifest's directory. Images are center-cropped to side multiples of 32
// with intrinsics shifted to match.
std::vector<TrainSample> load_external_pairs(const std::string& manifest_path,
                                             std::ostream* log = nullptr);

// Ground-truth warp serialization used between CLI invocations. Pose+depth
// specs write the two depth rasters next to `path` as PFM files.
void write_warp_file(const WarpSpec& spec, const std::string& path);
WarpSpec read_warp_file(const std::string& path);

}  // namespace rada
