#pragma once

#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace rada {

using ad::Var;

struct Keypoint {
  double u = 0, v = 0;  // x right, y down, origin at top-left pixel center
  double score = 0;
};

struct DkdConfig {
  int radius = 2;              // NMS window and refinement patch half-size
  int top_k = 400;             // keypoint budget (use 5000 for evaluation)
  double score_threshold = 0.2;
  double temperature = 0.1;    // softargmax sharpness
};

// Keypoints with the autodiff graph still attached: positions come from
// softargmax over score patches and scores from bilinear resampling, so both
// carry gradients back into the score map.
struct Detection {
  Var positions;  // (N,2) as (u,v)
  Var scores;     // (N)
  std::vector<std::pair<int, int>> cells;  // integer (x,y) candidates
  int count() const { return static_cast<int>(cells.size()); }
};

// NMS (strict maximum in the (2r+1)^2 window, ties discarded, threshold
// applied first) followed by softargmax refinement. Candidates are restricted
// to cells at least `radius` away from the border so every refinement patch
// is fully inside the map. Result is sorted by refined score, descending,
// truncated to top_k. An empty result is valid.
Detection detect_keypoints(const Var& score_map, const DkdConfig& cfg);

// Bilinear sample of the descriptor map at each position, re-normalized to
// unit length. Differentiable in the map and the positions.
Var sample_descriptors(const Var& descriptor_map, const Var& positions);

std::vector<Keypoint> to_keypoints(const Detection& det);

}  // namespace rada
