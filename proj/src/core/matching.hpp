#pragma once

#include <array>
#include <string>
#include <vector>

#include "core/dkd.hpp"
#include "core/geometry.hpp"
#include "core/image.hpp"

namespace rada {

struct FeatureSet {
  std::vector<Keypoint> keypoints;
  int dim = 0;
  std::vector<double> descriptors;  // count x dim row-major, unit rows

  int count() const { return static_cast<int>(keypoints.size()); }
  const double* row(int i) const {
    return descriptors.data() + static_cast<size_t>(i) * dim;
  }
};

// Little-endian binary container: magic "RADA", then u32 format = 1,
// u32 keypoint count, u32 descriptor width, then f32 payload: N x (u,v),
// N scores, N x dim descriptors.
void write_features(const FeatureSet& features, const std::string& path);
FeatureSet read_features(const std::string& path);

struct MatchTest {
  enum class Kind { none, ratio, distance };
  Kind kind = Kind::none;
  double threshold = 0.0;

  static MatchTest none() { return {}; }
  // reject when nearest/second-nearest descriptor distance exceeds r,
  // checked from both sides so matching stays symmetric
  static MatchTest ratio(double r = 0.9) { return {Kind::ratio, r}; }
  // reject when the matched descriptor distance exceeds d
  static MatchTest distance(double d = 0.7) { return {Kind::distance, d}; }
};

struct Match {
  int index_a = -1, index_b = -1;
  double similarity = 0.0;  // cosine
};

struct MatchSet {
  std::vector<Match> matches;  // ascending index_a
};

// Mutual nearest neighbors under cosine similarity; ties resolve to the
// lowest index. Descriptor distance for the tests is the Euclidean distance
// between unit vectors, monotone in cosine.
MatchSet match_features(const FeatureSet& a, const FeatureSet& b,
                        const MatchTest& test = MatchTest::none());

struct MmaCurve {
  std::array<double, 10> accuracy{};  // pixel thresholds 1..10
  int num_features_a = 0, num_features_b = 0, num_matches = 0;
  double mma3() const { return accuracy[2]; }
};

// A match counts as correct at threshold t iff its source keypoint warps
// into the destination view and lands within t pixels of the matched
// keypoint; matches without ground truth count as incorrect.
MmaCurve mma_curve(const MatchSet& matches, const FeatureSet& a,
                   const FeatureSet& b, const WarpSpec& spec);

// Plot classification: green within `threshold` pixels, red beyond, blue
// when the warp gives no ground truth there. Null spec -> all blue.
std::vector<MatchLine> match_lines(const MatchSet& matches,
                                   const FeatureSet& a, const FeatureSet& b,
                                   const WarpSpec* spec,
                                   double threshold = 5.0);

}  // namespace rada
