#include "core/matching.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "core/errors.hpp"

namespace rada {

namespace {

constexpr char kMagic[4] = {'R', 'A', 'D', 'A'};
constexpr std::uint32_t kFormat = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  std::uint32_t u32() {
    if (pos + 4 > buf.size())
      throw Error(ErrorCode::io, "feature file: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

void check_features(const FeatureSet& f, const char* who) {
  check_arg(f.dim > 0 || f.keypoints.empty(),
            std::string(who) + ": descriptor width must be positive");
  check_arg(f.descriptors.size() ==
                f.keypoints.size() * static_cast<size_t>(std::max(f.dim, 0)),
            std::string(who) + ": descriptor buffer size mismatch");
}

double unit_distance(double cosine) {
  return std::sqrt(std::max(0.0, 2.0 - 2.0 * cosine));
}

}  // namespace

void write_features(const FeatureSet& features, const std::string& path) {
  check_features(features, "write_features");
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kFormat);
  put_u32(out, static_cast<std::uint32_t>(features.count()));
  put_u32(out, static_cast<std::uint32_t>(features.dim));
  for (const Keypoint& k : features.keypoints) {
    put_f32(out, static_cast<float>(k.u));
    put_f32(out, static_cast<float>(k.v));
  }
  for (const Keypoint& k : features.keypoints)
    put_f32(out, static_cast<float>(k.score));
  for (double d : features.descriptors) put_f32(out, static_cast<float>(d));
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::io, "feature file: cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::io, "feature file: write failed " + path);
}

FeatureSet read_features(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::io, "feature file: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(file)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::io, "feature file: bad magic in " + path);
  ByteReader r(buf);
  r.pos = 4;
  const std::uint32_t format = r.u32();
  if (format != kFormat)
    throw Error(ErrorCode::io, "feature file: unsupported format " +
                                   std::to_string(format) + " in " + path);
  const std::uint32_t n = r.u32();
  const std::uint32_t dim = r.u32();
  const size_t expected = 16 + 4ull * n * (3 + dim);
  if (buf.size() != expected)
    throw Error(ErrorCode::io, "feature file: size mismatch in " + path);
  FeatureSet f;
  f.dim = static_cast<int>(dim);
  f.keypoints.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    f.keypoints[i].u = r.f32();
    f.keypoints[i].v = r.f32();
  }
  for (std::uint32_t i = 0; i < n; ++i) f.keypoints[i].score = r.f32();
  f.descriptors.resize(static_cast<size_t>(n) * dim);
  for (double& d : f.descriptors) d = r.f32();
  return f;
}

MatchSet match_features(const FeatureSet& a, const FeatureSet& b,
                        const MatchTest& test) {
  check_features(a, "match_features");
  check_features(b, "match_features");
  MatchSet out;
  if (a.count() == 0 || b.count() == 0) return out;
  check_arg(a.dim == b.dim, "match_features: descriptor widths differ");
  if (test.kind != MatchTest::Kind::none)
    check_arg(test.threshold > 0, "match_features: threshold must be positive");

  using MatrixRM =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const MatrixRM> da(a.descriptors.data(), a.count(), a.dim);
  const Eigen::Map<const MatrixRM> db(b.descriptors.data(), b.count(), b.dim);
  const MatrixRM sim = da * db.transpose();

  const int na = a.count(), nb = b.count();
  std::vector<int> best_b(na, -1);
  std::vector<double> best_b_sim(na), second_b_sim(na);
  for (int i = 0; i < na; ++i) {
    double s1 = -2, s2 = -2;
    int j1 = -1;
    for (int j = 0; j < nb; ++j) {
      const double s = sim(i, j);
      if (s > s1) {
        s2 = s1;
        s1 = s;
        j1 = j;
      } else if (s > s2) {
        s2 = s;
      }
    }
    best_b[i] = j1;
    best_b_sim[i] = s1;
    second_b_sim[i] = s2;
  }
  std::vector<int> best_a(nb, -1);
  std::vector<double> second_a_sim(nb);
  for (int j = 0; j < nb; ++j) {
    double s1 = -2, s2 = -2;
    int i1 = -1;
    for (int i = 0; i < na; ++i) {
      const double s = sim(i, j);
      if (s > s1) {
        s2 = s1;
        s1 = s;
        i1 = i;
      } else if (s > s2) {
        s2 = s;
      }
    }
    best_a[j] = i1;
    second_a_sim[j] = s2;
  }

  for (int i = 0; i < na; ++i) {
    const int j = best_b[i];
    if (j < 0 || best_a[j] != i) continue;
    const double cosine = best_b_sim[i];
    if (test.kind == MatchTest::Kind::ratio) {
      const double d1 = unit_distance(cosine);
      const double ra =
          second_b_sim[i] > -2 ? unit_distance(second_b_sim[i]) : -1;
      const double rb =
          second_a_sim[j] > -2 ? unit_distance(second_a_sim[j]) : -1;
      // a side with no second neighbor imposes no constraint
      if (ra > 0 && d1 > test.threshold * ra) continue;
      if (rb > 0 && d1 > test.threshold * rb) continue;
    } else if (test.kind == MatchTest::Kind::distance) {
      if (unit_distance(cosine) > test.threshold) continue;
    }
    out.matches.push_back({i, j, cosine});
  }
  return out;
}

MmaCurve mma_curve(const MatchSet& matches, const FeatureSet& a,
                   const FeatureSet& b, const WarpSpec& spec) {
  check_features(a, "mma_curve");
  check_features(b, "mma_curve");
  MmaCurve curve;
  curve.num_features_a = a.count();
  curve.num_features_b = b.count();
  curve.num_matches = static_cast<int>(matches.matches.size());
  if (curve.num_matches == 0) return curve;
  std::array<int, 10> correct{};
  for (const Match& m : matches.matches) {
    check_arg(m.index_a >= 0 && m.index_a < a.count() && m.index_b >= 0 &&
                  m.index_b < b.count(),
              "mma_curve: match index out of range");
    const Keypoint& ka = a.keypoints[m.index_a];
    const Keypoint& kb = b.keypoints[m.index_b];
    const auto q = warp_point(Eigen::Vector2d(ka.u, ka.v), spec);
    if (!q) continue;  // no ground truth: counted incorrect
    const double err = (*q - Eigen::Vector2d(kb.u, kb.v)).norm();
    for (int t = 1; t <= 10; ++t)
      if (err <= t) ++correct[t - 1];
  }
  for (int t = 0; t < 10; ++t)
    curve.accuracy[t] = static_cast<double>(correct[t]) / curve.num_matches;
  return curve;
}

std::vector<MatchLine> match_lines(const MatchSet& matches,
                                   const FeatureSet& a, const FeatureSet& b,
                                   const WarpSpec* spec, double threshold) {
  check_features(a, "match_lines");
  check_features(b, "match_lines");
  std::vector<MatchLine> lines;
  lines.reserve(matches.matches.size());
  for (const Match& m : matches.matches) {
    check_arg(m.index_a >= 0 && m.index_a < a.count() && m.index_b >= 0 &&
                  m.index_b < b.count(),
              "match_lines: match index out of range");
    const Keypoint& ka = a.keypoints[m.index_a];
    const Keypoint& kb = b.keypoints[m.index_b];
    MatchLine line;
    line.ua = ka.u;
    line.va = ka.v;
    line.ub = kb.u;
    line.vb = kb.v;
    line.color = MatchLine::Color::unknown;
    if (spec) {
      const auto q = warp_point(Eigen::Vector2d(ka.u, ka.v), *spec);
      if (q) {
        const double err = (*q - Eigen::Vector2d(kb.u, kb.v)).norm();
        line.color = err <= threshold ? MatchLine::Color::correct
                                      : MatchLine::Color::incorrect;
      }
    }
    lines.push_back(line);
  }
  return lines;
}

}  // namespace rada
