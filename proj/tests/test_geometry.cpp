#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "core/errors.hpp"
#include "core/geometry.hpp"
#include "test_util.hpp"

using namespace rada;
using namespace rada::ad;

namespace {

Eigen::Matrix3d intrinsics(double f, int w, int h) {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = k(1, 1) = f;
  k(0, 2) = (w - 1) / 2.0;
  k(1, 2) = (h - 1) / 2.0;
  return k;
}

// Two cameras looking at the plane z = z0 of camera A. Depths are exact on
// the A side (constant) and analytic per-pixel on the B side, so round trips
// are limited only by bilinear interpolation of a smooth field.
WarpSpec plane_scene(int w, int h, double f, double z0,
                     const Eigen::Vector3d& axis_angle,
                     const Eigen::Vector3d& t_b) {
  Camera a, b;
  a.k = b.k = intrinsics(f, w, h);
  a.width = b.width = w;
  a.height = b.height = h;
  a.depth.assign(static_cast<size_t>(w) * h, z0);
  const double angle = axis_angle.norm();
  b.r = angle < 1e-12
            ? Eigen::Matrix3d::Identity()
            : Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
  b.t = t_b;
  const Eigen::Matrix3d r_ab = b.r;  // camera A is the world frame
  const Eigen::Vector3d t_ab = t_b;
  const Eigen::Vector3d c = r_ab.col(2);
  const Eigen::Matrix3d ki = b.k.inverse();
  b.depth.resize(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d r = ki * Eigen::Vector3d(x, y, 1.0);
      const double denom = c.dot(r);
      const double d = denom > 1e-9 ? (z0 + c.dot(t_ab)) / denom : 0.0;
      b.depth[static_cast<size_t>(y) * w + x] = d > 0 ? d : 0.0;
    }
  return WarpSpec::pose_depth(std::move(a), std::move(b));
}

// independent re-implementation of the matching rules for oracle comparison
CorrespondenceSet oracle_correspondences(const std::vector<Eigen::Vector2d>& ka,
                                         const std::vector<Eigen::Vector2d>& kb,
                                         const WarpSpec& spec, double th) {
  CorrespondenceSet out;
  out.th_gt = th;
  struct Cand {
    int i, j;
    double d;
    Eigen::Vector2d q;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < static_cast<int>(ka.size()); ++i) {
    auto q = warp_point(ka[static_cast<size_t>(i)], spec, true);
    if (!q) continue;
    int bj = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < static_cast<int>(kb.size()); ++j) {
      const double d = (kb[static_cast<size_t>(j)] - *q).norm();
      if (d < bd) {
        bd = d;
        bj = j;
      }
    }
    if (bj >= 0 && bd < th) cands.push_back({i, bj, bd, *q});
  }
  for (int j = 0; j < static_cast<int>(kb.size()); ++j) {
    const Cand* best = nullptr;
    for (const auto& c : cands)
      if (c.j == j && (!best || c.d < best->d || (c.d == best->d && c.i < best->i)))
        best = &c;
    if (!best) continue;
    auto back = warp_point(kb[static_cast<size_t>(j)], spec, false);
    if (!back) continue;
    Correspondence pair;
    pair.index_a = best->i;
    pair.index_b = j;
    pair.p_a = ka[static_cast<size_t>(best->i)];
    pair.p_b = kb[static_cast<size_t>(j)];
    pair.p_ab = best->q;
    pair.p_ba = *back;
    out.pairs.push_back(pair);
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const Correspondence& x, const Correspondence& y) {
              return x.index_a < y.index_a;
            });
  return out;
}

Eigen::Matrix3d mild_homography(Rng& rng) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 0) += rng.uniform(-0.08, 0.08);
  h(1, 1) += rng.uniform(-0.08, 0.08);
  h(0, 1) = rng.uniform(-0.05, 0.05);
  h(1, 0) = rng.uniform(-0.05, 0.05);
  h(0, 2) = rng.uniform(-4.0, 4.0);
  h(1, 2) = rng.uniform(-4.0, 4.0);
  h(2, 0) = rng.uniform(-1e-4, 1e-4);
  h(2, 1) = rng.uniform(-1e-4, 1e-4);
  return h;
}

}  // namespace

TEST_CASE("identity pose keeps points fixed") {
  Camera a, b;
  a.k = b.k = intrinsics(250, 64, 64);
  a.width = b.width = a.height = b.height = 64;
  a.depth.assign(64 * 64, 7.0);
  b.depth.assign(64 * 64, 7.0);
  WarpSpec spec = WarpSpec::pose_depth(a, b);
  for (double u : {0.0, 10.25, 31.5, 63.0}) {
    auto q = warp_point({u, 40.75}, spec);
    REQUIRE(q.has_value());
    CHECK(q->x() == doctest::Approx(u).epsilon(1e-12));
    CHECK(q->y() == doctest::Approx(40.75).epsilon(1e-12));
  }
}

TEST_CASE("identity homography keeps points fixed") {
  WarpSpec spec = WarpSpec::homography(Eigen::Matrix3d::Identity(), 32, 32, 32, 32);
  auto q = warp_point({12.3, 4.5}, spec);
  REQUIRE(q.has_value());
  CHECK(q->x() == doctest::Approx(12.3));
  CHECK(q->y() == doctest::Approx(4.5));
}

TEST_CASE("pose warp round trips within 1e-4 px") {
  Rng rng(71);
  int tested = 0;
  for (int s = 0; s < 5; ++s) {
    Eigen::Vector3d axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    axis *= rng.uniform(0.05, 0.15) / axis.norm();  // up to ~8.6 degrees
    Eigen::Vector3d t(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                      rng.uniform(-0.4, 0.4));
    WarpSpec spec = plane_scene(96, 96, 320, 10.0, axis, t);
    for (int i = 0; i < 200; ++i) {
      Eigen::Vector2d p(rng.uniform(2.0, 93.0), rng.uniform(2.0, 93.0));
      auto q = warp_point_raw(p, spec, true);
      if (!q) continue;
      auto back = warp_point_raw(*q, spec, false);
      if (!back) continue;
      ++tested;
      CHECK((*back - p).norm() < 1e-4);
    }
  }
  CHECK(tested > 500);
}

TEST_CASE("homography warp round trips within 1e-4 px") {
  Rng rng(72);
  int tested = 0;
  for (int s = 0; s < 5; ++s) {
    WarpSpec spec = WarpSpec::homography(mild_homography(rng), 96, 96, 96, 96);
    for (int i = 0; i < 200; ++i) {
      Eigen::Vector2d p(rng.uniform(0.0, 95.0), rng.uniform(0.0, 95.0));
      auto q = warp_point(p, spec, true);
      if (!q) continue;
      auto back = warp_point(*q, spec, false);
      if (!back) continue;
      ++tested;
      CHECK((*back - p).norm() < 1e-4);
    }
  }
  CHECK(tested > 700);
}

TEST_CASE("inconsistent depths are rejected by the round-trip gate") {
  Camera a, b;
  a.k = b.k = intrinsics(300, 96, 96);
  a.width = b.width = a.height = b.height = 96;
  a.depth.assign(96 * 96, 10.0);
  b.depth.assign(96 * 96, 3.0);  // wrong on purpose
  b.t = Eigen::Vector3d(0.5, 0, 0);
  WarpSpec spec = WarpSpec::pose_depth(a, b);
  const Eigen::Vector2d p(47.5, 47.5);
  CHECK(warp_point_raw(p, spec, true).has_value());
  CHECK_FALSE(warp_point(p, spec, true).has_value());
}

TEST_CASE("missing depth means out of view, not an error") {
  Camera a, b;
  a.k = b.k = intrinsics(300, 32, 32);
  a.width = b.width = a.height = b.height = 32;
  a.depth.assign(32 * 32, 5.0);
  a.depth[16 * 32 + 16] = 0.0;  // hole
  b.depth = a.depth;
  WarpSpec spec = WarpSpec::pose_depth(a, b);
  CHECK_FALSE(warp_point({16.0, 16.0}, spec).has_value());
  CHECK(warp_point({3.0, 3.0}, spec).has_value());
}

TEST_CASE("invalid rotations and homographies are rejected") {
  Camera a, b;
  a.width = b.width = a.height = b.height = 8;
  a.r(0, 0) = 2.0;
  CHECK_THROWS_AS((void)WarpSpec::pose_depth(a, b), Error);
  Eigen::Matrix3d sing = Eigen::Matrix3d::Zero();
  CHECK_THROWS_AS((void)WarpSpec::homography(sing, 8, 8, 8, 8), Error);
}

TEST_CASE("correspondences on identical grids under identity warp") {
  WarpSpec spec = WarpSpec::homography(Eigen::Matrix3d::Identity(), 40, 40, 40, 40);
  std::vector<Eigen::Vector2d> k;
  for (int y = 5; y < 40; y += 8)
    for (int x = 5; x < 40; x += 8) k.push_back({double(x), double(y)});
  CorrespondenceSet set = build_correspondences(k, k, spec, 5.0);
  REQUIRE(set.pairs.size() == k.size());
  for (size_t i = 0; i < set.pairs.size(); ++i) {
    CHECK(set.pairs[i].index_a == set.pairs[i].index_b);
    CHECK((set.pairs[i].p_b - set.pairs[i].p_ab).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("zero threshold yields no correspondences") {
  WarpSpec spec = WarpSpec::homography(Eigen::Matrix3d::Identity(), 40, 40, 40, 40);
  std::vector<Eigen::Vector2d> k = {{10, 10}, {20, 20}};
  CHECK(build_correspondences(k, k, spec, 0.0).pairs.empty());
}

TEST_CASE("correspondences match the exhaustive oracle") {
  Rng rng(73);
  for (int trial = 0; trial < 8; ++trial) {
    WarpSpec spec =
        trial % 2 == 0
            ? WarpSpec::homography(mild_homography(rng), 96, 96, 96, 96)
            : plane_scene(96, 96, 320, 10.0,
                          Eigen::Vector3d(0.02, rng.uniform(-0.08, 0.08), 0.01),
                          Eigen::Vector3d(rng.uniform(-0.6, 0.6), 0.2, 0.1));
    const int na = rng.uniform_int(40, 200), nb = rng.uniform_int(40, 200);
    std::vector<Eigen::Vector2d> ka, kb;
    for (int i = 0; i < na; ++i)
      ka.push_back({rng.uniform(1.0, 94.0), rng.uniform(1.0, 94.0)});
    for (int j = 0; j < nb; ++j)
      kb.push_back({rng.uniform(1.0, 94.0), rng.uniform(1.0, 94.0)});
    const double th = rng.uniform(2.0, 6.0);
    CorrespondenceSet got = build_correspondences(ka, kb, spec, th);
    CorrespondenceSet want = oracle_correspondences(ka, kb, spec, th);
    REQUIRE(got.pairs.size() == want.pairs.size());
    for (size_t i = 0; i < got.pairs.size(); ++i) {
      CHECK(got.pairs[i].index_a == want.pairs[i].index_a);
      CHECK(got.pairs[i].index_b == want.pairs[i].index_b);
      CHECK((got.pairs[i].p_ab - want.pairs[i].p_ab).norm() < 1e-12);
      CHECK((got.pairs[i].p_ba - want.pairs[i].p_ba).norm() < 1e-12);
      // gating invariant
      CHECK((got.pairs[i].p_b - got.pairs[i].p_ab).norm() < th);
    }
  }
}

TEST_CASE("one-to-one matching keeps the closest claim") {
  WarpSpec spec = WarpSpec::homography(Eigen::Matrix3d::Identity(), 40, 40, 40, 40);
  std::vector<Eigen::Vector2d> ka = {{10.0, 10.0}, {11.0, 10.0}};
  std::vector<Eigen::Vector2d> kb = {{10.4, 10.0}};
  CorrespondenceSet set = build_correspondences(ka, kb, spec, 5.0);
  REQUIRE(set.pairs.size() == 1);
  CHECK(set.pairs[0].index_a == 0);  // 0.4 px beats 0.6 px
  CHECK(set.pairs[0].index_b == 0);
}

TEST_CASE("probability map is one-hot at integer positions") {
  SparseProb p = reprojection_probability_map(7.0, 3.0, 10, 12);
  REQUIRE(p.count == 1);
  CHECK(p.index[0] == 3 * 12 + 7);
  CHECK(p.weight[0] == doctest::Approx(1.0));
}

TEST_CASE("probability map spreads quarter weights at the cell center") {
  SparseProb p = reprojection_probability_map(4.5, 6.5, 12, 12);
  REQUIRE(p.count == 4);
  for (int i = 0; i < 4; ++i) CHECK(p.weight[static_cast<size_t>(i)] == doctest::Approx(0.25));
}

TEST_CASE("probability map weights always sum to one") {
  Rng rng(74);
  for (int t = 0; t < 200; ++t) {
    const double u = rng.uniform(0.0, 11.0), v = rng.uniform(0.0, 9.0);
    SparseProb p = reprojection_probability_map(u, v, 10, 12);
    double s = 0;
    for (int i = 0; i < p.count; ++i) {
      CHECK(p.weight[static_cast<size_t>(i)] > 0.0);
      CHECK(p.index[static_cast<size_t>(i)] >= 0);
      CHECK(p.index[static_cast<size_t>(i)] < 120);
      s += p.weight[static_cast<size_t>(i)];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS((void)reprojection_probability_map(-0.1, 2.0, 10, 12), Error);
  CHECK_THROWS_AS((void)reprojection_probability_map(2.0, 9.5, 10, 12), Error);
}

TEST_CASE("differentiable warp agrees with the pointwise warp") {
  Rng rng(75);
  WarpSpec pd = plane_scene(96, 96, 320, 10.0, Eigen::Vector3d(0.03, -0.05, 0.02),
                            Eigen::Vector3d(0.4, -0.3, 0.15));
  WarpSpec hg = WarpSpec::homography(mild_homography(rng), 96, 96, 96, 96);
  for (const WarpSpec* spec : {&pd, &hg}) {
    std::vector<double> pts;
    const int n = 50;
    for (int i = 0; i < n; ++i) {
      pts.push_back(rng.uniform(3.0, 92.0));
      pts.push_back(rng.uniform(3.0, 92.0));
    }
    Var positions = constant(Shape{n, 2}, pts);
    WarpedPoints wp = warp_points(positions, *spec, true);
    REQUIRE(!wp.kept.empty());
    for (size_t m = 0; m < wp.kept.size(); ++m) {
      const int i = wp.kept[m];
      auto q = warp_point({pts[static_cast<size_t>(i) * 2], pts[static_cast<size_t>(i) * 2 + 1]},
                          *spec, true);
      REQUIRE(q.has_value());
      CHECK(wp.positions->v()[m * 2] == doctest::Approx(q->x()).epsilon(1e-12));
      CHECK(wp.positions->v()[m * 2 + 1] == doctest::Approx(q->y()).epsilon(1e-12));
    }
  }
}

TEST_CASE("warp gradients match finite differences") {
  Rng rng(76);
  WarpSpec pd = plane_scene(96, 96, 320, 10.0, Eigen::Vector3d(0.02, -0.04, 0.01),
                            Eigen::Vector3d(0.3, -0.2, 0.1));
  WarpSpec hg = WarpSpec::homography(mild_homography(rng), 96, 96, 96, 96);
  std::vector<double> pts;
  for (int i = 0; i < 6; ++i) {
    pts.push_back(rng.uniform(20.0, 75.0) + 0.37);
    pts.push_back(rng.uniform(20.0, 75.0) + 0.41);
  }
  for (const WarpSpec* spec : {&pd, &hg}) {
    Var positions = leaf(Shape{6, 2}, pts);
    CHECK(testutil::max_grad_error({positions}, [&] {
            WarpedPoints wp = warp_points(positions, *spec, true);
            REQUIRE(static_cast<int>(wp.kept.size()) == 6);
            return testutil::wsum(wp.positions);
          }) < 1e-4);
  }
}
