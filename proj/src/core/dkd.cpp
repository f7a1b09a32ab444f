#include "core/dkd.hpp"

#include <algorithm>
#include <numeric>

#include "core/errors.hpp"

namespace rada {

using namespace ad;

Detection detect_keypoints(const Var& score_map, const DkdConfig& cfg) {
  check_arg(score_map && score_map->shape.ndim() == 2, "detect: score map must be (H,W)");
  check_arg(cfg.radius >= 1, "detect: radius must be >= 1");
  check_arg(cfg.top_k >= 1, "detect: top_k must be >= 1");
  check_arg(cfg.temperature > 0, "detect: temperature must be positive");
  const int h = score_map->shape[0], w = score_map->shape[1];
  const int r = cfg.radius;
  const double* s = score_map->v();

  std::vector<std::pair<int, int>> cells;  // (x,y)
  for (int y = r; y < h - r; ++y) {
    for (int x = r; x < w - r; ++x) {
      const double s0 = s[y * w + x];
      if (s0 <= cfg.score_threshold) continue;
      bool is_max = true;
      for (int dy = -r; dy <= r && is_max; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (s[(y + dy) * w + (x + dx)] >= s0) {
            is_max = false;
            break;
          }
        }
      if (is_max) cells.emplace_back(x, y);
    }
  }

  Detection det;
  if (cells.empty()) {
    det.positions = constant(Shape{0, 2});
    det.scores = constant(Shape{0});
    return det;
  }

  const int n = static_cast<int>(cells.size());
  const int side = 2 * r + 1, patch = side * side;
  std::vector<int> rows(static_cast<size_t>(n) * patch);
  std::vector<int> colixs(static_cast<size_t>(n) * patch);
  std::vector<double> du(patch), dv(patch), cx(n), cy(n);
  for (int k = 0; k < patch; ++k) {
    du[k] = k % side - r;
    dv[k] = k / side - r;
  }
  for (int i = 0; i < n; ++i) {
    cx[i] = cells[i].first;
    cy[i] = cells[i].second;
    for (int k = 0; k < patch; ++k) {
      rows[i * patch + k] = cells[i].second + static_cast<int>(dv[k]);
      colixs[i * patch + k] = cells[i].first + static_cast<int>(du[k]);
    }
  }

  Var patches = reshape(gather_elements(score_map, std::move(rows), std::move(colixs)),
                        Shape{n, patch});
  Var weights = softmax_axis1(mul_scalar(patches, 1.0 / cfg.temperature));
  Var off_u = sum_axis1(mul_rowvec(weights, constant(Shape{patch}, du)));
  Var off_v = sum_axis1(mul_rowvec(weights, constant(Shape{patch}, dv)));
  Var u = add(constant(Shape{n}, std::move(cx)), off_u);
  Var v = add(constant(Shape{n}, std::move(cy)), off_v);
  Var pos = concat_cols({reshape(u, Shape{n, 1}), reshape(v, Shape{n, 1})});
  Var sc = reshape(grid_sample(reshape(score_map, Shape{h, w, 1}), pos),
                   Shape{n});

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const double* sv = sc->v();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sv[a] > sv[b]; });
  if (n > cfg.top_k) order.resize(static_cast<size_t>(cfg.top_k));
  const int keep = static_cast<int>(order.size());

  det.cells.reserve(order.size());
  for (int i : order) det.cells.push_back(cells[static_cast<size_t>(i)]);
  det.positions = gather_rows(pos, order);
  det.scores = reshape(gather_rows(reshape(sc, Shape{n, 1}), std::move(order)),
                       Shape{keep});
  return det;
}

Var sample_descriptors(const Var& descriptor_map, const Var& positions) {
  check_arg(descriptor_map && descriptor_map->shape.ndim() == 3,
            "sample_descriptors: map must be (H,W,C)");
  check_arg(positions && positions->shape.ndim() == 2 && positions->shape[1] == 2,
            "sample_descriptors: positions must be (N,2)");
  const int h = descriptor_map->shape[0], w = descriptor_map->shape[1];
  const int c = descriptor_map->shape[2];
  const int n = positions->shape[0];
  for (int i = 0; i < n; ++i) {
    const double u = positions->v()[i * 2], v = positions->v()[i * 2 + 1];
    check_arg(u >= 0 && u <= w - 1 && v >= 0 && v <= h - 1,
              "sample_descriptors: position out of bounds");
  }
  if (n == 0) return constant(Shape{0, c});
  return l2_normalize_rows(grid_sample(descriptor_map, positions));
}

std::vector<Keypoint> to_keypoints(const Detection& det) {
  std::vector<Keypoint> out(static_cast<size_t>(det.count()));
  for (int i = 0; i < det.count(); ++i) {
    out[static_cast<size_t>(i)] = {det.positions->v()[i * 2],
                                   det.positions->v()[i * 2 + 1],
                                   det.scores->v()[i]};
  }
  return out;
}

}  // namespace rada
