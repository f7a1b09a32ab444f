#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "core/errors.hpp"
#include "core/tensor.hpp"
#include "test_util.hpp"

using namespace rada;
using namespace rada::ad;
using testutil::max_grad_error;
using testutil::rand_leaf;
using testutil::wsum;

TEST_CASE("shape basics") {
  Shape s{2, 3, 4};
  CHECK(s.ndim() == 3);
  CHECK(s.numel() == 24);
  CHECK(s == Shape{2, 3, 4});
  CHECK_FALSE(s == Shape{2, 3});
}

TEST_CASE("matmul values") {
  Var a = constant(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Var b = constant(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
  Var y = matmul(a, b);
  REQUIRE(y->shape == Shape{2, 2});
  CHECK(y->v()[0] == doctest::Approx(58));
  CHECK(y->v()[1] == doctest::Approx(64));
  CHECK(y->v()[2] == doctest::Approx(139));
  CHECK(y->v()[3] == doctest::Approx(154));

  Var bt = constant(Shape{2, 3}, {7, 9, 11, 8, 10, 12});
  Var y2 = matmul_bt(a, bt);
  for (int i = 0; i < 4; ++i) CHECK(y2->v()[i] == doctest::Approx(y->v()[i]));
}

TEST_CASE("softmax rows sum to one and match logsoftmax") {
  Rng rng(3);
  Var a = rand_leaf(Shape{4, 7}, rng, -3, 3);
  Var sm = softmax_axis1(a);
  Var lsm = logsoftmax_axis1(a);
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 7; ++j) {
      s += sm->v()[i * 7 + j];
      CHECK(std::log(sm->v()[i * 7 + j]) ==
            doctest::Approx(lsm->v()[i * 7 + j]).epsilon(1e-9));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Var sm0 = softmax_axis0(a);
  for (int j = 0; j < 7; ++j) {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += sm0->v()[i * 7 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("elementwise gradients") {
  Rng rng(11);
  Var a = rand_leaf(Shape{3, 5}, rng, 0.2, 2.0);
  Var b = rand_leaf(Shape{3, 5}, rng, 0.3, 1.5);
  auto chk = [&](const std::function<Var()>& f) {
    CHECK(max_grad_error({a, b}, f) < 1e-6);
  };
  chk([&] { return wsum(a + b); });
  chk([&] { return wsum(a - b); });
  chk([&] { return wsum(a * b); });
  chk([&] { return wsum(a / b); });
  chk([&] { return wsum(-a); });
  chk([&] { return wsum(a + 0.7); });
  chk([&] { return wsum(a * -1.3); });
  chk([&] { return wsum(relu(a - 1.0)); });
  chk([&] { return wsum(sigmoid(a * b)); });
  chk([&] { return wsum(ad::exp(a)); });
  chk([&] { return wsum(ad::log(a)); });
  chk([&] { return wsum(ad::sqrt(a)); });
  chk([&] { return wsum(square(a)); });
  chk([&] { return wsum(ad::abs(a)); });
  chk([&] { return wsum(ad::sin(a * 2.0)); });
  chk([&] { return wsum(ad::cos(a)); });
  chk([&] { return wsum(clamp(a, 0.5, 1.6)); });
}

TEST_CASE("reduction and softmax gradients") {
  Rng rng(12);
  Var a = rand_leaf(Shape{4, 6}, rng, -2, 2);
  CHECK(max_grad_error({a}, [&] { return sum(a); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return mean(square(a)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return wsum(sum_axis0(a)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return wsum(sum_axis1(a)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return wsum(mean_axis0(a)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return wsum(softmax_axis0(a)); }) < 1e-5);
  CHECK(max_grad_error({a}, [&] { return wsum(softmax_axis1(a)); }) < 1e-5);
  CHECK(max_grad_error({a}, [&] { return wsum(logsoftmax_axis1(a)); }) < 1e-5);
}

TEST_CASE("linear algebra gradients") {
  Rng rng(13);
  Var a = rand_leaf(Shape{3, 4}, rng);
  Var b = rand_leaf(Shape{4, 2}, rng);
  Var bt = rand_leaf(Shape{2, 4}, rng);
  Var v = rand_leaf(Shape{4}, rng);
  Var cv = rand_leaf(Shape{3}, rng);
  CHECK(max_grad_error({a, b}, [&] { return wsum(matmul(a, b)); }) < 1e-6);
  CHECK(max_grad_error({a, bt}, [&] { return wsum(matmul_bt(a, bt)); }) < 1e-6);
  CHECK(max_grad_error({a, v}, [&] { return wsum(add_rowvec(a, v)); }) < 1e-6);
  CHECK(max_grad_error({a, v}, [&] { return wsum(mul_rowvec(a, v)); }) < 1e-6);
  CHECK(max_grad_error({a, cv}, [&] { return wsum(mul_colvec(a, cv)); }) < 1e-6);
}

TEST_CASE("shape op gradients") {
  Rng rng(14);
  Var a = rand_leaf(Shape{4, 6}, rng);
  Var b = rand_leaf(Shape{4, 3}, rng);
  CHECK(max_grad_error({a}, [&] {
          return wsum(reshape(a, Shape{2, 12}));
        }) < 1e-6);
  CHECK(max_grad_error({a, b}, [&] {
          return wsum(concat_cols({a, b}));
        }) < 1e-6);
  CHECK(max_grad_error({a, b}, [&] {
          return wsum(concat_rows({reshape(a, Shape{8, 3}), b}));
        }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return wsum(slice_cols(a, 1, 5)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] {
          return wsum(gather_rows(a, {3, 0, 0, 2}));
        }) < 1e-6);
  CHECK(max_grad_error({a}, [&] {
          return wsum(gather_elements(a, {0, 1, 1, 3}, {5, 2, 2, 0}));
        }) < 1e-6);
}

TEST_CASE("reshape aliases the value buffer") {
  Var a = leaf(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Var r = reshape(a, Shape{3, 2});
  CHECK(r->val == a->val);
  CHECK(r->grad == a->grad);
  CHECK(r->shape == Shape{3, 2});
}

TEST_CASE("conv2d values: identity kernel and padding") {
  // 1x1 kernel copies channels through
  Var x = leaf(Shape{2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Var w = constant(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  Var b = constant(Shape{2}, 0.0);
  Var y = conv2d(x, w, b);
  for (int i = 0; i < 8; ++i) CHECK(y->v()[i] == doctest::Approx(x->v()[i]));

  // 3x3 all-ones kernel on all-ones input counts the in-bounds window
  Var x1 = constant(Shape{3, 3, 1}, 1.0);
  Var w1 = constant(Shape{3, 3, 1, 1}, 1.0);
  Var b1 = constant(Shape{1}, 0.0);
  Var y1 = conv2d(x1, w1, b1);
  CHECK(y1->v()[4] == doctest::Approx(9));  // center
  CHECK(y1->v()[0] == doctest::Approx(4));  // corner
  CHECK(y1->v()[1] == doctest::Approx(6));  // edge
}

TEST_CASE("conv2d gradients") {
  Rng rng(15);
  Var x = rand_leaf(Shape{5, 4, 2}, rng);
  Var w = rand_leaf(Shape{3, 3, 2, 3}, rng, -0.5, 0.5);
  Var b = rand_leaf(Shape{3}, rng, -0.2, 0.2);
  CHECK(max_grad_error({x, w, b}, [&] { return wsum(conv2d(x, w, b)); }) <
        1e-6);
}

TEST_CASE("maxpool2d values and gradients") {
  Var x = leaf(Shape{2, 4, 1}, {1, 5, 2, 0, 3, 4, 7, 6});
  Var y = maxpool2d(x, 2);
  REQUIRE(y->shape == Shape{1, 2, 1});
  CHECK(y->v()[0] == doctest::Approx(5));
  CHECK(y->v()[1] == doctest::Approx(7));

  Rng rng(16);
  Var x2 = rand_leaf(Shape{4, 6, 3}, rng);
  CHECK(max_grad_error({x2}, [&] { return wsum(maxpool2d(x2, 2)); }) < 1e-6);
}

TEST_CASE("bilinear upsample keeps constants and is identity at same size") {
  Var c = constant(Shape{3, 5, 2}, 0.37);
  Var up = upsample_bilinear(c, 9, 20);
  for (std::int64_t i = 0; i < up->numel(); ++i)
    CHECK(up->v()[i] == doctest::Approx(0.37));

  Rng rng(17);
  Var x = rand_leaf(Shape{3, 4, 2}, rng);
  Var same = upsample_bilinear(x, 3, 4);
  for (std::int64_t i = 0; i < x->numel(); ++i)
    CHECK(same->v()[i] == doctest::Approx(x->v()[i]).epsilon(1e-12));

  CHECK(max_grad_error({x}, [&] {
          return wsum(upsample_bilinear(x, 7, 9));
        }) < 1e-6);
}

TEST_CASE("grid_sample values at integer and midpoint coordinates") {
  Var map = leaf(Shape{2, 3, 1}, {0, 1, 2, 10, 11, 12});
  Var pts = constant(Shape{3, 2}, {2, 0, 0, 1, 0.5, 0});
  Var y = grid_sample(map, pts);
  REQUIRE(y->shape == Shape{3, 1});
  CHECK(y->v()[0] == doctest::Approx(2));
  CHECK(y->v()[1] == doctest::Approx(10));
  CHECK(y->v()[2] == doctest::Approx(0.5));
}

TEST_CASE("grid_sample gradients in map and points") {
  Rng rng(18);
  Var map = rand_leaf(Shape{5, 6, 3}, rng);
  std::vector<double> p;
  for (int i = 0; i < 4; ++i) {
    p.push_back(rng.uniform(0.3, 4.6));  // u in [0, W-1]
    p.push_back(rng.uniform(0.3, 3.6));  // v in [0, H-1]
    // keep away from integer grid lines where bilinear has kinks
    if (std::abs(p[p.size() - 2] - std::round(p[p.size() - 2])) < 0.2)
      p[p.size() - 2] += 0.25;
    if (std::abs(p.back() - std::round(p.back())) < 0.2) p.back() += 0.25;
  }
  Var pts = leaf(Shape{4, 2}, p);
  CHECK(max_grad_error({map, pts}, [&] {
          return wsum(grid_sample(map, pts));
        }) < 1e-5);
}

TEST_CASE("l2_normalize_rows unit norms and gradients") {
  Rng rng(19);
  Var a = rand_leaf(Shape{3, 8}, rng, 0.2, 1.5);
  Var n = l2_normalize_rows(a);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 8; ++j) s += n->v()[i * 8 + j] * n->v()[i * 8 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(max_grad_error({a}, [&] { return wsum(l2_normalize_rows(a)); }) <
        1e-5);
}

TEST_CASE("gradient_reversal forwards identity, backwards negative scale") {
  Rng rng(20);
  Var a = rand_leaf(Shape{2, 3}, rng);
  Var y = gradient_reversal(a, 1.7);
  for (std::int64_t i = 0; i < a->numel(); ++i)
    CHECK(y->v()[i] == a->v()[i]);

  zero_grad(a);
  backprop(wsum(gradient_reversal(a, 1.7)));
  std::vector<double> g_rev(a->g(), a->g() + a->numel());
  zero_grad(a);
  backprop(wsum(a));
  for (std::int64_t i = 0; i < a->numel(); ++i)
    CHECK(g_rev[i] == doctest::Approx(-1.7 * a->g()[i]).epsilon(1e-12));
}

TEST_CASE("detach blocks gradient flow") {
  Var a = leaf(Shape{2}, {1.0, 2.0});
  zero_grad(a);
  backprop(sum(detach(a) * a));  // d/da of detach(a)*a = detach(a)
  CHECK(a->g()[0] == doctest::Approx(1.0));
  CHECK(a->g()[1] == doctest::Approx(2.0));
}

TEST_CASE("diamond graph accumulates both paths") {
  Var x = leaf(Shape{1}, {3.0});
  zero_grad(x);
  backprop(sum(x * x + x));
  CHECK(x->g()[0] == doctest::Approx(7.0));  // 2x + 1
}

TEST_CASE("leaf gradients accumulate across backprops") {
  Var x = leaf(Shape{1}, {2.0});
  zero_grad(x);
  backprop(sum(square(x)));
  backprop(sum(square(x)));
  CHECK(x->g()[0] == doctest::Approx(8.0));  // 2 * (2x)
  zero_grad(x);
  CHECK(x->g()[0] == 0.0);
}

TEST_CASE("no-grad scope skips graph construction") {
  Var a = leaf(Shape{2, 2}, {1, 2, 3, 4});
  NoGradScope ng;
  Var y = sigmoid(a * a);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
  CHECK(y->grad == nullptr);
}

TEST_CASE("shape errors are rejected") {
  Var a = constant(Shape{2, 3}, 1.0);
  Var b = constant(Shape{3, 2}, 1.0);
  CHECK_THROWS_AS((void)add(a, b), Error);
  CHECK_THROWS_AS((void)matmul(a, a), Error);
  CHECK_THROWS_AS((void)slice_cols(a, 2, 2), Error);
  CHECK_THROWS_AS((void)gather_rows(a, {5}), Error);
  CHECK_THROWS_AS((void)maxpool2d(constant(Shape{3, 3, 1}, 0.0), 2), Error);
}

TEST_CASE("allocation counter tracks engine buffers") {
  reset_allocated_doubles();
  Var a = constant(Shape{10, 10}, 0.0);
  CHECK(allocated_doubles() >= 100);
}
