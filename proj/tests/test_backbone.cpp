#include <doctest.h>

#include <cmath>

#include "core/backbone.hpp"
#include "core/errors.hpp"
#include "test_util.hpp"

using namespace rada;
using namespace rada::ad;

namespace {

Var random_image(int h, int w, Rng& rng) {
  return constant(Shape{h, w, 3}, testutil::rand_vec(h * w * 3, rng, 0.0, 1.0));
}

Backbone make_net(nn::ParamStore& ps, int dim = 16, std::uint64_t seed = 7) {
  Rng rng(seed);
  BackboneConfig cfg;
  cfg.dim = dim;
  return Backbone(ps, "backbone", cfg, rng);
}

}  // namespace

TEST_CASE("pyramid and map shapes across input sizes") {
  nn::ParamStore ps;
  Backbone net = make_net(ps);
  Rng rng(1);
  NoGradScope ng;
  for (auto [h, w] : {std::pair{32, 32}, {64, 32}, {96, 64}}) {
    Var img = random_image(h, w, rng);
    Pyramid pyr = net.encode(img);
    CHECK(pyr.f1->shape == Shape{h, w, 32});
    CHECK(pyr.f2->shape == Shape{h / 2, w / 2, 64});
    CHECK(pyr.f3->shape == Shape{h / 8, w / 8, 128});
    CHECK(pyr.f4->shape == Shape{h / 32, w / 32, 128});
    Var agg = net.aggregate(pyr);
    CHECK(agg->shape == Shape{h, w, Backbone::kAggregatedChannels});
    ScoreDescriptorMaps maps = net.head(agg);
    CHECK(maps.score->shape == Shape{h, w});
    CHECK(maps.descriptors->shape == Shape{h, w, 16});
  }
}

TEST_CASE("descriptors are unit rows and scores lie in (0,1)") {
  nn::ParamStore ps;
  Backbone net = make_net(ps);
  Rng rng(2);
  NoGradScope ng;
  ScoreDescriptorMaps maps = net.forward(random_image(32, 64, rng));
  const int hw = 32 * 64, dim = 16;
  for (int i = 0; i < hw; ++i) {
    double n = 0;
    for (int j = 0; j < dim; ++j) {
      double d = maps.descriptors->v()[i * dim + j];
      n += d * d;
    }
    CHECK(n == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(maps.score->v()[i] > 0.0);
    CHECK(maps.score->v()[i] < 1.0);
  }
}

TEST_CASE("same seed gives identical outputs") {
  nn::ParamStore ps1, ps2;
  Backbone a = make_net(ps1, 16, 99), b = make_net(ps2, 16, 99);
  Rng rng(3);
  NoGradScope ng;
  Var img = random_image(32, 32, rng);
  ScoreDescriptorMaps ma = a.forward(img), mb = b.forward(img);
  for (std::int64_t i = 0; i < ma.score->numel(); ++i)
    CHECK(ma.score->v()[i] == mb.score->v()[i]);
  for (std::int64_t i = 0; i < ma.descriptors->numel(); ++i)
    CHECK(ma.descriptors->v()[i] == mb.descriptors->v()[i]);
}

TEST_CASE("a scalar loss reaches every trainable parameter") {
  nn::ParamStore ps;
  Backbone net = make_net(ps, 8);
  Rng rng(4);
  Var img = random_image(32, 32, rng);
  ScoreDescriptorMaps maps = net.forward(img);
  ps.zero_grads();
  backprop(sum(maps.score) + sum(maps.descriptors));
  for (const auto& name : ps.names()) {
    Var p = ps.get(name);
    double norm = 0;
    for (std::int64_t i = 0; i < p->numel(); ++i)
      norm += std::abs(p->g()[i]);
    INFO("parameter ", name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("invalid images are rejected") {
  nn::ParamStore ps;
  Backbone net = make_net(ps);
  CHECK_THROWS_AS((void)net.encode(constant(Shape{33, 32, 3}, 0.5)), Error);
  CHECK_THROWS_AS((void)net.encode(constant(Shape{32, 40, 3}, 0.5)), Error);
  CHECK_THROWS_AS((void)net.encode(constant(Shape{32, 32, 1}, 0.5)), Error);
  CHECK_THROWS_AS((void)net.encode(constant(Shape{32, 32}, 0.5)), Error);
  CHECK_THROWS_AS((void)net.encode(constant(Shape{32, 32, 3}, 1.5)), Error);
  CHECK_THROWS_AS((void)net.encode(constant(Shape{32, 32, 3}, -0.1)), Error);
}

TEST_CASE("parameter registry is stable and complete") {
  nn::ParamStore ps;
  Backbone net = make_net(ps);
  // block1: 2 convs; blocks 2-4: 2 convs (+1 proj for 32->64, 64->128);
  // 4 aggregation convs; 1 head conv. All with bias.
  // weights+biases: (2 + 3 + 3 + 2 + 4 + 1) * 2 = 30
  CHECK(ps.names().size() == 30);
  CHECK(ps.has("backbone.block1.conv0.weight"));
  CHECK(ps.has("backbone.block2.proj.weight"));
  CHECK(ps.has("backbone.block4.conv1.bias"));
  CHECK(ps.has("backbone.head.weight"));
  CHECK_FALSE(ps.has("backbone.block4.proj.weight"));
}
