#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "core/domain_adaptation.hpp"
#include "core/errors.hpp"
#include "test_util.hpp"

using namespace rada;
using namespace rada::ad;
using testutil::rand_leaf;

namespace {

DomainAdapter make_adapter(nn::ParamStore& ps, int dim, double scale,
                           double mmd_weight = 0.01, std::uint64_t seed = 5) {
  Rng rng(seed);
  DomainAdapterConfig cfg;
  cfg.in_channels = 8;
  cfg.dim = dim;
  cfg.reversal_scale = scale;
  cfg.mmd_weight = mmd_weight;
  return DomainAdapter(ps, "da", cfg, rng);
}

void zero_params(const nn::ParamStore& ps) {
  for (const auto& p : ps.all())
    std::fill(p->val->begin(), p->val->end(), 0.0);
}

void sgd_step(const nn::ParamStore& ps, double lr) {
  for (const auto& p : ps.all())
    for (std::int64_t i = 0; i < p->numel(); ++i) p->v()[i] -= lr * p->g()[i];
  ps.zero_grads();
}

// balanced batch of noisy but well-separated 2-D domain samples
void sample_domains(Rng& rng, int n, std::vector<double>& src,
                    std::vector<double>& tgt) {
  src.clear();
  tgt.clear();
  for (int i = 0; i < n; ++i) {
    src.push_back(1.5 + rng.normal() * 0.8);
    src.push_back(1.0 + rng.normal() * 0.8);
    tgt.push_back(-1.5 + rng.normal() * 0.8);
    tgt.push_back(-1.0 + rng.normal() * 0.8);
  }
}

}  // namespace

TEST_CASE("global average pooling") {
  Var c = constant(Shape{3, 4, 5}, 0.7);
  Var p = global_average_pool(c);
  REQUIRE(p->shape == Shape{1, 5});
  for (int i = 0; i < 5; ++i) CHECK(p->v()[i] == doctest::Approx(0.7));

  Var one = constant(Shape{1, 1, 3}, {1.0, 2.0, 3.0});
  Var p1 = global_average_pool(one);
  for (int i = 0; i < 3; ++i) CHECK(p1->v()[i] == doctest::Approx(i + 1.0));

  Var m = constant(Shape{2, 2, 1}, {0.0, 0.0, 2.0, 2.0});
  CHECK(global_average_pool(m)->v()[0] == doctest::Approx(1.0));
}

TEST_CASE("mmd: identical, singleton, and hand-computed batches") {
  Rng rng(61);
  Var x = rand_leaf(Shape{5, 6}, rng);
  CHECK(mmd_loss(x, x)->v()[0] == doctest::Approx(0.0));

  Var a = constant(Shape{1, 3}, {1.0, 2.0, 2.0});
  Var b = constant(Shape{1, 3}, {0.0, 0.0, 0.0});
  CHECK(mmd_loss(a, b)->v()[0] == doctest::Approx(3.0).epsilon(1e-9));

  Var xs = constant(Shape{2, 2}, {0, 0, 2, 0});
  Var xt = constant(Shape{2, 2}, {0, 1, 0, 3});
  CHECK(mmd_loss(xs, xt)->v()[0] ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-6));
}

TEST_CASE("mmd symmetry, nonnegativity, and mean-difference identity") {
  Rng rng(62);
  for (int t = 0; t < 20; ++t) {
    Var xs = rand_leaf(Shape{1 + static_cast<int>(rng.uniform_int(1, 7)), 4}, rng, -2, 2);
    Var xt = rand_leaf(Shape{1 + static_cast<int>(rng.uniform_int(1, 7)), 4}, rng, -2, 2);
    const double st = mmd_loss(xs, xt)->v()[0];
    const double ts = mmd_loss(xt, xs)->v()[0];
    CHECK(st == doctest::Approx(ts).epsilon(1e-12));
    CHECK(st >= 0.0);
    double mean_s[4] = {0, 0, 0, 0}, mean_t[4] = {0, 0, 0, 0};
    for (int i = 0; i < xs->shape[0]; ++i)
      for (int j = 0; j < 4; ++j) mean_s[j] += xs->v()[i * 4 + j] / xs->shape[0];
    for (int i = 0; i < xt->shape[0]; ++i)
      for (int j = 0; j < 4; ++j) mean_t[j] += xt->v()[i * 4 + j] / xt->shape[0];
    double want = 0;
    for (int j = 0; j < 4; ++j)
      want += (mean_s[j] - mean_t[j]) * (mean_s[j] - mean_t[j]);
    CHECK(st == doctest::Approx(std::sqrt(want)).epsilon(1e-9));
  }
  CHECK_THROWS_AS((void)mmd_loss(constant(Shape{0, 4}, 0.0), rand_leaf(Shape{2, 4}, rng)),
                  Error);
}

TEST_CASE("mmd gradients match finite differences") {
  Rng rng(63);
  Var xs = rand_leaf(Shape{3, 5}, rng), xt = rand_leaf(Shape{4, 5}, rng);
  CHECK(testutil::max_grad_error({xs, xt}, [&] { return mmd_loss(xs, xt); }) <
        1e-5);
}

TEST_CASE("adversarial loss hand values") {
  Var half = constant(Shape{4, 1}, 0.5);
  CHECK(adversarial_loss(half, {0, 1, 0, 1})->v()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  Var perfect = constant(Shape{2, 1}, {0.0, 1.0});
  CHECK(adversarial_loss(perfect, {0, 1})->v()[0] ==
        doctest::Approx(0.0).epsilon(1e-6));

  Var s = constant(Shape{2, 1}, {0.2, 0.9});
  CHECK(adversarial_loss(s, {0, 1})->v()[0] ==
        doctest::Approx(-(std::log(0.8) + std::log(0.9)) / 2).epsilon(1e-6));

  CHECK_THROWS_AS((void)adversarial_loss(half, {0, 1}), Error);
  CHECK_THROWS_AS((void)adversarial_loss(half, {0, 1, 0.5, 1}), Error);
}

TEST_CASE("classifier: zero weights give 0.5, outputs stay in (0,1)") {
  nn::ParamStore ps;
  DomainAdapter da = make_adapter(ps, 6, 1.0);
  Rng rng(64);
  Var x = rand_leaf(Shape{5, 6}, rng, -3, 3);
  Var s = da.classify(x);
  REQUIRE(s->shape == Shape{5, 1});
  for (int i = 0; i < 5; ++i) {
    CHECK(s->v()[i] > 0.0);
    CHECK(s->v()[i] < 1.0);
  }
  zero_params(ps);
  Var s0 = da.classify(x);
  for (int i = 0; i < 5; ++i) CHECK(s0->v()[i] == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)da.classify(rand_leaf(Shape{5, 7}, rng)), Error);
}

TEST_CASE("embedding pools the projected map to the configured width") {
  nn::ParamStore ps;
  DomainAdapter da = make_adapter(ps, 6, 1.0);
  Rng rng(65);
  Var map = rand_leaf(Shape{4, 4, 8}, rng);
  CHECK(da.embed(map)->shape == Shape{1, 6});
  CHECK_THROWS_AS((void)da.embed(rand_leaf(Shape{4, 4, 5}, rng)), Error);
}

TEST_CASE("gradient reversal scales upstream gradients by minus scale") {
  Rng rng(66);
  Var x = rand_leaf(Shape{3, 6}, rng);

  nn::ParamStore ps_rev, ps_none;
  DomainAdapter rev = make_adapter(ps_rev, 6, 1.3, 0.01, 42);
  DomainAdapter none = make_adapter(ps_none, 6, 0.0, 0.01, 42);

  zero_grad(x);
  ps_rev.zero_grads();
  backprop(adversarial_loss(rev.classify(x), {0, 1, 0}));
  std::vector<double> g_rev(x->g(), x->g() + x->numel());
  std::vector<double> g_fc1_rev;
  {
    Var w = ps_rev.get("da.fc1.weight");
    g_fc1_rev.assign(w->g(), w->g() + w->numel());
  }

  // scale 0 detaches the input entirely
  zero_grad(x);
  ps_none.zero_grads();
  backprop(adversarial_loss(none.classify(x), {0, 1, 0}));
  for (std::int64_t i = 0; i < x->numel(); ++i) CHECK(x->g()[i] == 0.0);

  // recover the un-reversed input gradient from the classifier weights'
  // unaffected gradient path: rerun with the reversal bypassed by hand
  nn::ParamStore ps_id;
  DomainAdapter ident = make_adapter(ps_id, 6, 1.0, 0.01, 42);
  zero_grad(x);
  ps_id.zero_grads();
  Var h = relu(nn::Linear{ps_id.get("da.fc1.weight"), ps_id.get("da.fc1.bias")}.forward(x));
  h = relu(nn::Linear{ps_id.get("da.fc2.weight"), ps_id.get("da.fc2.bias")}.forward(h));
  Var s = sigmoid(nn::Linear{ps_id.get("da.fc3.weight"), ps_id.get("da.fc3.bias")}.forward(h));
  backprop(adversarial_loss(s, {0, 1, 0}));
  for (std::int64_t i = 0; i < x->numel(); ++i)
    CHECK(g_rev[static_cast<size_t>(i)] ==
          doctest::Approx(-1.3 * x->g()[i]).epsilon(1e-6));
  // classifier parameter gradients are untouched by the reversal
  Var w_id = ps_id.get("da.fc1.weight");
  for (std::int64_t i = 0; i < w_id->numel(); ++i)
    CHECK(g_fc1_rev[static_cast<size_t>(i)] ==
          doctest::Approx(w_id->g()[i]).epsilon(1e-9));
}

TEST_CASE("combined loss composes its terms") {
  Rng rng(67);
  Var xs = rand_leaf(Shape{3, 6}, rng), xt = rand_leaf(Shape{2, 6}, rng);

  nn::ParamStore ps0;
  DomainAdapter plain = make_adapter(ps0, 6, 1.0, 0.0, 7);
  DomainLossTerms t0 = domain_adaptation_loss(plain, xs, xt);
  CHECK(t0.total->v()[0] == doctest::Approx(t0.adversarial->v()[0]).epsilon(1e-15));

  nn::ParamStore ps1, ps2;
  DomainLossTerms t1 =
      domain_adaptation_loss(make_adapter(ps1, 6, 1.0, 0.01, 7), xs, xt);
  DomainLossTerms t2 =
      domain_adaptation_loss(make_adapter(ps2, 6, 1.0, 0.02, 7), xs, xt);
  CHECK(t2.total->v()[0] - t1.total->v()[0] ==
        doctest::Approx(0.01 * t1.mmd->v()[0]).epsilon(1e-9));

  nn::ParamStore psz;
  DomainAdapter zeroed = make_adapter(psz, 6, 1.0);
  zero_params(psz);
  DomainLossTerms tz = domain_adaptation_loss(zeroed, xs, xs);
  CHECK(tz.total->v()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("combined loss gradients match finite differences") {
  nn::ParamStore ps;
  DomainAdapter da = make_adapter(ps, 4, 1.0);
  Rng rng(68);
  Var xs = rand_leaf(Shape{2, 4}, rng), xt = rand_leaf(Shape{3, 4}, rng);
  auto f = [&] { return domain_adaptation_loss(da, xs, xt).total; };
  // classifier parameters sit downstream of the reversal, so plain finite
  // differences apply to them
  CHECK(testutil::max_grad_error({ps.get("da.fc1.bias"), ps.get("da.fc2.bias"),
                                  ps.get("da.fc3.weight"), ps.get("da.fc3.bias")},
                                 f) < 1e-4);
  // and every classifier parameter receives gradient
  ps.zero_grads();
  for (const auto& l : {xs, xt}) zero_grad(l);
  backprop(f());
  for (const auto& name : {"da.fc1.weight", "da.fc2.weight", "da.fc3.weight"}) {
    Var p = ps.get(name);
    double g = 0;
    for (std::int64_t i = 0; i < p->numel(); ++i) g += std::abs(p->g()[i]);
    CHECK(g > 0.0);
  }
}

TEST_CASE("input gradients decompose into reversed and direct parts") {
  // For the total loss the framework reports, per input element,
  //   -scale * d(adversarial)/dx  +  mmd_weight * d(mmd)/dx,
  // where the derivatives on the right are true (reversal-free) ones
  // estimated here by central differences.
  nn::ParamStore ps;
  const double scale = 1.3, lambda = 0.01;
  DomainAdapter da = make_adapter(ps, 4, scale, lambda);
  Rng rng(77);
  Var xs = rand_leaf(Shape{2, 4}, rng), xt = rand_leaf(Shape{3, 4}, rng);

  zero_grad(xs);
  zero_grad(xt);
  ps.zero_grads();
  backprop(domain_adaptation_loss(da, xs, xt).total);

  auto adv_value = [&] {
    NoGradScope ng;
    Var emb = concat_rows({xs, xt});
    Var h = relu(nn::Linear{ps.get("da.fc1.weight"), ps.get("da.fc1.bias")}.forward(emb));
    h = relu(nn::Linear{ps.get("da.fc2.weight"), ps.get("da.fc2.bias")}.forward(h));
    Var s = sigmoid(nn::Linear{ps.get("da.fc3.weight"), ps.get("da.fc3.bias")}.forward(h));
    return adversarial_loss(s, {0, 0, 1, 1, 1})->v()[0];
  };
  auto mmd_value = [&] {
    NoGradScope ng;
    return mmd_loss(xs, xt)->v()[0];
  };
  const double h = 1e-5;
  for (const Var& x : {xs, xt}) {
    for (std::int64_t i = 0; i < x->numel(); ++i) {
      const double x0 = x->v()[i];
      x->v()[i] = x0 + h;
      const double ap = adv_value(), mp = mmd_value();
      x->v()[i] = x0 - h;
      const double am = adv_value(), mm = mmd_value();
      x->v()[i] = x0;
      const double want =
          -scale * (ap - am) / (2 * h) + lambda * (mp - mm) / (2 * h);
      CHECK(x->g()[i] == doctest::Approx(want).epsilon(1e-3));
    }
  }
}

TEST_CASE("classifier alone separates, reversal drives it to confusion") {
  // phase 1: frozen random features, reversal scale 0, classifier trains
  {
    nn::ParamStore ps;
    DomainAdapter da = make_adapter(ps, 2, 0.0, 0.01, 11);
    Rng rng(69);
    std::vector<double> src, tgt;
    for (int step = 0; step < 600; ++step) {
      sample_domains(rng, 8, src, tgt);
      Var xs = constant(Shape{8, 2}, src), xt = constant(Shape{8, 2}, tgt);
      backprop(domain_adaptation_loss(da, xs, xt).total);
      sgd_step(ps, 0.05);
    }
    sample_domains(rng, 100, src, tgt);
    NoGradScope ng;
    Var s = da.classify(concat_rows(
        {constant(Shape{100, 2}, src), constant(Shape{100, 2}, tgt)}));
    int correct = 0;
    for (int i = 0; i < 200; ++i)
      correct += (s->v()[i] > 0.5) == (i >= 100) ? 1 : 0;
    CHECK(correct >= 190);  // >= 0.95 accuracy
  }

  // phase 2: a feature layer trains through the reversal; the classifier
  // should end up unable to tell the domains apart on held-out data.
  // plain equal-rate descent matters here: momentum methods overshoot the
  // mixed state and the game oscillates between swapped separable layouts
  // instead of settling where the domains coincide.
  {
    nn::ParamStore ps;
    Rng init(12);
    nn::Linear extractor = nn::Linear::make(ps, "feat", 2, 2, init);
    DomainAdapter da = make_adapter(ps, 2, 1.0, 0.01, 13);
    Rng rng(70);
    std::vector<double> src, tgt;
    double acc_sum = 0.0;
    int acc_evals = 0;
    for (int step = 1; step <= 3000; ++step) {
      sample_domains(rng, 8, src, tgt);
      Var xs = extractor.forward(constant(Shape{8, 2}, src));
      Var xt = extractor.forward(constant(Shape{8, 2}, tgt));
      backprop(domain_adaptation_loss(da, xs, xt).total);
      sgd_step(ps, 0.05);
      // average held-out accuracy over late checkpoints; the equilibrium
      // jitters a little from batch to batch
      if (step > 2500 && step % 100 == 0) {
        sample_domains(rng, 100, src, tgt);
        NoGradScope ng;
        Var s = da.classify(extractor.forward(concat_rows(
            {constant(Shape{100, 2}, src), constant(Shape{100, 2}, tgt)})));
        int correct = 0;
        for (int i = 0; i < 200; ++i)
          correct += (s->v()[i] > 0.5) == (i >= 100) ? 1 : 0;
        acc_sum += correct / 200.0;
        ++acc_evals;
      }
    }
    REQUIRE(acc_evals == 5);
    const double acc = acc_sum / acc_evals;
    CHECK(acc >= 0.4);
    CHECK(acc <= 0.6);
  }
}
