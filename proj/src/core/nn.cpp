#include "core/nn.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace rada::nn {

Var ParamStore::create(const std::string& name, const ad::Shape& shape,
                       std::vector<double> init) {
  check_arg(!params_.count(name), "parameter registered twice: " + name);
  Var p = ad::leaf(shape, std::move(init));
  order_.push_back(name);
  params_.emplace(name, p);
  return p;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  check_arg(it != params_.end(), "unknown parameter: " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) > 0;
}

std::vector<Var> ParamStore::all() const {
  std::vector<Var> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(params_.at(n));
  return out;
}

void ParamStore::zero_grads() const {
  for (const auto& [_, p] : params_) ad::zero_grad(p);
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const auto& [_, p] : params_) n += p->numel();
  return n;
}

std::vector<double> uniform_fan_in(std::int64_t count, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(count));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Conv2d Conv2d::make(ParamStore& ps, const std::string& name, int kh, int kw,
                    int cin, int cout, Rng& rng, bool bias) {
  Conv2d c;
  const int fan_in = kh * kw * cin;
  c.w = ps.create(name + ".weight", ad::Shape{kh, kw, cin, cout},
                  uniform_fan_in(static_cast<std::int64_t>(kh) * kw * cin * cout,
                                 fan_in, rng));
  if (bias)
    c.b = ps.create(name + ".bias", ad::Shape{cout},
                    std::vector<double>(static_cast<size_t>(cout), 0.0));
  return c;
}

Linear Linear::make(ParamStore& ps, const std::string& name, int in, int out,
                    Rng& rng) {
  Linear l;
  l.w = ps.create(name + ".weight", ad::Shape{in, out},
                  uniform_fan_in(static_cast<std::int64_t>(in) * out, in, rng));
  l.b = ps.create(name + ".bias", ad::Shape{out},
                  std::vector<double>(static_cast<size_t>(out), 0.0));
  return l;
}

ResidualBlock ResidualBlock::make(ParamStore& ps, const std::string& name,
                                  int cin, int cout, Rng& rng) {
  ResidualBlock b;
  b.conv1 = Conv2d::make(ps, name + ".conv1", 3, 3, cin, cout, rng);
  b.conv2 = Conv2d::make(ps, name + ".conv2", 3, 3, cout, cout, rng);
  if (cin != cout) b.proj = Conv2d::make(ps, name + ".proj", 1, 1, cin, cout, rng);
  return b;
}

Var ResidualBlock::forward(const Var& x) const {
  Var y = conv2.forward(ad::relu(conv1.forward(x)));
  Var shortcut = proj ? proj->forward(x) : x;
  return ad::relu(ad::add(y, shortcut));
}

Mlp2 Mlp2::make(ParamStore& ps, const std::string& name, int in, int hidden,
                int out, Rng& rng) {
  Mlp2 m;
  m.l1 = Linear::make(ps, name + ".l1", in, hidden, rng);
  m.l2 = Linear::make(ps, name + ".l2", hidden, out, rng);
  return m;
}

}  // namespace rada::nn
