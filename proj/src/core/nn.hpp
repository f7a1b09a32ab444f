#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace rada::nn {

using ad::Var;

// Named parameter registry. Iteration order is the registration order, which
// is fixed by model construction, so optimizer sweeps and checkpoints are
// deterministic.
class ParamStore {
 public:
  Var create(const std::string& name, const ad::Shape& shape,
             std::vector<double> init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::vector<Var> all() const;
  void zero_grads() const;
  std::int64_t total_params() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Var> params_;
};

// fan-in-scaled uniform weights, zero bias
std::vector<double> uniform_fan_in(std::int64_t count, int fan_in, Rng& rng);

struct Conv2d {
  Var w, b;
  static Conv2d make(ParamStore& ps, const std::string& name, int kh, int kw,
                     int cin, int cout, Rng& rng, bool bias = true);
  Var forward(const Var& x) const { return ad::conv2d(x, w, b); }
};

struct Linear {
  Var w, b;  // w: (in,out)
  static Linear make(ParamStore& ps, const std::string& name, int in, int out,
                     Rng& rng);
  Var forward(const Var& x) const {
    return ad::add_rowvec(ad::matmul(x, w), b);
  }
};

// two 3x3 convolutions with an identity (or 1x1-projected) shortcut
struct ResidualBlock {
  Conv2d conv1, conv2;
  std::optional<Conv2d> proj;
  static ResidualBlock make(ParamStore& ps, const std::string& name, int cin,
                            int cout, Rng& rng);
  Var forward(const Var& x) const;
};

// linear -> relu -> linear
struct Mlp2 {
  Linear l1, l2;
  static Mlp2 make(ParamStore& ps, const std::string& name, int in, int hidden,
                   int out, Rng& rng);
  Var forward(const Var& x) const {
    return l2.forward(ad::relu(l1.forward(x)));
  }
};

}  // namespace rada::nn
