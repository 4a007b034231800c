#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pyrhead/ops.hpp"
#include "pyrhead/tape.hpp"

namespace pyrhead::num {

using Rng = std::mt19937_64;

enum class Activation { identity, relu };

enum class Init {
  uniform_fan_in,  // bias U(+-1/sqrt(in)); weight the same, or U(+-sqrt(6/in)) before a ReLU
  zeros,
};

/// Affine map whose weight [in,out] and bias [out] live in a ParameterSet.
struct LinearLayer {
  ParameterSet::Slot weight = 0;
  ParameterSet::Slot bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::identity;

  static LinearLayer create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                            Rng& rng, Activation act = Activation::identity, Init init = Init::uniform_fan_in);

  Var operator()(Tape& tape, Var x) const;
};

/// Chain of linear layers; hidden layers use ReLU, the output layer is
/// identity unless `final_activation` says otherwise.
class Mlp {
 public:
  Mlp() = default;

  static Mlp create(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims, Rng& rng,
                    Activation final_activation = Activation::identity, Init final_init = Init::uniform_fan_in);

  Var operator()(Tape& tape, Var x) const;

  std::size_t in_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t out_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  const std::vector<LinearLayer>& layers() const { return layers_; }

 private:
  std::vector<LinearLayer> layers_;
};

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every
/// component of x. Throws NumericError if f is non-finite at a probe.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng);
Tensor random_normal(Shape shape, double stddev, Rng& rng);

}  // namespace pyrhead::num
