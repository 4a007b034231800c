#include "pyrhead/nn.hpp"

#include <cmath>

#include "pyrhead/errors.hpp"

namespace pyrhead::num {

LinearLayer LinearLayer::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                                Rng& rng, Activation act, Init init) {
  if (in == 0 || out == 0) throw DimensionError("linear layer '" + name + "' with zero width");
  LinearLayer layer;
  layer.in = in;
  layer.out = out;
  layer.activation = act;
  if (init == Init::zeros) {
    layer.weight = params.add(name + ".weight", Tensor({in, out}));
    layer.bias = params.add(name + ".bias", Tensor({out}));
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    // He-scaled weights in front of a ReLU keep activations from shrinking
    const double wb = act == Activation::relu ? std::sqrt(6.0) * bound : bound;
    layer.weight = params.add(name + ".weight", random_uniform({in, out}, -wb, wb, rng));
    layer.bias = params.add(name + ".bias", random_uniform({out}, -bound, bound, rng));
  }
  return layer;
}

Var LinearLayer::operator()(Tape& tape, Var x) const {
  Var y = linear(x, tape.param(weight), tape.param(bias));
  return activation == Activation::relu ? relu(y) : y;
}

Mlp Mlp::create(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims, Rng& rng,
                Activation final_activation, Init final_init) {
  if (dims.size() < 2) throw DimensionError("MLP '" + name + "' needs at least input and output widths");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    mlp.layers_.push_back(LinearLayer::create(params, name + "." + std::to_string(i), dims[i], dims[i + 1], rng,
                                              last ? final_activation : Activation::relu,
                                              last ? final_init : Init::uniform_fan_in));
  }
  return mlp;
}

Var Mlp::operator()(Tape& tape, Var x) const {
  if (x.value().cols() != in_dim()) {
    throw DimensionError("MLP input width " + std::to_string(x.value().cols()) + ", expected " +
                         std::to_string(in_dim()));
  }
  for (const auto& layer : layers_) x = layer(tape, x);
  return x;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite difference step must be positive");
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double fp = f(probe);
    probe[k] = x[k] - h;
    const double fm = f(probe);
    probe[k] = x[k];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function value at component " + std::to_string(k));
    }
    grad[k] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace pyrhead::num
