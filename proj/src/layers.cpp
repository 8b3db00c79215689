#include "dcp/layers.hpp"

#include <cmath>

namespace dcp {

ParamTensor init_param(std::string name, Shape dims, Rng& rng, std::size_t fan_in, double gain) {
    const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
    return ParamTensor(std::move(name), rng.normal_tensor(std::move(dims), stddev));
}

ParamTensor const_param(std::string name, Shape dims, double value) {
    return ParamTensor(std::move(name), Tensor(std::move(dims), value));
}

LayerNormParams::LayerNormParams(const std::string& name, std::size_t width)
    : gain(const_param(name + ".gain", {width}, 1.0)), bias(const_param(name + ".bias", {width}, 0.0)) {}

MlpParams::MlpParams(const std::string& name, std::size_t width, Rng& rng)
    : w1(init_param(name + ".w1", {width, 4 * width}, rng, width)),
      b1(const_param(name + ".b1", {4 * width}, 0.0)),
      w2(init_param(name + ".w2", {4 * width, width}, rng, 4 * width)),
      b2(const_param(name + ".b2", {width}, 0.0)) {}

ag::Var apply(ag::Tape& t, LayerNormParams& ln, ag::Var x) { return ag::layer_norm(x, t.param(ln.gain), t.param(ln.bias)); }

ag::Var apply(ag::Tape& t, MlpParams& mlp, ag::Var x) {
    auto h = ag::gelu(ag::add_bias(ag::matmul(x, t.param(mlp.w1)), t.param(mlp.b1)));
    return ag::add_bias(ag::matmul(h, t.param(mlp.w2)), t.param(mlp.b2));
}

ag::Var residual_block(ag::Tape& t, ag::Var z, ag::Var skip, LayerNormParams& ln1, MlpParams& mlp, LayerNormParams& ln2) {
    auto x = apply(t, ln1, ag::add(z, skip));
    return apply(t, ln2, ag::add(apply(t, mlp, x), x));
}

ag::Var broadcast_leading(ag::Var x, std::size_t count) {
    Shape out{count};
    for (auto d : x.dims()) out.push_back(d);
    auto row = ag::reshape(x, {1, x.value().size()});
    return ag::reshape(ag::gather_rows(row, std::vector<std::size_t>(count, 0), {count, x.value().size()}), out);
}

}  // namespace dcp
