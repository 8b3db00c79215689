#pragma once

#include <string>
#include <vector>

#include "dcp/autograd.hpp"
#include "dcp/rng.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

/// Gaussian init with standard deviation gain / sqrt(fan_in).
ParamTensor init_param(std::string name, Shape dims, Rng& rng, std::size_t fan_in, double gain = 1.0);
ParamTensor const_param(std::string name, Shape dims, double value);

struct LayerNormParams {
    ParamTensor gain, bias;

    LayerNormParams() = default;
    LayerNormParams(const std::string& name, std::size_t width);
    void collect(std::vector<ParamTensor*>& out) { out.insert(out.end(), {&gain, &bias}); }
};

/// Linear(d -> 4d) -> GELU -> Linear(4d -> d), both with bias.
struct MlpParams {
    ParamTensor w1, b1, w2, b2;

    MlpParams() = default;
    MlpParams(const std::string& name, std::size_t width, Rng& rng);
    void collect(std::vector<ParamTensor*>& out) { out.insert(out.end(), {&w1, &b1, &w2, &b2}); }
};

ag::Var apply(ag::Tape& t, LayerNormParams& ln, ag::Var x);
ag::Var apply(ag::Tape& t, MlpParams& mlp, ag::Var x);

/// Post-norm residual pair used by every attention block: X = LN(z + skip); LN(MLP(X) + X).
ag::Var residual_block(ag::Tape& t, ag::Var z, ag::Var skip, LayerNormParams& ln1, MlpParams& mlp, LayerNormParams& ln2);

/// Repeats x (any shape, treated as one row) `count` times along a new leading axis.
ag::Var broadcast_leading(ag::Var x, std::size_t count);

}  // namespace dcp
