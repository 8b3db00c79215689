#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcp/gradcheck.hpp"
#include "dcp/model.hpp"

namespace dcp {

/// Small end-to-end instance: D=8, D_c=8, a 4x4 patch grid (N=16), C_s=3, n_s=1.
struct ToyProblem {
    DcpModel model;
    VisualFeatures vis;
    Tensor e_sc;       // [C_s x D]
    Tensor targets;    // [C_s x H x W] one-hot
    std::size_t height = 16, width = 16;
};

ToyProblem make_toy_problem(std::uint64_t seed, std::size_t n_s = 1, std::size_t dim_c = 8);

/// Mean per-pixel BCE of the toy forward pass.
ag::Var toy_loss(ag::Tape& t, ToyProblem& problem, const AblationFlags& flags = {});

struct GradSuiteReport {
    std::uint64_t seed = 0;
    std::vector<GradCheckEntry> entries;

    double max_error() const { return max_relative_error(entries); }
    /// Largest error per top-level group ("tga", "sed", "head").
    std::map<std::string, double> by_group() const;
};

GradSuiteReport run_gradient_suite(std::uint64_t seed, double h = 1e-5);

}  // namespace dcp
