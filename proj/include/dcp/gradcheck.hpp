#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcp/autograd.hpp"

namespace dcp {

struct GradCheckEntry {
    std::string name;
    double relative_error = 0.0;
    std::size_t coordinates = 0;
};

/// Builds a scalar loss on the given tape. Parameters must enter through tape.param().
using LossBuilder = std::function<ag::Var(ag::Tape&)>;

/// Compares backprop gradients of every parameter with central differences
/// of the same loss.
std::vector<GradCheckEntry> check_gradients(const std::vector<ParamTensor*>& params, const LossBuilder& loss, double h = 1e-5);

double max_relative_error(const std::vector<GradCheckEntry>& entries);

}  // namespace dcp
