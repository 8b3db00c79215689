#pragma once

#include <cstddef>
#include <vector>

#include "dcp/tensor.hpp"

namespace dcp::detail {

struct LerpTap {
    std::size_t lo;
    std::size_t hi;
    double weight;  // of `hi`
};

/// Source taps for each output coordinate of a half-pixel bilinear resample.
std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out);

struct Image4 {
    std::size_t batch, channels, height, width;
};

/// Interprets [c x h x w] as a batch of one.
Image4 image_dims(const Tensor& x, const char* op);

}  // namespace dcp::detail
