#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "dcp/tensor.hpp"

namespace dcp {

// Dense forward kernels. Every reduction runs in a fixed order so identical
// inputs give bit-identical outputs.

/// [m x k] . [k x n]. Summation over k runs left to right.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-wise product where `a` is any tensor whose last axis has extent k.
Tensor matmul_rows(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// exp(scale * (x - max)) / sum along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis, double scale = 1.0);

/// Entry (i, j) is the cosine between row i of `a` and row j of `b`.
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);

/// Normalizes each slice along `axis` and applies gain/bias (each of that axis' extent).
Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Multi-head attention: per head softmax(Q K^T / sqrt(d/heads)) V, heads concatenated.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

/// Batched attention over groups. q: [G x m x d], k: [G x n x d], v: [G x n x e].
/// `mask`, when given, is [P x m x n] and is added to the logits of group g using slice g % P.
/// `weights_out` receives the [G x heads x m x n] attention weights.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                         const Tensor* mask = nullptr, Tensor* weights_out = nullptr);

/// x: [c_in x h x w] or [B x c_in x h x w]; kernel: [c_out x c_in x kh x kw].
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0);

/// Stride-2 transposed convolution with a [c_in x c_out x 2 x 2] kernel; doubles each spatial axis.
Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel);

/// Bilinear resampling with half-pixel centers (align_corners = false).
/// x: [c x h x w] or [B x c x h x w].
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);

double gelu(double x);
double gelu_grad(double x);

/// Central differences of a scalar function, one coordinate at a time.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

/// Relative error ||a - b|| / (||b|| + 1e-12).
double relative_error(const Tensor& analytic, const Tensor& numeric);

// Multiply-accumulate accounting. Forward kernels add their nominal MAC count
// to a thread-local tally.
std::uint64_t mac_count();
void reset_mac_count();
void add_macs(std::uint64_t n);

class MacScope {
public:
    MacScope() : start_(mac_count()) {}
    std::uint64_t elapsed() const { return mac_count() - start_; }

private:
    std::uint64_t start_;
};

}  // namespace dcp
