#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dcp/tensor.hpp"

namespace dcp::ag {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& dims() const { return value().dims(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order and replayed
/// backwards; parameter leaves flush their gradient into the owning ParamTensor.
class Tape {
public:
    /// With `record == false` no backward closures are kept (inference).
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var param(ParamTensor& p);

    /// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable ParamTensor.
    void backward(Var loss);

    bool recording() const noexcept { return record_; }
    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    std::size_t size() const noexcept { return nodes_.size(); }

    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    /// Appends a node. `backward` receives the node's output gradient and must
    /// call accumulate() on the parents it depends on.
    Var push(Tensor value, std::initializer_list<Var> parents, Backward backward);
    Var push(Tensor value, const std::vector<Var>& parents, Backward backward);

    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    /// Adds `g` into the gradient slot of `v` (no-op for constants).
    void accumulate(Var v, const Tensor& g);
    /// Mutable gradient slot, allocated zero on first use. Only valid when needs_grad(v).
    Tensor& grad_slot(Var v);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        ParamTensor* param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool record_;
};

// Differentiable operations. Shapes follow the forward kernels in kernels.hpp.

/// a: [..., k] . b: [k x n] -> [..., n].
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a length-n vector along the last axis.
Var add_bias(Var a, Var bias);
Var gelu(Var a);
/// Layer norm over the last axis.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// See grouped_attention(); `mask` is a constant.
Var attention(Var q, Var k, Var v, std::size_t heads, const Tensor* mask = nullptr);
/// Output row i is input row index[i]; rows have the width of the last axis.
Var gather_rows(Var x, std::vector<std::size_t> index, Shape out_dims);
Var permute(Var x, const std::vector<std::size_t>& perm);
Var reshape(Var x, Shape dims);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var conv2d(Var x, Var kernel, std::size_t stride = 1, std::size_t padding = 0);
Var transposed_conv2d(Var x, Var kernel);
Var bilinear_resize(Var x, std::size_t out_h, std::size_t out_w);
Var sum(Var x);
/// Sum of x * w with a constant weight tensor.
Var weighted_sum(Var x, const Tensor& w);
/// Sum over entries of w_i * BCE(sigmoid(z_i), t_i), stabilized. `targets`, `weights` constant.
Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights);

}  // namespace dcp::ag
