#include "dcp/gradcheck.hpp"

#include <algorithm>

#include "dcp/kernels.hpp"

namespace dcp {

std::vector<GradCheckEntry> check_gradients(const std::vector<ParamTensor*>& params, const LossBuilder& loss, double h) {
    for (auto* p : params) p->zero_grad();
    {
        ag::Tape tape;
        tape.backward(loss(tape));
    }
    std::vector<GradCheckEntry> out;
    out.reserve(params.size());
    for (auto* p : params) {
        const Tensor saved = p->value;
        auto f = [&](const Tensor& probe) {
            p->value = probe;
            ag::Tape tape(false);
            return loss(tape).value()[0];
        };
        const Tensor numeric = finite_difference_gradient(f, saved, h);
        p->value = saved;
        out.push_back({p->name, relative_error(p->grad, numeric), saved.size()});
    }
    return out;
}

double max_relative_error(const std::vector<GradCheckEntry>& entries) {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.relative_error);
    return m;
}

}  // namespace dcp
