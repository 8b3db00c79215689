#include "dcp/gradsuite.hpp"

#include <algorithm>

#include "dcp/kernels.hpp"
#include "dcp/rng.hpp"

namespace dcp {

namespace {

Tensor unit_rows(Tensor t) {
    const std::size_t w = t.cols();
    for (std::size_t r = 0; r < t.rows(); ++r) {
        auto row = t.data().subspan(r * w, w);
        const double n = l2_norm(row);
        for (auto& v : row) v /= n;
    }
    return t;
}

}  // namespace

ToyProblem make_toy_problem(std::uint64_t seed, std::size_t n_s, std::size_t dim_c) {
    constexpr std::size_t D = 8, grid = 4, Cs = 3, cv = 4;
    Rng rng(mix64(seed));
    ModelConfig mc;
    mc.dim = D;
    mc.dim_c = dim_c;
    mc.n_s = n_s;
    mc.fv_channels = cv;
    mc.grid_h = mc.grid_w = grid;
    mc.sed_heads = 2;
    ToyProblem p;
    p.model = DcpModel::init(mc, seed);
    const std::size_t N = grid * grid;
    p.vis.grid_h = p.vis.grid_w = grid;
    p.vis.f_patch = unit_rows(rng.normal_tensor({N, D}));
    p.vis.f_cls = unit_rows(rng.normal_tensor({1, D}));
    p.vis.a_clip = softmax(rng.normal_tensor({N, N}), 1, 2.0);
    for (std::size_t l = 0; l <= n_s; ++l) p.vis.f_v.push_back(rng.normal_tensor({cv, grid << l, grid << l}));
    p.e_sc = unit_rows(rng.normal_tensor({Cs, D}));
    p.height = p.width = 16;
    p.targets = Tensor({Cs, p.height, p.width});
    for (std::size_t i = 0; i < p.height * p.width; ++i) p.targets[rng.index(Cs) * p.height * p.width + i] = 1.0;
    return p;
}

ag::Var toy_loss(ag::Tape& t, ToyProblem& problem, const AblationFlags& flags) {
    auto logits = forward_logits(t, problem.model, problem.vis, problem.e_sc, flags, problem.height, problem.width);
    const Tensor w(problem.targets.dims(), 1.0 / static_cast<double>(problem.targets.size()));
    return ag::bce_with_logits(logits, problem.targets, w);
}

std::map<std::string, double> GradSuiteReport::by_group() const {
    std::map<std::string, double> out;
    for (const auto& e : entries) {
        const std::string group = e.name.substr(0, e.name.find('.'));
        out[group] = std::max(out[group], e.relative_error);
    }
    return out;
}

GradSuiteReport run_gradient_suite(std::uint64_t seed, double h) {
    auto problem = make_toy_problem(seed);
    GradSuiteReport r;
    r.seed = seed;
    r.entries = check_gradients(problem.model.parameters(), [&](ag::Tape& t) { return toy_loss(t, problem); }, h);
    return r;
}

}  // namespace dcp
