#include "dcp/alignment.hpp"

#include <string>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"

namespace dcp {

TGAParams TGAParams::init(const TGAConfig& config, Rng& rng) {
    if (config.dim == 0 || config.dim_c == 0 || config.n_c == 0) throw ConfigError("TGA dims and n_c must be positive");
    if (config.heads == 0 || config.dim % config.heads != 0 || config.dim_c % config.heads != 0)
        throw ConfigError("TGA heads must divide D and D_c");
    const std::size_t D = config.dim, Dc = config.dim_c;
    TGAParams p;
    p.config = config;
    p.cv_kernel = init_param("tga.cv_kernel", {Dc, 1, 3, 3}, rng, 9);
    p.phi_guidance = init_param("tga.phi_guidance", {2 * D + 1, D}, rng, 2 * D + 1);
    p.prompt = init_param("tga.prompt", {1, D}, rng, D);
    for (std::size_t l = 0; l < config.n_c; ++l) {
        const std::string n = "tga.cross" + std::to_string(l);
        CrossLayerParams c;
        c.w_q = init_param(n + ".w_q", {D, D}, rng, D);
        c.w_k = init_param(n + ".w_k", {D, D}, rng, D);
        c.w_v = init_param(n + ".w_v", {D, D}, rng, D);
        c.ln1 = LayerNormParams(n + ".ln1", D);
        c.mlp = MlpParams(n + ".mlp", D, rng);
        c.ln2 = LayerNormParams(n + ".ln2", D);
        p.cross.push_back(std::move(c));
    }
    p.phi_patch = init_param("tga.phi_patch", {D, Dc}, rng, D);
    p.fuse_w_q = init_param("tga.fuse.w_q", {2 * Dc, Dc}, rng, 2 * Dc);
    p.fuse_w_k = init_param("tga.fuse.w_k", {2 * Dc, Dc}, rng, 2 * Dc);
    p.fuse_w_v = init_param("tga.fuse.w_v", {2 * Dc, Dc}, rng, 2 * Dc);
    p.fuse_ln1 = LayerNormParams("tga.fuse.ln1", Dc);
    p.fuse_mlp = MlpParams("tga.fuse.mlp", Dc, rng);
    p.fuse_ln2 = LayerNormParams("tga.fuse.ln2", Dc);
    return p;
}

std::vector<ParamTensor*> TGAParams::parameters() {
    std::vector<ParamTensor*> out{&cv_kernel, &phi_guidance, &prompt};
    for (auto& c : cross) {
        out.insert(out.end(), {&c.w_q, &c.w_k, &c.w_v});
        c.ln1.collect(out);
        c.mlp.collect(out);
        c.ln2.collect(out);
    }
    out.insert(out.end(), {&phi_patch, &fuse_w_q, &fuse_w_k, &fuse_w_v});
    fuse_ln1.collect(out);
    fuse_mlp.collect(out);
    fuse_ln2.collect(out);
    return out;
}

CostVolumeVars build_cost_volume(ag::Tape& t, const Tensor& f_patch, const Tensor& e_sc, std::size_t grid_h, std::size_t grid_w,
                                 TGAParams& p) {
    const std::size_t Cs = e_sc.rows();
    if (e_sc.rank() != 2 || Cs == 0) throw DomainError("build_cost_volume: empty selection");
    if (f_patch.rows() != grid_h * grid_w) throw ShapeError("build_cost_volume: patch count vs grid", f_patch.dims(), {grid_h, grid_w});
    if (f_patch.cols() != e_sc.cols()) throw ShapeError("build_cost_volume: embedding width", f_patch.dims(), e_sc.dims());
    auto raw = t.constant(transpose(cosine_similarity_matrix(f_patch, e_sc)).reshaped({Cs, grid_h, grid_w}));
    auto cv = ag::conv2d(ag::reshape(raw, {Cs, 1, grid_h, grid_w}), t.param(p.cv_kernel), 1, 1);
    return {raw, ag::permute(cv, {0, 2, 3, 1})};
}

ag::Var build_textual_guidance(ag::Tape& t, const Tensor& f_cls, const Tensor& e_sc, TGAParams& p) {
    const std::size_t Cs = e_sc.rows(), D = e_sc.cols();
    if (f_cls.size() != D) throw ShapeError("build_textual_guidance: f_cls width", f_cls.dims(), e_sc.dims());
    auto logits = t.constant(matmul(e_sc, f_cls.reshaped({D, 1})));
    auto prompt = ag::gather_rows(t.param(p.prompt), std::vector<std::size_t>(Cs, 0), {Cs, D});
    auto rows = ag::concat({logits, t.constant(e_sc), prompt}, 1);
    return ag::matmul(rows, t.param(p.phi_guidance));
}

ag::Var cross_modal_refine(ag::Tape& t, ag::Var f_patch, ag::Var t_g, TGAParams& p) {
    const std::size_t N = f_patch.dims()[0], D = f_patch.dims()[1], Cs = t_g.dims()[0];
    auto f = f_patch;
    for (auto& layer : p.cross) {
        auto q = ag::reshape(ag::matmul(f, t.param(layer.w_q)), {1, N, D});
        auto k = ag::reshape(ag::matmul(t_g, t.param(layer.w_k)), {1, Cs, D});
        auto v = ag::reshape(ag::matmul(t_g, t.param(layer.w_v)), {1, Cs, D});
        auto z = ag::reshape(ag::attention(q, k, v, p.config.heads), {N, D});
        f = residual_block(t, z, f, layer.ln1, layer.mlp, layer.ln2);
    }
    return f;
}

ag::Var fuse_cost_volume(ag::Tape& t, ag::Var f_cv, ag::Var f_patch_ref, TGAParams& p) {
    const Shape dims = f_cv.dims();
    const std::size_t Cs = dims[0], N = dims[1] * dims[2], Dc = dims[3];
    if (f_patch_ref.dims()[0] != N) throw ShapeError("fuse_cost_volume: patch count", f_patch_ref.dims(), dims);
    auto proj = broadcast_leading(ag::matmul(f_patch_ref, t.param(p.phi_patch)), Cs);
    auto cv = ag::reshape(f_cv, {Cs, N, Dc});
    auto cat = ag::concat({cv, proj}, 2);
    auto q = ag::matmul(cat, t.param(p.fuse_w_q));
    auto k = ag::matmul(cat, t.param(p.fuse_w_k));
    auto v = ag::matmul(cat, t.param(p.fuse_w_v));
    auto z = ag::attention(q, k, v, p.config.heads);
    return ag::reshape(residual_block(t, z, cv, p.fuse_ln1, p.fuse_mlp, p.fuse_ln2), dims);
}

CostVolume build_cost_volume(const Tensor& f_patch, const Tensor& e_sc, std::size_t grid_h, std::size_t grid_w, TGAParams& p) {
    ag::Tape t(false);
    auto cv = build_cost_volume(t, f_patch, e_sc, grid_h, grid_w, p);
    return {cv.raw.value(), cv.f_cv.value()};
}

TextualGuidance build_textual_guidance(const Tensor& f_cls, const Tensor& e_sc, TGAParams& p) {
    ag::Tape t(false);
    auto tg = build_textual_guidance(t, f_cls, e_sc, p);
    return {tg.value(), matmul(e_sc, f_cls.reshaped({f_cls.size(), 1}))};
}

Tensor cross_modal_refine(const Tensor& f_patch, const Tensor& t_g, TGAParams& p) {
    ag::Tape t(false);
    return cross_modal_refine(t, t.constant(f_patch), t.constant(t_g), p).value();
}

Tensor fuse_cost_volume(const CostVolume& cv, const Tensor& f_patch_ref, TGAParams& p) {
    ag::Tape t(false);
    return fuse_cost_volume(t, t.constant(cv.f_cv), t.constant(f_patch_ref), p).value();
}

}  // namespace dcp
