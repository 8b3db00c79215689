#include "dcp/model.hpp"

#include "dcp/error.hpp"
#include "dcp/rng.hpp"

namespace dcp {

DcpModel DcpModel::init(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x7467615f73656564ULL));
    DcpModel m;
    m.config = config;
    m.tga = TGAParams::init(config.tga(), rng);
    m.sed = SEDParams::init(config.sed(), rng);
    return m;
}

std::vector<ParamTensor*> DcpModel::parameters() {
    auto out = tga.parameters();
    auto s = sed.parameters();
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

std::vector<const ParamTensor*> DcpModel::parameters() const {
    auto mut = const_cast<DcpModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

ag::Var forward_logits(ag::Tape& t, DcpModel& model, const VisualFeatures& vis, const Tensor& e_sc, const AblationFlags& flags,
                       std::size_t out_h, std::size_t out_w) {
    auto& tga = model.tga;
    auto cv = build_cost_volume(t, vis.f_patch, e_sc, vis.grid_h, vis.grid_w, tga);
    ag::Var f_ref = t.constant(vis.f_patch);
    if (flags.ca) f_ref = cross_modal_refine(t, f_ref, build_textual_guidance(t, vis.f_cls, e_sc, tga), tga);
    ag::Var f_cv_ref = flags.sa ? fuse_cost_volume(t, cv.f_cv, f_ref, tga) : cv.f_cv;

    DecoderContext ctx{&vis.f_v, &vis.a_clip, vis.grid_h, vis.grid_w, {flags.spatial_enhance, flags.fuse_fv, flags.fuse_aclip}};
    auto f_last = decode(t, f_cv_ref, cv.raw, ctx, model.sed);
    const std::size_t scale = std::size_t{1} << model.config.n_s;
    return predict_logits(t, f_last, vis.grid_h * scale, vis.grid_w * scale, out_h, out_w, model.sed.head);
}

Tensor gather_embeddings(const Tensor& e_t, const std::vector<std::size_t>& classes) {
    const std::size_t D = e_t.cols();
    Tensor out({classes.size(), D});
    for (std::size_t r = 0; r < classes.size(); ++r) {
        if (classes[r] >= e_t.rows()) throw ShapeError("gather_embeddings index", {classes[r]}, e_t.dims());
        for (std::size_t k = 0; k < D; ++k) out[r * D + k] = e_t[classes[r] * D + k];
    }
    return out;
}

}  // namespace dcp
