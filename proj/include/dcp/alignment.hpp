#pragma once

#include <cstddef>
#include <vector>

#include "dcp/autograd.hpp"
#include "dcp/layers.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

struct TGAConfig {
    std::size_t dim = 32;     // D
    std::size_t dim_c = 16;   // D_c
    std::size_t n_c = 1;      // cross-attention layers
    std::size_t heads = 1;
};

struct CrossLayerParams {
    ParamTensor w_q, w_k, w_v;  // [D x D]
    LayerNormParams ln1, ln2;
    MlpParams mlp;
};

struct TGAParams {
    TGAConfig config;
    ParamTensor cv_kernel;      // [D_c x 1 x 3 x 3]
    ParamTensor phi_guidance;   // [(2D + 1) x D]
    ParamTensor prompt;         // [1 x D], shared by every selected class
    std::vector<CrossLayerParams> cross;
    ParamTensor phi_patch;      // [D x D_c]
    ParamTensor fuse_w_q, fuse_w_k, fuse_w_v;  // [2 D_c x D_c]
    LayerNormParams fuse_ln1, fuse_ln2;
    MlpParams fuse_mlp;

    static TGAParams init(const TGAConfig& config, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

/// Values of the cost volume.
struct CostVolume {
    Tensor raw;    // [C_s x h_p x w_p] cosine map
    Tensor f_cv;   // [C_s x h_p x w_p x D_c]
    std::size_t dim_c() const { return f_cv.dim(3); }
};

struct TextualGuidance {
    Tensor t_g;      // [C_s x D]
    Tensor logits;   // [C_s x 1], <f_cls, e_sc[c]>
};

// Differentiable building blocks. Frozen encoder outputs enter as constants.

struct CostVolumeVars {
    ag::Var raw;   // constant
    ag::Var f_cv;
};

CostVolumeVars build_cost_volume(ag::Tape& t, const Tensor& f_patch, const Tensor& e_sc, std::size_t grid_h, std::size_t grid_w,
                                 TGAParams& p);
ag::Var build_textual_guidance(ag::Tape& t, const Tensor& f_cls, const Tensor& e_sc, TGAParams& p);
/// n_c rounds of patch-to-text cross attention; returns the refined [N x D] patch features.
ag::Var cross_modal_refine(ag::Tape& t, ag::Var f_patch, ag::Var t_g, TGAParams& p);
/// Per-class self-attention over the concatenation of f_cv and the projected patch features.
ag::Var fuse_cost_volume(ag::Tape& t, ag::Var f_cv, ag::Var f_patch_ref, TGAParams& p);

// Value-level wrappers (inference, no gradient recording).

CostVolume build_cost_volume(const Tensor& f_patch, const Tensor& e_sc, std::size_t grid_h, std::size_t grid_w, TGAParams& p);
TextualGuidance build_textual_guidance(const Tensor& f_cls, const Tensor& e_sc, TGAParams& p);
Tensor cross_modal_refine(const Tensor& f_patch, const Tensor& t_g, TGAParams& p);
Tensor fuse_cost_volume(const CostVolume& cv, const Tensor& f_patch_ref, TGAParams& p);

}  // namespace dcp
