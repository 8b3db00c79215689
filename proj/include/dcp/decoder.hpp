#pragma once

#include <cstddef>
#include <vector>

#include "dcp/autograd.hpp"
#include "dcp/encoders.hpp"
#include "dcp/layers.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

struct SEDConfig {
    std::size_t dim_c = 16;          // channels entering level 0
    std::size_t n_s = 1;             // upsampling stages
    std::size_t window = 4;
    std::size_t heads = 2;
    std::size_t fv_channels = 8;     // channels of each F_v level
    std::size_t num_patches = 64;    // N, the A_CLIP channel count

    std::size_t level_dim(std::size_t level) const { return dim_c >> level; }
    /// Throws ConfigError when channels cannot halve n_s times or heads do not divide them.
    void validate() const;
};

/// Fusion and attention switches of the decoder.
struct SEDFlags {
    bool spatial_enhance = true;
    bool fuse_fv = true;
    bool fuse_aclip = true;
};

struct EnhanceParams {
    ParamTensor fv_kernel;      // [d x c_v x 3 x 3]
    ParamTensor aclip_kernel;   // [d x N x 1 x 1]
    ParamTensor w_q, w_k;       // [3d x d]
    ParamTensor w_v;            // [d x d]
    LayerNormParams ln1, ln2;
    MlpParams mlp;
};

struct UpsampleParams {
    ParamTensor transconv;      // [d x d/2 x 2 x 2]
    ParamTensor fv_kernel;      // [d/2 x c_v x 3 x 3]
    ParamTensor skip_fuse;      // [d/2 x (d + 1) x 3 x 3]
};

struct SEDParams {
    SEDConfig config;
    std::vector<EnhanceParams> enhance;    // n_s + 1 levels
    std::vector<UpsampleParams> upsample;  // n_s stages
    ParamTensor head;                      // [d_last x 1]

    static SEDParams init(const SEDConfig& config, Rng& rng);
    std::vector<ParamTensor*> parameters();
};

/// Frozen per-image inputs the decoder fuses at every level.
struct DecoderContext {
    const std::vector<Tensor>* f_v = nullptr;   // one [c_v x h_l x w_l] map per level
    const Tensor* a_clip = nullptr;             // [N x N]
    std::size_t grid_h = 0, grid_w = 0;
    SEDFlags flags;
};

/// Token order of (optionally shifted) windows: entry r is the flat grid position
/// that lands in window slot r. Returns the window side actually used per axis.
struct WindowLayout {
    std::size_t win_h = 0, win_w = 0, shift_h = 0, shift_w = 0;
    std::vector<std::size_t> order;   // length h * w
    Tensor mask;                      // [n_windows x m x m], 0 or -1e9
};
WindowLayout window_layout(std::size_t h, std::size_t w, std::size_t window, bool shifted);

/// One spatially enhanced attention block at `level`. feat: [C_s x h x w x d].
ag::Var spatial_enhance(ag::Tape& t, ag::Var feat, std::size_t level, bool shifted, const DecoderContext& ctx, SEDParams& p);
/// Transposed-conv doubling with raw-cost and F_v skips; returns [C_s x 2h x 2w x d/2].
ag::Var upsample_fuse(ag::Tape& t, ag::Var feat, ag::Var raw, std::size_t level, const DecoderContext& ctx, SEDParams& p);
/// Full decoder; returns F_last as [C_s x (4^n_s N) x (D_c / 2^n_s)].
ag::Var decode(ag::Tape& t, ag::Var f_cv_ref, ag::Var raw, const DecoderContext& ctx, SEDParams& p);
/// Per-position linear head, then bilinear resize: [C_s x H x W] raw logits.
ag::Var predict_logits(ag::Tape& t, ag::Var f_last, std::size_t h, std::size_t w, std::size_t out_h, std::size_t out_w,
                       ParamTensor& head);

Tensor decode(const Tensor& f_cv_ref, const Tensor& raw, const VisualFeatures& vis, SEDParams& p, SEDFlags flags = {});

}  // namespace dcp
