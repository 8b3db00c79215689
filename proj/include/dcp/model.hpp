#pragma once

#include <cstdint>
#include <vector>

#include "dcp/alignment.hpp"
#include "dcp/autograd.hpp"
#include "dcp/decoder.hpp"
#include "dcp/encoders.hpp"

namespace dcp {

/// Component switches. A disabled attention or enhance branch passes its input through unchanged.
struct AblationFlags {
    bool dcs = true;          // dynamic category selection (off: whole vocabulary)
    bool ca = true;           // text-guided cross attention
    bool sa = true;           // cost-volume self attention
    bool spatial_enhance = true;
    bool fuse_fv = true;
    bool fuse_aclip = true;
    bool tv = true;           // tag validation

    bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
    std::size_t dim = 32;
    std::size_t dim_c = 16;
    std::size_t n_c = 1;
    std::size_t n_s = 1;
    std::size_t window = 4;
    std::size_t tga_heads = 1;
    std::size_t sed_heads = 2;
    std::size_t fv_channels = 8;
    std::size_t grid_h = 8, grid_w = 8;

    TGAConfig tga() const { return {dim, dim_c, n_c, tga_heads}; }
    SEDConfig sed() const { return {dim_c, n_s, window, sed_heads, fv_channels, grid_h * grid_w}; }
};

/// Every trainable parameter of the segmentation head stack.
struct DcpModel {
    ModelConfig config;
    TGAParams tga;
    SEDParams sed;

    static DcpModel init(const ModelConfig& config, std::uint64_t seed);
    /// Stable order: TGA, then decoder, head last.
    std::vector<ParamTensor*> parameters();
    std::vector<const ParamTensor*> parameters() const;
};

/// Per-class raw logits [C_s x out_h x out_w] for the classes whose embeddings are `e_sc`.
ag::Var forward_logits(ag::Tape& t, DcpModel& model, const VisualFeatures& vis, const Tensor& e_sc, const AblationFlags& flags,
                       std::size_t out_h, std::size_t out_w);

/// Rows of `e_t` listed in `classes`, in order.
Tensor gather_embeddings(const Tensor& e_t, const std::vector<std::size_t>& classes);

}  // namespace dcp
