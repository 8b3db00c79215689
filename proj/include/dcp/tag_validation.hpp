#pragma once

#include <cstdint>
#include <vector>

#include "dcp/encoders.hpp"
#include "dcp/selection.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

/// Per-pixel prediction of one image.
struct SegmentationOutput {
    std::vector<std::int32_t> label_map;   // H*W vocabulary indices, row-major
    std::size_t height = 0, width = 0;
    Tensor soft_masks;                     // [C_s x H x W] sigmoid scores
    SelectionResult selection;
    bool validated = false;
};

/// 4-connected components of a label map. Component ids follow raster order of
/// each component's first pixel.
std::vector<std::size_t> connected_components(const std::vector<std::int32_t>& labels, std::size_t height, std::size_t width,
                                              std::size_t* count = nullptr);

/// Unit-length mean of the patch tokens covered by `mask` (H*W booleans). A patch counts
/// when more than half its pixels are in the mask; if none qualifies, any overlap counts.
Tensor pool_mask_features(const Tensor& f_patch, const std::vector<bool>& mask, std::size_t height, std::size_t width,
                          std::size_t grid_h, std::size_t grid_w);

/// 1-based rank of `cls` when all classes are ordered by descending similarity;
/// equal similarities rank the lower index first.
std::size_t similarity_rank(const Tensor& similarities, std::size_t cls);

/// Re-checks every region whose class is unseen: a label outside the top-k of its pooled
/// feature is replaced by the best-matching vocabulary class. Seen-class regions are never touched.
SegmentationOutput validate_tags(const SegmentationOutput& out, const VisualFeatures& vis, const TextEmbeddings& text, std::size_t k);

}  // namespace dcp
