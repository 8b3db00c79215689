#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcp/tensor.hpp"

namespace dcp {

/// Per-image features from the (mock) vision encoder.
struct VisualFeatures {
    Tensor f_cls;              // [1 x D], unit norm
    Tensor f_patch;            // [N x D], unit-norm rows
    Tensor a_clip;             // [N x N], row-stochastic
    std::vector<Tensor> f_v;   // level l: [c_v x 2^l h_p x 2^l w_p]
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    std::size_t num_patches() const { return grid_h * grid_w; }
    std::size_t dim() const { return f_patch.cols(); }
};

/// Template-averaged category embeddings.
struct TextEmbeddings {
    Tensor e_t;                       // [C x D], unit-norm rows
    std::vector<std::string> names;
    std::vector<bool> seen;           // C_seen membership

    std::size_t size() const { return names.size(); }
    std::size_t dim() const { return e_t.cols(); }
    /// Index of `name`, if present.
    std::optional<std::size_t> find(const std::string& name) const;
};

/// Generated test image with its per-pixel ground truth.
struct SyntheticScene {
    Tensor image;                        // [3 x H x W], values in [0, 1]
    std::vector<std::int32_t> gt;        // H*W vocabulary indices, row-major
    std::size_t height = 0;
    std::size_t width = 0;
};

struct ClassSignature {
    std::uint64_t seed = 0;
    std::array<double, 3> color{};
};

/// Stable name -> (seed, color) mapping shared by both mock modalities.
ClassSignature class_signature(const std::string& name);

/// Direction the mock encoders agree on for a class; both modalities are built around it.
Tensor class_concept(const ClassSignature& sig, std::size_t dim);

TextEmbeddings encode_text(const std::vector<std::string>& names, std::size_t dim, std::size_t n_templates = 8,
                           std::uint64_t seed = 0);

/// Marks the listed names as seen; every other class becomes unseen.
void set_seen(TextEmbeddings& text, const std::vector<std::string>& seen_names);

struct EncoderConfig {
    std::size_t dim = 32;          // D
    std::size_t patch = 4;         // pixels per patch side
    std::size_t depth = 2;
    std::size_t heads = 2;
    std::size_t pyramid_levels = 2;
    std::size_t pyramid_channels = 8;
    double anchor_width = 0.04;    // color-space kernel width of the alignment bank
    double branch_scale = 0.05;    // weight scale of the transformer sublayers
    std::uint64_t seed = 0;
};

/// Frozen seeded ViT-style encoder. Its color bank is derived from the
/// vocabulary's class signatures so painted patches align with their class text.
class ImageEncoder {
public:
    ImageEncoder(EncoderConfig config, const std::vector<std::string>& vocabulary);

    VisualFeatures encode(const SyntheticScene& scene) const;
    const EncoderConfig& config() const { return config_; }

    /// Aligned embedding (before the transformer) of a mean patch color.
    Tensor color_embedding(const std::array<double, 3>& rgb) const;

private:
    struct Layer {
        Tensor ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    EncoderConfig config_;
    std::vector<std::array<double, 3>> anchor_colors_;
    Tensor anchor_vectors_;   // [A x D]
    Tensor patch_proj_;       // [3 p^2 x D]
    Tensor cls_token_;        // [D]
    std::vector<Layer> layers_;
    std::vector<Tensor> pyramid_kernels_;
};

VisualFeatures encode_image(const SyntheticScene& scene, const ImageEncoder& encoder);

struct SceneGeometry {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t cell = 4;     // region boundaries snap to multiples of this
};

/// Paints `n_regions` axis-aligned rectangles with distinct classes drawn from
/// `pool` (default: the whole vocabulary).
SyntheticScene generate_scene(const TextEmbeddings& vocab, std::size_t n_regions, std::uint64_t seed,
                              const SceneGeometry& geometry = {}, double noise = 0.05,
                              const std::vector<std::size_t>& pool = {});

/// Fills a single rectangle of an existing scene with class `cls` (no noise).
void paint_rect(SyntheticScene& scene, const TextEmbeddings& vocab, std::size_t cls, std::size_t y0, std::size_t x0,
                std::size_t y1, std::size_t x1);

SyntheticScene uniform_scene(const TextEmbeddings& vocab, std::size_t cls, const SceneGeometry& geometry = {});

}  // namespace dcp
