#include "dcp/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"
#include "dcp/rng.hpp"

namespace dcp {

namespace {

void normalize_row(std::span<double> row) {
    const double n = l2_norm(row);
    if (n == 0.0) throw DomainError("cannot normalize a zero vector");
    for (auto& x : row) x /= n;
}

Tensor seeded(Rng& rng, Shape dims, double scale) { return rng.normal_tensor(std::move(dims), scale); }

}  // namespace

std::optional<std::size_t> TextEmbeddings::find(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
}

ClassSignature class_signature(const std::string& name) {
    if (name.empty()) throw DomainError("class_signature: empty category name");
    ClassSignature sig;
    sig.seed = fnv1a64(name);
    for (std::size_t c = 0; c < 3; ++c) {
        const std::uint64_t bits = mix64(sig.seed + 0x51ed27ULL * (c + 1));
        sig.color[c] = static_cast<double>(bits >> 11) * 0x1.0p-53;
    }
    return sig;
}

Tensor class_concept(const ClassSignature& sig, std::size_t dim) {
    Rng rng(mix64(sig.seed));
    Tensor v = rng.normal_tensor({dim});
    normalize_row(v.data());
    return v;
}

TextEmbeddings encode_text(const std::vector<std::string>& names, std::size_t dim, std::size_t n_templates,
                           std::uint64_t seed) {
    if (n_templates < 1) throw DomainError("encode_text: need at least one template");
    if (dim < 1) throw DomainError("encode_text: embedding width must be positive");
    std::set<std::string> unique;
    for (const auto& n : names)
        if (!unique.insert(n).second) throw DomainError("encode_text: duplicate category name '" + n + "'");

    TextEmbeddings out;
    out.names = names;
    out.seen.assign(names.size(), true);
    out.e_t = Tensor({names.size(), dim});
    const double spread = 0.5 / std::sqrt(static_cast<double>(dim));
    for (std::size_t c = 0; c < names.size(); ++c) {
        const auto sig = class_signature(names[c]);
        const Tensor concept_vec = class_concept(sig, dim);
        auto row = out.e_t.data().subspan(c * dim, dim);
        for (std::size_t t = 0; t < n_templates; ++t) {
            Rng rng(mix64(sig.seed ^ mix64(seed * 0x9e3779b97f4a7c15ULL + t)));
            std::vector<double> tmpl(dim);
            for (std::size_t j = 0; j < dim; ++j) tmpl[j] = concept_vec[j] + spread * rng.normal();
            normalize_row(tmpl);
            for (std::size_t j = 0; j < dim; ++j) row[j] += tmpl[j];
        }
        if (n_templates > 1) normalize_row(row);
    }
    return out;
}

void set_seen(TextEmbeddings& text, const std::vector<std::string>& seen_names) {
    std::fill(text.seen.begin(), text.seen.end(), false);
    for (const auto& n : seen_names) {
        auto idx = text.find(n);
        if (!idx) throw DomainError("seen class '" + n + "' is not in the vocabulary");
        text.seen[*idx] = true;
    }
}

ImageEncoder::ImageEncoder(EncoderConfig config, const std::vector<std::string>& vocabulary) : config_(config) {
    if (config_.dim == 0 || config_.patch == 0 || config_.heads == 0 || config_.dim % config_.heads != 0)
        throw ConfigError("image encoder: dim must be a positive multiple of heads");
    if (config_.pyramid_levels == 0) throw ConfigError("image encoder: need at least one pyramid level");
    if (config_.patch % (std::size_t{1} << (config_.pyramid_levels - 1)) != 0)
        throw ConfigError("image encoder: patch size must be divisible by 2^(pyramid_levels-1)");

    const std::size_t D = config_.dim;
    anchor_vectors_ = Tensor({vocabulary.size(), D});
    for (std::size_t a = 0; a < vocabulary.size(); ++a) {
        const auto sig = class_signature(vocabulary[a]);
        anchor_colors_.push_back(sig.color);
        const Tensor v = class_concept(sig, D);
        std::copy(v.data().begin(), v.data().end(), anchor_vectors_.data().begin() + static_cast<std::ptrdiff_t>(a * D));
    }

    Rng rng(mix64(config_.seed ^ 0x1f2e3d4c5b6a7988ULL));
    const std::size_t pix = 3 * config_.patch * config_.patch;
    const double s = config_.branch_scale;
    patch_proj_ = seeded(rng, {pix, D}, s / std::sqrt(static_cast<double>(pix)));
    cls_token_ = seeded(rng, {D}, s / std::sqrt(static_cast<double>(D)));
    for (std::size_t l = 0; l < config_.depth; ++l) {
        Layer L;
        const double w = 1.0 / std::sqrt(static_cast<double>(D));
        L.ln1_g = Tensor({D}, 1.0);
        L.ln1_b = Tensor({D});
        L.wq = seeded(rng, {D, D}, 2.0 * w);
        L.wk = seeded(rng, {D, D}, 2.0 * w);
        L.wv = seeded(rng, {D, D}, w);
        L.wo = seeded(rng, {D, D}, s * w);
        L.ln2_g = Tensor({D}, 1.0);
        L.ln2_b = Tensor({D});
        L.w1 = seeded(rng, {D, 4 * D}, w);
        L.b1 = Tensor({4 * D});
        L.w2 = seeded(rng, {4 * D, D}, s * 0.5 * w);
        L.b2 = Tensor({D});
        layers_.push_back(std::move(L));
    }
    for (std::size_t l = 0; l < config_.pyramid_levels; ++l)
        pyramid_kernels_.push_back(seeded(rng, {config_.pyramid_channels, 3, 3, 3}, 1.0 / std::sqrt(27.0)));
}

Tensor ImageEncoder::color_embedding(const std::array<double, 3>& rgb) const {
    const std::size_t D = config_.dim, A = anchor_colors_.size();
    Tensor out({D});
    if (A == 0) return out;
    std::vector<double> logits(A);
    double mx = -INFINITY;
    const double inv = 1.0 / (2.0 * config_.anchor_width * config_.anchor_width);
    for (std::size_t a = 0; a < A; ++a) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) d2 += (rgb[c] - anchor_colors_[a][c]) * (rgb[c] - anchor_colors_[a][c]);
        logits[a] = -d2 * inv;
        mx = std::max(mx, logits[a]);
    }
    double total = 0.0;
    for (auto& l : logits) {
        l = std::exp(l - mx);
        total += l;
    }
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t j = 0; j < D; ++j) out[j] += logits[a] / total * anchor_vectors_[a * D + j];
    return out;
}

VisualFeatures ImageEncoder::encode(const SyntheticScene& scene) const {
    const std::size_t p = config_.patch, D = config_.dim;
    if (scene.image.rank() != 3 || scene.image.dim(0) != 3) throw ShapeError("encode_image expects a [3 x H x W] image", scene.image.dims(), {3});
    const std::size_t H = scene.image.dim(1), W = scene.image.dim(2);
    if (H % p != 0 || W % p != 0) throw ShapeError("encode_image: image extent not divisible by patch size", {H, W}, {p, p});
    const std::size_t gh = H / p, gw = W / p, N = gh * gw, T = N + 1;

    // Patchify + embed. Row 0 is the [CLS] token.
    Tensor patches({N, 3 * p * p});
    Tensor tokens({T, D});
    std::vector<double> cls_init(D, 0.0);
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            const std::size_t n = py * gw + px;
            std::array<double, 3> mean{};
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) {
                        const double v = scene.image.at(c, py * p + y, px * p + x);
                        patches[n * 3 * p * p + (c * p + y) * p + x] = v;
                        mean[c] += v;
                    }
            for (auto& m : mean) m /= static_cast<double>(p * p);
            const Tensor aligned = color_embedding(mean);
            for (std::size_t j = 0; j < D; ++j) {
                tokens[(n + 1) * D + j] = aligned[j];
                cls_init[j] += aligned[j] / static_cast<double>(N);
            }
        }
    const Tensor projected = matmul(patches, patch_proj_);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < D; ++j) tokens[(n + 1) * D + j] += projected[n * D + j];
    for (std::size_t j = 0; j < D; ++j) tokens[j] = cls_init[j] + cls_token_[j];

    Tensor last_weights;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& L = layers_[l];
        const Tensor h = layer_norm(tokens, 1, L.ln1_g, L.ln1_b);
        const Tensor q = matmul(h, L.wq), k = matmul(h, L.wk), v = matmul(h, L.wv);
        Tensor weights;
        const Tensor att = grouped_attention(q.reshaped({1, T, D}), k.reshaped({1, T, D}), v.reshaped({1, T, D}), config_.heads,
                                             nullptr, &weights);
        const Tensor o = matmul(att.reshaped({T, D}), L.wo);
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += o[i];
        const Tensor h2 = layer_norm(tokens, 1, L.ln2_g, L.ln2_b);
        Tensor hidden = matmul(h2, L.w1);
        for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = gelu(hidden[i] + L.b1[i % (4 * D)]);
        const Tensor m = matmul(hidden, L.w2);
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += m[i] + L.b2[i % D];
        if (l + 1 == layers_.size()) last_weights = std::move(weights);
    }

    VisualFeatures out;
    out.grid_h = gh;
    out.grid_w = gw;
    out.f_cls = Tensor({1, D}, std::vector<double>(tokens.data().begin(), tokens.data().begin() + static_cast<std::ptrdiff_t>(D)));
    normalize_row(out.f_cls.data());
    out.f_patch = Tensor({N, D}, std::vector<double>(tokens.data().begin() + static_cast<std::ptrdiff_t>(D), tokens.data().end()));
    for (std::size_t n = 0; n < N; ++n) normalize_row(out.f_patch.data().subspan(n * D, D));

    // Head-averaged patch-to-patch block of the last attention map, rows renormalized.
    out.a_clip = Tensor({N, N});
    if (!last_weights.empty()) {
        const std::size_t heads = config_.heads;
        for (std::size_t i = 0; i < N; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                double s = 0.0;
                for (std::size_t h = 0; h < heads; ++h) s += last_weights[(h * T + i + 1) * T + j + 1];
                out.a_clip[i * N + j] = s / static_cast<double>(heads);
                total += out.a_clip[i * N + j];
            }
            for (std::size_t j = 0; j < N; ++j) out.a_clip[i * N + j] /= total;
        }
    } else {
        for (std::size_t i = 0; i < N; ++i) out.a_clip[i * N + i] = 1.0;
    }

    // Shallow pyramid: average-pool the image to each decoder extent, then a seeded 3x3 conv + GELU.
    for (std::size_t l = 0; l < config_.pyramid_levels; ++l) {
        const std::size_t f = p >> l, lh = gh << l, lw = gw << l;
        Tensor pooled({3, lh, lw});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < lh; ++y)
                for (std::size_t x = 0; x < lw; ++x) {
                    double s = 0.0;
                    for (std::size_t dy = 0; dy < f; ++dy)
                        for (std::size_t dx = 0; dx < f; ++dx) s += scene.image.at(c, y * f + dy, x * f + dx);
                    pooled.at(c, y, x) = s / static_cast<double>(f * f);
                }
        Tensor level = conv2d(pooled, pyramid_kernels_[l], 1, 1);
        for (auto& v : level.data()) v = gelu(v);
        out.f_v.push_back(std::move(level));
    }
    return out;
}

VisualFeatures encode_image(const SyntheticScene& scene, const ImageEncoder& encoder) { return encoder.encode(scene); }

void paint_rect(SyntheticScene& scene, const TextEmbeddings& vocab, std::size_t cls, std::size_t y0, std::size_t x0,
                std::size_t y1, std::size_t x1) {
    if (cls >= vocab.size()) throw DomainError("paint_rect: class index out of range");
    const auto color = class_signature(vocab.names[cls]).color;
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
            for (std::size_t c = 0; c < 3; ++c) scene.image.at(c, y, x) = color[c];
            scene.gt[y * scene.width + x] = static_cast<std::int32_t>(cls);
        }
}

SyntheticScene uniform_scene(const TextEmbeddings& vocab, std::size_t cls, const SceneGeometry& geometry) {
    SyntheticScene s;
    s.height = geometry.height;
    s.width = geometry.width;
    s.image = Tensor({3, s.height, s.width});
    s.gt.assign(s.height * s.width, 0);
    paint_rect(s, vocab, cls, 0, 0, s.height, s.width);
    return s;
}

SyntheticScene generate_scene(const TextEmbeddings& vocab, std::size_t n_regions, std::uint64_t seed,
                              const SceneGeometry& geometry, double noise, const std::vector<std::size_t>& pool) {
    std::vector<std::size_t> candidates = pool;
    if (candidates.empty())
        for (std::size_t c = 0; c < vocab.size(); ++c) candidates.push_back(c);
    if (n_regions < 1 || n_regions > candidates.size())
        throw DomainError("generate_scene: n_regions must lie in [1, number of candidate classes]");
    if (geometry.cell == 0 || geometry.height % geometry.cell || geometry.width % geometry.cell)
        throw ShapeError("generate_scene: extent not divisible by cell", {geometry.height, geometry.width}, {geometry.cell});

    Rng rng(mix64(seed ^ 0x5ce9e5ULL));
    struct Rect {
        std::size_t y0, x0, y1, x1;  // in cells
    };
    std::vector<Rect> rects{{0, 0, geometry.height / geometry.cell, geometry.width / geometry.cell}};
    while (rects.size() < n_regions) {
        // Split the largest rectangle along its longer side, keeping both parts at least one cell.
        std::size_t best = 0, best_area = 0;
        for (std::size_t i = 0; i < rects.size(); ++i) {
            const auto& r = rects[i];
            const std::size_t area = (r.y1 - r.y0) * (r.x1 - r.x0);
            if (area > best_area && std::max(r.y1 - r.y0, r.x1 - r.x0) >= 2) {
                best = i;
                best_area = area;
            }
        }
        if (best_area == 0) throw DomainError("generate_scene: grid too small for the requested region count");
        const Rect r = rects[best];
        const bool vertical = (r.x1 - r.x0) >= (r.y1 - r.y0);
        const std::size_t span = vertical ? r.x1 - r.x0 : r.y1 - r.y0;
        const std::size_t lo = std::max<std::size_t>(1, span / 4), hi = std::max(lo, span - std::max<std::size_t>(1, span / 4));
        const std::size_t cut = lo + rng.index(hi - lo + 1);
        if (vertical) {
            rects[best] = {r.y0, r.x0, r.y1, r.x0 + cut};
            rects.push_back({r.y0, r.x0 + cut, r.y1, r.x1});
        } else {
            rects[best] = {r.y0, r.x0, r.y0 + cut, r.x1};
            rects.push_back({r.y0 + cut, r.x0, r.y1, r.x1});
        }
    }

    // Partial Fisher-Yates for distinct classes.
    for (std::size_t i = 0; i < n_regions; ++i) std::swap(candidates[i], candidates[i + rng.index(candidates.size() - i)]);

    SyntheticScene s;
    s.height = geometry.height;
    s.width = geometry.width;
    s.image = Tensor({3, s.height, s.width});
    s.gt.assign(s.height * s.width, 0);
    const std::size_t cell = geometry.cell;
    for (std::size_t i = 0; i < n_regions; ++i)
        paint_rect(s, vocab, candidates[i], rects[i].y0 * cell, rects[i].x0 * cell, rects[i].y1 * cell, rects[i].x1 * cell);
    if (noise > 0.0)
        for (auto& v : s.image.data()) v = std::clamp(v + rng.uniform(-noise, noise), 0.0, 1.0);
    return s;
}

}  // namespace dcp
