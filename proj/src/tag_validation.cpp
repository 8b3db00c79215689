#include "dcp/tag_validation.hpp"

#include <cmath>
#include <deque>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"

namespace dcp {

std::vector<std::size_t> connected_components(const std::vector<std::int32_t>& labels, std::size_t height, std::size_t width,
                                              std::size_t* count) {
    if (labels.size() != height * width) throw ShapeError("label map extent", {labels.size()}, {height, width});
    constexpr std::size_t unset = static_cast<std::size_t>(-1);
    std::vector<std::size_t> comp(labels.size(), unset);
    std::size_t next = 0;
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < labels.size(); ++start) {
        if (comp[start] != unset) continue;
        comp[start] = next;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t p = queue.front();
            queue.pop_front();
            const std::size_t y = p / width, x = p % width;
            auto visit = [&](std::size_t q) {
                if (comp[q] == unset && labels[q] == labels[start]) {
                    comp[q] = next;
                    queue.push_back(q);
                }
            };
            if (y > 0) visit(p - width);
            if (y + 1 < height) visit(p + width);
            if (x > 0) visit(p - 1);
            if (x + 1 < width) visit(p + 1);
        }
        ++next;
    }
    if (count) *count = next;
    return comp;
}

Tensor pool_mask_features(const Tensor& f_patch, const std::vector<bool>& mask, std::size_t height, std::size_t width,
                          std::size_t grid_h, std::size_t grid_w) {
    if (mask.size() != height * width) throw ShapeError("mask extent", {mask.size()}, {height, width});
    if (grid_h == 0 || grid_w == 0 || height % grid_h != 0 || width % grid_w != 0)
        throw ShapeError("image extent not divisible by the patch grid", {height, width}, {grid_h, grid_w});
    if (f_patch.rows() != grid_h * grid_w) throw ShapeError("patch features vs grid", f_patch.dims(), {grid_h, grid_w});
    const std::size_t ph = height / grid_h, pw = width / grid_w, D = f_patch.cols();
    std::vector<std::size_t> hits(grid_h * grid_w, 0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            if (mask[y * width + x]) ++hits[(y / ph) * grid_w + x / pw];
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < hits.size(); ++i)
        if (2 * hits[i] > ph * pw) chosen.push_back(i);
    if (chosen.empty())
        for (std::size_t i = 0; i < hits.size(); ++i)
            if (hits[i] > 0) chosen.push_back(i);
    if (chosen.empty()) throw DomainError("pool_mask_features: empty mask");
    Tensor out({1, D});
    for (std::size_t i : chosen)
        for (std::size_t k = 0; k < D; ++k) out[k] += f_patch[i * D + k];
    for (auto& v : out.data()) v /= static_cast<double>(chosen.size());
    const double n = l2_norm(out.data());
    if (n == 0.0) throw DomainError("pool_mask_features: pooled feature has zero norm");
    for (auto& v : out.data()) v /= n;
    return out;
}

std::size_t similarity_rank(const Tensor& similarities, std::size_t cls) {
    if (cls >= similarities.size()) throw ShapeError("similarity_rank class index", {cls}, similarities.dims());
    const double s = similarities[cls];
    std::size_t rank = 1;
    for (std::size_t c = 0; c < similarities.size(); ++c)
        if (similarities[c] > s || (similarities[c] == s && c < cls)) ++rank;
    return rank;
}

SegmentationOutput validate_tags(const SegmentationOutput& out, const VisualFeatures& vis, const TextEmbeddings& text, std::size_t k) {
    if (k == 0) throw DomainError("validate_tags: k must be at least 1");
    if (text.seen.size() != text.size()) throw ShapeError("seen mask vs vocabulary", {text.seen.size()}, {text.size()});
    SegmentationOutput result = out;
    result.validated = true;
    std::size_t regions = 0;
    const auto comp = connected_components(out.label_map, out.height, out.width, &regions);
    std::vector<std::vector<std::size_t>> pixels(regions);
    for (std::size_t p = 0; p < comp.size(); ++p) pixels[comp[p]].push_back(p);

    for (const auto& region : pixels) {
        const auto cls = static_cast<std::size_t>(out.label_map[region.front()]);
        if (cls >= text.size()) throw DomainError("label outside the vocabulary");
        if (text.seen[cls]) continue;
        std::vector<bool> mask(out.label_map.size(), false);
        for (auto p : region) mask[p] = true;
        const Tensor pooled = pool_mask_features(vis.f_patch, mask, out.height, out.width, vis.grid_h, vis.grid_w);
        const Tensor sims = cosine_similarity_matrix(pooled, text.e_t);
        if (similarity_rank(sims, cls) <= k) continue;
        std::size_t best = 0;
        for (std::size_t c = 1; c < sims.size(); ++c)
            if (sims[c] > sims[best]) best = c;
        for (auto p : region) result.label_map[p] = static_cast<std::int32_t>(best);
    }
    return result;
}

}  // namespace dcp
