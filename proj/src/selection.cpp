#include "dcp/selection.hpp"

#include <algorithm>
#include <set>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"

namespace dcp {

ClassificationScores compute_scores(const VisualFeatures& vis, const TextEmbeddings& text, double tau) {
    if (vis.dim() != text.dim()) throw ShapeError("compute_scores: visual/text width mismatch", vis.f_patch.dims(), text.e_t.dims());
    if (!(tau > 0.0)) throw DomainError("compute_scores: tau must be positive");
    ClassificationScores s;
    s.tau = tau;
    s.s_patch = transpose(cosine_similarity_matrix(vis.f_patch, text.e_t));
    s.s_img = softmax(cosine_similarity_matrix(vis.f_cls, text.e_t), 1, tau);
    return s;
}

Tensor refine_patch_scores(const ClassificationScores& scores) {
    const std::size_t C = scores.s_patch.dim(0), N = scores.s_patch.dim(1);
    if (scores.s_img.size() != C) throw ShapeError("refine_patch_scores", scores.s_patch.dims(), scores.s_img.dims());
    Tensor out({C, N});
    for (std::size_t c = 0; c < C; ++c) {
        const double keep = 1.0 - scores.s_img[c];
        for (std::size_t i = 0; i < N; ++i) out[c * N + i] = keep * scores.s_patch[c * N + i];
    }
    return out;
}

PatchCandidates select_patch_candidates(const Tensor& refined) {
    if (refined.rank() != 2 || refined.dim(0) == 0) throw ShapeError("select_patch_candidates expects [C x N], C >= 1", refined.dims(), {});
    const std::size_t C = refined.dim(0), N = refined.dim(1);
    PatchCandidates out;
    out.per_token_argmax.resize(N);
    std::vector<bool> hit(C, false);
    for (std::size_t i = 0; i < N; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (refined[c * N + i] > refined[best * N + i]) best = c;
        out.per_token_argmax[i] = best;
        hit[best] = true;
    }
    for (std::size_t c = 0; c < C; ++c)
        if (hit[c]) out.classes.push_back(c);
    return out;
}

std::vector<std::size_t> select_image_candidates(const Tensor& s_img, double theta) {
    if (!(theta >= 0.0 && theta <= 1.0)) throw DomainError("select_image_candidates: theta must lie in [0, 1]");
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < s_img.size(); ++c)
        if (s_img[c] > theta) out.push_back(c);
    return out;
}

std::vector<std::size_t> sorted_union(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::set<std::size_t> s(a.begin(), a.end());
    s.insert(b.begin(), b.end());
    return {s.begin(), s.end()};
}

SelectionResult select_categories(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau,
                                  const std::vector<std::size_t>* force_include) {
    const auto scores = compute_scores(vis, text, tau);
    SelectionResult r;
    r.theta = theta;
    r.refined = refine_patch_scores(scores);
    auto patch = select_patch_candidates(r.refined);
    r.c_patch = std::move(patch.classes);
    r.per_token_argmax = std::move(patch.per_token_argmax);
    r.c_image = select_image_candidates(scores.s_img, theta);
    r.c_final = sorted_union(r.c_patch, r.c_image);
    if (force_include) {
        for (auto c : *force_include)
            if (c >= text.size()) throw DomainError("force_include: class index out of range");
        r.c_final = sorted_union(r.c_final, *force_include);
    }
    return r;
}

SelectionResult select_all(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau) {
    SelectionResult r = select_categories(vis, text, theta, tau);
    r.c_final.resize(text.size());
    for (std::size_t c = 0; c < text.size(); ++c) r.c_final[c] = c;
    return r;
}

}  // namespace dcp
