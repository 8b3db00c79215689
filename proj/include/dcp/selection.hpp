#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "dcp/encoders.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

/// Patch- and image-level zero-shot scores.
struct ClassificationScores {
    Tensor s_patch;   // [C x N] cosine similarities
    Tensor s_img;     // [1 x C] softmax over classes
    double tau = 100.0;
};

struct PatchCandidates {
    std::vector<std::size_t> classes;           // distinct per-token winners, ascending
    std::vector<std::size_t> per_token_argmax;  // one entry per patch
};

/// Outcome of dynamic category selection. All index sets are ascending and duplicate-free.
struct SelectionResult {
    std::vector<std::size_t> c_patch;
    std::vector<std::size_t> c_image;
    std::vector<std::size_t> c_final;
    double theta = 0.5;
    Tensor refined;                             // [C x N]
    std::vector<std::size_t> per_token_argmax;
};

ClassificationScores compute_scores(const VisualFeatures& vis, const TextEmbeddings& text, double tau);

/// (1 - s_img(c)) * s_patch(c, i): dominant classes are damped per row.
Tensor refine_patch_scores(const ClassificationScores& scores);

/// Per-token argmax over classes, ties to the lowest index.
PatchCandidates select_patch_candidates(const Tensor& refined);

/// { c : s_img(c) > theta }.
std::vector<std::size_t> select_image_candidates(const Tensor& s_img, double theta);

/// Full selection; `force_include` is unioned into c_final (training-time ground truth).
SelectionResult select_categories(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau,
                                  const std::vector<std::size_t>* force_include = nullptr);

/// Selection that keeps every vocabulary class (selection disabled).
SelectionResult select_all(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau);

std::vector<std::size_t> sorted_union(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

}  // namespace dcp
