#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcp/encoders.hpp"

namespace dcp {

/// Direct double-loop evaluation of the selection rules, sharing no kernels with
/// select_categories. Returns c_final.
std::vector<std::size_t> reference_selection(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau);

/// Pixel-loop mIoU reference.
double reference_miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, std::size_t vocab_size);

struct OracleCheck {
    std::string name;
    std::size_t cases = 0;
    std::size_t failures = 0;
    bool ok() const { return failures == 0; }
};

/// Library routines checked against the references above on random inputs.
/// The MAC audit compares forward_macs with the kernel counter.
std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed, std::size_t instances = 100);

}  // namespace dcp
