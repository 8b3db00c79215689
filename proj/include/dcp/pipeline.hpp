#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcp/encoders.hpp"
#include "dcp/model.hpp"
#include "dcp/tag_validation.hpp"

namespace dcp {

/// Every knob of a run. Parsed from key=value text and overridden by CLI flags.
struct RunConfig {
    double theta = 0.5;
    double tau = 100.0;
    std::size_t topk = 5;
    std::size_t n_c = 1;
    std::size_t n_s = 1;
    std::size_t window = 4;
    std::size_t dim = 32;
    std::size_t dim_c = 16;
    std::size_t patch = 4;
    std::size_t image_size = 32;
    std::size_t classes = 16;        // default vocabulary size when no class file is given
    std::size_t regions = 2;         // regions per generated scene
    std::size_t scenes = 8;
    std::size_t steps = 500;
    std::size_t batch = 4;
    double lr = 2e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    AblationFlags flags;
    std::vector<std::string> class_names;   // overrides `classes` when non-empty
    std::vector<std::string> seen;          // empty: every class is seen

    /// Throws ConfigError on inconsistent dimensions.
    void validate() const;
    std::size_t grid() const { return image_size / patch; }
    ModelConfig model_config() const;
    EncoderConfig encoder_config() const;
    /// Vocabulary names in use.
    std::vector<std::string> vocabulary() const;
    /// Canonical key=value text; parse_config(to_text()) reproduces the config.
    std::string to_text() const;
};

/// Applies one key=value setting. Unknown keys and malformed values throw ConfigError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
/// Parses key=value lines; '#' starts a comment.
RunConfig parse_config(const std::string& text, RunConfig base = {});

struct MiouResult {
    std::map<std::size_t, double> per_class;   // classes present in either map
    double miou = 0.0;
};

/// Pixels whose ground truth lies outside [0, vocab_size) are ignored.
MiouResult compute_miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, std::size_t vocab_size);

struct InferenceOptions {
    double theta = 0.5;
    double tau = 100.0;
    std::size_t topk = 5;
    AblationFlags flags;
};

/// Selection -> alignment -> decoder -> per-pixel argmax -> optional tag validation.
SegmentationOutput segment(DcpModel& model, const VisualFeatures& vis, const TextEmbeddings& text, std::size_t height,
                           std::size_t width, const InferenceOptions& options);

/// Forward multiply-accumulates of the whole metered pass for one image,
/// with `selected` classes reaching the head stack. Matches the kernel counter exactly.
std::uint64_t forward_macs(const RunConfig& config, std::size_t vocab_size, std::size_t selected);

struct MetricsRecord {
    std::size_t scene = 0;
    double theta = 0.0;
    double miou = 0.0;
    double mean_selected = 0.0;   // mean |c_final|
    std::uint64_t macs = 0;
    double wall_ms = -1.0;        // negative: not reported
};

/// One JSON object per line.
std::string to_json(const MetricsRecord& r, const RunConfig& config);

/// Everything needed to run the pipeline on generated scenes.
struct Workbench {
    RunConfig config;
    TextEmbeddings text;
    ImageEncoder encoder;

    explicit Workbench(RunConfig config);
    std::vector<SyntheticScene> scenes(std::size_t count, std::uint64_t seed) const;
    InferenceOptions inference() const { return {config.theta, config.tau, config.topk, config.flags}; }
};

struct SceneResult {
    SegmentationOutput output;
    MetricsRecord metrics;
};

/// Encodes and segments one scene, counting forward MACs.
SceneResult run_segment(const Workbench& bench, DcpModel& model, const SyntheticScene& scene, std::size_t index);

/// One record per theta, averaged over scenes. Records come back in input order.
std::vector<MetricsRecord> sweep_theta(const Workbench& bench, DcpModel& model, const std::vector<double>& thetas,
                                       const std::vector<SyntheticScene>& scenes, bool timed = true);

}  // namespace dcp
