#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcp/autograd.hpp"
#include "dcp/pipeline.hpp"

namespace dcp {

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-4;
    std::size_t batch = 4;
    std::size_t steps = 500;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    bool force_include = true;   // union ground-truth classes into c_final while training
};

TrainConfig train_config(const RunConfig& run);

/// Mean BCE over valid pixels and the selected classes. Pixels with ground truth
/// outside the vocabulary are ignored; a present class missing from `classes` throws.
ag::Var bce_loss(ag::Var logits, const std::vector<std::int32_t>& gt, const std::vector<std::size_t>& classes, std::size_t vocab_size);

/// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
public:
    explicit AdamW(TrainConfig config) : config_(config) {}
    /// Updates every parameter from its gradient. Throws NonFiniteError naming the parameter.
    void step(const std::vector<ParamTensor*>& params);
    std::size_t steps() const { return t_; }

private:
    TrainConfig config_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

struct TrainResult {
    std::vector<double> losses;   // batch mean per step
    double initial_miou = 0.0;
    double final_miou = 0.0;
};

/// Mean mIoU of the current model over the scenes.
double evaluate_miou(const Workbench& bench, DcpModel& model, const std::vector<SyntheticScene>& scenes);

/// Trains all head-stack parameters on the scenes (encoders frozen). Batches cycle
/// through the scenes in order.
TrainResult train_overfit(const Workbench& bench, DcpModel& model, const std::vector<SyntheticScene>& scenes, const TrainConfig& config);

}  // namespace dcp

namespace dcp {

/// Writes every model parameter plus the run config text as a checkpoint file.
void save_model(const DcpModel& model, const RunConfig& config, const std::string& path);

/// Restores a model from a checkpoint. The stored config is parsed into `config`
/// when given; parameter names and shapes must match the rebuilt model exactly.
DcpModel load_model(const std::string& path, RunConfig* config = nullptr);

}  // namespace dcp
