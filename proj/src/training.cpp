#include "dcp/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dcp/error.hpp"
#include "dcp/feature_io.hpp"
#include "dcp/selection.hpp"

namespace dcp {

TrainConfig train_config(const RunConfig& run) {
    TrainConfig c;
    c.lr = run.lr;
    c.weight_decay = run.weight_decay;
    c.batch = run.batch;
    c.steps = run.steps;
    return c;
}

ag::Var bce_loss(ag::Var logits, const std::vector<std::int32_t>& gt, const std::vector<std::size_t>& classes, std::size_t vocab_size) {
    const Shape& dims = logits.dims();
    if (dims.size() != 3 || dims[0] != classes.size() || dims[1] * dims[2] != gt.size())
        throw ShapeError("bce_loss: logits vs selection/ground truth", dims, {classes.size(), gt.size()});
    const std::size_t hw = gt.size(), cs = classes.size();
    std::size_t valid = 0;
    for (auto g : gt)
        if (g >= 0 && static_cast<std::size_t>(g) < vocab_size) {
            ++valid;
            if (!std::binary_search(classes.begin(), classes.end(), static_cast<std::size_t>(g)))
                throw DomainError("bce_loss: ground-truth class " + std::to_string(g) + " is not in the selection (force_include off?)");
        }
    Tensor targets(dims), weights(dims);
    if (valid > 0) {
        const double w = 1.0 / (static_cast<double>(valid) * static_cast<double>(cs));
        for (std::size_t s = 0; s < cs; ++s)
            for (std::size_t p = 0; p < hw; ++p) {
                const auto g = gt[p];
                if (g < 0 || static_cast<std::size_t>(g) >= vocab_size) continue;
                weights[s * hw + p] = w;
                targets[s * hw + p] = static_cast<std::size_t>(g) == classes[s] ? 1.0 : 0.0;
            }
    }
    return ag::bce_with_logits(logits, targets, weights);
}

void AdamW::step(const std::vector<ParamTensor*>& params) {
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->value.dims());
            v_.emplace_back(p->value.dims());
        }
    }
    if (m_.size() != params.size()) throw ShapeError("AdamW: parameter count changed", {m_.size()}, {params.size()});
    for (auto* p : params)
        if (!p->grad.all_finite()) throw NonFiniteError("non-finite gradient in parameter '" + p->name + "'");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i]->value;
        const auto& grad = params[i]->grad;
        for (std::size_t k = 0; k < value.size(); ++k) {
            value[k] -= config_.lr * config_.weight_decay * value[k];
            m_[i][k] = config_.beta1 * m_[i][k] + (1.0 - config_.beta1) * grad[k];
            v_[i][k] = config_.beta2 * v_[i][k] + (1.0 - config_.beta2) * grad[k] * grad[k];
            value[k] -= config_.lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + config_.eps);
        }
    }
}

double evaluate_miou(const Workbench& bench, DcpModel& model, const std::vector<SyntheticScene>& scenes) {
    double total = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) total += run_segment(bench, model, scenes[i], i).metrics.miou;
    return scenes.empty() ? 0.0 : total / static_cast<double>(scenes.size());
}

TrainResult train_overfit(const Workbench& bench, DcpModel& model, const std::vector<SyntheticScene>& scenes, const TrainConfig& config) {
    if (scenes.empty()) throw DomainError("train_overfit: no scenes");
    if (config.batch == 0) throw DomainError("train_overfit: batch must be positive");
    const auto& text = bench.text;
    const auto options = bench.inference();

    // Encoders are frozen, so features and selections are fixed for the whole run.
    struct Prepared {
        VisualFeatures vis;
        std::vector<std::size_t> classes;
        Tensor e_sc;
    };
    std::vector<Prepared> data;
    for (const auto& scene : scenes) {
        Prepared p;
        p.vis = bench.encoder.encode(scene);
        std::set<std::size_t> present;
        for (auto g : scene.gt)
            if (g >= 0 && static_cast<std::size_t>(g) < text.size()) present.insert(static_cast<std::size_t>(g));
        const std::vector<std::size_t> force(present.begin(), present.end());
        const auto sel = options.flags.dcs ? select_categories(p.vis, text, options.theta, options.tau, config.force_include ? &force : nullptr)
                                           : select_all(p.vis, text, options.theta, options.tau);
        p.classes = sel.c_final;
        p.e_sc = gather_embeddings(text.e_t, p.classes);
        data.push_back(std::move(p));
    }

    TrainResult result;
    result.initial_miou = evaluate_miou(bench, model, scenes);
    const auto params = model.parameters();
    AdamW opt(config);
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        for (auto* p : params) p->zero_grad();
        ag::Tape tape;
        std::vector<ag::Var> losses;
        for (std::size_t b = 0; b < config.batch; ++b) {
            const std::size_t i = cursor++ % scenes.size();
            auto logits = forward_logits(tape, model, data[i].vis, data[i].e_sc, options.flags, scenes[i].height, scenes[i].width);
            losses.push_back(bce_loss(logits, scenes[i].gt, data[i].classes, text.size()));
        }
        auto total = losses.front();
        for (std::size_t b = 1; b < losses.size(); ++b) total = ag::add(total, losses[b]);
        auto mean = ag::scale(total, 1.0 / static_cast<double>(losses.size()));
        result.losses.push_back(mean.value()[0]);
        tape.backward(mean);
        opt.step(params);
    }
    result.final_miou = evaluate_miou(bench, model, scenes);
    return result;
}

}  // namespace dcp

namespace dcp {

void save_model(const DcpModel& model, const RunConfig& config, const std::string& path) {
    save_checkpoint(model.parameters(), config.to_text(), path);
}

DcpModel load_model(const std::string& path, RunConfig* config) {
    const auto ckpt = load_checkpoint(path);
    const RunConfig stored = parse_config(ckpt.config);
    stored.validate();
    auto model = DcpModel::init(stored.model_config(), stored.seed);
    auto params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw FormatError("checkpoint holds " + std::to_string(ckpt.params.size()) + " parameters, model expects " +
                              std::to_string(params.size()),
                          0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& src = ckpt.params[i];
        if (src.name != params[i]->name || src.value.dims() != params[i]->value.dims())
            throw FormatError("checkpoint parameter '" + src.name + "' does not match '" + params[i]->name + "'", 0);
        params[i]->value = src.value;
        params[i]->zero_grad();
    }
    if (config) *config = stored;
    return model;
}

}  // namespace dcp
