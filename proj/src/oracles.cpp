#include "dcp/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dcp/kernels.hpp"
#include "dcp/model.hpp"
#include "dcp/pipeline.hpp"
#include "dcp/rng.hpp"
#include "dcp/selection.hpp"

namespace dcp {

namespace {

double loop_cosine(const double* a, const double* b, std::size_t d) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < d; ++k) ab += a[k] * b[k], aa += a[k] * a[k], bb += b[k] * b[k];
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace

std::vector<std::size_t> reference_selection(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau) {
    const double* F = vis.f_patch.data().data();
    const double* E = text.e_t.data().data();
    const std::size_t N = vis.f_patch.dim(0), C = text.e_t.dim(0), D = text.e_t.dim(1);
    std::vector<double> img(C);
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, img[c] = tau * loop_cosine(vis.f_cls.data().data(), E + c * D, D));
    double z = 0;
    for (auto& v : img) z += (v = std::exp(v - mx));
    for (auto& v : img) v /= z;

    std::set<std::size_t> out;
    for (std::size_t i = 0; i < N; ++i) {
        std::size_t best = 0;
        double best_v = -INFINITY;
        for (std::size_t c = 0; c < C; ++c) {
            const double r = (1.0 - img[c]) * loop_cosine(F + i * D, E + c * D, D);
            if (r > best_v) best_v = r, best = c;
        }
        out.insert(best);
    }
    for (std::size_t c = 0; c < C; ++c)
        if (img[c] > theta) out.insert(c);
    return {out.begin(), out.end()};
}

double reference_miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, std::size_t vocab_size) {
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < vocab_size; ++c) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t p = 0; p < gt.size(); ++p) {
            if (gt[p] < 0 || static_cast<std::size_t>(gt[p]) >= vocab_size) continue;
            const bool a = static_cast<std::size_t>(pred[p]) == c, b = static_cast<std::size_t>(gt[p]) == c;
            inter += a && b;
            uni += a || b;
        }
        if (uni == 0) continue;
        total += static_cast<double>(inter) / static_cast<double>(uni);
        ++present;
    }
    return present ? total / static_cast<double>(present) : 0.0;
}

std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed, std::size_t instances) {
    Rng rng(seed);
    OracleCheck dcs{"dcs_brute_force"}, miou{"miou_loop"}, macs{"mac_audit"};

    const double thetas[] = {0.0, 0.25, 0.5, 0.75};
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t C = 1 + rng.index(32), N = 1 + rng.index(64), D = 4 + rng.index(12);
        VisualFeatures vis;
        vis.grid_h = 1;
        vis.grid_w = N;
        vis.f_patch = rng.normal_tensor({N, D});
        vis.f_cls = rng.normal_tensor({1, D});
        TextEmbeddings text;
        text.e_t = rng.normal_tensor({C, D});
        for (std::size_t c = 0; c < C; ++c) text.names.push_back("c" + std::to_string(c));
        text.seen.assign(C, true);
        const double theta = thetas[i % 4], tau = i % 2 ? 100.0 : 10.0;
        ++dcs.cases;
        if (select_categories(vis, text, theta, tau).c_final != reference_selection(vis, text, theta, tau)) ++dcs.failures;
    }

    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t V = 2 + rng.index(8), P = 1 + rng.index(200);
        std::vector<std::int32_t> pred(P), gt(P);
        for (std::size_t p = 0; p < P; ++p) {
            pred[p] = static_cast<std::int32_t>(rng.index(V));
            gt[p] = rng.index(10) == 0 ? -1 : static_cast<std::int32_t>(rng.index(V));
        }
        ++miou.cases;
        if (compute_miou(pred, gt, V).miou != reference_miou(pred, gt, V)) ++miou.failures;
    }

    for (const double theta : {0.0, 0.5}) {
        RunConfig config;
        config.theta = theta;
        config.flags.tv = false;
        const Workbench bench(config);
        auto model = DcpModel::init(config.model_config(), seed);
        const auto scene = bench.scenes(1, seed).front();
        const auto r = run_segment(bench, model, scene, 0);
        ++macs.cases;
        if (r.metrics.macs != forward_macs(config, bench.text.size(), r.output.selection.c_final.size())) ++macs.failures;
    }
    return {dcs, miou, macs};
}

}  // namespace dcp
