// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcp/cli.hpp"
#include "dcp/decoder.hpp"
#include "dcp/error.hpp"
#include "dcp/gradsuite.hpp"
#include "dcp/kernels.hpp"
#include "dcp/pipeline.hpp"
#include "dcp/rng.hpp"
#include "dcp/selection.hpp"
#include "dcp/training.hpp"
#include "dcp/vocabulary.hpp"

using namespace dcp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
    std::printf("%s criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string fmt(const char* f, double a) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// 1. Backprop against central differences computed here, per parameter.
void gradient_suite() {
    const auto t0 = Clock::now();
    constexpr double h = 1e-5, tol = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    bool covered = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto problem = make_toy_problem(seed);
        const auto params = problem.model.parameters();
        std::set<std::string> groups;
        for (auto* p : params) groups.insert(p->name.substr(0, p->name.find('.')));
        covered = covered && groups == std::set<std::string>{"tga", "sed", "head"};

        for (auto* p : params) p->zero_grad();
        {
            ag::Tape tape;
            tape.backward(toy_loss(tape, problem));
        }
        auto eval = [&] {
            ag::Tape tape(false);
            return toy_loss(tape, problem).value()[0];
        };
        for (auto* p : params) {
            double diff = 0.0, ref = 0.0;
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double x = p->value[i];
                p->value[i] = x + h;
                const double fp = eval();
                p->value[i] = x - h;
                const double fm = eval();
                p->value[i] = x;
                const double num = (fp - fm) / (2 * h);
                diff += (p->grad[i] - num) * (p->grad[i] - num);
                ref += num * num;
            }
            const double err = std::sqrt(diff) / (std::sqrt(ref) + 1e-12);
            if (err > worst) worst = err, worst_name = p->name;
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    report(1, covered && worst <= tol && secs <= 120.0, "gradient suite over 5 seeds",
           std::to_string(checked) + " parameter checks, max rel err " + fmt("%.3g", worst) + " at " + worst_name + ", " +
               fmt("%.1f s", secs));
}

// 2. Selection against a double loop over (token, class).
std::vector<std::size_t> loop_selection(const VisualFeatures& vis, const TextEmbeddings& text, double theta, double tau) {
    const std::size_t N = vis.f_patch.dim(0), C = text.e_t.dim(0), D = text.e_t.dim(1);
    auto cos = [&](const Tensor& a, std::size_t ra, std::size_t rb) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < D; ++k) {
            const double x = a[ra * D + k], y = text.e_t[rb * D + k];
            ab += x * y, aa += x * x, bb += y * y;
        }
        return ab / (std::sqrt(aa) * std::sqrt(bb));
    };
    std::vector<double> img(C);
    for (std::size_t c = 0; c < C; ++c) img[c] = tau * cos(vis.f_cls, 0, c);
    const double mx = *std::max_element(img.begin(), img.end());
    double z = 0;
    for (auto& v : img) z += (v = std::exp(v - mx));
    for (auto& v : img) v /= z;
    std::set<std::size_t> out;
    for (std::size_t i = 0; i < N; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if ((1 - img[c]) * cos(vis.f_patch, i, c) > (1 - img[best]) * cos(vis.f_patch, i, best)) best = c;
        out.insert(best);
    }
    for (std::size_t c = 0; c < C; ++c)
        if (img[c] > theta) out.insert(c);
    return {out.begin(), out.end()};
}

void selection_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    const double thetas[] = {0.0, 0.25, 0.5, 0.75};
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const std::size_t C = 1 + rng.index(32), N = 1 + rng.index(64), D = 4 + rng.index(12);
        VisualFeatures vis;
        vis.grid_h = 1;
        vis.grid_w = N;
        vis.f_patch = rng.normal_tensor({N, D});
        vis.f_cls = rng.normal_tensor({1, D});
        TextEmbeddings text;
        text.e_t = rng.normal_tensor({C, D});
        text.names.resize(C);
        text.seen.assign(C, true);
        const double theta = thetas[i % 4], tau = 1.0 + rng.uniform(0.0, 99.0);
        mismatches += select_categories(vis, text, theta, tau).c_final != loop_selection(vis, text, theta, tau);
    }
    const double secs = seconds_since(t0);
    report(2, mismatches == 0 && secs <= 10.0, "DCS equals brute force on 100 instances",
           std::to_string(mismatches) + " mismatches, " + fmt("%.2f s", secs));
}

// 3. Decoder output extent.
void shape_law() {
    bool ok = true;
    std::string detail;
    const std::size_t Cs = 3, Dc = 16;
    for (std::size_t n_s : {1, 2})
        for (std::size_t grid : {2, 4, 8}) {
            Rng rng(grid * 10 + n_s);
            const std::size_t N = grid * grid;
            auto params = SEDParams::init({Dc, n_s, 4, 2, 8, N}, rng);
            VisualFeatures vis;
            vis.grid_h = vis.grid_w = grid;
            vis.a_clip = softmax(rng.normal_tensor({N, N}), 1);
            for (std::size_t l = 0; l <= n_s; ++l) vis.f_v.push_back(rng.normal_tensor({8, grid << l, grid << l}));
            const auto out = decode(rng.normal_tensor({Cs, grid, grid, Dc}), rng.normal_tensor({Cs, grid, grid}), vis, params);
            const Shape expect{Cs, static_cast<std::size_t>(std::pow(4, n_s)) * N, Dc / (std::size_t{1} << n_s)};
            ok = ok && out.dims() == expect;
            detail += (detail.empty() ? "" : ", ") + std::string("n_s=") + std::to_string(n_s) + " N=" + std::to_string(N) + " -> " +
                      shape_string(out.dims());
        }
    report(3, ok, "decode shape C_s x 4^N_s*N x D_c/2^N_s", detail);
}

// 4. Threshold sweep.
void theta_sweep() {
    const auto t0 = Clock::now();
    RunConfig config;
    config.classes = 64;
    config.flags.tv = false;
    const Workbench bench(config);
    auto model = DcpModel::init(config.model_config(), 0);
    const std::vector<double> thetas{0.0, 0.2, 0.5, 0.8, 0.9};
    const auto recs = sweep_theta(bench, model, thetas, bench.scenes(20, 11), false);
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (i > 0) ok = ok && recs[i].mean_selected <= recs[i - 1].mean_selected && recs[i].macs <= recs[i - 1].macs;
        detail += fmt("theta=%.1f", recs[i].theta) + fmt(" |c|=%.2f", recs[i].mean_selected) + ", ";
    }
    const double ratio = static_cast<double>(recs.back().macs) / static_cast<double>(recs.front().macs);
    const double secs = seconds_since(t0);
    ok = ok && ratio <= 0.6 && secs <= 60.0;
    report(4, ok, "theta sweep non-increasing, MAC(0.9) <= 0.6 MAC(0)", detail + fmt("MAC ratio %.3f, ", ratio) + fmt("%.1f s", secs));
}

// 5. Overfit on 8 two-region scenes with the default optimizer settings.
void overfit() {
    const auto t0 = Clock::now();
    RunConfig config;   // 16 classes, 8 scenes, 2 regions, 500 steps, lr 2e-4, wd 1e-4, batch 4
    const Workbench bench(config);
    auto model = DcpModel::init(config.model_config(), config.seed);
    const auto scenes = bench.scenes(config.scenes, config.seed);
    const auto result = train_overfit(bench, model, scenes, train_config(config));

    std::vector<double> windows;
    for (std::size_t s = 0; s + 50 <= result.losses.size(); s += 50)
        windows.push_back(std::accumulate(result.losses.begin() + s, result.losses.begin() + s + 50, 0.0) / 50.0);
    bool monotone = true;
    for (std::size_t i = 1; i < windows.size(); ++i) monotone = monotone && windows[i] <= windows[i - 1];
    const double secs = seconds_since(t0);
    const bool ok = result.losses.size() == 500 && result.final_miou >= 0.9 && monotone && secs <= 600.0;
    report(5, ok, "overfit 500 steps",
           fmt("mIoU %.3f", result.initial_miou) + fmt(" -> %.3f", result.final_miou) + fmt(", window loss %.4f", windows.front()) +
               fmt(" -> %.4f", windows.back()) + (monotone ? " monotone" : " NOT monotone") + fmt(", %.1f s", secs));
}

// 6. Tag validation contract on a painted scene: left half class 0 (seen), right half class 1 (unseen).
void tag_validation_contract() {
    auto text = encode_text(default_vocabulary(16), 32);
    set_seen(text, {text.names[0], text.names[2], text.names[5]});
    const ImageEncoder encoder({}, text.names);
    auto scene = uniform_scene(text, 0);
    paint_rect(scene, text, 1, 0, 16, 32, 32);
    const auto vis = encoder.encode(scene);
    auto labelled = [&](std::int32_t left, std::int32_t right) {
        SegmentationOutput out;
        out.height = out.width = 32;
        for (std::size_t p = 0; p < 32 * 32; ++p) out.label_map.push_back(p % 32 < 16 ? left : right);
        return out;
    };

    // Similarity order of the right region's pooled patches, computed here.
    const std::size_t D = vis.dim();
    std::vector<double> mean(D, 0.0), sims;
    for (std::size_t gy = 0; gy < 8; ++gy)
        for (std::size_t gx = 4; gx < 8; ++gx)
            for (std::size_t k = 0; k < D; ++k) mean[k] += vis.f_patch[(gy * 8 + gx) * D + k];
    for (std::size_t c = 0; c < text.size(); ++c) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < D; ++k) ab += mean[k] * text.e_t[c * D + k], aa += mean[k] * mean[k], bb += text.e_t[c * D + k] * text.e_t[c * D + k];
        sims.push_back(ab / std::sqrt(aa * bb));
    }
    std::vector<std::size_t> order(text.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sims[a] > sims[b]; });
    const std::size_t k = 3;
    std::vector<std::size_t> outside, inside;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (!text.seen[order[r]] && order[r] != 1) (r < k ? inside : outside).push_back(order[r]);

    // Case 1: seen left region with a wrong seen label.
    const auto seen_in = labelled(2, 1);
    const auto seen_out = validate_tags(seen_in, vis, text, k);
    bool seen_ok = true;
    for (std::size_t p = 0; p < seen_in.label_map.size(); ++p)
        if (p % 32 < 16) seen_ok = seen_ok && seen_out.label_map[p] == 2;

    // Case 2: unseen mislabel ranked outside the top-k.
    const auto wrong = labelled(0, static_cast<std::int32_t>(outside.back()));
    const auto fixed = validate_tags(wrong, vis, text, k);
    const bool corrected = fixed.label_map == labelled(0, 1).label_map;

    // Case 3: unseen label inside the top-k, wrong or right, is kept.
    bool retained = validate_tags(labelled(0, 1), vis, text, k).label_map == labelled(0, 1).label_map;
    for (auto c : inside) {
        const auto in = labelled(0, static_cast<std::int32_t>(c));
        retained = retained && validate_tags(in, vis, text, k).label_map == in.label_map;
    }

    // Idempotence over every left/right label pair.
    bool idempotent = true;
    for (std::int32_t a = 0; a < 16; ++a)
        for (std::int32_t b = 0; b < 16; ++b) {
            const auto once = validate_tags(labelled(a, b), vis, text, k);
            idempotent = idempotent && validate_tags(once, vis, text, k).label_map == once.label_map;
        }
    report(6, seen_ok && corrected && retained && idempotent, "tag validation contract",
           std::string("seen untouched ") + (seen_ok ? "yes" : "no") + ", corrected " + (corrected ? "yes" : "no") + ", retained " +
               (retained ? "yes" : "no") + " (" + std::to_string(inside.size()) + " in-top-k wrong labels), idempotent " +
               (idempotent ? "yes" : "no"));
}

// 7. Every single-component-off variant against all-on, on 20 training scenes.
void ablation() {
    const auto t0 = Clock::now();
    RunConfig config;
    config.scenes = 20;
    config.seed = 3;
    const Workbench bench(config);
    auto model = DcpModel::init(config.model_config(), config.seed);
    const auto scenes = bench.scenes(config.scenes, config.seed);
    train_overfit(bench, model, scenes, train_config(config));

    auto run = [&](const char* off) {
        Workbench variant = bench;
        if (off) apply_setting(variant.config, off, "0");
        return evaluate_miou(variant, model, scenes);
    };
    const double all_on = run(nullptr);
    bool ok = true;
    std::string detail = fmt("all-on %.4f", all_on);
    for (const char* off : {"dcs", "ca", "sa", "se", "fuse_fv", "fuse_aclip", "tv"}) {
        const double m = run(off);
        ok = ok && all_on >= m;
        detail += std::string(", -") + off + fmt(" %.4f", m);
    }
    report(7, ok, "ablation: all-on >= each single-off", detail + fmt(", %.1f s", seconds_since(t0)));
}

// 8. Two CLI runs of segment and train give byte-identical files.
int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "dcpclip");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void determinism() {
    const fs::path dir = fs::temp_directory_path() / "dcp_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto file = [&](const std::string& n) { return (dir / n).string(); };
    int codes = 0;
    for (const char* run : {"a", "b"}) {
        const std::string r = run;
        codes |= run_cli({"segment", "--theta", "0.5", "--seed", "1", "--out", file("seg_" + r + ".jsonl")});
        codes |= run_cli({"train", "--seed", "1", "--steps", "40", "--out", file("train_" + r + ".jsonl"), "--ckpt", file("model_" + r + ".ckpt")});
    }
    const bool seg = slurp(file("seg_a.jsonl")) == slurp(file("seg_b.jsonl")) && !slurp(file("seg_a.jsonl")).empty();
    const bool log = slurp(file("train_a.jsonl")) == slurp(file("train_b.jsonl")) && !slurp(file("train_a.jsonl")).empty();
    const bool ckpt = slurp(file("model_a.ckpt")) == slurp(file("model_b.ckpt")) && !slurp(file("model_a.ckpt")).empty();
    fs::remove_all(dir);
    report(8, codes == 0 && seg && log && ckpt, "segment and train are bit-identical across runs",
           std::string("segment ") + (seg ? "same" : "differs") + ", train log " + (log ? "same" : "differs") + ", checkpoint " +
               (ckpt ? "same" : "differs"));
}

}  // namespace

int main() {
    const std::vector<std::function<void()>> criteria{gradient_suite, selection_oracle, shape_law, theta_sweep, overfit,
                                                      tag_validation_contract, ablation, determinism};
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        try {
            criteria[i]();
        } catch (const std::exception& e) {
            report(static_cast<int>(i + 1), false, "threw", e.what());
        }
    }
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
