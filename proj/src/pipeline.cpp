#include "dcp/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <charconv>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcp/error.hpp"
#include "dcp/kernels.hpp"
#include "dcp/rng.hpp"
#include "dcp/vocabulary.hpp"

namespace dcp {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t to_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a real number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');)
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

std::string real_text(double d) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, ptr);
}

}  // namespace

void RunConfig::validate() const {
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in [0, 1]");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (topk == 0) throw ConfigError("topk must be at least 1");
    if (patch == 0 || image_size == 0 || image_size % patch != 0) throw ConfigError("image size must be a positive multiple of the patch size");
    if (n_s == 0 || n_s >= 16 || patch % (std::size_t{1} << n_s) != 0)
        throw ConfigError("patch size must be divisible by 2^n_s so every decoder level has an F_v map");
    if (dim == 0 || dim_c == 0 || n_c == 0) throw ConfigError("dimensions must be positive");
    if (dim_c % (std::size_t{1} << n_s) != 0) throw ConfigError("D_c must be divisible by 2^n_s");
    if (batch == 0) throw ConfigError("batch must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (regions == 0) throw ConfigError("regions must be at least 1");
    model_config().sed().validate();
    const auto vocab = vocabulary();
    if (regions > vocab.size()) throw ConfigError("more regions than vocabulary classes");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.dim = dim;
    m.dim_c = dim_c;
    m.n_c = n_c;
    m.n_s = n_s;
    m.window = window;
    m.grid_h = m.grid_w = grid();
    return m;
}

EncoderConfig RunConfig::encoder_config() const {
    EncoderConfig e;
    e.dim = dim;
    e.patch = patch;
    e.pyramid_levels = n_s + 1;
    e.pyramid_channels = model_config().fv_channels;
    return e;
}

std::vector<std::string> RunConfig::vocabulary() const { return class_names.empty() ? default_vocabulary(classes) : class_names; }

std::string RunConfig::to_text() const {
    std::ostringstream o;
    o << "theta=" << real_text(theta) << "\ntau=" << real_text(tau) << "\ntopk=" << topk << "\nnc=" << n_c << "\nns=" << n_s
      << "\nwindow=" << window << "\ndim=" << dim << "\ndimc=" << dim_c << "\npatch=" << patch << "\nimgsize=" << image_size
      << "\nclasses=" << classes << "\nregions=" << regions << "\nscenes=" << scenes << "\nsteps=" << steps << "\nbatch=" << batch
      << "\nlr=" << real_text(lr) << "\nwd=" << real_text(weight_decay) << "\nseed=" << seed << "\ndcs=" << flags.dcs
      << "\nca=" << flags.ca << "\nsa=" << flags.sa << "\nse=" << flags.spatial_enhance << "\nfuse_fv=" << flags.fuse_fv
      << "\nfuse_aclip=" << flags.fuse_aclip << "\ntv=" << flags.tv << "\n";
    if (!class_names.empty()) o << "class_names=" << join(class_names) << "\n";
    if (!seen.empty()) o << "seen=" << join(seen) << "\n";
    return o.str();
}

void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key), v = trim(raw_value);
    if (key == "theta") c.theta = to_real(key, v);
    else if (key == "tau") c.tau = to_real(key, v);
    else if (key == "topk") c.topk = to_count(key, v);
    else if (key == "nc") c.n_c = to_count(key, v);
    else if (key == "ns") c.n_s = to_count(key, v);
    else if (key == "window") c.window = to_count(key, v);
    else if (key == "dim") c.dim = to_count(key, v);
    else if (key == "dimc") c.dim_c = to_count(key, v);
    else if (key == "patch") c.patch = to_count(key, v);
    else if (key == "imgsize") c.image_size = to_count(key, v);
    else if (key == "classes") c.classes = to_count(key, v);
    else if (key == "regions") c.regions = to_count(key, v);
    else if (key == "scenes") c.scenes = to_count(key, v);
    else if (key == "steps") c.steps = to_count(key, v);
    else if (key == "batch") c.batch = to_count(key, v);
    else if (key == "lr") c.lr = to_real(key, v);
    else if (key == "wd") c.weight_decay = to_real(key, v);
    else if (key == "seed") c.seed = to_count(key, v);
    else if (key == "dcs") c.flags.dcs = to_bool(key, v);
    else if (key == "ca") c.flags.ca = to_bool(key, v);
    else if (key == "sa") c.flags.sa = to_bool(key, v);
    else if (key == "se") c.flags.spatial_enhance = to_bool(key, v);
    else if (key == "fuse_fv") c.flags.fuse_fv = to_bool(key, v);
    else if (key == "fuse_aclip") c.flags.fuse_aclip = to_bool(key, v);
    else if (key == "tv") c.flags.tv = to_bool(key, v);
    else if (key == "class_names") c.class_names = split_list(v);
    else if (key == "seen") c.seen = split_list(v);
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
        apply_setting(base, line.substr(0, eq), line.substr(eq + 1));
    }
    return base;
}

MiouResult compute_miou(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, std::size_t vocab_size) {
    if (pred.size() != gt.size()) throw ShapeError("compute_miou: prediction vs ground truth", {pred.size()}, {gt.size()});
    std::vector<std::size_t> inter(vocab_size, 0), uni(vocab_size, 0);
    auto valid = [&](std::int32_t v) { return v >= 0 && static_cast<std::size_t>(v) < vocab_size; };
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!valid(gt[i])) continue;
        const auto g = static_cast<std::size_t>(gt[i]);
        if (pred[i] == gt[i]) {
            ++inter[g];
            ++uni[g];
        } else {
            ++uni[g];
            if (valid(pred[i])) ++uni[static_cast<std::size_t>(pred[i])];
        }
    }
    MiouResult r;
    double total = 0.0;
    for (std::size_t c = 0; c < vocab_size; ++c) {
        if (uni[c] == 0) continue;
        r.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        total += r.per_class[c];
    }
    r.miou = r.per_class.empty() ? 0.0 : total / static_cast<double>(r.per_class.size());
    return r;
}

SegmentationOutput segment(DcpModel& model, const VisualFeatures& vis, const TextEmbeddings& text, std::size_t height,
                           std::size_t width, const InferenceOptions& options) {
    SegmentationOutput out;
    out.selection = options.flags.dcs ? select_categories(vis, text, options.theta, options.tau)
                                      : select_all(vis, text, options.theta, options.tau);
    const auto& classes = out.selection.c_final;
    ag::Tape tape(false);
    Tensor logits = forward_logits(tape, model, vis, gather_embeddings(text.e_t, classes), options.flags, height, width).value();
    for (auto& v : logits.data()) v = 1.0 / (1.0 + std::exp(-v));
    out.soft_masks = std::move(logits);
    out.height = height;
    out.width = width;
    out.label_map.resize(height * width);
    const std::size_t hw = height * width;
    for (std::size_t p = 0; p < hw; ++p) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < classes.size(); ++s)
            if (out.soft_masks[s * hw + p] > out.soft_masks[best * hw + p]) best = s;
        out.label_map[p] = static_cast<std::int32_t>(classes[best]);
    }
    if (options.flags.tv) out = validate_tags(out, vis, text, options.topk);
    return out;
}

std::uint64_t forward_macs(const RunConfig& config, std::size_t C, std::size_t Cs) {
    using u64 = std::uint64_t;
    const auto mc = config.model_config();
    const auto ec = config.encoder_config();
    const u64 D = config.dim, Dc = config.dim_c, p = config.patch, gh = config.grid(), N = gh * gh, T = N + 1;
    const u64 cv = mc.fv_channels, S = Cs;
    const auto& f = config.flags;
    u64 total = 0;

    // Frozen image encoder.
    total += N * 3 * p * p * D;
    total += ec.depth * (3 * T * D * D + T * T * 2 * D + T * D * D + 2 * T * D * 4 * D);
    for (u64 l = 0; l <= config.n_s; ++l) total += cv * (gh << l) * (gh << l) * 3 * 9;

    // Scoring against the whole vocabulary.
    total += N * C * D + C * D;

    // Alignment.
    total += S * N * D + S * Dc * N * 9;
    if (f.ca) {
        total += S * D + S * (2 * D + 1) * D;
        total += config.n_c * (N * D * D + 2 * S * D * D + N * S * 2 * D + 2 * N * D * 4 * D);
    }
    if (f.sa) total += N * D * Dc + 3 * S * N * 2 * Dc * Dc + S * N * N * 2 * Dc + 2 * S * N * Dc * 4 * Dc;

    // Decoder.
    for (u64 l = 0; l <= config.n_s; ++l) {
        const u64 h = gh << l, P = h * h, d = Dc >> l;
        if (f.spatial_enhance) {
            const u64 win = std::min<u64>(config.window, h), m = win * win;
            if (f.fuse_fv) total += d * P * cv * 9;
            if (f.fuse_aclip) total += d * N * N;
            total += 2 * S * P * 3 * d * d + S * P * d * d + S * P * m * 2 * d + 2 * S * P * d * 4 * d;
        }
        if (l < config.n_s) {
            total += S * (d / 2) * 4 * P * d + S * (d / 2) * 4 * P * (d + 1) * 9;
            if (f.fuse_fv) total += (d / 2) * P * cv * 9;
        } else {
            total += S * P * d;
        }
    }
    return total;
}

std::string to_json(const MetricsRecord& r, const RunConfig& config) {
    nlohmann::ordered_json j;
    j["scene"] = r.scene;
    j["theta"] = r.theta;
    j["miou"] = r.miou;
    j["mean_selected"] = r.mean_selected;
    j["macs"] = r.macs;
    if (r.wall_ms >= 0.0) j["wall_ms"] = r.wall_ms;
    j["seed"] = config.seed;
    j["flags"] = {{"dcs", config.flags.dcs},
                  {"ca", config.flags.ca},
                  {"sa", config.flags.sa},
                  {"se", config.flags.spatial_enhance},
                  {"fuse_fv", config.flags.fuse_fv},
                  {"fuse_aclip", config.flags.fuse_aclip},
                  {"tv", config.flags.tv}};
    return j.dump();
}

namespace {

TextEmbeddings make_text(const RunConfig& config) {
    config.validate();
    auto text = encode_text(config.vocabulary(), config.dim);
    if (!config.seen.empty()) set_seen(text, config.seen);
    return text;
}

}  // namespace

Workbench::Workbench(RunConfig c) : config(std::move(c)), text(make_text(config)), encoder(config.encoder_config(), text.names) {}

std::vector<SyntheticScene> Workbench::scenes(std::size_t count, std::uint64_t seed) const {
    const SceneGeometry geometry{config.image_size, config.image_size, config.patch};
    std::vector<SyntheticScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(text, config.regions, mix64(seed * 1000003ULL + i), geometry));
    return out;
}

SceneResult run_segment(const Workbench& bench, DcpModel& model, const SyntheticScene& scene, std::size_t index) {
    SceneResult r;
    auto options = bench.inference();
    const bool tv = options.flags.tv;
    options.flags.tv = false;
    const MacScope macs;
    const auto vis = bench.encoder.encode(scene);
    r.output = segment(model, vis, bench.text, scene.height, scene.width, options);
    r.metrics.macs = macs.elapsed();
    if (tv) r.output = validate_tags(r.output, vis, bench.text, options.topk);
    r.metrics.scene = index;
    r.metrics.theta = options.theta;
    r.metrics.miou = compute_miou(r.output.label_map, scene.gt, bench.text.size()).miou;
    r.metrics.mean_selected = static_cast<double>(r.output.selection.c_final.size());
    return r;
}

std::vector<MetricsRecord> sweep_theta(const Workbench& bench, DcpModel& model, const std::vector<double>& thetas,
                                       const std::vector<SyntheticScene>& scenes, bool timed) {
    if (!std::is_sorted(thetas.begin(), thetas.end())) throw DomainError("sweep_theta: thetas must be ascending");
    if (scenes.empty()) throw DomainError("sweep_theta: no scenes");
    std::vector<MetricsRecord> out;
    for (double theta : thetas) {
        Workbench local = bench;
        local.config.theta = theta;
        const auto start = std::chrono::steady_clock::now();
        MetricsRecord rec;
        rec.theta = theta;
        rec.scene = scenes.size();
        double miou = 0.0, selected = 0.0;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            const auto r = run_segment(local, model, scenes[i], i);
            miou += r.metrics.miou;
            selected += r.metrics.mean_selected;
            rec.macs += r.metrics.macs;
        }
        rec.miou = miou / static_cast<double>(scenes.size());
        rec.mean_selected = selected / static_cast<double>(scenes.size());
        if (timed) rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        out.push_back(rec);
    }
    return out;
}

}  // namespace dcp
