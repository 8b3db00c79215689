#include "dcp/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "dcp/error.hpp"
#include "dcp/feature_io.hpp"
#include "dcp/gradsuite.hpp"
#include "dcp/oracles.hpp"
#include "dcp/pipeline.hpp"
#include "dcp/training.hpp"
#include "dcp/vocabulary.hpp"

namespace dcp {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// Flag name -> config key for every value-taking setting.
const std::pair<const char*, const char*> kValueFlags[] = {
    {"--theta", "theta"}, {"--tau", "tau"},       {"--topk", "topk"},     {"--nc", "nc"},           {"--ns", "ns"},
    {"--window", "window"}, {"--dim", "dim"},     {"--dimc", "dimc"},     {"--patch", "patch"},     {"--imgsize", "imgsize"},
    {"--seed", "seed"},   {"--steps", "steps"},   {"--scenes", "scenes"}, {"--regions", "regions"}, {"--num-classes", "classes"},
    {"--batch", "batch"}, {"--lr", "lr"},         {"--wd", "wd"},
};

const std::pair<const char*, const char*> kOffFlags[] = {
    {"--no-dcs", "dcs"}, {"--no-ca", "ca"}, {"--no-sa", "sa"}, {"--no-se", "se"},
    {"--no-tv", "tv"},   {"--no-fuse-fv", "fuse_fv"}, {"--no-fuse-aclip", "fuse_aclip"},
};

// Options shared by every subcommand. Values stay as text until the config is layered.
struct Settings {
    std::map<std::string, std::string> values;
    std::map<std::string, bool> off;
    std::vector<std::pair<CLI::Option*, std::string>> value_opts;
    std::string config_file, classes_file, seen_file, ckpt, out;

    void attach(CLI::App* app) {
        for (const auto& [flag, key] : kValueFlags) value_opts.emplace_back(app->add_option(flag, values[key]), key);
        for (const auto& [flag, key] : kOffFlags) app->add_flag(flag, off[key], std::string("disable ") + key);
        app->add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
        app->add_option("--classes", classes_file, "vocabulary file, one name per line")->check(CLI::ExistingFile);
        app->add_option("--seen", seen_file, "seen-class names, one per line")->check(CLI::ExistingFile);
        app->add_option("--ckpt", ckpt, "checkpoint path");
        app->add_option("--out", out, "output path");
    }

    // defaults <- checkpoint config <- config file <- flags
    RunConfig resolve(RunConfig base) const {
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            std::stringstream ss;
            ss << in.rdbuf();
            base = parse_config(ss.str(), base);
        }
        for (const auto& [opt, key] : value_opts)
            if (opt->count()) apply_setting(base, key, values.at(key));
        for (const auto& [key, set] : off)
            if (set) apply_setting(base, key, "0");
        if (!classes_file.empty()) base.class_names = read_name_list(classes_file);
        if (!seen_file.empty()) base.seen = read_name_list(seen_file);
        base.validate();
        return base;
    }
};

// Writes to --out when given, stdout otherwise.
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (path.empty()) return;
        if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
        if (!*file_) throw Error("cannot open '" + path + "' for writing");
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }
    void line(const std::string& s) { stream() << s << '\n'; }

private:
    std::unique_ptr<std::ofstream> file_;
};

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
    return a.dim == b.dim && a.dim_c == b.dim_c && a.n_c == b.n_c && a.n_s == b.n_s && a.window == b.window && a.grid_h == b.grid_h &&
           a.grid_w == b.grid_w && a.tga_heads == b.tga_heads && a.sed_heads == b.sed_heads && a.fv_channels == b.fv_channels;
}

// Model from --ckpt when given, otherwise a fresh seeded init.
struct Loaded {
    RunConfig config;
    DcpModel model;
};

Loaded load(const Settings& s) {
    if (s.ckpt.empty()) {
        const auto config = s.resolve({});
        return {config, DcpModel::init(config.model_config(), config.seed)};
    }
    RunConfig stored;
    auto model = load_model(s.ckpt, &stored);
    const auto config = s.resolve(stored);
    if (!same_architecture(model.config, config.model_config()))
        throw ConfigError("settings change the architecture stored in '" + s.ckpt + "'");
    return {config, std::move(model)};
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string label_hash(const std::vector<std::int32_t>& labels) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(labels.data());
    return hex64(xxhash64({p, labels.size() * sizeof(std::int32_t)}));
}

std::string segment_record(const SceneResult& r, const RunConfig& config) {
    auto j = ojson::parse(to_json(r.metrics, config));
    j["c_final"] = r.output.selection.c_final;
    j["validated"] = r.output.validated;
    j["label_hash"] = label_hash(r.output.label_map);
    return j.dump();
}

int cmd_gen_scenes(const Settings& s) {
    if (s.out.empty()) throw ConfigError("gen-scenes needs --out <dir>");
    const Workbench bench(s.resolve({}));
    const fs::path dir(s.out);
    fs::create_directories(dir);
    save_features(bench.text, (dir / "text.dcpf").string());
    Sink index((dir / "scenes.jsonl").string());
    const auto scenes = bench.scenes(bench.config.scenes, bench.config.seed);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::string name = "scene_" + std::to_string(i) + ".dcpf";
        save_features(bench.encoder.encode(scenes[i]), (dir / name).string());
        ojson j;
        j["scene"] = i;
        j["features"] = name;
        j["height"] = scenes[i].height;
        j["width"] = scenes[i].width;
        j["gt"] = scenes[i].gt;
        index.line(j.dump());
    }
    std::cerr << "wrote " << scenes.size() << " scenes to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_segment(const Settings& s) {
    auto [config, model] = load(s);
    const Workbench bench(config);
    Sink sink(s.out);
    const auto scenes = bench.scenes(config.scenes, config.seed);
    for (std::size_t i = 0; i < scenes.size(); ++i) sink.line(segment_record(run_segment(bench, model, scenes[i], i), config));
    return kExitOk;
}

int cmd_eval(const Settings& s, double min_miou) {
    auto [config, model] = load(s);
    const Workbench bench(config);
    Sink sink(s.out);
    const auto scenes = bench.scenes(config.scenes, config.seed);
    double total = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto r = run_segment(bench, model, scenes[i], i);
        total += r.metrics.miou;
        sink.line(to_json(r.metrics, config));
    }
    const double mean = total / static_cast<double>(scenes.size());
    ojson j;
    j["summary"] = "eval";
    j["scenes"] = scenes.size();
    j["miou"] = mean;
    sink.line(j.dump());
    return mean >= min_miou ? kExitOk : kExitValidation;
}

int cmd_train(const Settings& s) {
    const auto config = s.resolve({});
    const Workbench bench(config);
    auto model = DcpModel::init(config.model_config(), config.seed);
    const auto scenes = bench.scenes(config.scenes, config.seed);
    const auto result = train_overfit(bench, model, scenes, train_config(config));
    Sink sink(s.out);
    for (std::size_t i = 0; i < result.losses.size(); ++i) sink.line(ojson{{"step", i}, {"loss", result.losses[i]}}.dump());
    sink.line(ojson{{"summary", "train"}, {"steps", result.losses.size()}, {"initial_miou", result.initial_miou}, {"final_miou", result.final_miou}}
                  .dump());
    if (!s.ckpt.empty()) save_model(model, config, s.ckpt);
    return kExitOk;
}

int cmd_sweep(const Settings& s, std::vector<double> thetas) {
    if (!std::is_sorted(thetas.begin(), thetas.end())) throw ConfigError("--thetas must be ascending");
    for (double t : thetas)
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("--thetas values must lie in [0, 1]");
    auto [config, model] = load(s);
    const Workbench bench(config);
    Sink sink(s.out);
    for (const auto& r : sweep_theta(bench, model, thetas, bench.scenes(config.scenes, config.seed))) {
        auto j = ojson::parse(to_json(r, config));
        j.erase("scene");
        j["scenes"] = config.scenes;
        sink.line(j.dump());
    }
    return kExitOk;
}

int cmd_gradcheck(const Settings& s, std::size_t count, double tolerance) {
    const auto config = s.resolve({});
    Sink sink(s.out);
    bool ok = true;
    for (std::uint64_t seed = config.seed; seed < config.seed + count; ++seed) {
        const auto report = run_gradient_suite(seed);
        ojson j;
        j["seed"] = seed;
        for (const auto& [group, err] : report.by_group()) j["max_rel_error"][group] = err;
        j["max"] = report.max_error();
        j["pass"] = report.max_error() <= tolerance;
        ok = ok && report.max_error() <= tolerance;
        sink.line(j.dump());
    }
    return ok ? kExitOk : kExitValidation;
}

int cmd_oracles(const Settings& s, std::size_t instances) {
    const auto config = s.resolve({});
    Sink sink(s.out);
    bool ok = true;
    for (const auto& c : run_oracle_suite(config.seed, instances)) {
        sink.line(ojson{{"check", c.name}, {"cases", c.cases}, {"failures", c.failures}, {"pass", c.ok()}}.dump());
        ok = ok && c.ok();
    }
    return ok ? kExitOk : kExitValidation;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Open-vocabulary segmentation with dynamic category pre-filtering", "dcpclip"};
    app.require_subcommand(1);

    std::map<std::string, Settings> settings;
    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        settings[name].attach(sub);
        return sub;
    };

    add("gen-scenes", "generate scenes and write their encoded features");
    add("segment", "segment generated scenes, one JSON line per scene");
    add("train", "overfit the head stack on generated scenes");
    auto* sweep = add("sweep-theta", "selection threshold sweep: |c_final|, MACs, mIoU per theta");
    std::vector<double> thetas{0.0, 0.2, 0.5, 0.8, 0.9};
    sweep->add_option("--thetas", thetas, "ascending thresholds")->delimiter(',');
    auto* grad = add("gradcheck", "finite-difference check of every trainable parameter");
    std::size_t grad_seeds = 1;
    double grad_tol = 1e-5;
    grad->add_option("--count", grad_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
    grad->add_option("--tol", grad_tol, "relative error bound");
    auto* oracle = add("oracle-suite", "selection, mIoU and MAC oracles");
    std::size_t instances = 100;
    oracle->add_option("--instances", instances, "random selection instances")->check(CLI::PositiveNumber);
    auto* eval = add("eval", "mean mIoU over generated scenes");
    double min_miou = 0.0;
    eval->add_option("--min-miou", min_miou, "exit 1 when the mean falls below this");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (app.get_subcommands().empty()) std::cerr << app.help();
        return kExitUsage;
    }

    auto* sub = app.get_subcommands().front();
    const auto& s = settings.at(sub->get_name());
    try {
        const std::string name = sub->get_name();
        if (name == "gen-scenes") return cmd_gen_scenes(s);
        if (name == "segment") return cmd_segment(s);
        if (name == "train") return cmd_train(s);
        if (name == "sweep-theta") return cmd_sweep(s, thetas);
        if (name == "gradcheck") return cmd_gradcheck(s, grad_seeds, grad_tol);
        if (name == "oracle-suite") return cmd_oracles(s, instances);
        if (name == "eval") return cmd_eval(s, min_miou);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitUsage;
}

}  // namespace dcp
