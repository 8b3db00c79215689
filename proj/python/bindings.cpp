#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dcp/cli.hpp"
#include "dcp/error.hpp"
#include "dcp/gradsuite.hpp"
#include "dcp/pipeline.hpp"
#include "dcp/selection.hpp"
#include "dcp/training.hpp"

namespace py = pybind11;
using namespace dcp;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.dims().begin(), t.dims().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape dims(a.shape(), a.shape() + a.ndim());
    return Tensor(dims, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<std::int32_t> labels_to_numpy(const std::vector<std::int32_t>& labels, std::size_t h, std::size_t w) {
    py::array_t<std::int32_t> out({static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
    std::copy(labels.begin(), labels.end(), out.mutable_data());
    return out;
}

py::dict selection_dict(const SelectionResult& s) {
    py::dict d;
    d["c_patch"] = s.c_patch;
    d["c_image"] = s.c_image;
    d["c_final"] = s.c_final;
    d["theta"] = s.theta;
    return d;
}

py::dict metrics_dict(const MetricsRecord& r) {
    py::dict d;
    d["scene"] = r.scene;
    d["theta"] = r.theta;
    d["miou"] = r.miou;
    d["mean_selected"] = r.mean_selected;
    d["macs"] = r.macs;
    if (r.wall_ms >= 0.0) d["wall_ms"] = r.wall_ms;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Open-vocabulary segmentation with dynamic category pre-filtering";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());

    py::class_<AblationFlags>(m, "AblationFlags")
        .def(py::init<>())
        .def_readwrite("dcs", &AblationFlags::dcs)
        .def_readwrite("ca", &AblationFlags::ca)
        .def_readwrite("sa", &AblationFlags::sa)
        .def_readwrite("spatial_enhance", &AblationFlags::spatial_enhance)
        .def_readwrite("fuse_fv", &AblationFlags::fuse_fv)
        .def_readwrite("fuse_aclip", &AblationFlags::fuse_aclip)
        .def_readwrite("tv", &AblationFlags::tv)
        .def(py::self == py::self);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("theta", &RunConfig::theta)
        .def_readwrite("tau", &RunConfig::tau)
        .def_readwrite("topk", &RunConfig::topk)
        .def_readwrite("n_c", &RunConfig::n_c)
        .def_readwrite("n_s", &RunConfig::n_s)
        .def_readwrite("window", &RunConfig::window)
        .def_readwrite("dim", &RunConfig::dim)
        .def_readwrite("dim_c", &RunConfig::dim_c)
        .def_readwrite("patch", &RunConfig::patch)
        .def_readwrite("image_size", &RunConfig::image_size)
        .def_readwrite("classes", &RunConfig::classes)
        .def_readwrite("regions", &RunConfig::regions)
        .def_readwrite("scenes", &RunConfig::scenes)
        .def_readwrite("steps", &RunConfig::steps)
        .def_readwrite("batch", &RunConfig::batch)
        .def_readwrite("lr", &RunConfig::lr)
        .def_readwrite("weight_decay", &RunConfig::weight_decay)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("flags", &RunConfig::flags)
        .def_readwrite("class_names", &RunConfig::class_names)
        .def_readwrite("seen", &RunConfig::seen)
        .def("validate", &RunConfig::validate)
        .def("vocabulary", &RunConfig::vocabulary)
        .def("to_text", &RunConfig::to_text)
        .def("set", [](RunConfig& c, const std::string& key, const std::string& value) { apply_setting(c, key, value); });
    m.def("parse_config", [](const std::string& text) { return parse_config(text); });

    py::class_<VisualFeatures>(m, "VisualFeatures")
        .def_property_readonly("f_cls", [](const VisualFeatures& v) { return to_numpy(v.f_cls); })
        .def_property_readonly("f_patch", [](const VisualFeatures& v) { return to_numpy(v.f_patch); })
        .def_property_readonly("a_clip", [](const VisualFeatures& v) { return to_numpy(v.a_clip); })
        .def_property_readonly("f_v", [](const VisualFeatures& v) {
            py::list out;
            for (const auto& t : v.f_v) out.append(to_numpy(t));
            return out;
        })
        .def_readonly("grid_h", &VisualFeatures::grid_h)
        .def_readonly("grid_w", &VisualFeatures::grid_w);

    py::class_<TextEmbeddings>(m, "TextEmbeddings")
        .def_property_readonly("e_t", [](const TextEmbeddings& t) { return to_numpy(t.e_t); })
        .def_readonly("names", &TextEmbeddings::names)
        .def_readonly("seen", &TextEmbeddings::seen)
        .def("__len__", &TextEmbeddings::size);

    py::class_<SyntheticScene>(m, "Scene")
        .def_property_readonly("image", [](const SyntheticScene& s) { return to_numpy(s.image); })
        .def_property_readonly("gt", [](const SyntheticScene& s) { return labels_to_numpy(s.gt, s.height, s.width); });

    py::class_<DcpModel>(m, "Model")
        .def_static("init", [](const RunConfig& c) { return DcpModel::init(c.model_config(), c.seed); }, py::arg("config"))
        .def_static("load", [](const std::string& path) {
            RunConfig c;
            auto model = load_model(path, &c);
            return py::make_tuple(std::move(model), c);
        })
        .def("save", [](const DcpModel& model, const RunConfig& c, const std::string& path) { save_model(model, c, path); })
        .def("parameters", [](DcpModel& model) {
            py::dict out;
            for (auto* p : model.parameters()) out[py::str(p->name)] = to_numpy(p->value);
            return out;
        })
        .def("set_parameter", [](DcpModel& model, const std::string& name, const py::array_t<double>& value) {
            for (auto* p : model.parameters())
                if (p->name == name) {
                    Tensor t = from_numpy(value);
                    if (t.dims() != p->value.dims()) throw ShapeError("set_parameter " + name, t.dims(), p->value.dims());
                    p->value = std::move(t);
                    return;
                }
            throw DomainError("no parameter named '" + name + "'");
        });

    py::class_<Workbench>(m, "Workbench")
        .def(py::init<RunConfig>())
        .def_readonly("config", &Workbench::config)
        .def_readonly("text", &Workbench::text)
        .def("scenes", &Workbench::scenes, py::arg("count"), py::arg("seed"))
        .def("encode", [](const Workbench& b, const SyntheticScene& s) { return b.encoder.encode(s); })
        .def("select", [](const Workbench& b, const VisualFeatures& v) {
            return selection_dict(select_categories(v, b.text, b.config.theta, b.config.tau));
        })
        .def("segment", [](const Workbench& b, DcpModel& model, const SyntheticScene& s) {
            const auto r = run_segment(b, model, s, 0);
            py::dict d = metrics_dict(r.metrics);
            d["labels"] = labels_to_numpy(r.output.label_map, r.output.height, r.output.width);
            d["soft_masks"] = to_numpy(r.output.soft_masks);
            d["selection"] = selection_dict(r.output.selection);
            d["validated"] = r.output.validated;
            return d;
        })
        .def("sweep_theta", [](const Workbench& b, DcpModel& model, const std::vector<double>& thetas, const std::vector<SyntheticScene>& scenes) {
            py::list out;
            for (const auto& r : sweep_theta(b, model, thetas, scenes)) out.append(metrics_dict(r));
            return out;
        })
        .def("train", [](const Workbench& b, DcpModel& model, const std::vector<SyntheticScene>& scenes) {
            const auto r = train_overfit(b, model, scenes, train_config(b.config));
            py::dict d;
            d["losses"] = r.losses;
            d["initial_miou"] = r.initial_miou;
            d["final_miou"] = r.final_miou;
            return d;
        })
        .def("evaluate", &evaluate_miou)
        .def("forward_macs", [](const Workbench& b, std::size_t selected) { return forward_macs(b.config, b.text.size(), selected); });

    m.def("encode_text", [](const std::vector<std::string>& names, std::size_t dim) { return encode_text(names, dim); }, py::arg("names"),
          py::arg("dim") = 32);

    m.def(
        "compute_miou",
        [](const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, std::size_t vocab) {
            const auto r = compute_miou(pred, gt, vocab);
            return py::make_tuple(r.miou, r.per_class);
        },
        py::arg("pred"), py::arg("gt"), py::arg("vocab_size"));

    m.def(
        "gradient_suite",
        [](std::uint64_t seed) {
            const auto r = run_gradient_suite(seed);
            py::dict d;
            for (const auto& e : r.entries) d[py::str(e.name)] = e.relative_error;
            return d;
        },
        py::arg("seed"));

    m.def(
        "cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "dcpclip");
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            py::gil_scoped_release release;
            return cli_main(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
