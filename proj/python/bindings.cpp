#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dash/cluster.hpp"
#include "dash/dataset.hpp"
#include "dash/engine.hpp"
#include "dash/explainers.hpp"
#include "dash/model_diff.hpp"
#include "dash/projection.hpp"
#include "dash/replay.hpp"
#include "dash/server.hpp"
#include "dash/session.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// Results cross the boundary as JSON text; the Python side decodes them.
std::vector<std::vector<double>> rows_of(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
    const auto r = a.unchecked<2>();
    std::vector<std::vector<double>> out(r.shape(0), std::vector<double>(r.shape(1)));
    for (py::ssize_t i = 0; i < r.shape(0); ++i)
        for (py::ssize_t j = 0; j < r.shape(1); ++j) out[i][j] = r(i, j);
    return out;
}

std::string generate_dataset(const std::string& spec_json, const std::string& out_dir) {
    const auto spec = json::parse(spec_json).get<dash::BiasedDatasetSpec>();
    const dash::Dataset d = dash::generate_biased_dataset(spec);
    dash::save_dataset(d, out_dir);
    return json{{"hash", dash::hex64(d.content_hash())},
                {"counts",
                 {{"train", d.count(dash::Split::Train)},
                  {"val", d.count(dash::Split::Val)},
                  {"test", d.count(dash::Split::Test)}}}}
        .dump();
}

std::string train_model(const std::string& data_dir, const std::string& out, const std::string& config_json,
                        const std::string& model_json, const std::string& parent) {
    py::gil_scoped_release nogil;
    const dash::Dataset d = dash::load_dataset(data_dir);
    dash::Checkpoint start;
    if (!parent.empty()) {
        start = dash::load_checkpoint(parent);
    } else {
        auto cfg = json::parse(model_json).get<dash::ConvNetConfig>();
        cfg.num_classes = d.num_classes();
        cfg.image_size = d.image_size;
        start = dash::init_model(cfg);
    }
    const auto child = dash::train(start, d, json::parse(config_json).get<dash::TrainConfig>());
    dash::save_checkpoint(child, out);
    return json(child).dump();
}

std::string evaluate(const std::string& data_dir, const std::string& checkpoint, const std::string& split) {
    py::gil_scoped_release nogil;
    return json(dash::predict(dash::load_checkpoint(checkpoint), dash::load_dataset(data_dir), dash::parse_split(split)))
        .dump();
}

std::string grad_cam(const std::string& data_dir, const std::string& checkpoint, const std::string& image_id,
                     std::optional<int> target) {
    const dash::Dataset d = dash::load_dataset(data_dir);
    return json(dash::grad_cam(dash::load_checkpoint(checkpoint), d.at(image_id).image, target, image_id)).dump();
}

std::string tsne(const std::vector<std::string>& ids, const py::array_t<double>& latents,
                 std::optional<double> perplexity, int iterations, std::uint64_t seed) {
    const auto x = rows_of(latents);
    py::gil_scoped_release nogil;
    dash::TsneOptions opt;
    opt.perplexity = perplexity;
    opt.iterations = iterations;
    opt.seed = seed;
    return json(dash::tsne(ids, x, opt)).dump();
}

std::string kmeans(const std::vector<std::string>& ids, const py::array_t<double>& latents, int k,
                   std::uint64_t seed) {
    const auto x = rows_of(latents);
    py::gil_scoped_release nogil;
    return json(dash::kmeans(ids, x, k, seed)).dump();
}

std::string mosaic(const std::vector<std::vector<long>>& counts, double min_cell, double gutter) {
    dash::ConfusionMatrix cm;
    cm.num_classes = static_cast<int>(counts.size());
    cm.counts = counts;
    return json(dash::mosaic_layout(cm, min_cell, gutter)).dump();
}

std::string replay(const std::string& script, const std::string& workdir) {
    py::gil_scoped_release nogil;
    return json(dash::run_replay(dash::load_replay_script(script), workdir)).dump();
}

void serve(const std::string& host, int port, const std::string& data_dir) {
    py::gil_scoped_release nogil;
    dash::SessionService service(data_dir.empty() ? dash::default_data_root() : std::filesystem::path(data_dir));
    dash::ApiServer api(service);
    if (!api.listen(host, port)) throw dash::validation_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Dataset debugging workbench core: training, explanations, projections, clustering, diffs.";

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error;
    error.call_once_and_store_result([&] { return py::exception<dash::Error>(m, "DashError"); });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const dash::Error& e) {
            const json payload{{"kind", dash::to_string(e.kind())}, {"message", e.what()}, {"detail", e.detail()}};
            py::set_error(error.get_stored(), payload.dump().c_str());
        }
    });

    m.def("generate_dataset", &generate_dataset, py::arg("spec_json"), py::arg("out_dir"));
    m.def("train", &train_model, py::arg("data_dir"), py::arg("out"), py::arg("config_json") = "{}",
          py::arg("model_json") = "{}", py::arg("parent") = "");
    m.def("evaluate", &evaluate, py::arg("data_dir"), py::arg("checkpoint"), py::arg("split") = "test");
    m.def("grad_cam", &grad_cam, py::arg("data_dir"), py::arg("checkpoint"), py::arg("image_id"),
          py::arg("target") = py::none());
    m.def("tsne", &tsne, py::arg("ids"), py::arg("latents"), py::arg("perplexity") = py::none(),
          py::arg("iterations") = 500, py::arg("seed") = 0);
    m.def("kmeans", &kmeans, py::arg("ids"), py::arg("latents"), py::arg("k"), py::arg("seed") = 0);
    m.def("mosaic", &mosaic, py::arg("counts"), py::arg("min_cell") = 0.01, py::arg("gutter") = 0.005);
    m.def("replay", &replay, py::arg("script"), py::arg("workdir"));
    m.def("serve", &serve, py::arg("host") = "127.0.0.1", py::arg("port") = 8080, py::arg("data_dir") = "");
}
