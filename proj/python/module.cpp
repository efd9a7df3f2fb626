#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "df2am/config_io.hpp"
#include "df2am/errors.hpp"
#include "df2am/evaluation.hpp"
#include "df2am/gradcheck.hpp"
#include "df2am/losses.hpp"
#include "df2am/trainer.hpp"

namespace py = pybind11;
using namespace df2am;

namespace {

using NdArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const NdArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Array(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

NdArray to_numpy(const Array& a) {
    NdArray out(std::vector<py::ssize_t>(a.shape().begin(), a.shape().end()));
    std::copy(a.values().begin(), a.values().end(), out.mutable_data());
    return out;
}

TrainConfig config_from(const std::string& json_text) {
    if (json_text.empty()) return TrainConfig{};
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    nlohmann::json base = train_config_to_json(TrainConfig{});
    base.merge_patch(j);
    TrainConfig c = train_config_from_json(base);
    c.validate();
    return c;
}

py::dict report_dict(const MetricsReport& r) {
    py::dict d;
    d["ks"] = r.ks;
    d["cmc"] = r.cmc;
    d["mAP"] = r.map;
    d["repetitions"] = r.repetitions;
    d["per_rep_mAP"] = r.per_rep_map;
    return d;
}

RankingProblem ranking(const NdArray& distances, const std::vector<std::size_t>& ql, const std::vector<std::size_t>& gl) {
    return RankingProblem{to_array(distances), ql, gl};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cross-modality re-identification with dual-level feature fusion and affinity modeling";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    m.def("default_config", [] { return train_config_to_json(TrainConfig{}).dump(); },
          "Default training configuration as JSON text.");

    m.def("lr_at", [](std::size_t epoch, const std::string& config) { return lr_at(epoch, config_from(config)); },
          py::arg("epoch"), py::arg("config") = "");

    m.def("batch_hard_triplet",
          [](const NdArray& embeddings, const std::vector<std::size_t>& labels, double margin) {
              ad::Tape t(false);
              return losses::batch_hard_triplet(t.constant(to_array(embeddings)), labels, margin).item();
          },
          py::arg("embeddings"), py::arg("labels"), py::arg("margin") = 0.3);

    m.def("affinity_matrix",
          [](const NdArray& rgb, const NdArray& ir) { return to_numpy(losses::affinity_matrix(to_array(rgb), to_array(ir))); },
          py::arg("rgb"), py::arg("ir"));

    m.def("ground_truth_affinity", [](const std::vector<std::size_t>& labels) {
        return to_numpy(losses::ground_truth_affinity(labels));
    });

    m.def("margin_affinity_loss",
          [](const NdArray& d, const NdArray& g, double margin) {
              ad::Tape t(false);
              return losses::margin_affinity_loss(t.constant(to_array(d)), to_array(g), margin).item();
          },
          py::arg("distances"), py::arg("truth"), py::arg("margin") = 0.3);

    m.def("l1_affinity_loss",
          [](const NdArray& d, const NdArray& g, double delta) {
              ad::Tape t(false);
              return losses::l1_affinity_loss(t.constant(to_array(d)), to_array(g), delta).item();
          },
          py::arg("distances"), py::arg("truth"), py::arg("delta") = 2.0);

    m.def("cmc",
          [](const NdArray& d, const std::vector<std::size_t>& ql, const std::vector<std::size_t>& gl,
             const std::vector<std::size_t>& ks) { return cmc_rank_k(ranking(d, ql, gl), ks); },
          py::arg("distances"), py::arg("query_labels"), py::arg("gallery_labels"), py::arg("ks"));

    m.def("mean_ap",
          [](const NdArray& d, const std::vector<std::size_t>& ql, const std::vector<std::size_t>& gl) {
              return mean_ap(ranking(d, ql, gl));
          },
          py::arg("distances"), py::arg("query_labels"), py::arg("gallery_labels"));

    m.def("gradient_suite",
          [](std::uint64_t seed, std::size_t coordinates) {
              GradSuiteOptions o;
              o.seed = seed;
              o.coordinates = coordinates;
              py::dict out;
              for (const auto& e : gradient_suite(o)) out[py::str(e.loss)] = e.result.max_error;
              return out;
          },
          py::arg("seed") = 1, py::arg("coordinates") = 100);

    m.def("generate_dataset",
          [](const std::string& config, const std::string& path) {
              const Dataset d = generate(config_from(config).data);
              save_dataset(d, path);
              return d.samples.size();
          },
          py::arg("config"), py::arg("path"));

    m.def("train",
          [](const std::string& config) {
              TrainResult r;
              TrainConfig c = config_from(config);
              {
                  py::gil_scoped_release release;
                  r = train(c);
              }
              py::list steps;
              for (const auto& s : r.log.steps) {
                  py::dict d;
                  d["step"] = s.step;
                  d["epoch"] = s.epoch;
                  d["lr"] = s.lr;
                  d["loss_final"] = s.loss.total;
                  steps.append(d);
              }
              py::list epochs;
              for (const auto& e : r.log.epochs) {
                  py::dict d;
                  d["epoch"] = e.epoch;
                  d["mean_loss_final"] = e.mean_loss;
                  d["val_rank1"] = e.val_rank1;
                  d["val_mAP"] = e.val_map;
                  epochs.append(d);
              }
              py::dict out;
              out["steps"] = steps;
              out["epochs"] = epochs;
              return out;
          },
          py::arg("config"), "Train with a JSON config (merged over the defaults); writes outputs when out_dir is set.");

    m.def("evaluate",
          [](const std::string& config, const std::string& checkpoint) {
              const TrainConfig c = config_from(config);
              const Experiment e = prepare_experiment(c);
              Model model = Model::load(checkpoint);
              return report_dict(evaluate_model(model, c, e));
          },
          py::arg("config"), py::arg("checkpoint"));
}
