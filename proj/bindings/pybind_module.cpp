#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "aedet/attacks.hpp"
#include "aedet/autoencoder.hpp"
#include "aedet/dataset.hpp"
#include "aedet/detectors.hpp"
#include "aedet/eval.hpp"
#include "aedet/network.hpp"
#include "aedet/pipeline.hpp"

namespace py = pybind11;
using namespace aedet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    std::vector<int> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<int>(a.shape(i));
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<float> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Features to_features(const FloatArray& a) {
    if (a.ndim() != 2) throw dimension_error("features must be a 2-d array");
    Features out(static_cast<size_t>(a.shape(0)),
                 std::vector<float>(static_cast<size_t>(a.shape(1))));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j)
            out[static_cast<size_t>(i)][static_cast<size_t>(j)] = r(i, j);
    return out;
}

py::array_t<float> features_to_numpy(const Features& f) {
    const py::ssize_t n = static_cast<py::ssize_t>(f.size());
    const py::ssize_t d = n ? static_cast<py::ssize_t>(f[0].size()) : 0;
    py::array_t<float> out({n, d});
    auto w = out.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < n; ++i)
        for (py::ssize_t j = 0; j < d; ++j) w(i, j) = f[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return out;
}

AttackKind kind_from_str(const std::string& s) { return attack_kind_from(s); }

}  // namespace

PYBIND11_MODULE(_aedet, m) {
    m.doc() = "adversarial-example detection laboratory (C++ core)";

    // ---- data ------------------------------------------------------------------
    py::class_<LabeledImages>(m, "LabeledImages")
        .def_property_readonly("images", [](const LabeledImages& d) { return to_numpy(d.images); })
        .def_readonly("labels", &LabeledImages::labels)
        .def("__len__", &LabeledImages::size);

    m.def("synth_dataset", &synth_dataset, py::arg("num_classes"), py::arg("per_class"),
          py::arg("image_size"), py::arg("blob_sigma"), py::arg("seed"));
    m.def("load_idx", &load_idx, py::arg("images_path"), py::arg("labels_path"));
    m.def("write_idx", &write_idx, py::arg("images_path"), py::arg("labels_path"),
          py::arg("data"));

    // ---- network ---------------------------------------------------------------
    py::class_<TrainedNetwork>(m, "TrainedNetwork")
        .def_property_readonly("val_accuracy",
                               [](const TrainedNetwork& n) { return n.meta.val_accuracy; })
        .def_property_readonly("taps",
                               [](const TrainedNetwork& n) {
                                   std::vector<std::string> out;
                                   for (const auto& [tap, _] : n.config.taps) out.push_back(tap);
                                   return out;
                               })
        .def("predict",
             [](const TrainedNetwork& n, const FloatArray& x) { return predict(n, to_tensor(x)); })
        .def("forward",
             [](const TrainedNetwork& n, const FloatArray& x) {
                 return to_numpy(forward(n, to_tensor(x)));
             })
        .def("accuracy", [](const TrainedNetwork& n, const LabeledImages& d) {
            return accuracy(n, d);
        });

    m.def(
        "train_small_convnet",
        [](const LabeledImages& train, int num_classes, int epochs, float lr, int batch_size,
           uint64_t seed) {
            auto config = build_small_convnet({train.channels(), train.height(), train.width()},
                                              num_classes);
            return train_classifier(config, train, epochs, lr, batch_size, seed);
        },
        py::arg("train"), py::arg("num_classes"), py::arg("epochs") = 6, py::arg("lr") = 1e-3f,
        py::arg("batch_size") = 32, py::arg("seed") = 0);
    m.def("save_network", &save_network, py::arg("net"), py::arg("aedm_path"),
          py::arg("json_path"));
    m.def("load_network", &load_network, py::arg("aedm_path"), py::arg("json_path"));

    // ---- attacks ---------------------------------------------------------------
    py::class_<AttackSpec>(m, "AttackSpec")
        .def(py::init([](const std::string& kind, float epsilon) {
                 return default_attack_spec(kind_from_str(kind), epsilon);
             }),
             py::arg("kind"), py::arg("epsilon") = 0.1f)
        .def_property(
            "kind", [](const AttackSpec& s) { return std::string(attack_kind_name(s.kind)); },
            [](AttackSpec& s, const std::string& k) { s.kind = kind_from_str(k); })
        .def_readwrite("epsilon", &AttackSpec::epsilon)
        .def_readwrite("steps", &AttackSpec::steps)
        .def_readwrite("step_size", &AttackSpec::step_size)
        .def_readwrite("seed", &AttackSpec::seed);

    py::class_<AdversarialBatch>(m, "AdversarialBatch")
        .def_property_readonly("perturbed",
                               [](const AdversarialBatch& b) { return to_numpy(b.perturbed); })
        .def_property_readonly("originals",
                               [](const AdversarialBatch& b) { return to_numpy(b.originals); })
        .def_readonly("true_labels", &AdversarialBatch::true_labels)
        .def_readonly("pred_clean", &AdversarialBatch::pred_clean)
        .def_readonly("pred_adv", &AdversarialBatch::pred_adv)
        .def_readonly("linf", &AdversarialBatch::linf)
        .def_readonly("l2", &AdversarialBatch::l2)
        .def_property_readonly("success",
                               [](const AdversarialBatch& b) {
                                   std::vector<bool> out(b.success.begin(), b.success.end());
                                   return out;
                               })
        .def("__len__", &AdversarialBatch::size);

    m.def(
        "run_attack",
        [](const TrainedNetwork& net, const FloatArray& x, const std::vector<int>& y,
           const AttackSpec& spec) { return run_attack(net, to_tensor(x), y, spec); },
        py::arg("net"), py::arg("x"), py::arg("y"), py::arg("spec"));

    // ---- autoencoder bank and features ---------------------------------------------
    // AeBank is a std::map, so it crosses the boundary as {tap: LayerAutoencoder}
    py::class_<LayerAutoencoder>(m, "LayerAutoencoder")
        .def_property_readonly("tap",
                               [](const LayerAutoencoder& ae) { return ae.config.tap; })
        .def_property_readonly("latent_dim",
                               [](const LayerAutoencoder& ae) { return ae.config.latent_dim; })
        .def_readonly("input_shape", &LayerAutoencoder::input_shape)
        .def_readonly("training_curve", &LayerAutoencoder::training_curve)
        .def("encode",
             [](const LayerAutoencoder& ae, const FloatArray& acts) {
                 return to_numpy(encode(ae, to_tensor(acts)));
             })
        .def("reconstruction_error", [](const LayerAutoencoder& ae, const FloatArray& acts) {
            return reconstruction_error(ae, to_tensor(acts));
        });

    m.def(
        "train_ae_bank",
        [](const TrainedNetwork& net, const LabeledImages& clean_train, int epochs,
           uint64_t seed) {
            auto [logits, taps] = forward_with_taps(net, clean_train.images);
            (void)logits;
            AeBank bank;
            for (const auto& [tap, acts] : taps) {
                std::vector<int> shape(acts.shape.begin() + 1, acts.shape.end());
                auto cfg = default_ae_config(tap, shape);
                cfg.epochs = epochs;
                cfg.seed = derive_seed(seed, "ae/" + tap);
                bank[tap] = train_wae(acts, cfg);
            }
            return bank;
        },
        py::arg("net"), py::arg("clean_train"), py::arg("epochs") = 12, py::arg("seed") = 0);
    m.def("save_ae_bank", &save_ae_bank, py::arg("bank"), py::arg("dir"));
    m.def("load_ae_bank", &load_ae_bank, py::arg("dir"));

    m.def(
        "extract_features",
        [](const TrainedNetwork& net, const AeBank& bank, const FloatArray& inputs,
           const std::string& mode) {
            auto fm = extract_features(net, bank, to_tensor(inputs),
                                       mode == "full" ? FeatureMode::Full : FeatureMode::Compact,
                                       "python");
            return py::make_tuple(fm.columns, features_to_numpy(fm.values));
        },
        py::arg("net"), py::arg("bank"), py::arg("inputs"), py::arg("mode") = "compact",
        "Returns (column names, [N, d] feature matrix).");

    // ---- detectors -------------------------------------------------------------
    py::class_<LinearSvmModel>(m, "LinearSvmModel")
        .def_readonly("weights", &LinearSvmModel::weights)
        .def_readonly("bias", &LinearSvmModel::bias)
        .def_readonly("C", &LinearSvmModel::C);
    py::class_<RandomForestModel>(m, "RandomForestModel")
        .def_readonly("n_features", &RandomForestModel::n_features);
    py::class_<IsolationForestModel>(m, "IsolationForestModel")
        .def_readonly("psi", &IsolationForestModel::psi)
        .def_readonly("c_psi", &IsolationForestModel::c_psi);

    m.def(
        "fit_linear_svm",
        [](const FloatArray& x, const std::vector<int>& y, float C, int epochs, float lr,
           uint64_t seed) { return fit_linear_svm(to_features(x), y, C, epochs, lr, seed); },
        py::arg("x"), py::arg("y"), py::arg("C") = 1.0f, py::arg("epochs") = 150,
        py::arg("lr") = 0.01f, py::arg("seed") = 0);
    m.def("svm_score", [](const LinearSvmModel& model, const FloatArray& x) {
        return svm_score(model, to_features(x));
    });
    m.def(
        "grid_search_cv",
        [](const FloatArray& x, const std::vector<int>& y, const std::vector<float>& c_grid,
           int folds, int epochs, float lr, uint64_t seed) {
            return grid_search_cv(to_features(x), y, c_grid, folds, epochs, lr, seed);
        },
        py::arg("x"), py::arg("y"), py::arg("c_grid"), py::arg("folds") = 5,
        py::arg("epochs") = 150, py::arg("lr") = 0.01f, py::arg("seed") = 0);
    m.def(
        "fit_random_forest",
        [](const FloatArray& x, const std::vector<int>& y, int trees, int max_depth,
           uint64_t seed) { return fit_random_forest(to_features(x), y, trees, max_depth, seed); },
        py::arg("x"), py::arg("y"), py::arg("trees") = 100, py::arg("max_depth") = 12,
        py::arg("seed") = 0);
    m.def("rf_score", [](const RandomForestModel& model, const FloatArray& x) {
        return rf_score(model, to_features(x));
    });
    m.def("rf_importances", &rf_importances);
    m.def(
        "fit_isolation_forest",
        [](const FloatArray& x, int trees, int psi, uint64_t seed) {
            return fit_isolation_forest(to_features(x), trees, psi, seed);
        },
        py::arg("x"), py::arg("trees") = 100, py::arg("psi") = 256, py::arg("seed") = 0);
    m.def("iso_score", [](const IsolationForestModel& model, const FloatArray& x) {
        return iso_score(model, to_features(x));
    });

    // ---- evaluation ------------------------------------------------------------
    m.def("auroc", &auroc, py::arg("scores"), py::arg("labels"));

    py::class_<DetectionDataset>(m, "DetectionDataset")
        .def_property_readonly("inputs",
                               [](const DetectionDataset& d) { return to_numpy(d.inputs); })
        .def_readonly("labels", &DetectionDataset::labels)
        .def_readonly("provenance", &DetectionDataset::provenance)
        .def("__len__", &DetectionDataset::size);

    m.def(
        "build_detection_dataset",
        [](const TrainedNetwork& net, const LabeledImages& test, const AttackSpec& spec,
           float noise_eps, uint64_t seed) {
            return build_detection_dataset(net, test, spec, noise_eps, seed);
        },
        py::arg("net"), py::arg("test"), py::arg("spec"), py::arg("noise_eps"), py::arg("seed"));
    m.def(
        "supervised_detection_auroc",
        [](const TrainedNetwork& net, const AeBank& bank, const DetectionDataset& ds,
           const std::string& rep, uint64_t seed) {
            Representation r = rep == "full"       ? Representation::Full
                               : rep == "both"     ? Representation::Both
                               : rep == "rec_err"  ? Representation::RecErr
                               : rep == "lat_norm" ? Representation::LatNorm
                                                   : throw parameter_error("unknown representation: " + rep);
            return supervised_detection_auroc(net, bank, ds, r, seed);
        },
        py::arg("net"), py::arg("bank"), py::arg("ds"), py::arg("representation") = "full",
        py::arg("seed") = 0);
    m.def(
        "unsupervised_detection_auroc",
        [](const TrainedNetwork& net, const AeBank& bank, const LabeledImages& clean_train,
           const DetectionDataset& ds, const std::string& rep, uint64_t seed) {
            Representation r = rep == "both"       ? Representation::Both
                               : rep == "rec_err"  ? Representation::RecErr
                               : rep == "lat_norm" ? Representation::LatNorm
                                                   : Representation::Full;
            return unsupervised_detection_auroc(net, bank, clean_train, ds, r, seed);
        },
        py::arg("net"), py::arg("bank"), py::arg("clean_train"), py::arg("ds"),
        py::arg("representation") = "both", py::arg("seed") = 0);

    // ---- pipeline ----------------------------------------------------------------
    m.def(
        "run_stage",
        [](const std::string& config_path, const std::string& stage,
           const std::vector<std::string>& overrides, bool force) {
            auto config = load_experiment_config(config_path, overrides);
            return run_stage(config, stage, force);
        },
        py::arg("config_path"), py::arg("stage"),
        py::arg("overrides") = std::vector<std::string>{}, py::arg("force") = false,
        "Runs one pipeline stage (or 'all'); returns True when work was performed.");
    m.def("stage_names", [] { return stage_names(); });

    m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("consumer"));
}
