#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "aedet/csv.hpp"
#include "aedet/pipeline.hpp"
#include "aedet/serialize.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aedet {

// ---- config ---------------------------------------------------------------------

namespace {

json attack_to_json(const AttackSpec& a) {
    return {{"kind", attack_kind_name(a.kind)},
            {"epsilon", a.epsilon},
            {"steps", a.steps},
            {"step_size", a.step_size},
            {"cw_confidence", a.cw_confidence},
            {"cw_const", a.cw_const},
            {"cw_lr", a.cw_lr}};
}

AttackSpec attack_from_json(const json& j) {
    AttackSpec a = default_attack_spec(attack_kind_from(j.at("kind").get<std::string>()),
                                       j.at("epsilon").get<float>());
    if (j.count("steps")) a.steps = j.at("steps").get<int>();
    if (j.count("step_size")) a.step_size = j.at("step_size").get<float>();
    if (j.count("cw_confidence")) a.cw_confidence = j.at("cw_confidence").get<float>();
    if (j.count("cw_const")) a.cw_const = j.at("cw_const").get<float>();
    if (j.count("cw_lr")) a.cw_lr = j.at("cw_lr").get<float>();
    return a;
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["format_version"] = 1;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"classes", c.dataset.classes},
                    {"train_per_class", c.dataset.train_per_class},
                    {"test_per_class", c.dataset.test_per_class},
                    {"image_size", c.dataset.image_size},
                    {"blob_sigma", c.dataset.blob_sigma},
                    {"train_images", c.dataset.train_images},
                    {"train_labels", c.dataset.train_labels},
                    {"test_images", c.dataset.test_images},
                    {"test_labels", c.dataset.test_labels}};
    j["network"] = {{"epochs", c.net_epochs}, {"lr", c.net_lr}, {"batch_size", c.net_batch}};
    j["autoencoder"] = {{"epochs", c.ae_epochs},
                        {"lr", c.ae_lr},
                        {"batch_size", c.ae_batch},
                        {"mmd_weight", c.ae_mmd_weight}};
    j["attacks"] = json::array();
    for (const auto& a : c.attacks) j["attacks"].push_back(attack_to_json(a));
    j["noise_epsilon"] = c.noise_epsilon;
    j["detector"] = {{"c_grid", c.c_grid},       {"svm_epochs", c.svm_epochs},
                     {"svm_lr", c.svm_lr},       {"rf_trees", c.rf_trees},
                     {"rf_max_depth", c.rf_max_depth}, {"iso_trees", c.iso_trees},
                     {"iso_psi", c.iso_psi}};
    j["analysis"] = {{"trajectory_samples", c.trajectory_samples},
                     {"trajectory_grid_points", c.trajectory_grid_points},
                     {"pgd_iteration_grid", c.pgd_iteration_grid},
                     {"kde_grid_n", c.kde_grid_n}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    if (j.at("format_version").get<int>() != 1)
        throw config_error("experiment config: unsupported format version");
    if (!j.count("seed")) throw config_error("experiment config: explicit seed required");
    ExperimentConfig c;
    c.output_dir = j.at("output_dir").get<std::string>();
    c.seed = j.at("seed").get<uint64_t>();
    if (j.count("threads")) c.threads = j.at("threads").get<int>();
    const json& d = j.at("dataset");
    c.dataset.kind = d.at("kind").get<std::string>();
    if (c.dataset.kind != "synthetic" && c.dataset.kind != "idx")
        throw config_error("experiment config: dataset.kind must be synthetic or idx");
    if (d.count("classes")) c.dataset.classes = d.at("classes").get<int>();
    if (d.count("train_per_class")) c.dataset.train_per_class = d.at("train_per_class").get<int>();
    if (d.count("test_per_class")) c.dataset.test_per_class = d.at("test_per_class").get<int>();
    if (d.count("image_size")) c.dataset.image_size = d.at("image_size").get<int>();
    if (d.count("blob_sigma")) c.dataset.blob_sigma = d.at("blob_sigma").get<float>();
    if (d.count("train_images")) c.dataset.train_images = d.at("train_images").get<std::string>();
    if (d.count("train_labels")) c.dataset.train_labels = d.at("train_labels").get<std::string>();
    if (d.count("test_images")) c.dataset.test_images = d.at("test_images").get<std::string>();
    if (d.count("test_labels")) c.dataset.test_labels = d.at("test_labels").get<std::string>();
    if (c.dataset.kind == "idx")
        for (const std::string& p : {c.dataset.train_images, c.dataset.train_labels,
                                     c.dataset.test_images, c.dataset.test_labels})
            if (!fs::exists(p)) throw config_error("experiment config: missing idx file " + p);
    // optional sections keep struct defaults for any key left out
    const json n = j.value("network", json::object());
    c.net_epochs = n.value("epochs", c.net_epochs);
    c.net_lr = n.value("lr", c.net_lr);
    c.net_batch = n.value("batch_size", c.net_batch);
    const json a = j.value("autoencoder", json::object());
    c.ae_epochs = a.value("epochs", c.ae_epochs);
    c.ae_lr = a.value("lr", c.ae_lr);
    c.ae_batch = a.value("batch_size", c.ae_batch);
    c.ae_mmd_weight = a.value("mmd_weight", c.ae_mmd_weight);
    for (const auto& aj : j.at("attacks")) c.attacks.push_back(attack_from_json(aj));
    if (c.attacks.empty()) throw config_error("experiment config: needs at least one attack");
    c.noise_epsilon = j.value("noise_epsilon", c.noise_epsilon);
    const json det = j.value("detector", json::object());
    c.c_grid = det.value("c_grid", c.c_grid);
    c.svm_epochs = det.value("svm_epochs", c.svm_epochs);
    c.svm_lr = det.value("svm_lr", c.svm_lr);
    c.rf_trees = det.value("rf_trees", c.rf_trees);
    c.rf_max_depth = det.value("rf_max_depth", c.rf_max_depth);
    c.iso_trees = det.value("iso_trees", c.iso_trees);
    c.iso_psi = det.value("iso_psi", c.iso_psi);
    const json an = j.value("analysis", json::object());
    c.trajectory_samples = an.value("trajectory_samples", c.trajectory_samples);
    c.trajectory_grid_points = an.value("trajectory_grid_points", c.trajectory_grid_points);
    c.pgd_iteration_grid = an.value("pgd_iteration_grid", c.pgd_iteration_grid);
    c.kde_grid_n = an.value("kde_grid_n", c.kde_grid_n);
    return c;
}

json parse_override_value(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    try {
        size_t used = 0;
        if (v.find('.') != std::string::npos || v.find('e') != std::string::npos) {
            const double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } else {
            const long long i = std::stoll(v, &used);
            if (used == v.size()) return i;
        }
    } catch (const std::exception&) {
    }
    return v;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw config_error(path + ": cannot open config");
    json j = json::parse(in, nullptr, true, true);  // allow comments
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw config_error("override '" + ov + "' is not of the form key.path=value");
        json* cur = &j;
        std::string key = ov.substr(0, eq);
        size_t pos = 0;
        while (true) {
            const size_t dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot - pos);
            if (dot == std::string::npos) {
                (*cur)[part] = parse_override_value(ov.substr(eq + 1));
                break;
            }
            cur = &(*cur)[part];
            pos = dot + 1;
        }
    }
    return config_from_json(j);
}

void write_experiment_config(const ExperimentConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error(path + ": cannot open for writing");
    out << config_to_json(config).dump(2) << "\n";
}

uint64_t config_fingerprint(const ExperimentConfig& config) {
    return fnv1a64(config_to_json(config).dump());
}

// ---- manifest -------------------------------------------------------------------

bool RunManifest::stage_done(const std::string& stage) const {
    return std::find(completed.begin(), completed.end(), stage) != completed.end();
}

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error(path + ": cannot open manifest");
    json j = json::parse(in);
    if (j.at("format_version").get<int>() != 1)
        throw format_error(path + ": unsupported manifest format version");
    RunManifest m;
    m.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.completed = j.at("completed").get<std::vector<std::string>>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    if (j.count("runtime_seconds"))
        m.runtime_seconds = j.at("runtime_seconds").get<std::map<std::string, double>>();
    return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
    json j;
    j["format_version"] = 1;
    j["config_fingerprint"] = m.config_fingerprint;
    j["tool_version"] = m.tool_version;
    j["completed"] = m.completed;
    j["artifacts"] = m.artifacts;
    j["runtime_seconds"] = m.runtime_seconds;
    std::ofstream out(path);
    if (!out) throw format_error(path + ": cannot open manifest for writing");
    out << j.dump(2) << "\n";
}

// ---- stage graph ------------------------------------------------------------------

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "train-target", "train-aes",      "attack",         "features",
        "detect",       "evaluate",       "trajectory",     "importance",
        "study-pgd-iters", "study-transfer", "study-ablation"};
    return names;
}

const std::vector<std::string>& stage_deps(const std::string& stage) {
    static const std::map<std::string, std::vector<std::string>> deps = {
        {"train-target", {}},
        {"train-aes", {"train-target"}},
        {"attack", {"train-target"}},
        {"features", {"train-aes", "attack"}},
        {"detect", {"features"}},
        {"evaluate", {"detect"}},
        {"trajectory", {"train-aes"}},
        {"importance", {"features"}},
        {"study-pgd-iters", {"train-aes"}},
        {"study-transfer", {"train-aes"}},
        {"study-ablation", {"train-aes"}},
    };
    auto it = deps.find(stage);
    if (it == deps.end()) throw config_error("unknown stage '" + stage + "'");
    return it->second;
}

// ---- stage implementations ----------------------------------------------------------

namespace {

struct Paths {
    fs::path root;
    fs::path manifest() const { return root / "manifest.json"; }
    fs::path net_aedm() const { return root / "net.aedm"; }
    fs::path net_json() const { return root / "net.json"; }
    fs::path ae_bank() const { return root / "ae_bank"; }
    fs::path attacks() const { return root / "attacks"; }
    fs::path features() const { return root / "features"; }
    fs::path detect() const { return root / "detect"; }
    fs::path evaluate() const { return root / "evaluate"; }
    fs::path analysis() const { return root / "analysis"; }
};

struct Data {
    LabeledImages train, test;
};

Data load_data(const ExperimentConfig& c) {
    Data d;
    if (c.dataset.kind == "synthetic") {
        d.train = synth_dataset(c.dataset.classes, c.dataset.train_per_class,
                                c.dataset.image_size, c.dataset.blob_sigma,
                                derive_seed(c.seed, "data-train"));
        d.test = synth_dataset(c.dataset.classes, c.dataset.test_per_class, c.dataset.image_size,
                               c.dataset.blob_sigma, derive_seed(c.seed, "data-test"));
    } else {
        d.train = load_idx(c.dataset.train_images, c.dataset.train_labels);
        d.test = load_idx(c.dataset.test_images, c.dataset.test_labels);
    }
    return d;
}

int num_classes(const LabeledImages& d) {
    return *std::max_element(d.labels.begin(), d.labels.end()) + 1;
}

void stage_train_target(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto cfg = build_small_convnet({d.train.images.dim(1), d.train.images.dim(2),
                                    d.train.images.dim(3)},
                                   num_classes(d.train));
    auto net = train_classifier(cfg, d.train, c.net_epochs, c.net_lr, c.net_batch,
                                derive_seed(c.seed, "train-target"));
    save_network(net, p.net_aedm().string(), p.net_json().string());
    std::cout << "train-target: val_accuracy=" << net.meta.val_accuracy << "\n";
}

void stage_train_aes(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto [logits, taps] = forward_with_taps(net, d.train.images);
    (void)logits;
    AeBank bank;
    for (const auto& [tap, _] : net.config.taps) {
        auto cfg = default_ae_config(tap, tap_shape(net.config, tap));
        cfg.epochs = c.ae_epochs;
        cfg.lr = c.ae_lr;
        cfg.batch_size = c.ae_batch;
        cfg.mmd_weight = c.ae_mmd_weight;
        cfg.seed = derive_seed(c.seed, "train-aes/" + tap);
        bank.emplace(tap, train_wae(taps.at(tap), cfg));
        std::cout << "train-aes: " << tap << " final_loss="
                  << bank.at(tap).training_curve.back() << "\n";
    }
    save_ae_bank(bank, p.ae_bank().string());
}

void stage_attack(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    fs::create_directories(p.attacks());
    for (const auto& spec : c.attacks) {
        const std::string name = attack_kind_name(spec.kind);
        AttackSpec s = spec;
        s.seed = derive_seed(c.seed, "attack/" + name);
        s.validate();
        auto batch = run_attack(net, d.test.images, d.test.labels, s);
        save_adversarial_batch((p.attacks() / (name + "_batch.aedm")).string(),
                               (p.attacks() / (name + "_manifest.csv")).string(), batch);
        auto ds = build_detection_dataset(net, d.test, batch, c.noise_epsilon,
                                          derive_seed(c.seed, "ds/" + name));
        save_detection_dataset(ds, (p.attacks() / ("detection_" + name + ".aedm")).string(),
                               (p.attacks() / ("detection_" + name + ".csv")).string());
        double succ = 0;
        for (char v : batch.success) succ += v;
        std::cout << "attack: " << name << " success_rate=" << succ / batch.size() << "\n";
    }
}

void stage_features(const ExperimentConfig& c, const Paths& p) {
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto bank = load_ae_bank(p.ae_bank().string());
    fs::create_directories(p.features());
    for (const auto& spec : c.attacks) {
        const std::string name = attack_kind_name(spec.kind);
        auto ds = load_detection_dataset(
            (p.attacks() / ("detection_" + name + ".aedm")).string(),
            (p.attacks() / ("detection_" + name + ".csv")).string());
        for (auto mode : {FeatureMode::Compact, FeatureMode::Full}) {
            auto fm = extract_features(net, bank, ds.inputs, mode, "unknown");
            fm.provenance = ds.provenance;
            const char* tag = mode == FeatureMode::Compact ? "compact" : "full";
            write_feature_csv((p.features() / (name + "_" + tag + ".csv")).string(), fm);
        }
    }
}

Features fm_rows(const FeatureMatrix& fm) { return fm.values; }

void stage_detect(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto bank = load_ae_bank(p.ae_bank().string());
    fs::create_directories(p.detect());

    // one-class model: clean training-set compact features only
    auto clean_feats = detection_features(net, bank, d.train.images, Representation::Both);
    auto iso = fit_isolation_forest(clean_feats, c.iso_trees, c.iso_psi,
                                    derive_seed(c.seed, "iso"));
    save_isolation_forest(iso, (p.detect() / "iso.json").string());

    std::vector<StudyRow> summary;
    for (const auto& spec : c.attacks) {
        const std::string name = attack_kind_name(spec.kind);
        auto ds = load_detection_dataset(
            (p.attacks() / ("detection_" + name + ".aedm")).string(),
            (p.attacks() / ("detection_" + name + ".csv")).string());
        auto compact = fm_rows(read_feature_csv((p.features() / (name + "_compact.csv")).string()));
        auto full = fm_rows(read_feature_csv((p.features() / (name + "_full.csv")).string()));
        auto [train_idx, eval_idx] = split_10_90(ds, derive_seed(c.seed, "split/" + name));

        auto take = [](const Features& x, const std::vector<size_t>& idx) {
            Features out;
            for (size_t i : idx) out.push_back(x[i]);
            return out;
        };
        auto take_labels = [&ds](const std::vector<size_t>& idx) {
            std::vector<int> out;
            for (size_t i : idx) out.push_back(ds.labels[i]);
            return out;
        };
        Features xtr_full = take(full, train_idx);
        std::vector<int> ytr = take_labels(train_idx);
        std::vector<int> yev = take_labels(eval_idx);

        const size_t min_class = std::min<size_t>(std::count(ytr.begin(), ytr.end(), 0),
                                                  std::count(ytr.begin(), ytr.end(), 1));
        float best_c = 1.0f;
        if (min_class >= 5)
            best_c = grid_search_cv(xtr_full, ytr, c.c_grid, 5, c.svm_epochs, c.svm_lr,
                                    derive_seed(c.seed, "grid/" + name));
        auto svm = fit_linear_svm(xtr_full, ytr, best_c, c.svm_epochs, c.svm_lr,
                                  derive_seed(c.seed, "svm/" + name));
        save_svm(svm, (p.detect() / (name + "_svm.json")).string());
        auto svm_scores = svm_score(svm, take(full, eval_idx));
        write_scores_csv((p.detect() / (name + "_scores_svm.csv")).string(), svm_scores, yev);
        summary.push_back({name + "/svm_full", auroc(svm_scores, yev)});

        auto rf = fit_random_forest(take(compact, train_idx), ytr, c.rf_trees, c.rf_max_depth,
                                    derive_seed(c.seed, "rf/" + name));
        save_random_forest(rf, (p.detect() / (name + "_rf.json")).string());
        auto rf_scores = rf_score(rf, take(compact, eval_idx));
        write_scores_csv((p.detect() / (name + "_scores_rf.csv")).string(), rf_scores, yev);
        summary.push_back({name + "/rf_compact", auroc(rf_scores, yev)});

        auto iso_scores = iso_score(iso, compact);
        write_scores_csv((p.detect() / (name + "_scores_iso.csv")).string(), iso_scores,
                         ds.labels);
        summary.push_back({name + "/iso_compact", auroc(iso_scores, ds.labels)});
    }
    write_study_csv((p.detect() / "summary.csv").string(), "attack_setting", summary);
    for (const auto& r : summary)
        std::cout << "detect: " << r.key << " auroc=" << r.auroc_value << "\n";
}

void stage_evaluate(const ExperimentConfig& c, const Paths& p) {
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    fs::create_directories(p.evaluate());
    auto summary = read_study_csv((p.detect() / "summary.csv").string());

    json report;
    report["format_version"] = 1;
    report["tool_version"] = kToolVersion;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(config_fingerprint(c)));
    report["config_fingerprint"] = buf;
    report["auroc"] = json::object();
    for (const auto& r : summary) {
        const size_t slash = r.key.find('/');
        report["auroc"][r.key.substr(0, slash)][r.key.substr(slash + 1)] = r.auroc_value;
    }

    const std::string deep_tap = net.config.taps.back().first;
    report["counts"] = json::object();
    report["h2_rec_err_auroc"] = json::object();
    for (const auto& spec : c.attacks) {
        const std::string name = attack_kind_name(spec.kind);
        auto ds = load_detection_dataset(
            (p.attacks() / ("detection_" + name + ".aedm")).string(),
            (p.attacks() / ("detection_" + name + ".csv")).string());
        auto fm = read_feature_csv((p.features() / (name + "_compact.csv")).string());

        const size_t class1 = std::count(ds.labels.begin(), ds.labels.end(), 0);
        report["counts"][name] = {{"class1", class1}, {"class2", ds.size() - class1}};

        // per-tap single-feature (rec_err) AUROC profile
        json profile = json::object();
        for (const auto& [tap, _] : net.config.taps) {
            const int col = fm.column(tap + "_rec_err");
            std::vector<float> scores;
            for (const auto& row : fm.values) scores.push_back(row[col]);
            profile[tap] = auroc(scores, ds.labels);
        }
        report["h2_rec_err_auroc"][name] = profile;

        // KDE grids of the deepest tap's (rec_err, lat_norm) plane
        const int cr = fm.column(deep_tap + "_rec_err");
        const int cl = fm.column(deep_tap + "_lat_norm");
        std::vector<std::pair<float, float>> clean_pts, adv_pts;
        float x_hi = 1e-6f, y_hi = 1e-6f;
        for (size_t i = 0; i < fm.size(); ++i) {
            const float x = fm.values[i][cr], y = fm.values[i][cl];
            (ds.labels[i] ? adv_pts : clean_pts).push_back({x, y});
            x_hi = std::max(x_hi, x);
            y_hi = std::max(y_hi, y);
        }
        const float bw = 0.05f * std::max(x_hi, y_hi);
        for (auto [pts, tag] : {std::pair{&clean_pts, "clean"}, {&adv_pts, "adv"}}) {
            auto g = kde2d_grid(*pts, bw, c.kde_grid_n, 0.0f, x_hi * 1.1f, 0.0f, y_hi * 1.1f);
            CsvTable t;
            t.header = {"x", "y", "density"};
            for (int yi = 0; yi < c.kde_grid_n; ++yi)
                for (int xi = 0; xi < c.kde_grid_n; ++xi)
                    t.rows.push_back({csv_float(g.xs[xi]), csv_float(g.ys[yi]),
                                      csv_float(g.density[yi][xi])});
            write_csv((p.evaluate() / ("kde_" + name + "_" + tag + ".csv")).string(), t);
        }
    }
    std::ofstream out(p.evaluate() / "eval_report.json");
    out << report.dump(2) << "\n";
    std::cout << "evaluate: report written\n";
}

float first_bounded_epsilon(const ExperimentConfig& c) {
    for (const auto& a : c.attacks)
        if (a.kind == AttackKind::Fgsm || a.kind == AttackKind::Bim || a.kind == AttackKind::Pgd)
            return a.epsilon;
    return c.noise_epsilon;
}

void stage_trajectory(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto bank = load_ae_bank(p.ae_bank().string());
    fs::create_directories(p.analysis());
    const int n = std::min<int>(c.trajectory_samples, static_cast<int>(d.test.size()));
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto sub = d.test.subset(idx);
    auto trs = compute_trajectories(net, bank, sub.images, sub.labels, AttackKind::Bim,
                                    first_bounded_epsilon(c), c.trajectory_grid_points);
    CsvTable t;
    t.header = {"sample_id", "eps", "tap", "rec_err", "lat_norm"};
    for (const auto& tr : trs)
        for (size_t g = 0; g < tr.eps_grid.size(); ++g)
            for (const auto& [tap, pt] : tr.points[g])
                t.rows.push_back({std::to_string(tr.sample_id), csv_float(tr.eps_grid[g]), tap,
                                  csv_float(pt.first), csv_float(pt.second)});
    write_csv((p.analysis() / "trajectories.csv").string(), t);
    std::cout << "trajectory: " << trs.size() << " samples\n";
}

void stage_importance(const ExperimentConfig& c, const Paths& p) {
    fs::create_directories(p.analysis());
    CsvTable t;
    t.header = {"attack", "tap", "rec_err", "lat_norm", "tap_sum"};
    for (const auto& spec : c.attacks) {
        const std::string name = attack_kind_name(spec.kind);
        auto ds = load_detection_dataset(
            (p.attacks() / ("detection_" + name + ".aedm")).string(),
            (p.attacks() / ("detection_" + name + ".csv")).string());
        auto fm = read_feature_csv((p.features() / (name + "_compact.csv")).string());
        auto rf = fit_random_forest(fm.values, ds.labels, c.rf_trees, c.rf_max_depth,
                                    derive_seed(c.seed, "importance/" + name));
        auto rep = layer_and_feature_importance(rf, fm.columns);
        for (const auto& tap : rep.taps)
            t.rows.push_back({name, tap, csv_double(rep.rec_err[tap]),
                              csv_double(rep.lat_norm[tap]), csv_double(rep.tap_sum[tap])});
        t.rows.push_back({name, "__aggregate__", csv_double(rep.rec_err_total),
                          csv_double(rep.lat_norm_total),
                          csv_double(rep.rec_err_total + rep.lat_norm_total)});
    }
    write_csv((p.analysis() / "importance.csv").string(), t);
    std::cout << "importance: written\n";
}

void stage_study_pgd_iters(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto bank = load_ae_bank(p.ae_bank().string());
    fs::create_directories(p.analysis());
    auto rows = pgd_iteration_study(net, bank, d.train, d.test, first_bounded_epsilon(c),
                                    c.pgd_iteration_grid, derive_seed(c.seed, "study-pgd"));
    write_study_csv((p.analysis() / "pgd_iters.csv").string(), "iterations", rows);
    std::cout << "study-pgd-iters: " << rows.size() << " rows\n";
}

void stage_study_transfer(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto bank = load_ae_bank(p.ae_bank().string());
    fs::create_directories(p.analysis());
    auto rows = transfer_study(net, bank, d.test, c.attacks, derive_seed(c.seed, "study-transfer"));
    write_study_csv((p.analysis() / "transfer.csv").string(), "attack", rows);
    std::cout << "study-transfer: " << rows.size() << " rows\n";
}

void stage_study_ablation(const ExperimentConfig& c, const Paths& p) {
    Data d = load_data(c);
    auto net = load_network(p.net_aedm().string(), p.net_json().string());
    auto bank = load_ae_bank(p.ae_bank().string());
    fs::create_directories(p.analysis());
    const AttackSpec* fgsm = nullptr;
    for (const auto& a : c.attacks)
        if (a.kind == AttackKind::Fgsm) fgsm = &a;
    if (!fgsm) throw config_error("study-ablation: config must include an fgsm attack");
    auto rows = representation_ablation(net, bank, d.train, d.test, *fgsm,
                                        derive_seed(c.seed, "study-ablation"));
    write_study_csv((p.analysis() / "ablation.csv").string(), "representation", rows);
    std::cout << "study-ablation: " << rows.size() << " rows\n";
}

std::vector<std::string> stage_artifacts(const std::string& s) {
    if (s == "train-target") return {"net.aedm", "net.json"};
    if (s == "train-aes") return {"ae_bank"};
    if (s == "attack") return {"attacks"};
    if (s == "features") return {"features"};
    if (s == "detect") return {"detect"};
    if (s == "evaluate") return {"evaluate/eval_report.json"};
    if (s == "trajectory") return {"analysis/trajectories.csv"};
    if (s == "importance") return {"analysis/importance.csv"};
    if (s == "study-pgd-iters") return {"analysis/pgd_iters.csv"};
    if (s == "study-transfer") return {"analysis/transfer.csv"};
    if (s == "study-ablation") return {"analysis/ablation.csv"};
    return {};
}

void dispatch(const ExperimentConfig& c, const Paths& p, const std::string& stage) {
    if (stage == "train-target") return stage_train_target(c, p);
    if (stage == "train-aes") return stage_train_aes(c, p);
    if (stage == "attack") return stage_attack(c, p);
    if (stage == "features") return stage_features(c, p);
    if (stage == "detect") return stage_detect(c, p);
    if (stage == "evaluate") return stage_evaluate(c, p);
    if (stage == "trajectory") return stage_trajectory(c, p);
    if (stage == "importance") return stage_importance(c, p);
    if (stage == "study-pgd-iters") return stage_study_pgd_iters(c, p);
    if (stage == "study-transfer") return stage_study_transfer(c, p);
    if (stage == "study-ablation") return stage_study_ablation(c, p);
    throw config_error("unknown stage '" + stage + "'");
}

}  // namespace

bool run_stage(const ExperimentConfig& config, const std::string& stage, bool force) {
    Paths p{fs::path(config.output_dir)};
    fs::create_directories(p.root);

    char fp[24];
    std::snprintf(fp, sizeof(fp), "%016llx",
                  static_cast<unsigned long long>(config_fingerprint(config)));

    RunManifest manifest;
    manifest.config_fingerprint = fp;
    if (fs::exists(p.manifest())) {
        auto prior = load_manifest(p.manifest().string());
        if (prior.config_fingerprint == fp)
            manifest = prior;
        else
            std::cout << "config changed (fingerprint " << prior.config_fingerprint << " -> "
                      << fp << "); stages will rerun\n";
    }

    std::vector<std::string> to_run;
    if (stage == "all") {
        to_run = stage_names();
    } else {
        for (const auto& dep : stage_deps(stage))
            if (!manifest.stage_done(dep))
                throw config_error("stage '" + stage + "' requires completed stage '" + dep +
                                   "'; run `aedet " + dep + "` first");
        to_run = {stage};
    }

    bool worked = false;
    for (const auto& s : to_run) {
        if (manifest.stage_done(s) && !force) {
            std::cout << s << ": up to date\n";
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        dispatch(config, p, s);
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        manifest.runtime_seconds[s] = dt.count();
        if (!manifest.stage_done(s)) manifest.completed.push_back(s);
        for (const auto& a : stage_artifacts(s))
            if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), a) ==
                manifest.artifacts.end())
                manifest.artifacts.push_back(a);
        save_manifest(manifest, p.manifest().string());
        worked = true;
    }
    return worked;
}

}  // namespace aedet
