// cswin: synthetic-phantom lesion-detection pipeline driver.
//
// Subcommands: synth, pretrain, finetune, predict, eval, gradcheck. Every
// subcommand accepts --config <json> and --seed; explicit flags override
// config values. Errors exit nonzero with a one-line JSON report on stderr:
//   2 usage, 3 I/O, 4 config/architecture mismatch, 5 numeric divergence,
//   6 data precondition, 7 bad value/shape, 1 anything else.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cswin/checkpoint.hpp"
#include "cswin/eval.hpp"
#include "cswin/finetune.hpp"
#include "cswin/gradsuite.hpp"
#include "cswin/phantom.hpp"
#include "cswin/preprocess.hpp"
#include "cswin/ssl.hpp"
#include "cswin/unet.hpp"
#include "cswin/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw cswin::io_error("cannot open " + path.string());
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw cswin::io_error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw cswin::io_error("cannot open " + path.string());
    f << j.dump(2) << "\n";
    if (!f) throw cswin::io_error("short write to " + path.string());
}

struct ManifestCase {
    std::string id;
    fs::path volume;
    fs::path mask;  // may be empty
};

std::vector<ManifestCase> read_manifest(const fs::path& path, const char* volume_key = "volume") {
    json j = load_json_file(path);
    if (!j.contains("cases")) throw cswin::io_error("manifest " + path.string() + " has no cases");
    std::vector<ManifestCase> cases;
    for (const auto& e : j.at("cases")) {
        ManifestCase c;
        c.id = e.at("id").get<std::string>();
        c.volume = path.parent_path() / e.at(volume_key).get<std::string>();
        if (e.contains("mask")) c.mask = path.parent_path() / e.at("mask").get<std::string>();
        cases.push_back(std::move(c));
    }
    return cases;
}

json config_or_empty(const std::string& config_path) {
    if (config_path.empty()) return json::object();
    return load_json_file(config_path);
}

// ---- synth ------------------------------------------------------------------

int cmd_synth(const std::string& config_path, std::optional<int64_t> n_flag,
              std::optional<uint64_t> seed_flag, std::string out_dir) {
    json cfg_json = config_or_empty(config_path);
    cswin::SynthConfig scfg = cswin::SynthConfig::from_json(cfg_json);
    int64_t n = n_flag.value_or(cfg_json.value("n", int64_t(8)));
    uint64_t seed = seed_flag.value_or(cfg_json.value("seed", uint64_t(0)));
    if (out_dir.empty()) out_dir = cfg_json.value("out", std::string());
    if (out_dir.empty()) throw cswin::value_error("synth: --out directory required");
    if (n < 1) throw cswin::value_error("synth: --n must be >= 1");

    fs::create_directories(out_dir);
    json manifest;
    manifest["seed"] = seed;
    manifest["synth_config"] = scfg.to_json();
    manifest["cases"] = json::array();
    for (int64_t i = 0; i < n; ++i) {
        cswin::Phantom ph = cswin::make_phantom(scfg, seed, i);
        char name[32];
        std::snprintf(name, sizeof(name), "case_%04lld", static_cast<long long>(i));
        const std::string vol_file = std::string(name) + ".json";
        const std::string mask_file = std::string(name) + "_mask.json";
        cswin::write_volume(ph.volume, fs::path(out_dir) / vol_file);
        cswin::write_volume(ph.mask, fs::path(out_dir) / mask_file);
        manifest["cases"].push_back({{"id", name},
                                     {"volume", vol_file},
                                     {"mask", mask_file},
                                     {"positive", ph.positive},
                                     {"lesions", ph.lesions.size()}});
    }
    write_json_file(manifest, fs::path(out_dir) / "manifest.json");
    std::cout << "synth: wrote " << n << " phantoms to " << out_dir << "\n";
    return 0;
}

// ---- pretrain ----------------------------------------------------------------

int cmd_pretrain(const std::string& config_path, const std::string& data_path,
                 std::optional<uint64_t> seed_flag, std::string out_dir) {
    json cfg_json = config_or_empty(config_path);
    cswin::PretrainConfig cfg = cswin::PretrainConfig::from_json(cfg_json);
    if (seed_flag) cfg.seed = *seed_flag;
    std::string data = !data_path.empty() ? data_path : cfg_json.value("data", std::string());
    if (out_dir.empty()) out_dir = cfg_json.value("out", std::string());
    if (data.empty()) throw cswin::value_error("pretrain: --data manifest required");
    if (out_dir.empty()) throw cswin::value_error("pretrain: --out directory required");

    std::vector<cswin::Volume> corpus;
    for (const auto& c : read_manifest(data)) corpus.push_back(cswin::read_volume(c.volume));

    auto run = cswin::pretrain<float>(corpus, cfg);

    fs::create_directories(out_dir);
    json meta;
    meta["kind"] = "pretrain";
    meta["seed"] = cfg.seed;
    meta["config"] = cfg.model.to_json();
    meta["pretrain_config"] = cfg.to_json();
    cswin::Checkpoint::from_store(meta, run.encoder->store())
        .save(fs::path(out_dir) / "pretrain.ckpt");

    json hist;
    hist["epochs"] = json::array();
    for (const auto& e : run.history) hist["epochs"].push_back(e.to_json());
    write_json_file(hist, fs::path(out_dir) / "loss_history.json");
    std::cout << "pretrain: " << cfg.epochs << " epochs on " << corpus.size()
              << " volumes -> " << (fs::path(out_dir) / "pretrain.ckpt").string() << "\n";
    return 0;
}

// ---- finetune ----------------------------------------------------------------

int cmd_finetune(const std::string& config_path, const std::string& data_path,
                 std::optional<uint64_t> seed_flag, std::string out_dir) {
    json cfg_json = config_or_empty(config_path);
    cswin::FinetuneConfig cfg = cswin::FinetuneConfig::from_json(cfg_json);
    if (seed_flag) cfg.seed = *seed_flag;
    std::string data = !data_path.empty() ? data_path : cfg_json.value("data", std::string());
    if (out_dir.empty()) out_dir = cfg_json.value("out", std::string());
    if (data.empty()) throw cswin::value_error("finetune: --data manifest required");
    if (out_dir.empty()) throw cswin::value_error("finetune: --out directory required");

    auto cases = read_manifest(data);
    for (const auto& c : cases)
        if (c.mask.empty())
            throw cswin::data_error("finetune: case " + c.id + " has no mask in the manifest");

    // split selection: explicit id lists beat fold assignment beats fraction
    std::vector<cswin::Volume> train_v, train_m, val_v, val_m;
    const int val_fold = cfg_json.value("val_fold", -1);
    const double val_fraction = cfg_json.value("val_fraction", 0.25);
    const double train_fraction = cfg_json.value("train_fraction", 1.0);
    std::vector<std::string> train_ids, val_ids;
    if (cfg_json.contains("train_ids")) train_ids = cfg_json.at("train_ids").get<std::vector<std::string>>();
    if (cfg_json.contains("val_ids")) val_ids = cfg_json.at("val_ids").get<std::vector<std::string>>();

    auto hash01 = [](const std::string& id, const char* salt) {
        return static_cast<double>(cswin::detail::fnv1a(id + salt) % 100000) / 100000.0;
    };
    for (const auto& c : cases) {
        bool is_val;
        if (!val_ids.empty() || !train_ids.empty()) {
            const bool inv = std::count(val_ids.begin(), val_ids.end(), c.id) > 0;
            const bool intr = std::count(train_ids.begin(), train_ids.end(), c.id) > 0;
            if (!inv && !intr) continue;
            is_val = inv;
        } else if (val_fold >= 0) {
            is_val = cswin::fold_of(c.id) == val_fold;
        } else {
            is_val = hash01(c.id, "/val") < val_fraction;
        }
        if (!is_val && train_ids.empty() && train_fraction < 1.0 &&
            hash01(c.id, "/subsample") >= train_fraction)
            continue;
        auto& vs = is_val ? val_v : train_v;
        auto& ms = is_val ? val_m : train_m;
        vs.push_back(cswin::read_volume(c.volume));
        ms.push_back(cswin::read_volume(c.mask));
    }

    auto run = cswin::finetune<float>(train_v, train_m, val_v, val_m, cfg);

    fs::create_directories(out_dir);
    json meta;
    meta["kind"] = "model";
    meta["seed"] = cfg.seed;
    meta["config"] = cfg.model.to_json();
    meta["finetune_config"] = cfg.to_json();
    cswin::Checkpoint::from_store(meta, run.model->store()).save(fs::path(out_dir) / "model.ckpt");

    json hist;
    hist["epochs"] = json::array();
    for (const auto& e : run.history) hist["epochs"].push_back(e.to_json());
    hist["train_cases"] = train_v.size();
    hist["val_cases"] = val_v.size();
    write_json_file(hist, fs::path(out_dir) / "metrics.json");
    std::cout << "finetune: " << cfg.epochs << " epochs on " << train_v.size() << " cases ("
              << val_v.size() << " val) -> " << (fs::path(out_dir) / "model.ckpt").string()
              << "\n";
    return 0;
}

// ---- predict -----------------------------------------------------------------

int cmd_predict(const std::string& config_path, const std::string& ckpt_path,
                const std::string& data_path, std::string out_dir) {
    json cfg_json = config_or_empty(config_path);
    std::string ckpt_file = !ckpt_path.empty() ? ckpt_path : cfg_json.value("checkpoint", std::string());
    std::string data = !data_path.empty() ? data_path : cfg_json.value("data", std::string());
    if (out_dir.empty()) out_dir = cfg_json.value("out", std::string());
    if (ckpt_file.empty()) throw cswin::value_error("predict: --checkpoint required");
    if (data.empty()) throw cswin::value_error("predict: --data manifest required");
    if (out_dir.empty()) throw cswin::value_error("predict: --out directory required");

    cswin::Checkpoint ckpt = cswin::Checkpoint::load(ckpt_file);
    if (ckpt.meta.value("kind", std::string()) != "model")
        throw cswin::config_error("predict: checkpoint kind '" +
                                  ckpt.meta.value("kind", std::string()) +
                                  "' is not a finetuned model");
    cswin::ModelConfig mcfg = cswin::ModelConfig::from_json(ckpt.meta.at("config"));
    cswin::CSwinUNet<float> model(mcfg, ckpt.meta.value("seed", uint64_t(0)));
    ckpt.copy_prefix_to(model.store(), "");

    std::optional<cswin::PreprocessConfig> pp;
    if (cfg_json.contains("preprocess"))
        pp = cswin::PreprocessConfig::from_json(cfg_json.at("preprocess"));

    fs::create_directories(out_dir);
    json manifest;
    manifest["checkpoint"] = ckpt_file;
    manifest["cases"] = json::array();
    cswin::NoGradGuard ng;
    for (const auto& c : read_manifest(data)) {
        cswin::Volume v = cswin::read_volume(c.volume);
        if (!v.preprocessed && pp) v = cswin::preprocess(v, *pp);
        if (v.shape != cswin::Shape{mcfg.input_shape[0], mcfg.input_shape[1], mcfg.input_shape[2],
                                    mcfg.input_shape[3]})
            throw cswin::config_error("predict: case " + c.id + " has shape " +
                                      cswin::shape_str(v.shape) +
                                      ", model expects " + cswin::shape_str({mcfg.input_shape[0],
                                                                             mcfg.input_shape[1],
                                                                             mcfg.input_shape[2],
                                                                             mcfg.input_shape[3]}));
        std::vector<const cswin::Volume*> one{&v};
        auto det = model.detection_map(cswin::volumes_to_batch<float>(one));
        cswin::Volume out = cswin::Volume::zeros({1, v.H(), v.W(), v.D()}, v.spacing);
        out.channels = {"DET"};
        out.data.assign(det.data().begin(), det.data().end());
        const std::string det_file = c.id + "_det.json";
        cswin::write_volume(out, fs::path(out_dir) / det_file);
        manifest["cases"].push_back({{"id", c.id}, {"detmap", det_file}});
    }
    write_json_file(manifest, fs::path(out_dir) / "predictions.json");
    std::cout << "predict: wrote detection maps to " << out_dir << "\n";
    return 0;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval(const std::string& config_path, const std::string& pred_path,
             const std::string& gt_path, std::string out_file, const std::string& csv_dir) {
    json cfg_json = config_or_empty(config_path);
    cswin::EvalConfig ecfg = cswin::EvalConfig::from_json(cfg_json);
    std::string pred = !pred_path.empty() ? pred_path : cfg_json.value("pred", std::string());
    std::string gt = !gt_path.empty() ? gt_path : cfg_json.value("gt", std::string());
    if (out_file.empty()) out_file = cfg_json.value("out", std::string("metrics.json"));
    if (pred.empty()) throw cswin::value_error("eval: --pred manifest required");
    if (gt.empty()) throw cswin::value_error("eval: --gt manifest required");

    auto preds = read_manifest(pred, "detmap");
    auto gts = read_manifest(gt);
    std::vector<cswin::EvalRecord> records;
    for (const auto& p : preds) {
        const ManifestCase* g = nullptr;
        for (const auto& c : gts)
            if (c.id == p.id) g = &c;
        if (!g) throw cswin::data_error("eval: no GT case for prediction id " + p.id);
        if (g->mask.empty()) throw cswin::data_error("eval: GT case " + p.id + " has no mask");
        records.push_back(cswin::evaluate_case(p.id, cswin::read_volume(p.volume),
                                               cswin::read_volume(g->mask), ecfg));
    }
    auto summary = cswin::summarize(std::move(records));
    json out = summary.to_json();
    out["eval_config"] = ecfg.to_json();
    write_json_file(out, out_file);

    if (!csv_dir.empty()) {
        fs::create_directories(csv_dir);
        std::ofstream roc(fs::path(csv_dir) / "roc.csv");
        roc << "threshold,fpr,tpr\n";
        for (const auto& p : summary.roc) roc << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
        std::ofstream pr(fs::path(csv_dir) / "pr.csv");
        pr << "confidence,recall,precision\n";
        for (const auto& p : summary.pr)
            pr << p.confidence << "," << p.recall << "," << p.precision << "\n";
    }
    std::cout << "eval: auroc=" << summary.auroc << " ap=" << summary.ap << " -> " << out_file
              << "\n";
    return 0;
}

// ---- gradcheck ----------------------------------------------------------------

int cmd_gradcheck() {
    auto res = cswin::run_gradient_suite();
    for (const auto& item : res.items)
        std::printf("%-34s max_rel_err=%.3e tol=%.0e params=%lld %s\n", item.name.c_str(),
                    item.max_rel_err, item.tol, static_cast<long long>(item.params),
                    item.pass ? "PASS" : (item.nonfinite ? "FAIL (non-finite)" : "FAIL"));
    std::printf("gradcheck: %zu checks in %.1f s: %s\n", res.items.size(), res.seconds,
                res.all_pass ? "ALL PASS" : "FAILURES");
    return res.all_pass ? 0 : 1;
}

int error_exit(int code, const char* kind, const std::string& message) {
    json err{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
    std::cerr << err.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CSwin UNet lesion-detection pipeline on synthetic phantoms"};
    app.require_subcommand(1);

    std::string config, data, out, ckpt, pred, gt, csv_dir;
    std::optional<int64_t> n;
    std::optional<uint64_t> seed;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON config file");
        sub->add_option("--seed", seed, "seed override");
    };

    auto* s_synth = app.add_subcommand("synth", "generate synthetic phantoms");
    add_common(s_synth);
    s_synth->add_option("--n", n, "number of phantoms");
    s_synth->add_option("--out", out, "output directory");

    auto* s_pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    add_common(s_pre);
    s_pre->add_option("--data", data, "phantom manifest");
    s_pre->add_option("--out", out, "output directory");

    auto* s_fin = app.add_subcommand("finetune", "supervised finetuning");
    add_common(s_fin);
    s_fin->add_option("--data", data, "phantom manifest");
    s_fin->add_option("--out", out, "output directory");

    auto* s_prd = app.add_subcommand("predict", "write detection maps");
    add_common(s_prd);
    s_prd->add_option("--checkpoint", ckpt, "model checkpoint");
    s_prd->add_option("--data", data, "phantom manifest");
    s_prd->add_option("--out", out, "output directory");

    auto* s_evl = app.add_subcommand("eval", "detection metrics");
    add_common(s_evl);
    s_evl->add_option("--pred", pred, "prediction manifest");
    s_evl->add_option("--gt", gt, "ground-truth manifest");
    s_evl->add_option("--out", out, "metrics JSON path");
    s_evl->add_option("--csv-dir", csv_dir, "optional directory for curve CSV dumps");

    auto* s_grd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(s_grd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return error_exit(2, "usage", std::string("argument error: ") + e.what());
    }

    try {
        if (s_synth->parsed()) return cmd_synth(config, n, seed, out);
        if (s_pre->parsed()) return cmd_pretrain(config, data, seed, out);
        if (s_fin->parsed()) return cmd_finetune(config, data, seed, out);
        if (s_prd->parsed()) return cmd_predict(config, ckpt, data, out);
        if (s_evl->parsed()) return cmd_eval(config, pred, gt, out, csv_dir);
        if (s_grd->parsed()) return cmd_gradcheck();
    } catch (const cswin::io_error& e) {
        return error_exit(3, "io_error", e.what());
    } catch (const cswin::config_error& e) {
        return error_exit(4, "config_error", e.what());
    } catch (const cswin::numeric_error& e) {
        return error_exit(5, "numeric_error", e.what());
    } catch (const cswin::data_error& e) {
        return error_exit(6, "data_error", e.what());
    } catch (const cswin::error& e) {
        return error_exit(7, "invalid_argument", e.what());
    } catch (const std::exception& e) {
        return error_exit(1, "internal", e.what());
    }
    return 0;
}
