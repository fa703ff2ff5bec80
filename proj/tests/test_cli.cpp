#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "cswin/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kCli = CSWIN_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

json read_json(const fs::path& p) {
    json j;
    std::ifstream f(p);
    f >> j;
    return j;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Desk-scale model/config JSON shared by the pipeline smoke test.
json tiny_model_json() {
    return {{"input_shape", {3, 16, 16, 8}},
            {"base_dim", 6},
            {"depths", {1, 1, 1, 1}},
            {"heads", {3, 3, 3, 3}},
            {"sw", {1, 2, 2, 2}},
            {"mlp_ratio", 1},
            {"strides", {{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 1}, {1, 1, 1}}}};
}

json tiny_synth_json() {
    return {{"shape", {16, 16, 8}},
            {"lesion_radius_inplane", {2.5, 4.0}},
            {"lesion_radius_depth", {1.5, 2.5}}};
}

void write_json_file(const json& j, const fs::path& p) {
    std::ofstream f(p);
    f << j.dump(2) << "\n";
}

}  // namespace

TEST(Cli, SynthContractAndDeterminism) {
    TempDir dir("cswin_cli_synth");
    const fs::path cfg = dir.path / "synth.json";
    write_json_file(tiny_synth_json(), cfg);

    ASSERT_EQ(run("synth --config " + cfg.string() + " --n 8 --seed 7 --out " +
                  (dir.path / "a").string()),
              0);
    auto manifest = read_json(dir.path / "a" / "manifest.json");
    ASSERT_EQ(manifest.at("cases").size(), 8u);
    for (const auto& c : manifest.at("cases")) {
        EXPECT_TRUE(fs::exists(dir.path / "a" / c.at("volume").get<std::string>()));
        EXPECT_TRUE(fs::exists(dir.path / "a" / c.at("mask").get<std::string>()));
    }

    // same seed twice: byte-identical artifacts
    ASSERT_EQ(run("synth --config " + cfg.string() + " --n 8 --seed 7 --out " +
                  (dir.path / "b").string()),
              0);
    for (const auto& c : manifest.at("cases")) {
        const std::string v = c.at("volume").get<std::string>();
        std::string raw = v.substr(0, v.size() - 5) + ".raw";
        EXPECT_EQ(slurp(dir.path / "a" / raw), slurp(dir.path / "b" / raw));
    }
    EXPECT_EQ(slurp(dir.path / "a" / "manifest.json"), slurp(dir.path / "b" / "manifest.json"));
}

TEST(Cli, DistinctErrorCodes) {
    TempDir dir("cswin_cli_err");
    EXPECT_EQ(run("--definitely-not-a-flag"), 2);
    EXPECT_EQ(run("synth --n 2"), 7);  // missing --out: invalid arguments
    EXPECT_EQ(run("pretrain --data " + (dir.path / "nope.json").string() + " --out " +
                  dir.path.string()),
              3);  // unreadable manifest
    // config/architecture mismatch: predict with a non-model checkpoint
    std::ofstream bad(dir.path / "bad.ckpt", std::ios::binary);
    bad << "CSWINCKPT1\n";
    uint64_t len = 2;
    bad.write(reinterpret_cast<const char*>(&len), 8);
    bad << "{}";
    bad.close();
    EXPECT_EQ(run("predict --checkpoint " + (dir.path / "bad.ckpt").string() + " --data x --out " +
                  dir.path.string()),
              3);  // manifest x unreadable comes first... checkpoint parses first
}

TEST(Cli, EvalOnPerfectDetectorGivesUnitMetrics) {
    TempDir dir("cswin_cli_eval");
    const fs::path cfg = dir.path / "synth.json";
    write_json_file(tiny_synth_json(), cfg);
    ASSERT_EQ(run("synth --config " + cfg.string() + " --n 10 --seed 3 --out " +
                  (dir.path / "data").string()),
              0);

    // predictions = the GT masks themselves as 0/1 detection maps
    auto manifest = read_json(dir.path / "data" / "manifest.json");
    json pred;
    pred["cases"] = json::array();
    for (const auto& c : manifest.at("cases")) {
        cswin::Volume mask =
            cswin::read_volume(dir.path / "data" / c.at("mask").get<std::string>());
        const std::string id = c.at("id").get<std::string>();
        cswin::write_volume(mask, dir.path / "data" / (id + "_det.json"));
        pred["cases"].push_back({{"id", id}, {"detmap", id + "_det.json"}});
    }
    write_json_file(pred, dir.path / "data" / "predictions.json");

    ASSERT_EQ(run("eval --pred " + (dir.path / "data" / "predictions.json").string() + " --gt " +
                  (dir.path / "data" / "manifest.json").string() + " --out " +
                  (dir.path / "metrics.json").string() + " --csv-dir " +
                  (dir.path / "csv").string()),
              0);
    auto metrics = read_json(dir.path / "metrics.json");
    EXPECT_DOUBLE_EQ(metrics.at("auroc").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(metrics.at("ap").get<double>(), 1.0);
    EXPECT_TRUE(fs::exists(dir.path / "csv" / "roc.csv"));
    EXPECT_TRUE(fs::exists(dir.path / "csv" / "pr.csv"));
}

TEST(Cli, FullPipelineSmoke) {
    TempDir dir("cswin_cli_pipeline");
    const fs::path synth_cfg = dir.path / "synth.json";
    write_json_file(tiny_synth_json(), synth_cfg);
    ASSERT_EQ(run("synth --config " + synth_cfg.string() + " --n 16 --seed 5 --out " +
                  (dir.path / "data").string()),
              0);

    json pre_cfg{{"model", tiny_model_json()},
                 {"augment", {{"patch_extent", {6, 6, 3}}, {"shuffle_patches", 4}}},
                 {"epochs", 5},
                 {"batch_pairs", 4},
                 {"warmup_epochs", 1},
                 {"embed_dim", 32},
                 {"seed", 9}};
    write_json_file(pre_cfg, dir.path / "pretrain.json");
    ASSERT_EQ(run("pretrain --config " + (dir.path / "pretrain.json").string() + " --data " +
                  (dir.path / "data" / "manifest.json").string() + " --out " +
                  (dir.path / "pre").string()),
              0);
    ASSERT_TRUE(fs::exists(dir.path / "pre" / "pretrain.ckpt"));
    auto hist = read_json(dir.path / "pre" / "loss_history.json");
    ASSERT_EQ(hist.at("epochs").size(), 5u);
    for (const auto& e : hist.at("epochs")) {
        EXPECT_TRUE(e.contains("l_cl"));
        EXPECT_TRUE(e.contains("w_cr"));
    }

    json fin_cfg{{"model", tiny_model_json()},
                 {"init", (dir.path / "pre" / "pretrain.ckpt").string()},
                 {"epochs", 10},
                 {"lr", 3e-4},
                 {"warmup_epochs", 2},
                 {"batch", 4},
                 {"val_fraction", 0.25},
                 {"seed", 9}};
    write_json_file(fin_cfg, dir.path / "finetune.json");
    ASSERT_EQ(run("finetune --config " + (dir.path / "finetune.json").string() + " --data " +
                  (dir.path / "data" / "manifest.json").string() + " --out " +
                  (dir.path / "fin").string()),
              0);
    ASSERT_TRUE(fs::exists(dir.path / "fin" / "model.ckpt"));
    auto metrics = read_json(dir.path / "fin" / "metrics.json");
    ASSERT_EQ(metrics.at("epochs").size(), 10u);
    EXPECT_TRUE(metrics.at("epochs")[0].contains("train_loss"));
    EXPECT_TRUE(metrics.at("epochs")[0].contains("val_dice"));

    ASSERT_EQ(run("predict --checkpoint " + (dir.path / "fin" / "model.ckpt").string() +
                  " --data " + (dir.path / "data" / "manifest.json").string() + " --out " +
                  (dir.path / "preds").string()),
              0);
    ASSERT_TRUE(fs::exists(dir.path / "preds" / "predictions.json"));

    ASSERT_EQ(run("eval --pred " + (dir.path / "preds" / "predictions.json").string() + " --gt " +
                  (dir.path / "data" / "manifest.json").string() + " --out " +
                  (dir.path / "metrics.json").string()),
              0);
    auto final_metrics = read_json(dir.path / "metrics.json");
    EXPECT_TRUE(final_metrics.contains("auroc"));
    EXPECT_TRUE(final_metrics.contains("ap"));
    EXPECT_TRUE(final_metrics.contains("per_case"));

    // architecture mismatch rejected with a distinct code: finetune against a
    // checkpoint of a different architecture
    json wrong = fin_cfg;
    wrong["model"]["base_dim"] = 12;
    wrong["model"]["heads"] = {3, 6, 12, 24};
    write_json_file(wrong, dir.path / "wrong.json");
    EXPECT_EQ(run("finetune --config " + (dir.path / "wrong.json").string() + " --data " +
                  (dir.path / "data" / "manifest.json").string() + " --out " +
                  (dir.path / "wrongout").string()),
              4);
}
