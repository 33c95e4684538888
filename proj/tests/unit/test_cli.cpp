#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "cataract/cli.hpp"
#include "cataract/config.hpp"
#include "cataract/csv.hpp"
#include "cataract/errors.hpp"
#include "fixtures.hpp"

using namespace cataract;
using namespace cataract::cli;
namespace fs = std::filesystem;

namespace {

int invoke(std::vector<std::string> args) { return run(args); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace

TEST_CASE("config defaults, overrides and schema errors") {
    const auto d = default_config();
    CHECK(d["train"]["learning_rate"] == 1e-4);
    CHECK(d["distill"]["temperature"] == 2.0);

    auto c = default_config();
    apply_override(c, "train.max_epochs=7");
    apply_override(c, "model.backbone=resnet50");
    apply_override(c, "synth.vessel_count_range=[1,2]");
    const auto typed = interpret(c);
    CHECK(typed.train.max_epochs == 7);
    CHECK(typed.model.backbone == models::BackboneName::resnet50);
    CHECK(typed.synth.vessel_count_range == std::pair<int, int>{1, 2});
    CHECK(typed.data.manifest_dir == fs::path("runs/default") / "manifests");

    auto expect_schema = [](const std::string& assignment, const std::string& path) {
        auto cfg = default_config();
        try {
            apply_override(cfg, assignment);
            interpret(cfg);
            FAIL("expected SchemaError for " << assignment);
        } catch (const SchemaError& e) {
            INFO(std::string(e.what()));
            CHECK(std::string(e.what()).find(path) != std::string::npos);
        }
    };
    expect_schema("train.nope=1", "train.nope");
    expect_schema("train.max_epochs=\"ten\"", "train.max_epochs");
    expect_schema("model.backbone=alexnet", "model.backbone");
    expect_schema("distill.temperature=0", "distill.temperature");
    expect_schema("model.regime=half", "model.regime");
}

TEST_CASE("config file then overrides then environment") {
    const auto dir = fixtures::scratch("cli_config");
    {
        std::ofstream f(dir / "c.json");
        f << R"({"seed": 4, "train": {"max_epochs": 3, "batch_size": 8}, "data": {"image_root": "/a"}})";
    }
    auto c = resolve_config(dir / "c.json", {"train.max_epochs=5"});
    CHECK(c.seed == 4);
    CHECK(c.train.max_epochs == 5);
    CHECK(c.train.batch_size == 8);
    CHECK(c.data.image_root == fs::path("/a"));

    ::setenv(kImageRootEnv, "/from/env", 1);
    c = resolve_config(dir / "c.json", {});
    CHECK(c.data.image_root == fs::path("/from/env"));
    ::unsetenv(kImageRootEnv);

    CHECK_THROWS_AS(resolve_config(dir / "missing.json", {}), Error);
    fs::remove_all(dir);
}

TEST_CASE("usage and configuration failures exit with 2") {
    const auto dir = fixtures::scratch("cli_usage");
    const auto out = (dir / "out").string();
    CHECK(invoke({}) == kExitConfig);
    CHECK(invoke({"fly"}) == kExitConfig);
    CHECK(invoke({"train", "--output-dir", out, "--set", "model.backbone=alexnet"}) == kExitConfig);
    CHECK(invoke({"train", "--output-dir", out, "--overwrite", "--set", "train.unknown=1"}) == kExitConfig);
    // No manifests yet: a missing input is a usage problem.
    CHECK(invoke({"train", "--output-dir", out, "--overwrite"}) == kExitConfig);
    CHECK(invoke({"evaluate", "--output-dir", out}) == kExitConfig);
    fs::remove_all(dir);
}

TEST_CASE("synth, prepare-data, train, evaluate, explain, benchmark") {
    const auto dir = fixtures::scratch("cli_pipeline");
    const auto data = (dir / "data").string();
    const auto manifests = "data.manifest_dir=" + (dir / "manifests").string();
    const auto meta = "data.metadata_csv=" + (dir / "data" / "metadata.csv").string();

    REQUIRE(invoke({"synth", "--output-dir", data, "--set", "synth.n_normal=10", "--set", "synth.n_cataract=10",
                 "--set", "synth.image_size=64"}) == kExitOk);
    CHECK(fs::exists(dir / "data" / "metadata.csv"));
    // Re-running into the same directory needs --overwrite.
    CHECK(invoke({"synth", "--output-dir", data}) == kExitConfig);

    REQUIRE(invoke({"prepare-data", "--output-dir", (dir / "prep").string(), "--set", meta, "--set", manifests}) ==
            kExitOk);
    for (const char* f : {"train.csv", "val.csv", "pairs_train.csv", "pairs_val.csv", "rejects.csv"}) {
        CHECK(fs::exists(dir / "manifests" / f));
    }
    CHECK(csv::read_file(dir / "manifests" / "train.csv").rows.size() == 16);
    CHECK(csv::read_file(dir / "manifests" / "val.csv").rows.size() == 4);

    const auto run_dir = (dir / "run").string();
    REQUIRE(invoke({"train", "--output-dir", run_dir, "--set", meta, "--set", manifests, "--set",
                 "model.regime=frozen_backbone", "--set", "train.max_epochs=1", "--set", "train.batch_size=8"}) ==
            kExitOk);
    const auto model_dir = dir / "run" / "models" / "mobilenet_v2_frozen_backbone";
    CHECK(fs::exists(model_dir / "best.ckpt"));
    CHECK(fs::exists(model_dir / "weights.pt"));
    CHECK(csv::read_file(model_dir / "history.csv").rows.size() == 1);
    CHECK(fs::exists(dir / "run" / "train.config.json"));

    const auto ckpt = (model_dir / "best.ckpt").string();
    REQUIRE(invoke({"evaluate", "--output-dir", (dir / "eval").string(), "--set", meta, "--set", manifests, "--set",
                 "evaluate.checkpoints=[\"" + ckpt + "\"]"}) == kExitOk);
    const auto metrics = csv::read_file(dir / "eval" / "metrics.csv");
    REQUIRE(metrics.rows.size() == 1);
    CHECK(metrics.rows[0][0] == "mobilenet_v2_frozen_backbone");
    CHECK(fs::exists(dir / "eval" / "predictions_mobilenet_v2_frozen_backbone.csv"));

    REQUIRE(invoke({"explain", "--output-dir", (dir / "explain").string(), "--set", meta, "--set", manifests, "--set",
                 "explain.checkpoint=" + ckpt, "--set", "explain.max_images=2"}) == kExitOk);
    CHECK(csv::read_file(dir / "explain" / "explain" / "summary_mobilenet_v2_frozen_backbone.csv").rows.size() == 2);

    REQUIRE(invoke({"benchmark", "--output-dir", (dir / "bench").string(), "--set", meta, "--set", manifests, "--set",
                 "train.max_epochs=1", "--set", "train.batch_size=8", "--set", "train.bn_recalibration_batches=1"}) ==
            kExitOk);
    const auto ablation = csv::read_file(dir / "bench" / "benchmark" / "ablation.csv");
    REQUIRE(ablation.rows.size() == 1);
    for (const auto& cell : ablation.rows[0]) CHECK_FALSE(cell.empty());
    CHECK(fs::exists(dir / "bench" / "benchmark" / "ablation.txt"));

    // A missing teacher is a usage error, a bad checkpoint a runtime one.
    CHECK(invoke({"distill", "--output-dir", (dir / "kd").string(), "--set", meta, "--set", manifests}) == kExitConfig);
    {
        std::ofstream junk(dir / "junk.ckpt");
        junk << "junk";
    }
    CHECK(invoke({"distill", "--output-dir", (dir / "kd").string(), "--overwrite", "--set", meta, "--set", manifests,
               "--set", "distill.teacher_checkpoint=" + (dir / "junk.ckpt").string()}) == kExitRuntime);
    CHECK_FALSE(slurp(dir / "run" / "train.config.json").empty());
    fs::remove_all(dir);
}
