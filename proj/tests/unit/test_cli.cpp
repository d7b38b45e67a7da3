#include <gtest/gtest.h>

#include <fstream>

#include "lesyn/cli/run.hpp"
#include "test_util.hpp"

using namespace lesyn;
using lesyn::test::TempDir;
using nlohmann::json;

namespace {

std::string write_config(const TempDir& td, const json& j) {
    const auto path = td.path() / "config.json";
    std::ofstream os(path);
    os << j.dump(2);
    return path.string();
}

json toy_config(const TempDir& td, int classes = 2, int per_class = 5, int res = 32) {
    json j;
    j["seed"] = 77;
    j["out_dir"] = (td.path() / "runs").string();
    j["data"]["toy"] = {{"num_classes", classes},
                        {"samples_per_class", per_class},
                        {"resolution", {res, res}},
                        {"seed", 7},
                        {"dir", (td.path() / "toy").string()}};
    j["data"]["resolution"] = {res, res};
    j["tokenizer"] = {{"scales", {{1, 1}, {2, 2}, {4, 4}, {8, 8}}},
                      {"vocab", 32},
                      {"code_dim", 6},
                      {"base_channels", 6},
                      {"epochs", 2},
                      {"batch_size", 4},
                      {"gan_warmup_epochs", 1},
                      {"lambda_g", 0.05}};
    j["var"] = {{"depth", 1}, {"heads", 2}, {"width", 16}, {"epochs", 1}, {"batch_size", 4}};
    j["evaluation"] = {{"gen_per_class", 3},
                       {"feature_dim", 8},
                       {"is_splits", 2},
                       {"downstream", {{"epochs", 2}, {"channels", 6}}}};
    j["tokenizer"]["checkpoint"] = (td.path() / "ckpt" / "vqvae").string();
    j["var"]["checkpoint"] = (td.path() / "ckpt" / "var").string();
    j["measurements"] = {{"normalizer", (td.path() / "ckpt" / "normalizer.txt").string()},
                         {"codebook", (td.path() / "ckpt" / "codebook.txt").string()}};
    return j;
}

}  // namespace

TEST(Config, DefaultsOverridesAndPrecedence) {
    TempDir td("cfg");
    json file_cfg = {{"seed", 5}, {"var", {{"depth", 3}}}};
    const auto path = write_config(td, file_cfg);
    auto cfg = cli::materialize_config(path, {"var.heads=8", "tokenizer.vocab=256"}, "", -1);
    EXPECT_EQ(cfg.seed(), 5u);
    EXPECT_EQ(cfg.raw.at("var").at("depth"), 3);
    EXPECT_EQ(cfg.raw.at("var").at("heads"), 8);
    EXPECT_EQ(cfg.raw.at("tokenizer").at("vocab"), 256);
    EXPECT_EQ(cfg.raw.at("var").at("width"), 256);  // untouched default

    // CLI flags beat the file; --seed beats config seed
    auto cfg2 = cli::materialize_config(path, {"seed=9"}, "", 123);
    EXPECT_EQ(cfg2.seed(), 123u);

    // env mirrors --set
    setenv("LESYN_SET_var__depth", "11", 1);
    auto cfg3 = cli::materialize_config(path, {}, "", -1);
    EXPECT_EQ(cfg3.raw.at("var").at("depth"), 11);
    // --set beats env
    auto cfg4 = cli::materialize_config(path, {"var.depth=12"}, "", -1);
    EXPECT_EQ(cfg4.raw.at("var").at("depth"), 12);
    unsetenv("LESYN_SET_var__depth");

    EXPECT_THROW(cli::apply_set_override(cfg.raw, "novalue"), std::invalid_argument);
}

TEST(Config, HashStableUnderKeyReordering) {
    json a = json::parse(R"({"seed": 1, "var": {"depth": 2, "heads": 4}})");
    json b = json::parse(R"({"var": {"heads": 4, "depth": 2}, "seed": 1})");
    EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
    EXPECT_EQ(cli::run_id_of(a), cli::run_id_of(b));
    json c = a;
    c["seed"] = 2;
    EXPECT_NE(cli::config_hash(a), cli::config_hash(c));
}

TEST(Config, FmAmMutuallyExclusive) {
    TempDir td("cfg_fmam");
    json j = {{"ablation", {{"lf", true}, {"fm", true}, {"am", true}}}};
    const auto path = write_config(td, j);
    EXPECT_THROW(cli::materialize_config(path, {}, "", -1), std::invalid_argument);
    // via run_cli: exit code 1
    EXPECT_EQ(cli::run_cli({"make-toy", "--config", path}), 1);
}

TEST(Config, AblationFlagsDriveEffectiveConfigs) {
    TempDir td("cfg_flags");
    const auto path = write_config(td, json{{"ablation", {{"lf", false}, {"fm", true}, {"am", false}}}});
    auto cfg = cli::materialize_config(path, {}, "", -1);
    EXPECT_FALSE(cfg.tokenizer_config().lesion_focus);
    EXPECT_EQ(cfg.var_config().conditioning, var::MeasurementConditioning::fixed);

    const auto path2 = write_config(td, json{{"ablation", {{"lf", true}, {"fm", false}, {"am", true}}}});
    auto cfg2 = cli::materialize_config(path2, {}, "", -1);
    EXPECT_TRUE(cfg2.tokenizer_config().lesion_focus);
    EXPECT_EQ(cfg2.var_config().conditioning, var::MeasurementConditioning::codebook);
}

TEST(Cli, UnknownSubcommandAndHelp) {
    EXPECT_EQ(cli::run_cli({"frobnicate"}), 1);
    EXPECT_EQ(cli::run_cli({}), 1);
    EXPECT_EQ(cli::run_cli({"--help"}), 0);
    EXPECT_EQ(cli::run_cli({"generate", "--mode", "bogus"}), 1);
}

TEST(Cli, MakeToyProducesManifestsAndRunManifest) {
    TempDir td("cli_toy");
    const auto path = write_config(td, toy_config(td));
    EXPECT_EQ(cli::run_cli({"make-toy", "--config", path}), 0);
    EXPECT_TRUE(std::filesystem::exists(td.path() / "toy" / "manifest.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(td.path() / "toy" / "train_manifest.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(td.path() / "toy" / "test_manifest.jsonl"));
    const auto m = data::load_manifest(td.path() / "toy" / "manifest.jsonl");
    EXPECT_EQ(m.entries.size(), 10u);

    // run manifest exists under runs/<id>/manifests
    const auto cfg = cli::materialize_config(path, {}, "", -1);
    const auto rm_path = cfg.run_dir() / "manifests" / "make-toy_run_manifest.json";
    ASSERT_TRUE(std::filesystem::exists(rm_path));

    // reproducibility: rerunning yields an identical run manifest modulo timestamp
    json rm1 = json::parse(std::ifstream(rm_path));
    EXPECT_EQ(cli::run_cli({"make-toy", "--config", path}), 0);
    json rm2 = json::parse(std::ifstream(rm_path));
    rm1.erase("timestamp");
    rm2.erase("timestamp");
    EXPECT_EQ(rm1, rm2);
}

TEST(Cli, MissingInputsGiveValidationExitCode) {
    TempDir td("cli_missing");
    const auto path = write_config(td, toy_config(td));
    // no dataset yet -> train-vqvae is a validation error (1), not a crash (2)
    EXPECT_EQ(cli::run_cli({"train-vqvae", "--config", path}), 1);
    // generate without checkpoints -> 1
    EXPECT_EQ(cli::run_cli({"generate", "--config", path, "--mode", "inter", "--class", "0"}), 1);
    // evaluate without generated images -> 1
    EXPECT_EQ(cli::run_cli({"evaluate", "--config", path}), 1);
}

TEST(Cli, TrainVarScaleMismatchNamesBothScaleLists) {
    TempDir td("cli_scales");
    json j = toy_config(td);
    const auto path = write_config(td, j);
    ASSERT_EQ(cli::run_cli({"make-toy", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"train-vqvae", "--config", path}), 0);
    // var.scales explicitly different from the tokenizer's
    try {
        auto cfg = cli::materialize_config(path, {"var.scales=[[1,1],[2,2]]"}, "", -1);
        cli::cmd_train_var(cfg);
        FAIL() << "expected scale mismatch";
    } catch (const cli::ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[1x1,2x2]"), std::string::npos);
        EXPECT_NE(msg.find("[1x1,2x2,4x4,8x8]"), std::string::npos);
    }
    EXPECT_EQ(cli::run_cli({"train-var", "--config", path, "--set", "var.scales=[[1,1],[2,2]]"}), 1);
}

TEST(Cli, EndToEndTinyPipeline) {
    TempDir td("cli_e2e");
    const auto path = write_config(td, toy_config(td));
    ASSERT_EQ(cli::run_cli({"make-toy", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"train-vqvae", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"train-var", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"build-codebook", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"generate", "--config", path, "--mode", "intra", "--count", "2"}), 0);
    ASSERT_EQ(cli::run_cli({"evaluate", "--config", path}), 0);

    const auto cfg = cli::materialize_config(path, {}, "", -1);
    EXPECT_TRUE(std::filesystem::exists(cfg.run_dir() / "reports" / "evaluation.txt"));
    EXPECT_TRUE(std::filesystem::exists(cfg.run_dir() / "reports" / "evaluation.csv"));
    EXPECT_TRUE(std::filesystem::exists(cfg.run_dir() / "reports" / "features_real.tsv"));
    const auto gen_manifest = cfg.run_dir() / "images" / "intra" / "generation_manifest.jsonl";
    ASSERT_TRUE(std::filesystem::exists(gen_manifest));
    std::ifstream is(gen_manifest);
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) rows += !line.empty();
    EXPECT_EQ(rows, 2);  // test split holds one source sample per class
}

TEST(Cli, InterGenerationRequiresCodebook) {
    TempDir td("cli_inter");
    json j = toy_config(td);
    j["ablation"] = {{"lf", true}, {"fm", false}, {"am", true}};  // codebook conditioning
    const auto path = write_config(td, j);
    ASSERT_EQ(cli::run_cli({"make-toy", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"train-vqvae", "--config", path}), 0);
    ASSERT_EQ(cli::run_cli({"train-var", "--config", path}), 0);
    const auto cfg = cli::materialize_config(path, {}, "", -1);
    // remove the codebook the AM training wrote, then inter generation must fail with exit 1
    std::filesystem::remove(cfg.codebook_path());
    EXPECT_EQ(cli::run_cli({"generate", "--config", path, "--mode", "inter", "--class", "1"}), 1);
    // rebuild it; generation now succeeds
    ASSERT_EQ(cli::run_cli({"build-codebook", "--config", path}), 0);
    EXPECT_EQ(cli::run_cli({"generate", "--config", path, "--mode", "inter", "--class", "1", "--count", "2"}), 0);
}
