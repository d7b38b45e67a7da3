#pragma once

#include "lesyn/cli/ablate.hpp"
#include "lesyn/cli/commands.hpp"

// CLI front door. run_cli() is in-process so both the binary's main() and the
// test suite go through exactly the same dispatch and exit-code mapping.

namespace lesyn::cli {

inline const char* kUsage =
    "usage: lesyn <subcommand> [--config PATH] [--seed INT] [--set key=value ...] [--out DIR]\n"
    "subcommands:\n"
    "  make-toy        generate the built-in synthetic toy-lesion dataset and split it\n"
    "  prepare-data    ingest an image/mask/label directory tree into a canonical manifest\n"
    "  train-vqvae     train the multi-scale lesion-focused VQ-VAE tokenizer\n"
    "  train-var       train the measurement-conditioned next-scale transformer\n"
    "  build-codebook  build the class-average measurement codebook and normalizer\n"
    "  generate        synthesize images (--mode intra|inter [--class N] [--source-class M]\n"
    "                  [--count K] [--all-pairs] [--source-split train|test])\n"
    "  evaluate        FID/IS report for generated images (--generated DIR, --downstream)\n"
    "  ablate          run the four-setting ablation and emit the IS/FID table\n"
    "environment: LESYN_SET_<key>=value mirrors --set with '.' spelled '__'\n"
    "             (e.g. LESYN_SET_var__depth=8)\n";

inline int run_cli(const std::vector<std::string>& args) {
    if (args.empty()) {
        std::cerr << kUsage;
        return 1;
    }
    const std::string sub = args[0];
    const std::set<std::string> known = {"make-toy", "prepare-data",   "train-vqvae", "train-var",
                                         "build-codebook", "generate", "evaluate",    "ablate"};
    if (sub == "-h" || sub == "--help" || sub == "help") {
        std::cout << kUsage;
        return 0;
    }
    if (!known.count(sub)) {
        std::cerr << "unknown subcommand: " << sub << "\n" << kUsage;
        return 1;
    }

    std::string config_path, out_dir;
    int64_t seed = -1;
    std::vector<std::string> sets;
    GenerateArgs gen_args;
    EvaluateArgs eval_args;

    try {
        for (size_t i = 1; i < args.size(); ++i) {
            const std::string& a = args[i];
            auto next = [&](const char* what) -> const std::string& {
                if (i + 1 >= args.size()) throw ValidationError(std::string(what) + " expects a value");
                return args[++i];
            };
            if (a == "--config") config_path = next("--config");
            else if (a == "--seed") seed = std::stoll(next("--seed"));
            else if (a == "--set") sets.push_back(next("--set"));
            else if (a == "--out") out_dir = next("--out");
            else if (a == "--mode" && sub == "generate") gen_args.mode = next("--mode");
            else if (a == "--class" && sub == "generate") gen_args.cls = std::stoi(next("--class"));
            else if (a == "--source-class" && sub == "generate") gen_args.source_cls = std::stoi(next("--source-class"));
            else if (a == "--count" && sub == "generate") gen_args.count = std::stoi(next("--count"));
            else if (a == "--all-pairs" && sub == "generate") gen_args.all_pairs = true;
            else if (a == "--source-split" && sub == "generate") gen_args.source_split = next("--source-split");
            else if (a == "--generated" && sub == "evaluate") eval_args.generated_dir = next("--generated");
            else if (a == "--downstream" && sub == "evaluate") eval_args.downstream = true;
            else throw ValidationError("unknown argument: " + a);
        }

        const RunConfig cfg = materialize_config(config_path, sets, out_dir, seed);
        if (sub == "make-toy") return cmd_make_toy(cfg);
        if (sub == "prepare-data") return cmd_prepare_data(cfg);
        if (sub == "train-vqvae") return cmd_train_vqvae(cfg);
        if (sub == "train-var") return cmd_train_var(cfg);
        if (sub == "build-codebook") return cmd_build_codebook(cfg);
        if (sub == "generate") return cmd_generate(cfg, gen_args);
        if (sub == "evaluate") return cmd_evaluate(cfg, eval_args);
        if (sub == "ablate") return cmd_ablate(cfg);
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace lesyn::cli
