#pragma once

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

extern char** environ;

#include "lesyn/core/serialize.hpp"
#include "lesyn/data/toy.hpp"
#include "lesyn/eval/downstream.hpp"
#include "lesyn/tokenizer/vqvae.hpp"
#include "lesyn/var/model.hpp"

// One declarative JSON config drives every subcommand. Override precedence:
// built-in defaults < config file < LESYN_SET_* environment variables < --set
// flags. The run id is a short hash of the fully materialized config (its dump
// is canonical: nlohmann objects iterate in sorted key order), so equal configs
// land in the same runs/<run-id>/ directory across subcommands.

namespace lesyn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline json default_config() {
    return json{
        {"seed", 1234},
        {"out_dir", "runs"},
        {"data",
         {{"dir", ""},
          {"manifest", ""},
          {"train_manifest", ""},
          {"test_manifest", ""},
          {"image_dir", ""},
          {"mask_dir", ""},
          {"label_file", ""},
          {"resolution", {64, 64}},
          {"train_fraction", 0.8},
          {"toy",
           {{"num_classes", 3}, {"samples_per_class", 100}, {"resolution", {64, 64}}, {"seed", 7},
            {"dir", "data/toy"}}}}},
        {"tokenizer",
         {{"scales", {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {6, 6}, {8, 8}, {16, 16}}},
          {"vocab", 1024},
          {"code_dim", 32},
          {"base_channels", 32},
          {"lambda_p", 1.0},
          {"lambda_g", 0.1},
          {"commitment_beta", 0.25},
          {"gan_warmup_epochs", 12},
          {"lr", 1e-3},
          {"beta1", 0.9},
          {"beta2", 0.95},
          {"weight_decay", 0.05},
          {"epochs", 20},
          {"batch_size", 16},
          {"checkpoint", ""}}},
        {"var",
         {{"depth", 6},
          {"heads", 4},
          {"width", 256},
          {"cond_tokens", 2},
          {"conditioning", "extracted"},
          {"scales", json::array()},  // empty = inherit tokenizer scales
          {"lr", 1e-3},
          {"beta1", 0.9},
          {"beta2", 0.95},
          {"weight_decay", 0.05},
          {"epochs", 12},
          {"batch_size", 16},
          {"sampler", {{"temperature", 1.0}, {"top_k", 0}, {"top_p", 1.0}, {"seed", 0}}},
          {"checkpoint", ""}}},
        {"measurements", {{"normalizer", ""}, {"codebook", ""}}},
        {"evaluation",
         {{"extractor_seed", 17},
          {"feature_dim", 64},
          {"is_splits", 10},
          {"gen_per_class", 32},
          {"downstream",
           {{"epochs", 10}, {"batch_size", 16}, {"lr", 3e-3}, {"channels", 12}, {"balance_target", 0}}}}},
        {"ablation", {{"lf", true}, {"fm", false}, {"am", false}}},
    };
}

// Recursive overlay; objects merge, everything else replaces.
inline void deep_merge(json& base, const json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (base.contains(it.key()))
            deep_merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

// "a.b.c=value"; value parsed as JSON when possible, else taken as a string.
inline void apply_set_override(json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (...) {
        value = raw;
    }
    json* node = &cfg;
    size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw std::invalid_argument("--set: empty key segment in " + key);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

// Environment mirror of --set: LESYN_SET_<key> with '.' spelled as '__'.
inline void apply_env_overrides(json& cfg) {
    const std::string prefix = "LESYN_SET_";
    for (char** e = environ; e && *e; ++e) {
        std::string entry(*e);
        if (entry.rfind(prefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(prefix.size(), eq - prefix.size());
        size_t pos;
        while ((pos = key.find("__")) != std::string::npos) key.replace(pos, 2, ".");
        apply_set_override(cfg, key + "=" + entry.substr(eq + 1));
    }
}

inline uint64_t config_hash(const json& cfg) { return io::hash_bytes(cfg.dump()); }

inline std::string run_id_of(const json& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    return std::string(buf);
}

struct RunConfig {
    json raw;

    uint64_t seed() const { return raw.at("seed").get<uint64_t>(); }
    fs::path out_dir() const { return raw.at("out_dir").get<std::string>(); }
    std::string run_id() const { return run_id_of(raw); }
    fs::path run_dir() const { return out_dir() / run_id(); }

    bool lf() const { return raw.at("ablation").at("lf").get<bool>(); }
    bool fm() const { return raw.at("ablation").at("fm").get<bool>(); }
    bool am() const { return raw.at("ablation").at("am").get<bool>(); }

    std::pair<int64_t, int64_t> resolution() const {
        const auto& r = raw.at("data").at("resolution");
        return {r.at(0).get<int64_t>(), r.at(1).get<int64_t>()};
    }

    // Active dataset directory: data.dir if set, else the toy directory.
    fs::path data_dir() const {
        const std::string d = raw.at("data").at("dir").get<std::string>();
        if (!d.empty()) return d;
        return raw.at("data").at("toy").at("dir").get<std::string>();
    }

    fs::path manifest_path(const std::string& which) const {  // "manifest"|"train_manifest"|"test_manifest"
        const std::string explicit_path = raw.at("data").at(which).get<std::string>();
        if (!explicit_path.empty()) return explicit_path;
        return data_dir() / (which + ".jsonl");
    }

    data::ToyDatasetSpec toy_spec() const {
        const auto& t = raw.at("data").at("toy");
        data::ToyDatasetSpec s;
        s.num_classes = t.at("num_classes");
        s.samples_per_class = t.at("samples_per_class");
        s.height = t.at("resolution").at(0);
        s.width = t.at("resolution").at(1);
        s.seed = t.at("seed");
        return s;
    }

    fs::path normalizer_path() const {
        const std::string p = raw.at("measurements").at("normalizer").get<std::string>();
        return p.empty() ? run_dir() / "checkpoints" / "normalizer.txt" : fs::path(p);
    }
    fs::path codebook_path() const {
        const std::string p = raw.at("measurements").at("codebook").get<std::string>();
        return p.empty() ? run_dir() / "checkpoints" / "measurement_codebook.txt" : fs::path(p);
    }
    fs::path tokenizer_checkpoint() const {
        const std::string p = raw.at("tokenizer").at("checkpoint").get<std::string>();
        return p.empty() ? run_dir() / "checkpoints" / "vqvae" : fs::path(p);
    }
    fs::path var_checkpoint() const {
        const std::string p = raw.at("var").at("checkpoint").get<std::string>();
        return p.empty() ? run_dir() / "checkpoints" / "var" : fs::path(p);
    }

    tok::VqVaeConfig tokenizer_config() const {
        const auto& t = raw.at("tokenizer");
        tok::VqVaeConfig c;
        const auto [h, w] = resolution();
        c.height = h;
        c.width = w;
        c.scales.clear();
        for (const auto& s : t.at("scales")) c.scales.emplace_back(s.at(0).get<int64_t>(), s.at(1).get<int64_t>());
        c.vocab = t.at("vocab");
        c.code_dim = t.at("code_dim");
        c.base_channels = t.at("base_channels");
        c.lambda_p = t.at("lambda_p");
        c.lambda_g = t.at("lambda_g");
        c.commitment_beta = t.at("commitment_beta");
        c.lesion_focus = lf();
        c.gan_warmup_epochs = t.at("gan_warmup_epochs");
        c.lr = t.at("lr");
        c.beta1 = t.at("beta1");
        c.beta2 = t.at("beta2");
        c.weight_decay = t.at("weight_decay");
        c.epochs = t.at("epochs");
        c.batch_size = t.at("batch_size");
        c.seed = seed();
        return c;
    }

    // num_classes/vocab/code_dim/scales are finalized from the tokenizer
    // checkpoint and the manifest at train time.
    var::VarConfig var_config() const {
        const auto& v = raw.at("var");
        var::VarConfig c;
        c.depth = v.at("depth");
        c.heads = v.at("heads");
        c.width = v.at("width");
        c.cond_tokens = v.at("cond_tokens");
        c.conditioning = var::measurement_conditioning_from_string(v.at("conditioning").get<std::string>());
        if (fm()) {
            c.conditioning = var::MeasurementConditioning::fixed;
            c.cond_tokens = 2;
        } else if (am()) {
            c.conditioning = var::MeasurementConditioning::codebook;
            c.cond_tokens = 2;
        }
        if (c.cond_tokens == 1) c.conditioning = var::MeasurementConditioning::none;
        c.scales.clear();
        for (const auto& s : v.at("scales")) c.scales.emplace_back(s.at(0).get<int64_t>(), s.at(1).get<int64_t>());
        c.lr = v.at("lr");
        c.beta1 = v.at("beta1");
        c.beta2 = v.at("beta2");
        c.weight_decay = v.at("weight_decay");
        c.epochs = v.at("epochs");
        c.batch_size = v.at("batch_size");
        c.seed = seed() + 1;
        c.sampler = var::SamplerConfig::from_json(v.at("sampler"));
        if (c.sampler.seed == 0) c.sampler.seed = seed() + 3;
        return c;
    }

    eval::ClassifierConfig classifier_config() const {
        const auto& d = raw.at("evaluation").at("downstream");
        eval::ClassifierConfig c;
        c.epochs = d.at("epochs");
        c.batch_size = d.at("batch_size");
        c.lr = d.at("lr");
        c.channels = d.at("channels");
        c.balance_target = d.at("balance_target");
        c.seed = seed() + 5;
        return c;
    }

    uint64_t extractor_seed() const { return raw.at("evaluation").at("extractor_seed").get<uint64_t>(); }
    int64_t feature_dim() const { return raw.at("evaluation").at("feature_dim").get<int64_t>(); }
    int is_splits() const { return raw.at("evaluation").at("is_splits").get<int>(); }
    int gen_per_class() const { return raw.at("evaluation").at("gen_per_class").get<int>(); }

    void validate() const {
        if (fm() && am()) throw std::invalid_argument("config: ablation flags FM and AM are mutually exclusive");
        const double tf = raw.at("data").at("train_fraction").get<double>();
        if (!(tf > 0 && tf < 1)) throw std::invalid_argument("config: data.train_fraction must be in (0,1)");
    }
};

inline RunConfig materialize_config(const std::string& config_path, const std::vector<std::string>& set_overrides,
                                    const std::string& out_override, int64_t seed_override /* <0 = unset */) {
    json cfg = default_config();
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw std::invalid_argument("config: cannot open: " + config_path);
        json file_cfg = json::parse(is);
        deep_merge(cfg, file_cfg);
    }
    apply_env_overrides(cfg);
    for (const auto& kv : set_overrides) apply_set_override(cfg, kv);
    if (seed_override >= 0) cfg["seed"] = seed_override;
    if (!out_override.empty()) cfg["out_dir"] = out_override;
    RunConfig rc{std::move(cfg)};
    rc.validate();
    return rc;
}

// Per-invocation record: config hash, input hashes, produced artifacts. Stored
// under runs/<run-id>/manifests/. Timestamps live in a separate key so two runs
// of the same config compare equal elsewhere.
class RunManifest {
public:
    RunManifest(const RunConfig& cfg, const std::string& subcommand) {
        j_["run_id"] = cfg.run_id();
        j_["subcommand"] = subcommand;
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg.raw)));
        j_["config_hash"] = std::string(buf);
        j_["seed"] = cfg.seed();
        j_["config"] = cfg.raw;
        j_["inputs"] = json::object();
        j_["checkpoints"] = json::object();
        j_["artifacts"] = json::array();
    }

    void add_input(const std::string& name, const fs::path& path) {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(io::hash_file(path.string())));
        j_["inputs"][name] = {{"path", path.generic_string()}, {"hash", std::string(buf)}};
    }

    void add_checkpoint(const std::string& name, const fs::path& path) {
        j_["checkpoints"][name] = path.generic_string();
    }

    void add_artifact(const fs::path& path) { j_["artifacts"].push_back(path.generic_string()); }

    void write(const RunConfig& cfg, const std::string& subcommand) const {
        const fs::path dir = cfg.run_dir() / "manifests";
        fs::create_directories(dir);
        json out = j_;
        out["timestamp"] = static_cast<int64_t>(std::time(nullptr));
        std::ofstream os(dir / (subcommand + "_run_manifest.json"));
        if (!os) throw std::runtime_error("run manifest: cannot write");
        os << out.dump(2) << "\n";
    }

    const json& data() const { return j_; }

private:
    json j_;
};

}  // namespace lesyn::cli
