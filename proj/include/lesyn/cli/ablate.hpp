#pragma once

#include "lesyn/cli/commands.hpp"

// Ablation runner: Baseline, Baseline+LF, Baseline+LF+FM, Baseline+LF+AM with a
// shared seed, each setting isolated in its own directory, emitting an
// IS/FID-per-class report (settings x {IS, FID} rows, classes + average columns).
// A failing setting is marked failed; the others still run.

namespace lesyn::cli {

struct AblationSetting {
    std::string name;
    bool lf = true;
    var::MeasurementConditioning conditioning = var::MeasurementConditioning::none;
    int cond_tokens = 1;
};

inline std::vector<AblationSetting> ablation_settings() {
    return {
        {"Baseline", false, var::MeasurementConditioning::none, 1},
        {"Baseline+LF", true, var::MeasurementConditioning::none, 1},
        {"Baseline+LF+FM", true, var::MeasurementConditioning::fixed, 2},
        {"Baseline+LF+AM", true, var::MeasurementConditioning::codebook, 2},
    };
}

struct AblationSettingResult {
    std::string name;
    bool failed = false;
    std::string error;
    EvaluationReport eval;
    json var_config;  // records the flag wiring of the setting
};

struct AblationReport {
    std::vector<std::string> class_names;
    std::vector<AblationSettingResult> settings;
};

inline std::string ablation_to_text(const AblationReport& r) {
    const auto order = cdetail::class_display_order(r.class_names);
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"setting", "metric"};
    for (size_t i : order) header.push_back(r.class_names[i]);
    header.push_back("average");
    rows.push_back(header);
    for (const auto& s : r.settings) {
        if (s.failed) {
            rows.push_back({s.name, "FAILED", s.error});
            continue;
        }
        std::vector<std::string> is_row = {s.name, "IS"};
        std::vector<std::string> fid_row = {"", "FID"};
        for (size_t i : order) {
            const auto& row = s.eval.per_class[i];
            is_row.push_back(row.is ? cdetail::fmt(row.is->mean, 3) + " ± " + cdetail::fmt(row.is->stddev, 3)
                                    : "-");
            fid_row.push_back(row.fid ? cdetail::fmt(*row.fid, 4) : "-");
        }
        is_row.push_back(cdetail::fmt(s.eval.avg_is, 3));
        fid_row.push_back(cdetail::fmt(s.eval.avg_fid, 4));
        rows.push_back(is_row);
        rows.push_back(fid_row);
    }
    return cdetail::render_table(rows);
}

inline json ablation_to_json(const AblationReport& r) {
    json out = {{"class_names", r.class_names}, {"settings", json::array()}};
    for (const auto& s : r.settings) {
        json rec = {{"name", s.name}, {"failed", s.failed}};
        if (s.failed) {
            rec["error"] = s.error;
        } else {
            rec["report"] = evaluation_to_json(s.eval, r.class_names);
        }
        rec["var_config"] = s.var_config;
        out["settings"].push_back(rec);
    }
    return out;
}

inline std::string ablation_to_csv(const AblationReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "setting,metric";
    for (const auto& n : r.class_names) os << "," << n;
    os << ",average\n";
    for (const auto& s : r.settings) {
        if (s.failed) {
            os << s.name << ",FAILED," << s.error << "\n";
            continue;
        }
        os << s.name << ",is_mean";
        for (size_t c = 0; c < r.class_names.size(); ++c)
            os << "," << (s.eval.per_class[c].is ? std::to_string(s.eval.per_class[c].is->mean) : "");
        os << "," << s.eval.avg_is << "\n";
        os << s.name << ",is_std";
        for (size_t c = 0; c < r.class_names.size(); ++c)
            os << "," << (s.eval.per_class[c].is ? std::to_string(s.eval.per_class[c].is->stddev) : "");
        os << ",\n";
        os << s.name << ",fid";
        for (size_t c = 0; c < r.class_names.size(); ++c)
            os << "," << (s.eval.per_class[c].fid ? std::to_string(*s.eval.per_class[c].fid) : "");
        os << "," << s.eval.avg_fid << "\n";
    }
    return os.str();
}

inline AblationReport run_ablation(const RunConfig& cfg, std::ostream* log = nullptr) {
    const auto train_manifest = cdetail::require_manifest(cfg.manifest_path("train_manifest"));
    const auto test_manifest = cdetail::require_manifest(cfg.manifest_path("test_manifest"));
    const auto train_samples = data::load_all_samples(train_manifest);

    AblationReport report;
    report.class_names = train_manifest.class_names;

    const fs::path abl_dir = cfg.run_dir() / "ablation";
    fs::create_directories(abl_dir);

    // shared across settings: normalizer, IS classifier, per-tokenizer caches
    const auto norm = measure::fit_normalizer(train_manifest);
    measure::save_normalizer(norm, abl_dir / "normalizer.txt");

    eval::SmallClassifier<> is_classifier(train_manifest.num_classes(), train_manifest.height,
                                          train_manifest.width, cfg.classifier_config());
    {
        Rng rng(cfg.seed() ^ 0x15c1);
        is_classifier.train(train_samples,
                            [&] { return static_cast<size_t>(rng.uniform_int(train_samples.size())); },
                            static_cast<int64_t>(train_samples.size()));
    }

    std::map<bool, std::shared_ptr<tok::VqVae<float>>> tokenizers;
    std::map<bool, std::shared_ptr<std::vector<var::VarTrainItem<float>>>> items_cache;
    auto tokenizer_for = [&](bool lf) {
        auto it = tokenizers.find(lf);
        if (it != tokenizers.end()) return it->second;
        tok::VqVaeConfig tc = cfg.tokenizer_config();
        tc.lesion_focus = lf;
        auto model = std::make_shared<tok::VqVae<float>>(tc);
        if (log) (*log) << "[ablate] training tokenizer (lesion_focus=" << (lf ? "on" : "off") << ")\n";
        const auto rep = tok::train_vqvae(*model, train_samples, log);
        if (rep.aborted) throw std::runtime_error("tokenizer training aborted: " + rep.abort_reason);
        model->save(abl_dir / (lf ? "vqvae_lf_on" : "vqvae_lf_off"), json{{"train_report", rep.to_json()}});
        tokenizers[lf] = model;
        items_cache[lf] =
            std::make_shared<std::vector<var::VarTrainItem<float>>>(var::prepare_var_items(*model, train_samples));
        return model;
    };

    for (const auto& setting : ablation_settings()) {
        AblationSettingResult result;
        result.name = setting.name;
        try {
            const fs::path sdir = abl_dir / setting.name;
            fs::create_directories(sdir);
            auto tokenizer = tokenizer_for(setting.lf);
            const auto& items = *items_cache.at(setting.lf);

            var::VarConfig vc = cfg.var_config();
            vc.conditioning = setting.conditioning;
            vc.cond_tokens = setting.cond_tokens;
            vc.scales = tokenizer->config().scales;
            vc.vocab = tokenizer->config().vocab;
            vc.code_dim = tokenizer->config().code_dim;
            vc.num_classes = train_manifest.num_classes();
            vc.validate();
            result.var_config = vc.to_json();

            cond::MeasurementCodebook codebook(train_manifest.class_names);
            cond::MeasurementCodebook* cb =
                setting.conditioning == var::MeasurementConditioning::codebook ? &codebook : nullptr;

            if (log) (*log) << "[ablate] training VAR for " << setting.name << "\n";
            var::VarModel<float> model(vc, tokenizer->codebook().vectors, train_manifest.class_names);
            const auto rep = var::train_var(model, items, norm, cb, log);
            if (rep.aborted) throw std::runtime_error("var training aborted: " + rep.abort_reason);
            model.save(sdir / "var", json{{"train_report", rep.to_json()}});
            if (cb) codebook.save(sdir / "measurement_codebook.txt");

            // class-conditional generation in the setting's native mode
            GeneratedSet gen;
            const int per_class = cfg.gen_per_class();
            for (int c = 0; c < train_manifest.num_classes(); ++c) {
                for (int i = 0; i < per_class; ++i) {
                    var::SamplerConfig sc = vc.sampler;
                    sc.seed = cdetail::mix_seed(vc.sampler.seed,
                                                setting.name + "/" + std::to_string(c) + "/" + std::to_string(i));
                    Tensor<float> img;
                    if (cb) {
                        img = var::synthesize_inter(*tokenizer, model, norm, codebook, c, c, sc);
                    } else {
                        std::optional<measure::MeasurementVector> v;
                        if (setting.conditioning == var::MeasurementConditioning::fixed)
                            v = var::fixed_measurement_vector();
                        const auto cond = var::condition_values(model, c, v ? &*v : nullptr);
                        img = var::synthesize_from_condition(*tokenizer, model, cond, sc);
                    }
                    char name[96];
                    std::snprintf(name, sizeof(name), "c%d_%04d.ppm", c, i);
                    data::write_pnm((sdir / name).string(), img);
                    gen.images.push_back(std::move(img));
                    gen.labels.push_back(c);
                    gen.source_labels.push_back(c);
                    gen.ids.push_back(name);
                }
            }
            result.eval = evaluate_generated(cfg, test_manifest, gen, is_classifier);
        } catch (const std::exception& e) {
            result.failed = true;
            result.error = e.what();
            if (log) (*log) << "[ablate] setting " << setting.name << " failed: " << e.what() << "\n";
        }
        report.settings.push_back(std::move(result));
    }
    return report;
}

inline int cmd_ablate(const RunConfig& cfg) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "ablate");
    rm.add_input("train_manifest", cfg.manifest_path("train_manifest"));
    rm.add_input("test_manifest", cfg.manifest_path("test_manifest"));
    const AblationReport report = run_ablation(cfg, &std::cout);
    const fs::path reports = cfg.run_dir() / "reports";
    cdetail::write_text(reports / "ablation.txt", ablation_to_text(report));
    cdetail::write_text(reports / "ablation.csv", ablation_to_csv(report));
    cdetail::write_text(reports / "ablation.json", ablation_to_json(report).dump(2) + "\n");
    rm.add_artifact(reports / "ablation.txt");
    rm.add_artifact(reports / "ablation.csv");
    rm.add_artifact(reports / "ablation.json");
    rm.write(cfg, "ablate");
    std::cout << ablation_to_text(report);
    bool any_failed = false;
    for (const auto& s : report.settings) any_failed |= s.failed;
    return any_failed ? 2 : 0;
}

}  // namespace lesyn::cli
