#pragma once

#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "lesyn/cli/config.hpp"
#include "lesyn/eval/metrics.hpp"
#include "lesyn/var/pipeline.hpp"

// Subcommand implementations. Everything runs in-process so tests can drive the
// CLI through run_cli() without spawning binaries. Exit codes: 0 success,
// 1 validation/precondition error, 2 runtime failure.

namespace lesyn::cli {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace cdetail {

inline void ensure_run_dirs(const RunConfig& cfg) {
    for (const char* sub : {"checkpoints", "images", "reports", "manifests"})
        fs::create_directories(cfg.run_dir() / sub);
}

inline data::DatasetManifest require_manifest(const fs::path& path) {
    if (!fs::exists(path))
        throw ValidationError("missing dataset manifest: " + path.string() +
                              " (run make-toy or prepare-data first)");
    return data::load_manifest(path);
}

inline void require_file(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw ValidationError("missing " + what + ": " + path.string());
}

// Paper class order when the names match HAM10000, manifest order otherwise.
inline std::vector<size_t> class_display_order(const std::vector<std::string>& names) {
    static const std::vector<std::string> paper = {"AKIEC", "BCC", "BKL", "DF", "MEL", "NV", "VASC"};
    std::vector<size_t> order(names.size());
    for (size_t i = 0; i < names.size(); ++i) order[i] = i;
    std::set<std::string> have(names.begin(), names.end());
    if (names.size() == paper.size() && std::set<std::string>(paper.begin(), paper.end()) == have) {
        for (size_t i = 0; i < paper.size(); ++i)
            order[i] = static_cast<size_t>(std::find(names.begin(), names.end(), paper[i]) - names.begin());
    }
    return order;
}

inline std::string fmt(double v, int prec = 4) {
    if (!std::isfinite(v)) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    }
    std::string out;
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            out += row[i];
            if (i + 1 < row.size()) out += std::string(widths[i] - row[i].size() + 2, ' ');
        }
        out += "\n";
    }
    return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write: " + path.string());
    os << text;
}

inline uint64_t mix_seed(uint64_t base, const std::string& tag) {
    return base ^ io::hash_bytes(tag);
}

}  // namespace cdetail

// ---- make-toy / prepare-data ----

inline int cmd_make_toy(const RunConfig& cfg) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "make-toy");
    const data::ToyDatasetSpec spec = cfg.toy_spec();
    const fs::path dir = cfg.raw.at("data").at("toy").at("dir").get<std::string>();
    const data::DatasetManifest manifest = data::generate_toy_dataset(spec, dir);
    const auto split = data::split_dataset(manifest, cfg.raw.at("data").at("train_fraction").get<double>(),
                                           cfg.seed());
    data::save_manifest(split.train, dir / "train_manifest.jsonl");
    data::save_manifest(split.test, dir / "test_manifest.jsonl");
    for (const auto& w : split.warnings) std::cout << "warning: " << w << "\n";
    rm.add_input("manifest", dir / "manifest.jsonl");
    rm.add_artifact(dir / "train_manifest.jsonl");
    rm.add_artifact(dir / "test_manifest.jsonl");
    rm.write(cfg, "make-toy");
    std::cout << "toy dataset: " << manifest.entries.size() << " samples, " << manifest.class_names.size()
              << " classes at " << dir.string() << "\n";
    return 0;
}

inline int cmd_prepare_data(const RunConfig& cfg) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "prepare-data");
    const auto& d = cfg.raw.at("data");
    const std::string image_dir = d.at("image_dir"), mask_dir = d.at("mask_dir"), labels = d.at("label_file");
    const std::string out = d.at("dir");
    if (image_dir.empty() || mask_dir.empty() || labels.empty() || out.empty())
        throw ValidationError("prepare-data needs data.image_dir, data.mask_dir, data.label_file and data.dir");
    auto [manifest, report] = data::ingest_dataset(image_dir, mask_dir, labels, cfg.resolution(), out);
    const auto split = data::split_dataset(manifest, d.at("train_fraction").get<double>(), cfg.seed());
    data::save_manifest(split.train, fs::path(out) / "train_manifest.jsonl");
    data::save_manifest(split.test, fs::path(out) / "test_manifest.jsonl");
    for (const auto& w : split.warnings) std::cout << "warning: " << w << "\n";
    std::cout << "ingested " << report.accepted << " samples, skipped " << report.skipped.size() << "\n";
    for (const auto& s : report.skipped) std::cout << "  skipped " << s.sample_id << ": " << s.reason << "\n";
    rm.add_input("manifest", fs::path(out) / "manifest.jsonl");
    rm.add_artifact(fs::path(out) / "train_manifest.jsonl");
    rm.add_artifact(fs::path(out) / "test_manifest.jsonl");
    rm.write(cfg, "prepare-data");
    return 0;
}

// ---- training ----

inline int cmd_train_vqvae(const RunConfig& cfg) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "train-vqvae");
    const fs::path train_path = cfg.manifest_path("train_manifest");
    const data::DatasetManifest manifest = cdetail::require_manifest(train_path);
    rm.add_input("train_manifest", train_path);
    tok::VqVaeConfig tc = cfg.tokenizer_config();
    if (manifest.height != tc.height || manifest.width != tc.width)
        throw ValidationError("manifest resolution " + std::to_string(manifest.height) + "x" +
                              std::to_string(manifest.width) + " does not match config resolution");
    const auto samples = data::load_all_samples(manifest);
    tok::VqVae<float> model(tc);
    const auto report = tok::train_vqvae(model, samples, &std::cout);
    const fs::path ckpt = cfg.tokenizer_checkpoint();
    fs::create_directories(ckpt.parent_path());
    model.save(ckpt, json{{"train_report", report.to_json()}});
    rm.add_checkpoint("vqvae", ckpt);
    rm.write(cfg, "train-vqvae");
    if (report.aborted) {
        std::cout << "train-vqvae aborted: " << report.abort_reason << "\n";
        return 2;
    }
    std::cout << "vqvae checkpoint: " << ckpt.string() << "\n";
    return 0;
}

inline measure::MeasurementNormalizer ensure_normalizer(const RunConfig& cfg,
                                                        const data::DatasetManifest& train_manifest,
                                                        RunManifest& rm) {
    const fs::path path = cfg.normalizer_path();
    if (fs::exists(path)) {
        rm.add_input("normalizer", path);
        return measure::load_normalizer(path);
    }
    auto norm = measure::fit_normalizer(train_manifest);
    fs::create_directories(path.parent_path());
    measure::save_normalizer(norm, path);
    rm.add_checkpoint("normalizer", path);
    return norm;
}

inline int cmd_train_var(const RunConfig& cfg) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "train-var");
    const fs::path tok_ckpt = cfg.tokenizer_checkpoint();
    cdetail::require_file(fs::path(tok_ckpt.string() + ".bin"), "tokenizer checkpoint");
    const auto tokenizer = tok::VqVae<float>::load(tok_ckpt);
    rm.add_input("vqvae_checkpoint", fs::path(tok_ckpt.string() + ".bin"));

    const fs::path train_path = cfg.manifest_path("train_manifest");
    const data::DatasetManifest manifest = cdetail::require_manifest(train_path);
    rm.add_input("train_manifest", train_path);

    var::VarConfig vc = cfg.var_config();
    if (vc.scales.empty()) vc.scales = tokenizer.config().scales;
    if (vc.scales != tokenizer.config().scales) {
        auto render = [](const tok::ScaleList& s) {
            std::string out = "[";
            for (size_t i = 0; i < s.size(); ++i)
                out += (i ? "," : "") + std::to_string(s[i].first) + "x" + std::to_string(s[i].second);
            return out + "]";
        };
        throw ValidationError("var scales " + render(vc.scales) + " do not match tokenizer scales " +
                              render(tokenizer.config().scales));
    }
    vc.vocab = tokenizer.config().vocab;
    vc.code_dim = tokenizer.config().code_dim;
    vc.num_classes = manifest.num_classes();
    vc.validate();

    const auto samples = data::load_all_samples(manifest);
    const auto norm = ensure_normalizer(cfg, manifest, rm);
    auto items = var::prepare_var_items(tokenizer, samples);

    cond::MeasurementCodebook codebook(manifest.class_names);
    cond::MeasurementCodebook* cb = nullptr;
    if (vc.conditioning == var::MeasurementConditioning::codebook) cb = &codebook;

    var::VarModel<float> model(vc, tokenizer.codebook().vectors, manifest.class_names);
    const auto report = var::train_var(model, items, norm, cb, &std::cout);

    const fs::path ckpt = cfg.var_checkpoint();
    fs::create_directories(ckpt.parent_path());
    model.save(ckpt, json{{"train_report", report.to_json()}});
    rm.add_checkpoint("var", ckpt);
    if (cb) {
        const fs::path cb_path = cfg.codebook_path();
        fs::create_directories(cb_path.parent_path());
        codebook.save(cb_path);
        rm.add_checkpoint("measurement_codebook", cb_path);
    }
    rm.write(cfg, "train-var");
    if (report.aborted) {
        std::cout << "train-var aborted: " << report.abort_reason << "\n";
        return 2;
    }
    std::cout << "var checkpoint: " << ckpt.string() << "\n";
    return 0;
}

inline int cmd_build_codebook(const RunConfig& cfg) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "build-codebook");
    const fs::path train_path = cfg.manifest_path("train_manifest");
    const data::DatasetManifest manifest = cdetail::require_manifest(train_path);
    rm.add_input("train_manifest", train_path);
    const auto codebook = cond::build_codebook(manifest);
    const fs::path cb_path = cfg.codebook_path();
    fs::create_directories(cb_path.parent_path());
    codebook.save(cb_path);
    rm.add_checkpoint("measurement_codebook", cb_path);
    // the normalizer is the other measurement statistic over the same manifest
    const fs::path norm_path = cfg.normalizer_path();
    measure::save_normalizer(measure::fit_normalizer(manifest), norm_path);
    rm.add_checkpoint("normalizer", norm_path);

    std::vector<std::pair<std::string, measure::MeasurementVector>> table;
    for (const auto& e : manifest.entries) {
        const auto s = data::load_sample(manifest, e);
        table.emplace_back(e.sample_id, measure::extract_measurements(s.image, s.mask));
    }
    const fs::path meas_path = cfg.run_dir() / "reports" / "measurements.tsv";
    measure::export_measurements(table, meas_path);
    rm.add_artifact(meas_path);
    rm.write(cfg, "build-codebook");
    std::cout << "measurement codebook: " << cb_path.string() << "\n";
    return 0;
}

// ---- generation ----

struct GenerateArgs {
    std::string mode = "intra";    // intra | inter
    int cls = -1;                  // -1 = all classes
    int source_cls = -1;           // inter: codebook source class (-1 = target)
    int count = -1;                // per class; -1 = evaluation.gen_per_class
    bool all_pairs = false;        // inter: full source x target grid
    std::string source_split = "test";  // intra: which manifest provides sources
};

inline int cmd_generate(const RunConfig& cfg, const GenerateArgs& args) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "generate");
    if (args.mode != "intra" && args.mode != "inter")
        throw ValidationError("generate: mode must be intra or inter, got '" + args.mode + "'");

    const fs::path tok_ckpt = cfg.tokenizer_checkpoint();
    const fs::path var_ckpt = cfg.var_checkpoint();
    cdetail::require_file(fs::path(tok_ckpt.string() + ".bin"), "tokenizer checkpoint");
    cdetail::require_file(fs::path(var_ckpt.string() + ".bin"), "var checkpoint");
    const auto tokenizer = tok::VqVae<float>::load(tok_ckpt);
    const auto model = var::VarModel<float>::load(var_ckpt);
    rm.add_input("vqvae_checkpoint", fs::path(tok_ckpt.string() + ".bin"));
    rm.add_input("var_checkpoint", fs::path(var_ckpt.string() + ".bin"));
    if (model.config().scales != tokenizer.config().scales || model.config().vocab != tokenizer.config().vocab ||
        model.config().code_dim != tokenizer.config().code_dim)
        throw ValidationError("generate: var checkpoint is incompatible with the tokenizer checkpoint "
                              "(scales/vocab/code_dim differ)");

    const int num_classes = static_cast<int>(model.class_names().size());
    const int count = args.count > 0 ? args.count : cfg.gen_per_class();
    const var::SamplerConfig sampler = cfg.var_config().sampler;

    const auto mode_cond = model.config().conditioning;
    measure::MeasurementNormalizer norm{};
    if (mode_cond == var::MeasurementConditioning::extracted ||
        mode_cond == var::MeasurementConditioning::codebook) {
        cdetail::require_file(cfg.normalizer_path(), "measurement normalizer");
        norm = measure::load_normalizer(cfg.normalizer_path());
    }
    cond::MeasurementCodebook codebook;
    const bool inter_needs_codebook = args.mode == "inter" &&
                                      (mode_cond == var::MeasurementConditioning::codebook ||
                                       mode_cond == var::MeasurementConditioning::extracted);
    if (inter_needs_codebook) {
        if (!fs::exists(cfg.codebook_path()))
            throw ValidationError("inter-class generation needs the measurement codebook; none at " +
                                  cfg.codebook_path().string() + " (run build-codebook or train-var with AM)");
        codebook = cond::MeasurementCodebook::load(cfg.codebook_path());
    }

    const fs::path out_dir = cfg.run_dir() / "images" / args.mode;
    fs::create_directories(out_dir);
    std::ofstream gm(out_dir / "generation_manifest.jsonl", std::ios::trunc);

    std::vector<int> classes;
    if (args.cls >= 0) {
        if (args.cls >= num_classes) throw ValidationError("generate: class id out of range");
        classes.push_back(args.cls);
    } else {
        for (int c = 0; c < num_classes; ++c) classes.push_back(c);
    }

    int emitted = 0;
    auto emit = [&](const Tensor<float>& img, int cls, int src, uint64_t seed, const std::string& source_id) {
        char name[128];
        std::snprintf(name, sizeof(name), "%s_c%d_s%d_%04d.ppm", args.mode.c_str(), cls, src, emitted);
        data::write_pnm((out_dir / name).string(), img);
        gm << json{{"file", name},           {"mode", args.mode},          {"class", cls},
                   {"source_class", src},    {"seed", seed},               {"source_sample_id", source_id}}
                  .dump()
           << "\n";
        ++emitted;
    };

    if (args.mode == "intra") {
        const fs::path src_path = cfg.manifest_path(args.source_split == "train" ? "train_manifest"
                                                                                 : "test_manifest");
        const auto manifest = cdetail::require_manifest(src_path);
        rm.add_input("source_manifest", src_path);
        std::vector<int> used(static_cast<size_t>(num_classes), 0);
        for (const auto& e : manifest.entries) {
            if (args.cls >= 0 && e.label != args.cls) continue;
            if (used[static_cast<size_t>(e.label)] >= count) continue;
            const auto s = data::load_sample(manifest, e);
            var::SamplerConfig sc = sampler;
            sc.seed = cdetail::mix_seed(sampler.seed, "intra/" + e.sample_id);
            const auto img = var::synthesize_intra(tokenizer, model, norm, s.image, s.mask, e.label, sc);
            emit(img, e.label, e.label, sc.seed, e.sample_id);
            ++used[static_cast<size_t>(e.label)];
        }
    } else {
        for (int tgt : classes) {
            std::vector<int> sources;
            if (args.all_pairs) {
                for (int s = 0; s < num_classes; ++s) sources.push_back(s);
            } else {
                sources.push_back(args.source_cls >= 0 ? args.source_cls : tgt);
            }
            for (int src : sources) {
                if (src >= num_classes) throw ValidationError("generate: source class id out of range");
                for (int i = 0; i < count; ++i) {
                    var::SamplerConfig sc = sampler;
                    sc.seed = cdetail::mix_seed(sampler.seed, "inter/" + std::to_string(src) + "/" +
                                                                  std::to_string(tgt) + "/" + std::to_string(i));
                    const auto img = var::synthesize_inter(tokenizer, model, norm, codebook, tgt, src, sc);
                    emit(img, tgt, src, sc.seed, "");
                }
            }
        }
    }
    gm.close();
    rm.add_artifact(out_dir / "generation_manifest.jsonl");
    rm.write(cfg, "generate");
    std::cout << "generated " << emitted << " images under " << out_dir.string() << "\n";
    return 0;
}

// ---- evaluation ----

struct EvaluateArgs {
    std::string generated_dir;  // default: <run>/images/intra or /inter (whichever exists)
    bool downstream = false;
};

struct GeneratedSet {
    std::vector<Tensor<float>> images;
    std::vector<int> labels;         // target class
    std::vector<int> source_labels;  // source class (inter) or label (intra)
    std::vector<std::string> ids;
};

inline GeneratedSet load_generated(const fs::path& dir) {
    const fs::path gm = dir / "generation_manifest.jsonl";
    cdetail::require_file(gm, "generation manifest");
    GeneratedSet out;
    std::ifstream is(gm);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        out.images.push_back(data::read_pnm((dir / rec.at("file").get<std::string>()).string()));
        out.labels.push_back(rec.at("class"));
        out.source_labels.push_back(rec.value("source_class", rec.at("class").get<int>()));
        out.ids.push_back(rec.at("file"));
    }
    if (out.images.empty()) throw ValidationError("no generated images listed in " + gm.string());
    return out;
}

struct ClassEvalRow {
    std::optional<double> fid;
    std::optional<eval::InceptionScore> is;
    int64_t generated = 0;
};

struct EvaluationReport {
    std::vector<ClassEvalRow> per_class;
    double avg_fid = std::numeric_limits<double>::quiet_NaN();
    double avg_is = std::numeric_limits<double>::quiet_NaN();
    std::string extractor_id;
    std::optional<eval::FidMatrix> inter_matrix;
    std::optional<eval::RecallReport> downstream;
};

// Core evaluation shared by `evaluate` and the ablation runner.
inline EvaluationReport evaluate_generated(const RunConfig& cfg, const data::DatasetManifest& test_manifest, const GeneratedSet& gen,
                                           const eval::SmallClassifier<>& is_classifier) {
    const eval::FrozenConvExtractor extractor(cfg.extractor_seed(), cfg.feature_dim());
    const int num_classes = static_cast<int>(test_manifest.class_names.size());

    const auto test_samples = data::load_all_samples(test_manifest);
    std::vector<std::vector<Tensor<float>>> real_by_class(static_cast<size_t>(num_classes));
    for (const auto& s : test_samples) real_by_class[static_cast<size_t>(s.label)].push_back(s.image);
    std::vector<eval::FeatureSet> real_feats;
    for (const auto& imgs : real_by_class) real_feats.push_back(eval::extract_features(extractor, imgs));

    std::vector<std::vector<Tensor<float>>> gen_by_class(static_cast<size_t>(num_classes));
    std::map<std::pair<int, int>, std::vector<Tensor<float>>> gen_by_pair;
    bool has_offdiag = false;
    for (size_t i = 0; i < gen.images.size(); ++i) {
        gen_by_class[static_cast<size_t>(gen.labels[i])].push_back(gen.images[i]);
        gen_by_pair[{gen.source_labels[i], gen.labels[i]}].push_back(gen.images[i]);
        if (gen.source_labels[i] != gen.labels[i]) has_offdiag = true;
    }

    EvaluationReport report;
    report.extractor_id = extractor.id();
    report.per_class.resize(static_cast<size_t>(num_classes));
    double fid_sum = 0, is_sum = 0;
    int fid_n = 0, is_n = 0;
    for (int c = 0; c < num_classes; ++c) {
        auto& row = report.per_class[static_cast<size_t>(c)];
        const auto& gimgs = gen_by_class[static_cast<size_t>(c)];
        row.generated = static_cast<int64_t>(gimgs.size());
        if (gimgs.size() >= 2 && real_by_class[static_cast<size_t>(c)].size() >= 2) {
            const auto gf = eval::extract_features(extractor, gimgs);
            row.fid = eval::compute_fid(real_feats[static_cast<size_t>(c)], gf);
            fid_sum += *row.fid;
            ++fid_n;
        }
        if (!gimgs.empty()) {
            std::vector<std::vector<double>> probs;
            probs.reserve(gimgs.size());
            for (const auto& img : gimgs) probs.push_back(is_classifier.probabilities(img));
            row.is = eval::compute_is(probs, cfg.is_splits());
            is_sum += row.is->mean;
            ++is_n;
        }
    }
    if (fid_n) report.avg_fid = fid_sum / fid_n;
    if (is_n) report.avg_is = is_sum / is_n;

    if (has_offdiag) {
        std::map<std::pair<int, int>, eval::FeatureSet> pair_feats;
        for (const auto& [key, imgs] : gen_by_pair)
            if (imgs.size() >= 2) pair_feats.emplace(key, eval::extract_features(extractor, imgs));
        report.inter_matrix = eval::fid_confusion_matrix(pair_feats, real_feats);
    }
    return report;
}

inline json evaluation_to_json(const EvaluationReport& r, const std::vector<std::string>& class_names) {
    json per = json::object();
    for (size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& row = r.per_class[c];
        json rec = {{"generated", row.generated}};
        if (row.fid) rec["fid"] = *row.fid;
        if (row.is) {
            rec["is_mean"] = row.is->mean;
            rec["is_std"] = row.is->stddev;
        }
        per[class_names[c]] = rec;
    }
    json out = {{"per_class", per}, {"extractor_id", r.extractor_id}};
    if (std::isfinite(r.avg_fid)) out["avg_fid"] = r.avg_fid;
    if (std::isfinite(r.avg_is)) out["avg_is"] = r.avg_is;
    return out;
}

inline std::string evaluation_to_text(const EvaluationReport& r, const std::vector<std::string>& class_names) {
    const auto order = cdetail::class_display_order(class_names);
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"metric"};
    for (size_t i : order) header.push_back(class_names[i]);
    header.push_back("average");
    rows.push_back(header);
    std::vector<std::string> is_row = {"IS"};
    std::vector<std::string> fid_row = {"FID"};
    for (size_t i : order) {
        const auto& row = r.per_class[i];
        is_row.push_back(row.is ? cdetail::fmt(row.is->mean, 3) + " ± " + cdetail::fmt(row.is->stddev, 3) : "-");
        fid_row.push_back(row.fid ? cdetail::fmt(*row.fid, 4) : "-");
    }
    is_row.push_back(cdetail::fmt(r.avg_is, 3));
    fid_row.push_back(cdetail::fmt(r.avg_fid, 4));
    rows.push_back(is_row);
    rows.push_back(fid_row);
    return cdetail::render_table(rows) + "extractor: " + r.extractor_id + "\n";
}

inline int cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args) {
    cdetail::ensure_run_dirs(cfg);
    RunManifest rm(cfg, "evaluate");
    const fs::path train_path = cfg.manifest_path("train_manifest");
    const fs::path test_path = cfg.manifest_path("test_manifest");
    const auto train_manifest = cdetail::require_manifest(train_path);
    const auto test_manifest = cdetail::require_manifest(test_path);
    rm.add_input("train_manifest", train_path);
    rm.add_input("test_manifest", test_path);

    fs::path gen_dir = args.generated_dir;
    if (gen_dir.empty()) {
        for (const char* mode : {"intra", "inter"}) {
            if (fs::exists(cfg.run_dir() / "images" / mode / "generation_manifest.jsonl")) {
                gen_dir = cfg.run_dir() / "images" / mode;
                break;
            }
        }
        if (gen_dir.empty()) throw ValidationError("no generated images found under " +
                                                   (cfg.run_dir() / "images").string() + "; run generate first");
    }
    const GeneratedSet gen = load_generated(gen_dir);
    rm.add_input("generation_manifest", gen_dir / "generation_manifest.jsonl");

    const auto train_samples = data::load_all_samples(train_manifest);
    eval::SmallClassifier<> classifier(train_manifest.num_classes(), train_manifest.height, train_manifest.width,
                                       cfg.classifier_config());
    {
        Rng rng(cfg.seed() ^ 0x15c1);
        classifier.train(train_samples, [&] { return static_cast<size_t>(rng.uniform_int(train_samples.size())); },
                         static_cast<int64_t>(train_samples.size()));
    }
    EvaluationReport report = evaluate_generated(cfg, test_manifest, gen, classifier);

    if (args.downstream) {
        std::vector<data::ImageSample> synth;
        for (size_t i = 0; i < gen.images.size(); ++i) {
            data::ImageSample s;
            s.image = gen.images[i];
            s.mask = Tensor<uint8_t>({gen.images[i].dim(1), gen.images[i].dim(2)});
            s.label = gen.labels[i];
            s.sample_id = gen.ids[i];
            synth.push_back(std::move(s));
        }
        const auto test_samples = data::load_all_samples(test_manifest);
        report.downstream =
            eval::downstream_augment_eval(train_samples, synth, test_samples, train_manifest.num_classes(),
                                          train_manifest.height, train_manifest.width, cfg.classifier_config());
    }

    const fs::path reports = cfg.run_dir() / "reports";
    cdetail::write_text(reports / "evaluation.txt", evaluation_to_text(report, test_manifest.class_names));
    cdetail::write_text(reports / "evaluation.json",
                        evaluation_to_json(report, test_manifest.class_names).dump(2) + "\n");
    {
        std::ostringstream csv;
        csv.precision(10);
        csv << "class,fid,is_mean,is_std,generated\n";
        for (size_t c = 0; c < report.per_class.size(); ++c) {
            const auto& row = report.per_class[c];
            csv << test_manifest.class_names[c] << "," << (row.fid ? std::to_string(*row.fid) : "") << ","
                << (row.is ? std::to_string(row.is->mean) : "") << ","
                << (row.is ? std::to_string(row.is->stddev) : "") << "," << row.generated << "\n";
        }
        cdetail::write_text(reports / "evaluation.csv", csv.str());
    }
    if (report.inter_matrix) {
        cdetail::write_text(reports / "fid_matrix.csv",
                            eval::fid_matrix_to_csv(*report.inter_matrix, test_manifest.class_names));
        rm.add_artifact(reports / "fid_matrix.csv");
    }
    if (report.downstream) {
        cdetail::write_text(reports / "downstream.json",
                            report.downstream->to_json(test_manifest.class_names).dump(2) + "\n");
        rm.add_artifact(reports / "downstream.json");
    }

    // feature export for external projection tools
    {
        const eval::FrozenConvExtractor extractor(cfg.extractor_seed(), cfg.feature_dim());
        const auto test_samples = data::load_all_samples(test_manifest);
        std::vector<Tensor<float>> imgs;
        std::vector<std::string> ids;
        std::vector<int> labels;
        for (const auto& s : test_samples) {
            imgs.push_back(s.image);
            ids.push_back(s.sample_id);
            labels.push_back(s.label);
        }
        eval::write_feature_table(ids, labels, eval::extract_features(extractor, imgs),
                                  reports / "features_real.tsv");
        eval::write_feature_table(gen.ids, gen.labels, eval::extract_features(extractor, gen.images),
                                  reports / "features_generated.tsv");
        rm.add_artifact(reports / "features_real.tsv");
        rm.add_artifact(reports / "features_generated.tsv");
    }
    rm.add_artifact(reports / "evaluation.txt");
    rm.add_artifact(reports / "evaluation.csv");
    rm.add_artifact(reports / "evaluation.json");
    rm.write(cfg, "evaluate");
    std::cout << evaluation_to_text(report, test_manifest.class_names);
    return 0;
}

}  // namespace lesyn::cli
