#include <gtest/gtest.h>

#include <fstream>
#include <queue>
#include <set>

#include "lesyn/core/serialize.hpp"
#include "lesyn/data/toy.hpp"
#include "test_util.hpp"

using namespace lesyn;
using lesyn::test::TempDir;

namespace {

// flood fill: number of 4-connected components of the mask
int count_components(const Tensor<uint8_t>& mask) {
    const int64_t h = mask.dim(0), w = mask.dim(1);
    std::vector<uint8_t> seen(static_cast<size_t>(h * w), 0);
    int components = 0;
    for (int64_t start = 0; start < h * w; ++start) {
        if (!mask[start] || seen[static_cast<size_t>(start)]) continue;
        ++components;
        std::queue<int64_t> q;
        q.push(start);
        seen[static_cast<size_t>(start)] = 1;
        while (!q.empty()) {
            const int64_t p = q.front();
            q.pop();
            const int64_t y = p / w, x = p % w;
            for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                const int64_t ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const int64_t np = ny * w + nx;
                if (mask[np] && !seen[static_cast<size_t>(np)]) {
                    seen[static_cast<size_t>(np)] = 1;
                    q.push(np);
                }
            }
        }
    }
    return components;
}

data::DatasetManifest write_user_dataset(const std::filesystem::path& dir, int n_images, int n_masks, int n_labels) {
    std::filesystem::create_directories(dir / "raw_images");
    std::filesystem::create_directories(dir / "raw_masks");
    Rng rng(99);
    std::ofstream labels(dir / "labels.csv");
    for (int i = 0; i < n_images; ++i) {
        const std::string id = "img" + std::to_string(i);
        Tensor<float> img({3, 20, 24});
        for (auto& v : img.vec()) v = static_cast<float>(rng.uniform());
        data::write_pnm((dir / "raw_images" / (id + ".ppm")).string(), img);
        if (i < n_masks) {
            Tensor<uint8_t> mask({20, 24});
            for (int64_t y = 8; y < 14; ++y)
                for (int64_t x = 9; x < 16; ++x) mask.at2(y, x) = 1;
            data::write_mask((dir / "raw_masks" / (id + ".pgm")).string(), mask);
        }
        if (i < n_labels) labels << id << "," << (i % 2) << "\n";
    }
    labels.close();
    data::DatasetManifest dummy;
    return dummy;
}

}  // namespace

TEST(ImageIo, PnmRoundTrip) {
    TempDir td("pnm");
    Rng rng(1);
    Tensor<float> img({3, 7, 9});
    for (auto& v : img.vec()) v = static_cast<float>(rng.uniform());
    const std::string path = (td.path() / "a.ppm").string();
    data::write_pnm(path, img);
    Tensor<float> back = data::read_pnm(path);
    ASSERT_EQ(back.shape(), img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-6);

    Tensor<uint8_t> mask({5, 5});
    mask.at2(2, 3) = 1;
    mask.at2(0, 0) = 1;
    data::write_mask((td.path() / "m.pgm").string(), mask);
    Tensor<uint8_t> mback = data::read_mask((td.path() / "m.pgm").string());
    for (int64_t i = 0; i < mask.numel(); ++i) EXPECT_EQ(mback[i], mask[i]);
}

TEST(ImageIo, NearestResampleKeepsMasksBinary) {
    Rng rng(2);
    Tensor<uint8_t> mask({37, 53});
    for (auto& v : mask.vec()) v = rng.uniform() < 0.3 ? 1 : 0;
    const auto out = data::resample_nearest(mask, 64, 64);
    EXPECT_EQ(out.dim(0), 64);
    EXPECT_EQ(out.dim(1), 64);
    for (int64_t i = 0; i < out.numel(); ++i) EXPECT_LE(out[i], 1);
}

TEST(Toy, CountsAndDeterminism) {
    TempDir td("toy");
    data::ToyDatasetSpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 10;
    spec.height = spec.width = 64;
    spec.seed = 7;
    const auto m1 = data::generate_toy_dataset(spec, td.path() / "a");
    EXPECT_EQ(m1.entries.size(), 30u);
    std::vector<int> per_class(3, 0);
    for (const auto& e : m1.entries) ++per_class[static_cast<size_t>(e.label)];
    for (int c = 0; c < 3; ++c) EXPECT_EQ(per_class[static_cast<size_t>(c)], 10);

    const auto m2 = data::generate_toy_dataset(spec, td.path() / "b");
    for (size_t i = 0; i < m1.entries.size(); ++i) {
        EXPECT_EQ(io::hash_file((m1.base_dir / m1.entries[i].image).string()),
                  io::hash_file((m2.base_dir / m2.entries[i].image).string()));
        EXPECT_EQ(io::hash_file((m1.base_dir / m1.entries[i].mask).string()),
                  io::hash_file((m2.base_dir / m2.entries[i].mask).string()));
    }
}

TEST(Toy, MaskAreaWithinClassRangeAndConnected) {
    TempDir td("toy_area");
    data::ToyDatasetSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 8;
    spec.height = spec.width = 64;
    spec.seed = 21;
    const auto m = data::generate_toy_dataset(spec, td.path());
    for (const auto& e : m.entries) {
        const auto s = data::load_sample(m, e);
        double area = 0;
        for (int64_t i = 0; i < s.mask.numel(); ++i) area += s.mask[i];
        const double frac = area / static_cast<double>(s.mask.numel());
        const auto [lo, hi] = data::toy_area_fraction_range(spec, e.label);
        EXPECT_GE(frac, lo) << e.sample_id;
        EXPECT_LE(frac, hi) << e.sample_id;
        EXPECT_EQ(count_components(s.mask), 1) << e.sample_id;
        EXPECT_GE(s.lesion_pixels(), 1);
    }
}

TEST(Toy, UnwritableOutputDirectoryIsHardError) {
    TempDir td("toy_bad");
    std::ofstream blocker(td.path() / "blocked");
    blocker << "x";
    blocker.close();
    data::ToyDatasetSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 1;
    spec.height = spec.width = 16;
    EXPECT_THROW(data::generate_toy_dataset(spec, td.path() / "blocked"), std::runtime_error);
    data::ToyDatasetSpec bad = spec;
    bad.num_classes = 1;
    EXPECT_THROW(data::generate_toy_dataset(bad, td.path() / "ok"), std::invalid_argument);
    bad = spec;
    bad.samples_per_class = 0;
    EXPECT_THROW(data::generate_toy_dataset(bad, td.path() / "ok2"), std::invalid_argument);
}

TEST(Manifest, SaveLoadValidate) {
    TempDir td("manifest");
    data::ToyDatasetSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 3;
    spec.height = spec.width = 32;
    const auto m = data::generate_toy_dataset(spec, td.path());
    const auto loaded = data::load_manifest(td.path() / "manifest.jsonl");
    EXPECT_EQ(loaded.entries.size(), m.entries.size());
    EXPECT_EQ(loaded.class_names, m.class_names);
    EXPECT_EQ(loaded.height, 32);

    // duplicate ids rejected
    data::DatasetManifest bad = loaded;
    bad.entries.push_back(bad.entries[0]);
    EXPECT_THROW(data::validate_manifest(bad, false), std::runtime_error);
    // label out of range rejected
    data::DatasetManifest bad2 = loaded;
    bad2.entries[0].label = 9;
    EXPECT_THROW(data::validate_manifest(bad2, false), std::runtime_error);
    // missing file rejected on load
    data::DatasetManifest bad3 = loaded;
    bad3.entries[0].image = "nope.ppm";
    data::save_manifest(bad3, td.path() / "bad.jsonl");
    EXPECT_THROW(data::load_manifest(td.path() / "bad.jsonl"), std::runtime_error);
}

TEST(Ingest, CompletePairingAndSkips) {
    TempDir td("ingest");
    write_user_dataset(td.path(), 10, 10, 10);
    auto [m, report] = data::ingest_dataset(td.path() / "raw_images", td.path() / "raw_masks",
                                            td.path() / "labels.csv", {16, 16}, td.path() / "out");
    EXPECT_EQ(m.entries.size(), 10u);
    EXPECT_EQ(report.skipped.size(), 0u);
    // masks stayed binary after resampling
    for (const auto& e : m.entries) {
        const auto s = data::load_sample(m, e);
        for (int64_t i = 0; i < s.mask.numel(); ++i) ASSERT_LE(s.mask[i], 1);
        EXPECT_EQ(s.image.dim(1), 16);
    }

    TempDir td2("ingest2");
    write_user_dataset(td2.path(), 10, 9, 10);
    auto [m2, report2] = data::ingest_dataset(td2.path() / "raw_images", td2.path() / "raw_masks",
                                              td2.path() / "labels.csv", {16, 16}, td2.path() / "out");
    EXPECT_EQ(m2.entries.size(), 9u);
    ASSERT_EQ(report2.skipped.size(), 1u);
    EXPECT_EQ(report2.skipped[0].reason, "missing mask");

    TempDir td3("ingest3");
    write_user_dataset(td3.path(), 3, 0, 3);
    EXPECT_THROW(data::ingest_dataset(td3.path() / "raw_images", td3.path() / "raw_masks",
                                      td3.path() / "labels.csv", {16, 16}, td3.path() / "out"),
                 std::runtime_error);
}

TEST(Ingest, Idempotent) {
    TempDir td("ingest_idem");
    write_user_dataset(td.path(), 6, 6, 6);
    data::ingest_dataset(td.path() / "raw_images", td.path() / "raw_masks", td.path() / "labels.csv", {16, 16},
                         td.path() / "out1");
    data::ingest_dataset(td.path() / "raw_images", td.path() / "raw_masks", td.path() / "labels.csv", {16, 16},
                         td.path() / "out2");
    EXPECT_EQ(io::hash_file((td.path() / "out1" / "manifest.jsonl").string()),
              io::hash_file((td.path() / "out2" / "manifest.jsonl").string()));
}

TEST(Split, PaperRatioAndFloorArithmetic) {
    TempDir td("split");
    data::DatasetManifest m;
    m.class_names = {"a", "b"};
    m.height = m.width = 8;
    m.base_dir = td.path();
    for (int i = 0; i < 100; ++i)
        m.entries.push_back({"a" + std::to_string(1000 + i), "x.ppm", "x.pgm", 0});
    auto r = data::split_dataset(m, 0.8, 3);
    EXPECT_EQ(r.train.entries.size(), 80u);  // 4:1 ratio
    EXPECT_EQ(r.test.entries.size(), 20u);

    data::DatasetManifest m2;
    m2.class_names = {"a", "b"};
    m2.height = m2.width = 8;
    for (int i = 0; i < 50; ++i) m2.entries.push_back({"a" + std::to_string(100 + i), "x", "y", 0});
    for (int i = 0; i < 10; ++i) m2.entries.push_back({"b" + std::to_string(100 + i), "x", "y", 1});
    auto r2 = data::split_dataset(m2, 0.8, 5);
    std::vector<int> train_per(2, 0), test_per(2, 0);
    for (const auto& e : r2.train.entries) ++train_per[static_cast<size_t>(e.label)];
    for (const auto& e : r2.test.entries) ++test_per[static_cast<size_t>(e.label)];
    EXPECT_EQ(train_per[0], 40);
    EXPECT_EQ(train_per[1], 8);
    EXPECT_EQ(test_per[0], 10);
    EXPECT_EQ(test_per[1], 2);
}

TEST(Split, DeterministicAndPartitionProperty) {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        data::DatasetManifest m;
        const int classes = 2 + static_cast<int>(rng.uniform_int(3));
        for (int c = 0; c < classes; ++c) m.class_names.push_back("c" + std::to_string(c));
        m.height = m.width = 8;
        const int n = 2 + static_cast<int>(rng.uniform_int(60));
        for (int i = 0; i < n; ++i)
            m.entries.push_back({"s" + std::to_string(1000 + i), "x", "y",
                                 static_cast<int>(rng.uniform_int(static_cast<uint64_t>(classes)))});
        const double frac = 0.1 + 0.8 * rng.uniform();
        const uint64_t seed = rng.next_u64();
        auto r1 = data::split_dataset(m, frac, seed);
        auto r2 = data::split_dataset(m, frac, seed);
        // determinism
        ASSERT_EQ(r1.train.entries.size(), r2.train.entries.size());
        for (size_t i = 0; i < r1.train.entries.size(); ++i)
            ASSERT_EQ(r1.train.entries[i].sample_id, r2.train.entries[i].sample_id);
        // partition: disjoint, union = input
        std::set<std::string> train_ids, test_ids, all_ids;
        for (const auto& e : r1.train.entries) train_ids.insert(e.sample_id);
        for (const auto& e : r1.test.entries) test_ids.insert(e.sample_id);
        for (const auto& e : m.entries) all_ids.insert(e.sample_id);
        EXPECT_EQ(train_ids.size() + test_ids.size(), all_ids.size());
        for (const auto& id : test_ids) EXPECT_FALSE(train_ids.count(id));
    }
}

TEST(Split, SingleSampleClassGoesToTrainWithWarning) {
    data::DatasetManifest m;
    m.class_names = {"a", "b"};
    m.height = m.width = 8;
    for (int i = 0; i < 10; ++i) m.entries.push_back({"a" + std::to_string(i), "x", "y", 0});
    m.entries.push_back({"lonely", "x", "y", 1});
    auto r = data::split_dataset(m, 0.8, 1);
    ASSERT_EQ(r.warnings.size(), 1u);
    int count_b = 0;
    for (const auto& e : r.train.entries) count_b += e.label == 1;
    EXPECT_EQ(count_b, 1);
    for (const auto& e : r.test.entries) EXPECT_NE(e.label, 1);
    EXPECT_THROW(data::split_dataset(m, 1.0, 1), std::invalid_argument);
}
