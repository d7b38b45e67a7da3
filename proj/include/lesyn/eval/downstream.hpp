#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "lesyn/data/manifest.hpp"
#include "lesyn/nn/modules.hpp"
#include "lesyn/nn/optim.hpp"

// Downstream augmentation protocol at desk scale: a small fixed conv classifier
// trained under three conditions (baseline, class-weighted sampling, real+
// synthetic balanced to a per-class target) with per-class recall on a held-out
// test set. The same classifier doubles as the class-posterior model for IS.

namespace lesyn::eval {

struct ClassifierConfig {
    int epochs = 10;
    int batch_size = 16;
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    int64_t channels = 12;
    uint64_t seed = 3;
    int64_t balance_target = 0;  // 0 = largest real class count
};

template <typename T = float>
class SmallClassifier {
public:
    SmallClassifier(int num_classes, int64_t height, int64_t width, const ClassifierConfig& cfg)
        : cfg_(cfg), num_classes_(num_classes), height_(height), width_(width) {
        Rng rng(cfg.seed ^ 0xc1a5ul);
        const int64_t c = cfg.channels;
        c1_ = nn::Conv2d<T>(reg_, "c1", 3, c, 3, 2, 1, rng);
        c2_ = nn::Conv2d<T>(reg_, "c2", c, 2 * c, 3, 2, 1, rng);
        c3_ = nn::Conv2d<T>(reg_, "c3", 2 * c, 2 * c, 3, 2, 1, rng);
        head_ = nn::Linear<T>(reg_, "head", 2 * c, num_classes, rng);
    }

    ag::NodeRef<T> logits_node(const ag::NodeRef<T>& x) const {
        // center [0,1] pixels so first-layer activations are not uniformly positive
        auto h = ag::silu(c1_.forward(ag::add_scalar(ag::scale(x, T(2)), T(-1))));
        h = ag::silu(c2_.forward(h));
        h = ag::silu(c3_.forward(h));
        return head_.forward(ag::pool_mean_hw(h));
    }

    // Seed-deterministic training over an index sampling policy. `draw` returns
    // the sample index for one step; epoch length is `steps_per_epoch` draws.
    template <typename DrawFn>
    void train(const std::vector<data::ImageSample>& pool, DrawFn&& draw, int64_t steps_per_epoch) {
        nn::AdamWConfig oc{cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay};
        nn::AdamW<T> opt(reg_.params(), oc);
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            for (int64_t step = 0; step < steps_per_epoch; step += cfg_.batch_size) {
                const int64_t bsz = std::min<int64_t>(cfg_.batch_size, steps_per_epoch - step);
                Tensor<T> batch({bsz, 3, height_, width_});
                std::vector<int64_t> labels(static_cast<size_t>(bsz));
                for (int64_t i = 0; i < bsz; ++i) {
                    const size_t idx = draw();
                    const auto& s = pool[idx];
                    for (int64_t j = 0; j < 3 * height_ * width_; ++j)
                        batch[i * 3 * height_ * width_ + j] = static_cast<T>(s.image[j]);
                    labels[static_cast<size_t>(i)] = s.label;
                }
                auto logits = logits_node(ag::constant(batch));
                auto loss = ag::cross_entropy_mean(logits, labels);
                opt.zero_grad();
                ag::backward(loss);
                opt.step();
            }
        }
    }

    std::vector<double> probabilities(const Tensor<float>& image) const {
        ag::NoGradGuard ng;
        Tensor<T> x({1, 3, height_, width_});
        for (int64_t j = 0; j < x.numel(); ++j) x[j] = static_cast<T>(image[j]);
        auto logits = logits_node(ag::constant(x));
        std::vector<double> p(static_cast<size_t>(num_classes_));
        double mx = -1e300;
        for (int i = 0; i < num_classes_; ++i) mx = std::max(mx, static_cast<double>(logits->value[i]));
        double denom = 0;
        for (int i = 0; i < num_classes_; ++i) {
            p[static_cast<size_t>(i)] = std::exp(static_cast<double>(logits->value[i]) - mx);
            denom += p[static_cast<size_t>(i)];
        }
        for (auto& v : p) v /= denom;
        return p;
    }

    int predict(const Tensor<float>& image) const {
        const auto p = probabilities(image);
        return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }

private:
    ClassifierConfig cfg_;
    int num_classes_;
    int64_t height_, width_;
    nn::ParamRegistry<T> reg_;
    nn::Conv2d<T> c1_, c2_, c3_;
    nn::Linear<T> head_;
};

struct ConditionRecall {
    std::string condition;
    std::vector<double> per_class;  // NaN for excluded classes
    double mean_recall = 0;
};

struct RecallReport {
    std::vector<ConditionRecall> conditions;  // fixed order: baseline, weighted, augmented
    std::vector<int> excluded_classes;        // empty in test set

    nlohmann::json to_json(const std::vector<std::string>& class_names) const {
        nlohmann::json out;
        out["excluded_classes"] = excluded_classes;
        out["conditions"] = nlohmann::json::array();
        for (const auto& c : conditions) {
            nlohmann::json per = nlohmann::json::object();
            for (size_t i = 0; i < c.per_class.size(); ++i)
                if (std::isfinite(c.per_class[i])) per[class_names[i]] = c.per_class[i];
            out["conditions"].push_back(
                {{"condition", c.condition}, {"per_class", per}, {"mean_recall", c.mean_recall}});
        }
        return out;
    }
};

namespace ddetail {

inline ConditionRecall eval_recall(const SmallClassifier<>& clf, const std::vector<data::ImageSample>& test,
                                   int num_classes, const std::string& name) {
    std::vector<int64_t> correct(static_cast<size_t>(num_classes), 0), total(static_cast<size_t>(num_classes), 0);
    for (const auto& s : test) {
        ++total[static_cast<size_t>(s.label)];
        if (clf.predict(s.image) == s.label) ++correct[static_cast<size_t>(s.label)];
    }
    ConditionRecall r;
    r.condition = name;
    double sum = 0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (total[static_cast<size_t>(c)] == 0) {
            r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const double recall = static_cast<double>(correct[static_cast<size_t>(c)]) /
                              static_cast<double>(total[static_cast<size_t>(c)]);
        r.per_class.push_back(recall);
        sum += recall;
        ++present;
    }
    r.mean_recall = present ? sum / present : 0.0;
    return r;
}

}  // namespace ddetail

// Trains the three conditions and reports per-class recall on the test set.
// Classes absent from the test set are excluded and flagged. An empty synthetic
// set with balancing requested is an error.
inline RecallReport downstream_augment_eval(const std::vector<data::ImageSample>& train,
                                            const std::vector<data::ImageSample>& synth,
                                            const std::vector<data::ImageSample>& test, int num_classes,
                                            int64_t height, int64_t width, const ClassifierConfig& cfg) {
    if (train.empty() || test.empty()) throw std::invalid_argument("downstream: empty train or test set");
    if (synth.empty()) throw std::invalid_argument("downstream: no synthetic samples for balanced augmentation");

    RecallReport report;
    {
        std::vector<int64_t> test_count(static_cast<size_t>(num_classes), 0);
        for (const auto& s : test) ++test_count[static_cast<size_t>(s.label)];
        for (int c = 0; c < num_classes; ++c)
            if (test_count[static_cast<size_t>(c)] == 0) report.excluded_classes.push_back(c);
    }

    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(num_classes));
    for (size_t i = 0; i < train.size(); ++i) by_class[static_cast<size_t>(train[i].label)].push_back(i);

    // baseline: uniform over the raw training set
    {
        SmallClassifier<> clf(num_classes, height, width, cfg);
        Rng rng(cfg.seed ^ 0xba5e);
        clf.train(train, [&] { return static_cast<size_t>(rng.uniform_int(train.size())); },
                  static_cast<int64_t>(train.size()));
        report.conditions.push_back(ddetail::eval_recall(clf, test, num_classes, "baseline"));
    }
    // weighted: class drawn uniformly, then an instance of that class
    {
        SmallClassifier<> clf(num_classes, height, width, cfg);
        Rng rng(cfg.seed ^ 0x3e16);
        std::vector<size_t> nonempty;
        for (size_t c = 0; c < by_class.size(); ++c)
            if (!by_class[c].empty()) nonempty.push_back(c);
        clf.train(train,
                  [&] {
                      const size_t c = nonempty[rng.uniform_int(nonempty.size())];
                      return by_class[c][rng.uniform_int(by_class[c].size())];
                  },
                  static_cast<int64_t>(train.size()));
        report.conditions.push_back(ddetail::eval_recall(clf, test, num_classes, "weighted"));
    }
    // augmented: real + synthetic, balanced to the target count per class
    {
        int64_t target = cfg.balance_target;
        if (target <= 0)
            for (const auto& cls : by_class) target = std::max<int64_t>(target, static_cast<int64_t>(cls.size()));
        std::vector<std::vector<size_t>> synth_by_class(static_cast<size_t>(num_classes));
        for (size_t i = 0; i < synth.size(); ++i) synth_by_class[static_cast<size_t>(synth[i].label)].push_back(i);

        std::vector<data::ImageSample> pool;
        Rng prng(cfg.seed ^ 0xa6a6u);
        for (int c = 0; c < num_classes; ++c) {
            auto real_idx = by_class[static_cast<size_t>(c)];
            prng.shuffle(real_idx);
            const int64_t real_take = std::min<int64_t>(target, static_cast<int64_t>(real_idx.size()));
            for (int64_t i = 0; i < real_take; ++i) pool.push_back(train[real_idx[static_cast<size_t>(i)]]);
            const auto& syn = synth_by_class[static_cast<size_t>(c)];
            int64_t need = target - real_take;
            for (int64_t i = 0; need > 0 && !syn.empty(); ++i, --need)
                pool.push_back(synth[syn[static_cast<size_t>(i % static_cast<int64_t>(syn.size()))]]);
        }
        SmallClassifier<> clf(num_classes, height, width, cfg);
        Rng rng(cfg.seed ^ 0xa0b1);
        clf.train(pool, [&] { return static_cast<size_t>(rng.uniform_int(pool.size())); },
                  static_cast<int64_t>(pool.size()));
        report.conditions.push_back(ddetail::eval_recall(clf, test, num_classes, "augmented"));
    }
    return report;
}

}  // namespace lesyn::eval
