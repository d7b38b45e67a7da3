#include <gtest/gtest.h>

#include "lesyn/cond/conditioning.hpp"
#include "lesyn/core/serialize.hpp"
#include "test_util.hpp"

using namespace lesyn;
using lesyn::test::TempDir;
using lesyn::test::max_grad_rel_error;
using measure::MeasurementVector;

namespace {

MeasurementVector random_vec(Rng& rng) {
    MeasurementVector v;
    for (size_t i = 0; i < measure::kNumMeasurements; ++i) v[i] = rng.normal();
    return v;
}

}  // namespace

TEST(MeasurementEncoder, WidthContractAndDeterminism) {
    Rng rng(1);
    nn::ParamRegistry<double> reg;
    cond::MeasurementEncoder<double> enc(reg, "meas", 24, rng);
    const auto v = random_vec(rng);
    const auto f1 = enc.encode_vector(v);
    EXPECT_EQ(f1->value.shape(), (std::vector<int64_t>{1, 24}));
    const auto f2 = enc.encode_vector(v);
    for (int64_t i = 0; i < 24; ++i) EXPECT_EQ(f1->value[i], f2->value[i]);
    EXPECT_TRUE(f1->value.all_finite());

    Tensor<double> wrong({1, 7});
    EXPECT_THROW(enc.forward(ag::constant(wrong)), std::invalid_argument);
}

TEST(MeasurementEncoder, ZeroPreActivationMapsToZero) {
    // with gamma = 0 the layernorm output is beta = 0, and SiLU(0) = 0
    Rng rng(2);
    nn::ParamRegistry<double> reg;
    cond::MeasurementEncoder<double> enc(reg, "meas", 8, rng);
    enc.norm.gamma->value.fill(0.0);
    const auto f = enc.encode_vector(random_vec(rng));
    for (int64_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(f->value[i], 0.0);
}

TEST(MeasurementEncoder, JacobianMatchesFiniteDifferences) {
    Rng rng(3);
    nn::ParamRegistry<double> reg;
    cond::MeasurementEncoder<double> enc(reg, "meas", 8, rng);
    auto v = ag::param(Tensor<double>::randn({1, measure::kNumMeasurements}, rng));
    // check every row of the Jacobian via coordinate selectors
    for (int64_t coord = 0; coord < 8; ++coord) {
        auto loss = [&] { return ag::sum_all(ag::slice_cols(enc.forward(v), coord, 1)); };
        EXPECT_LT(max_grad_rel_error(loss, {v}), 1e-4) << "output coordinate " << coord;
    }
}

TEST(MeasurementCodebook, UpdateAndQueryExactness) {
    cond::MeasurementCodebook cb({"a", "b"});
    MeasurementVector v1, v2;
    v1[0] = 1;
    v1[1] = 2;
    v2[0] = 3;
    v2[1] = 4;
    EXPECT_THROW(cb.query(0), std::runtime_error);  // empty class
    cb.update(0, v1);
    EXPECT_EQ(cb.count(0), 1);
    const auto q1 = cb.query(0);
    for (size_t i = 0; i < measure::kNumMeasurements; ++i) EXPECT_DOUBLE_EQ(q1[i], v1[i]);
    EXPECT_EQ(cb.count(0), 1);  // query does not change count
    cb.update(0, v2);
    const auto q2 = cb.query(0);
    EXPECT_DOUBLE_EQ(q2[0], 2.0);
    EXPECT_DOUBLE_EQ(q2[1], 3.0);
    EXPECT_EQ(cb.count(1), 0);  // other class untouched
    EXPECT_THROW(cb.update(5, v1), std::out_of_range);
}

TEST(MeasurementCodebook, InterleavedRunningMeanMatchesLog) {
    Rng rng(4);
    const int classes = 3;
    cond::MeasurementCodebook cb({"a", "b", "c"});
    std::vector<std::vector<MeasurementVector>> log(classes);
    for (int i = 0; i < 1000; ++i) {
        const int cls = static_cast<int>(rng.uniform_int(classes));
        const auto v = random_vec(rng);
        cb.update(cls, v);
        log[static_cast<size_t>(cls)].push_back(v);
    }
    for (int c = 0; c < classes; ++c) {
        if (log[static_cast<size_t>(c)].empty()) continue;
        MeasurementVector mean;
        for (const auto& v : log[static_cast<size_t>(c)])
            for (size_t i = 0; i < measure::kNumMeasurements; ++i) mean[i] += v[i];
        for (size_t i = 0; i < measure::kNumMeasurements; ++i)
            mean[i] /= static_cast<double>(log[static_cast<size_t>(c)].size());
        const auto q = cb.query(c);
        for (size_t i = 0; i < measure::kNumMeasurements; ++i) ASSERT_NEAR(q[i], mean[i], 1e-12);
        EXPECT_EQ(cb.count(c), static_cast<int64_t>(log[static_cast<size_t>(c)].size()));
    }
}

TEST(MeasurementCodebook, SerializationBitExact) {
    TempDir td("cb");
    Rng rng(5);
    cond::MeasurementCodebook cb({"melanoma", "nevus"});
    for (int i = 0; i < 37; ++i) cb.update(static_cast<int>(rng.uniform_int(2)), random_vec(rng));
    cb.save(td.path() / "cb.txt");
    const auto back = cond::MeasurementCodebook::load(td.path() / "cb.txt");
    EXPECT_TRUE(cb == back);  // bit-exact round trip (17 significant digits)
    // second round trip is also stable
    back.save(td.path() / "cb2.txt");
    EXPECT_EQ(io::hash_file((td.path() / "cb.txt").string()), io::hash_file((td.path() / "cb2.txt").string()));
}

TEST(ConditionTokens, LengthTwoAndStructure) {
    Rng rng(6);
    nn::ParamRegistry<double> reg;
    cond::ClassEmbedding<double> classes(reg, "cls", 3, 16, rng);
    cond::MeasurementEncoder<double> enc(reg, "meas", 16, rng);
    const auto v = random_vec(rng);
    auto f_q = enc.encode_vector(v);
    auto t0 = cond::build_condition_tokens(classes, 1, f_q);
    EXPECT_EQ(t0->value.dim(0), 2);  // always exactly two tokens
    EXPECT_EQ(t0->value.dim(1), 16);

    auto t0b = cond::build_condition_tokens(classes, 1, enc.encode_vector(v));
    for (int64_t i = 0; i < t0->value.numel(); ++i) ASSERT_EQ(t0->value[i], t0b->value[i]);  // deterministic

    auto t0c = cond::build_condition_tokens(classes, 2, enc.encode_vector(v));
    for (int64_t i = 0; i < 16; ++i) {
        EXPECT_NE(t0->value.at2(0, i), t0c->value.at2(0, i));      // class token differs
        EXPECT_EQ(t0->value.at2(1, i), t0c->value.at2(1, i));      // measurement token identical
    }
    EXPECT_THROW(cond::build_condition_tokens(classes, 7, f_q), std::out_of_range);
}
