#include <gtest/gtest.h>

#include <random>

#include "prosodyflow/context/context.hpp"
#include "prosodyflow/dcore/gradcheck.hpp"
#include "prosodyflow/dcore/optim.hpp"

using namespace pflow;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

std::vector<int> random_mask(std::size_t n, std::mt19937_64& rng) {
    std::bernoulli_distribution b(0.5);
    std::vector<int> m(n);
    for (auto& v : m) v = b(rng);
    return m;
}

}  // namespace

TEST(PhiText, ReplicatesByDuration) {
    Mat emb(3, 4);
    emb << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    PhonemeSeq seq{{0, 2}, {2, 3}};
    auto ctx = build_phi_text(seq, emb);
    ASSERT_EQ(ctx.phi.rows(), 5);
    ASSERT_EQ(ctx.phi.cols(), 4);
    for (int t = 0; t < 2; ++t) EXPECT_EQ(Mat(ctx.phi.row(t)), Mat(emb.row(0)));
    for (int t = 2; t < 5; ++t) EXPECT_EQ(Mat(ctx.phi.row(t)), Mat(emb.row(2)));

    auto one = build_phi_text(PhonemeSeq{{1}, {1}}, emb);
    ASSERT_EQ(one.phi.rows(), 1);
    EXPECT_EQ(Mat(one.phi.row(0)), Mat(emb.row(1)));
}

TEST(PhiText, PermutationMovesBlocks) {
    std::mt19937_64 rng(4);
    Mat emb = random_mat(6, 3, rng);
    PhonemeSeq a{{0, 3, 5, 1}, {2, 1, 4, 3}};
    PhonemeSeq b{{5, 0, 1, 3}, {4, 2, 3, 1}};  // permutation (2, 0, 3, 1)
    auto pa = build_phi_text(a, emb).phi;
    auto pb = build_phi_text(b, emb).phi;
    ASSERT_EQ(pa.rows(), pb.rows());
    EXPECT_EQ(Mat(pb.middleRows(0, 4)), Mat(pa.middleRows(3, 4)));
    EXPECT_EQ(Mat(pb.middleRows(4, 2)), Mat(pa.middleRows(0, 2)));
    EXPECT_EQ(Mat(pb.middleRows(6, 3)), Mat(pa.middleRows(7, 3)));
    EXPECT_EQ(Mat(pb.middleRows(9, 1)), Mat(pa.middleRows(2, 1)));
}

TEST(PhiText, Errors) {
    Mat emb = Mat::Ones(3, 2);
    EXPECT_THROW(build_phi_text(PhonemeSeq{{0, 1}, {2, 0}}, emb), DataError);
    EXPECT_THROW(build_phi_text(PhonemeSeq{{0, 3}, {2, 1}}, emb), VocabularyError);
}

TEST(PhonemeJson, RoundTripAndMalformed) {
    PhonemeSeq seq{{4, 1, 7}, {3, 9, 2}};
    auto back = phonemes_from_json(phonemes_to_json(seq));
    EXPECT_EQ(back.ids, seq.ids);
    EXPECT_EQ(back.durations, seq.durations);
    EXPECT_THROW(phonemes_from_json(nlohmann::json{{"ids", {1}}}), FormatError);
    EXPECT_THROW(phonemes_from_json(nlohmann::json{{"ids", {1, 2}}, {"durations", {1}}}), FormatError);
    EXPECT_THROW(phonemes_from_json(nlohmann::json{{"ids", {1}}, {"durations", {"x"}}}), FormatError);
}

TEST(Classifier, ThresholdRule) {
    Mat p(3, 1);
    p << 0.6, 0.4, 0.5;
    EXPECT_EQ(threshold_voiced(p), (std::vector<int>{1, 0, 1}));

    ParameterStore store;
    std::mt19937_64 rng(1);
    VoicedClassifier cls(4, 3);
    cls.init(store, rng);
    store.at(cls.head.weight_name()).value.setZero();
    store.at(cls.head.bias_name()).value.setZero();
    ConditioningContext ctx;
    ctx.phi = random_mat(7, 4, rng);
    const Mat probs = voiced_probabilities(store, cls, ctx.phi);
    for (Eigen::Index i = 0; i < probs.size(); ++i) EXPECT_EQ(probs.data()[i], 0.5);
    for (int v : predict_voiced(store, cls, ctx)) EXPECT_EQ(v, 1);
}

TEST(Classifier, LearnsSeparableVoicing) {
    std::mt19937_64 rng(12);
    const int vocab = 12, channels = 6;
    ParameterStore store;
    init_embedding(store, vocab, channels, rng);
    VoicedClassifier cls(channels, 8);
    cls.init(store, rng);
    auto is_voiced = [](int id) { return id % 3 != 0 ? 1 : 0; };

    auto make_utt = [&](std::mt19937_64& r) {
        std::uniform_int_distribution<int> id(0, vocab - 1), dur(1, 6);
        PhonemeSeq seq;
        for (int p = 0; p < 20; ++p) {
            seq.ids.push_back(id(r));
            seq.durations.push_back(dur(r));
        }
        std::vector<int> v;
        for (int i : frame_phoneme_ids(seq)) v.push_back(is_voiced(i));
        return std::make_pair(seq, v);
    };

    OptimizerState opt;
    opt.learning_rate = 1e-2;
    for (int step = 0; step < 300; ++step) {
        auto [seq, v] = make_utt(rng);
        store.zero_grad();
        Graph g;
        Var phi = build_phi_text(g.param(store, kEmbeddingName), seq);
        g.backward(classifier_loss(g, store, cls, phi, v));
        optimizer_step(opt, store);
    }

    std::mt19937_64 held(999);
    std::size_t right = 0, total = 0;
    for (int u = 0; u < 20; ++u) {
        auto [seq, v] = make_utt(held);
        auto ctx = build_phi_text(seq, store.at(kEmbeddingName).value);
        auto pred = predict_voiced(store, cls, ctx);
        for (std::size_t t = 0; t < v.size(); ++t) right += pred[t] == v[t];
        total += v.size();
    }
    EXPECT_GT(static_cast<double>(right) / static_cast<double>(total), 0.95);
}

TEST(VoicedMerge, ZeroParamsHalvePhi) {
    std::mt19937_64 rng(3);
    ParameterStore store;
    VoicedMerge{5}.init(store);
    ConditioningContext ctx{random_mat(9, 5, rng), random_mask(9, rng)};
    const Mat out = voiced_merge(store, ctx);
    for (Eigen::Index i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], 0.5 * ctx.phi.data()[i]);
}

TEST(VoicedMerge, FormulaAndMasking) {
    std::mt19937_64 rng(8);
    const int c = 4;
    ParameterStore store;
    VoicedMerge{c}.init(store);
    store.at(VoicedMerge::scale_name).value = random_mat(2, c, rng);
    store.at(VoicedMerge::shift_name).value = random_mat(2, c, rng);
    ConditioningContext ctx{random_mat(11, c, rng), random_mask(11, rng)};
    const Mat out = voiced_merge(store, ctx);
    const Mat& s = store.at(VoicedMerge::scale_name).value;
    const Mat& b = store.at(VoicedMerge::shift_name).value;
    for (Eigen::Index t = 0; t < 11; ++t) {
        const int row = ctx.voiced[static_cast<std::size_t>(t)] ? 0 : 1;
        for (int k = 0; k < c; ++k) {
            const double alpha = 1.0 / (1.0 + std::exp(-s(row, k)));
            const double expect = alpha * ctx.phi(t, k) + 0.01 * std::tanh(b(row, k));
            EXPECT_NEAR(out(t, k), expect, 1e-14);
        }
    }

    // Voiced rows must not depend on the unvoiced parameters at all.
    ParameterStore other = store;
    other.at(VoicedMerge::scale_name).value.row(1) = random_mat(1, c, rng);
    other.at(VoicedMerge::shift_name).value.row(1) = random_mat(1, c, rng);
    const Mat out2 = voiced_merge(other, ctx);
    for (Eigen::Index t = 0; t < 11; ++t) {
        if (ctx.voiced[static_cast<std::size_t>(t)]) {
            EXPECT_EQ(Mat(out.row(t)), Mat(out2.row(t)));
        }
    }
    ConditioningContext all_voiced{ctx.phi, std::vector<int>(11, 1)};
    EXPECT_EQ(voiced_merge(store, all_voiced), voiced_merge(other, all_voiced));
}

TEST(VoicedMerge, GradientCheck) {
    std::mt19937_64 rng(21);
    const int c = 3;
    ParameterStore store;
    VoicedMerge{c}.init(store);
    store.at(VoicedMerge::scale_name).value = random_mat(2, c, rng);
    store.at(VoicedMerge::shift_name).value = random_mat(2, c, rng);
    store.add("phi", random_mat(6, c, rng));
    const Mat weights = random_mat(6, c, rng);
    const auto mask = std::vector<int>{1, 0, 0, 1, 1, 0};
    auto loss = [&](Graph& g, ParameterStore& s) {
        Var out = voiced_merge(g, s, g.param(s, "phi"), mask);
        return op::sum(op::mul(out, g.constant(weights)));
    };
    auto rep = grad_check(loss, store);
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst_param;
}

TEST(UnvoicedBias, HeadOutputsMapToNonPositiveBias) {
    ParameterStore store;
    Mat emb(2, 1);
    emb << 1.0, 1.0;
    store.add(kEmbeddingName, emb);
    UnvoicedBias bias(1);
    std::mt19937_64 rng(0);
    bias.init(store, rng);
    store.at(bias.head.weight_name()).value.setZero();

    PhonemeSeq seq{{0, 1}, {2, 2}};
    const std::vector<double> sig = {0.9, 0.0, 0.8, 0.0};
    const std::vector<int> v = {1, 0, 1, 0};

    store.at(bias.head.bias_name()).value(0, 0) = 0.3;
    auto out = apply_unvoiced_bias(store, bias, sig, seq, v);
    EXPECT_EQ(out[0], 0.9);
    EXPECT_DOUBLE_EQ(out[1], -0.3);
    EXPECT_EQ(out[2], 0.8);
    EXPECT_DOUBLE_EQ(out[3], -0.3);

    store.at(bias.head.bias_name()).value(0, 0) = -0.2;
    out = apply_unvoiced_bias(store, bias, sig, seq, v);
    EXPECT_EQ(out, sig);

    store.at(bias.head.bias_name()).value(0, 0) = 5.0;
    EXPECT_EQ(apply_unvoiced_bias(store, bias, sig, seq, {1, 1, 1, 1}), sig);
}

TEST(UnvoicedBias, NeverIncreasesAndKeepsVoiced) {
    std::mt19937_64 rng(17);
    ParameterStore store;
    init_embedding(store, 8, 5, rng);
    UnvoicedBias bias(5);
    bias.init(store, rng);
    std::uniform_int_distribution<int> id(0, 7), dur(1, 5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 50; ++trial) {
        PhonemeSeq seq;
        for (int p = 0; p < 6; ++p) {
            seq.ids.push_back(id(rng));
            seq.durations.push_back(dur(rng));
        }
        const std::size_t n = seq.total_frames();
        std::vector<double> sig(n);
        for (auto& s : sig) s = nd(rng);
        const auto mask = random_mask(n, rng);
        const auto out = apply_unvoiced_bias(store, bias, sig, seq, mask);
        for (std::size_t t = 0; t < n; ++t) {
            EXPECT_LE(out[t], sig[t]);
            if (mask[t]) {
                EXPECT_EQ(out[t], sig[t]);
            }
        }
    }
    PhonemeSeq seq{{1}, {3}};
    EXPECT_THROW(apply_unvoiced_bias(store, bias, {0, 0}, seq, {0, 0}), ContractError);
}
