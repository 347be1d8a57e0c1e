#include <gtest/gtest.h>

#include <random>

#include "prosodyflow/dcore/checkpoint.hpp"
#include "prosodyflow/dcore/gradcheck.hpp"
#include "prosodyflow/dcore/layers.hpp"
#include "prosodyflow/dcore/optim.hpp"

using namespace pflow;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

}  // namespace

TEST(DenseApply, IdentityWeights) {
    ParameterStore store;
    DenseLayer layer{"d", 2, 2, Activation::identity};
    store.add(layer.weight_name(), Mat::Identity(2, 2));
    store.add(layer.bias_name(), Mat::Zero(1, 2));
    Graph g;
    Mat x(1, 2);
    x << 1, 2;
    Var y = dense_apply(g, store, layer, g.constant(x));
    EXPECT_DOUBLE_EQ(y.value()(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(y.value()(0, 1), 2.0);
}

TEST(DenseApply, ForcedArithmetic) {
    ParameterStore store;
    DenseLayer layer{"d", 2, 2, Activation::identity};
    Mat w(2, 2);
    w << 2, 0, 0, 2;
    store.add(layer.weight_name(), w);
    store.add(layer.bias_name(), Mat::Ones(1, 2));
    Graph g;
    Var y = dense_apply(g, store, layer, g.constant(Mat::Ones(1, 2)));
    EXPECT_DOUBLE_EQ(y.value()(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(y.value()(0, 1), 3.0);
}

TEST(DenseApply, ShapeMismatchAndNonFinite) {
    ParameterStore store;
    std::mt19937_64 rng(1);
    DenseLayer layer{"d", 3, 2, Activation::tanh};
    layer.init(store, rng);
    Graph g;
    EXPECT_THROW(dense_apply(g, store, layer, g.constant(Mat::Ones(1, 2))), DimensionError);
    Mat bad = Mat::Ones(1, 3);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(dense_apply(g, store, layer, g.constant(bad)), NumericError);
}

TEST(DenseApply, WeightGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    ParameterStore store;
    DenseLayer layer{"d", 4, 3, Activation::tanh};
    layer.init(store, rng);
    const Mat x = random_mat(5, 4, rng);
    auto f = [&](Graph& g, ParameterStore& s) { return op::sum(dense_apply(g, s, layer, g.constant(x))); };
    const auto rep = grad_check(f, store);
    EXPECT_GT(rep.checked, 0u);
    EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst_param << "[" << rep.worst_index << "]";
}

TEST(Backward, SumGivesOnes) {
    Graph g;
    Var x = g.leaf(Mat::Constant(2, 3, 0.7));
    g.backward(op::sum(x));
    EXPECT_TRUE(g.grad(x).isApprox(Mat::Ones(2, 3)));
}

TEST(Backward, HalfSquaredNormGivesX) {
    std::mt19937_64 rng(3);
    const Mat x0 = random_mat(3, 4, rng);
    Graph g;
    Var x = g.leaf(x0);
    g.backward(op::scale(op::sum(op::square(x)), 0.5));
    EXPECT_LT((g.grad(x) - x0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Graph g;
    Var x = g.leaf(Mat::Constant(1, 2, 3.0));
    Var loss = op::sum(x);
    g.backward(loss);
    g.backward(loss);
    EXPECT_TRUE(g.grad(x).isApprox(Mat::Constant(1, 2, 2.0)));
}

TEST(Backward, NonScalarLossIsContractError) {
    Graph g;
    Var x = g.leaf(Mat::Ones(2, 2));
    EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Backward, CompositeMlpMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    ParameterStore store;
    DenseLayer l1{"l1", 3, 8, Activation::tanh};
    DenseLayer l2{"l2", 8, 8, Activation::sigmoid};
    DenseLayer l3{"l3", 8, 2, Activation::identity};
    l1.init(store, rng);
    l2.init(store, rng);
    l3.init(store, rng);
    const Mat x = random_mat(6, 3, rng);
    auto f = [&](Graph& g, ParameterStore& s) {
        Var h = dense_apply(g, s, l1, g.constant(x));
        h = dense_apply(g, s, l2, h);
        h = dense_apply(g, s, l3, h);
        return op::mean(op::square(h));
    };
    const auto rep = grad_check(f, store);
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst_param;
}

// Every primitive op against central differences on random inputs.
TEST(PrimitiveOps, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(5);
    const Mat a = random_mat(3, 4, rng);
    const Mat b = random_mat(3, 4, rng);
    const Mat w = random_mat(5, 4, rng);
    const Mat row = random_mat(1, 4, rng);
    const Mat col = random_mat(3, 1, rng);
    const Mat pos = a.array().abs() + 0.5;
    // Keep relu inputs away from the kink.
    Mat kinky = a;
    for (Eigen::Index i = 0; i < kinky.size(); ++i) {
        if (std::abs(kinky.data()[i]) < 1e-3) kinky.data()[i] = 0.5;
    }
    using Fn = std::function<Var(Graph&, Var)>;
    const std::vector<std::pair<std::string, std::pair<Fn, Mat>>> cases = {
        {"add", {[&](Graph& g, Var x) { return op::add(x, g.constant(b)); }, a}},
        {"sub", {[&](Graph& g, Var x) { return op::sub(g.constant(b), x); }, a}},
        {"mul", {[&](Graph&, Var x) { return op::mul(x, op::square(x)); }, a}},
        {"scale", {[&](Graph&, Var x) { return op::scale(x, -2.5); }, a}},
        {"add_row", {[&](Graph& g, Var x) { return op::square(op::add_row(x, g.constant(row))); }, a}},
        {"mul_col", {[&](Graph& g, Var x) { return op::square(op::mul_col(x, g.constant(col))); }, a}},
        {"matmul_t", {[&](Graph& g, Var x) { return op::tanh(op::matmul_t(x, g.constant(w))); }, a}},
        {"matmul", {[&](Graph& g, Var x) { return op::square(op::matmul(g.constant(w), op::reshape(x, 4, 3))); }, a}},
        {"exp", {[&](Graph&, Var x) { return op::exp(x); }, a}},
        {"log", {[&](Graph&, Var x) { return op::log(x); }, pos}},
        {"tanh", {[&](Graph&, Var x) { return op::tanh(x); }, a}},
        {"sigmoid", {[&](Graph&, Var x) { return op::sigmoid(x); }, a}},
        {"relu", {[&](Graph&, Var x) { return op::square(op::relu(x)); }, kinky}},
        {"softplus", {[&](Graph&, Var x) { return op::softplus(x); }, a}},
        {"sum_cols", {[&](Graph&, Var x) { return op::square(op::sum_cols(x)); }, a}},
        {"mean", {[&](Graph&, Var x) { return op::mean(op::square(x)); }, a}},
        {"concat_cols", {[&](Graph&, Var x) { return op::square(op::concat_cols({x, op::scale(x, 2.0)})); }, a}},
        {"concat_rows", {[&](Graph&, Var x) { return op::square(op::concat_rows({x, op::exp(x)})); }, a}},
        {"slice_cols", {[&](Graph&, Var x) { return op::square(op::slice_cols(x, 1, 2)); }, a}},
        {"gather_rows", {[&](Graph&, Var x) { return op::square(op::gather_rows(x, {2, -1, 0, 2})); }, a}},
        {"reshape", {[&](Graph&, Var x) { return op::square(op::reshape(x, 2, 6)); }, a}},
        {"bce_with_logits", {[&](Graph&, Var x) { return op::bce_with_logits(x, (b.array() > 0).cast<double>().matrix()); }, a}},
    };
    for (const auto& [name, c] : cases) {
        const auto rep = grad_check_input(c.first, c.second);
        EXPECT_GT(rep.checked, 0u) << name;
        EXPECT_LT(rep.max_rel_error, 1e-5) << name << " worst " << rep.worst_analytic << " vs " << rep.worst_numeric;
    }
}

TEST(RecurrentScan, ZeroParametersGiveZeroOutput) {
    ParameterStore store;
    RecurrentCell cell{"lstm", 3, 4};
    store.add(cell.w_ih_name(), Mat::Zero(16, 3));
    store.add(cell.w_hh_name(), Mat::Zero(16, 4));
    store.add(cell.bias_name(), Mat::Zero(1, 16));
    Graph g;
    std::mt19937_64 rng(2);
    Var h = recurrent_scan(g, store, cell, g.constant(random_mat(5, 3, rng)));
    EXPECT_EQ(h.value().rows(), 5);
    EXPECT_DOUBLE_EQ(h.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(RecurrentScan, SingleStepEqualsCellApplication) {
    std::mt19937_64 rng(4);
    ParameterStore store;
    RecurrentCell cell{"lstm", 3, 5};
    cell.init(store, rng);
    const Mat x = random_mat(1, 3, rng);
    Graph g;
    Var h = recurrent_scan(g, store, cell, g.constant(x));
    Mat hs = Mat::Zero(1, 5), cs = Mat::Zero(1, 5);
    lstm_cell_step(store, cell, x, hs, cs);
    EXPECT_EQ(h.value(), hs);
}

TEST(RecurrentScan, EmptySequenceRejected) {
    ParameterStore store;
    std::mt19937_64 rng(4);
    RecurrentCell cell{"lstm", 3, 5};
    cell.init(store, rng);
    Graph g;
    EXPECT_THROW(recurrent_scan(g, store, cell, g.constant(Mat(0, 3))), EmptySequenceError);
}

TEST(RecurrentScan, CausalUnderPerturbation) {
    std::mt19937_64 rng(9);
    ParameterStore store;
    RecurrentCell cell{"lstm", 2, 6};
    cell.init(store, rng);
    const Mat x = random_mat(12, 2, rng);
    Graph g0;
    const Mat base = recurrent_scan(g0, store, cell, g0.constant(x)).value();
    for (int k = 0; k < 12; ++k) {
        Mat xp = x;
        xp(k, 0) += 0.37;
        xp(k, 1) -= 1.1;
        Graph g;
        const Mat out = recurrent_scan(g, store, cell, g.constant(xp)).value();
        for (int t = 0; t < k; ++t) {
            for (int j = 0; j < 6; ++j) ASSERT_EQ(out(t, j), base(t, j)) << "k=" << k << " t=" << t;
        }
        EXPECT_NE(out.row(k), base.row(k));
    }
}

TEST(RecurrentScan, BatchedGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    ParameterStore store;
    RecurrentCell cell{"lstm", 3, 4};
    cell.init(store, rng);
    const int batch = 2;
    const Mat x = random_mat(5 * batch, 3, rng);
    const Mat h0 = random_mat(batch, 4, rng, 0.3);
    const Mat c0 = random_mat(batch, 4, rng, 0.3);
    const Mat target = random_mat(5 * batch, 4, rng, 0.5);
    auto f = [&](Graph& g, ParameterStore& s) {
        Var h = recurrent_scan(g, s, cell, g.constant(x), g.constant(h0), g.constant(c0), batch);
        return op::mean(op::square(op::sub(h, g.constant(target))));
    };
    const auto rep = grad_check(f, store);
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst_param << " " << rep.worst_analytic << " vs " << rep.worst_numeric;

    // Input and initial-state gradients.
    auto fx = [&](Graph& g, Var xv) {
        Var h = recurrent_scan(g, store, cell, xv, g.constant(h0), g.constant(c0), batch);
        return op::square(h);
    };
    EXPECT_LT(grad_check_input(fx, x).max_rel_error, 1e-5);
    auto fh = [&](Graph& g, Var hv) {
        return op::square(recurrent_scan(g, store, cell, g.constant(x), hv, g.constant(c0), batch));
    };
    EXPECT_LT(grad_check_input(fh, h0).max_rel_error, 1e-5);
    auto fc = [&](Graph& g, Var cv) {
        return op::square(recurrent_scan(g, store, cell, g.constant(x), g.constant(h0), cv, batch));
    };
    EXPECT_LT(grad_check_input(fc, c0).max_rel_error, 1e-5);
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
    ParameterStore store;
    store.add("p", Mat::Constant(2, 2, 1.5));
    OptimizerState st;
    for (int i = 0; i < 10; ++i) optimizer_step(st, store);
    EXPECT_TRUE(store.at("p").value.isApprox(Mat::Constant(2, 2, 1.5)));
    EXPECT_EQ(st.step, 10);
}

TEST(Optimizer, ConstantGradientDescends) {
    ParameterStore store;
    store.add("p", Mat::Zero(1, 2));
    OptimizerState st;
    for (int i = 0; i < 50; ++i) {
        store.at("p").grad << 0.3, -2.0;
        optimizer_step(st, store);
    }
    EXPECT_LT(store.at("p").value(0, 0), 0.0);
    EXPECT_GT(store.at("p").value(0, 1), 0.0);
}

TEST(Optimizer, NanGradientNamesParameter) {
    ParameterStore store;
    store.add("layer.weight", Mat::Zero(1, 1));
    store.at("layer.weight").grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    OptimizerState st;
    try {
        optimizer_step(st, store);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
    }
}

TEST(Optimizer, SeededReplayIsBitIdentical) {
    auto run = [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        ParameterStore store;
        DenseLayer l1{"l1", 3, 6, Activation::tanh};
        DenseLayer l2{"l2", 6, 1, Activation::identity};
        l1.init(store, rng);
        l2.init(store, rng);
        OptimizerState st;
        std::vector<double> losses;
        for (int step = 0; step < 100; ++step) {
            const Mat x = random_mat(8, 3, rng);
            store.zero_grad();
            Graph g;
            Var y = dense_apply(g, store, l2, dense_apply(g, store, l1, g.constant(x)));
            Var loss = op::mean(op::square(op::sub(y, g.constant(x.col(0)))));
            losses.push_back(loss.item());
            g.backward(loss);
            optimizer_step(st, store);
        }
        return std::make_pair(losses, params_to_json(store).dump());
    };
    const auto a = run(42);
    const auto b = run(42);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    EXPECT_NE(a.second, run(43).second);
}

TEST(GradCheck, QuadraticIsNearExact) {
    ParameterStore store;
    store.add("p", (Mat(1, 3) << 0.3, -1.2, 2.0).finished());
    auto f = [](Graph& g, ParameterStore& s) {
        Var p = g.param(s, "p");
        return op::sum(op::add(op::scale(op::square(p), 1.5), op::scale(p, -0.25)));
    };
    EXPECT_LT(grad_check(f, store).max_rel_error, 1e-8);
}

TEST(GradCheck, NonFiniteLossIsNumericError) {
    ParameterStore store;
    store.add("p", Mat::Constant(1, 1, -1.0));
    auto f = [](Graph& g, ParameterStore& s) { return op::sum(op::log(g.param(s, "p"))); };
    EXPECT_THROW(grad_check(f, store), NumericError);
}

TEST(GradCheck, ReluKinkCrossingIsSkipped) {
    ParameterStore store;
    store.add("p", (Mat(1, 2) << 1e-8, 0.7).finished());
    auto f = [](Graph& g, ParameterStore& s) { return op::sum(op::relu(g.param(s, "p"))); };
    const auto rep = grad_check(f, store);
    EXPECT_EQ(rep.skipped, 1u);
    EXPECT_EQ(rep.checked, 1u);
    EXPECT_LT(rep.max_rel_error, 1e-8);
}

TEST(Checkpoint, JsonRoundTripIsBitExact) {
    std::mt19937_64 rng(99);
    ParameterStore store;
    store.add("a", random_mat(3, 5, rng, 1e3));
    store.add("b.c", random_mat(1, 7, rng, 1e-7));
    const std::string text = params_to_json(store).dump();
    const ParameterStore back = params_from_json(nlohmann::json::parse(text));
    ASSERT_EQ(back.size(), store.size());
    for (const auto& [name, p] : store) {
        const Mat& q = back.at(name).value;
        ASSERT_EQ(q.rows(), p.value.rows());
        for (Eigen::Index i = 0; i < q.size(); ++i) EXPECT_EQ(q.data()[i], p.value.data()[i]);
    }
}

TEST(Checkpoint, MalformedShapeIsFormatError) {
    auto j = nlohmann::json::parse(R"({"w": {"shape": [2, 2], "values": [1, 2, 3]}})");
    EXPECT_THROW(params_from_json(j), FormatError);
}
