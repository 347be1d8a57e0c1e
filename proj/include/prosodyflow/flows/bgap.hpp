#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "prosodyflow/coupling/affine.hpp"
#include "prosodyflow/coupling/invconv.hpp"
#include "prosodyflow/coupling/spline.hpp"
#include "prosodyflow/coupling/split.hpp"
#include "prosodyflow/dcore/layers.hpp"
#include "prosodyflow/flows/config.hpp"

namespace pflow {

// Latent plus per-row log-determinant of data -> latent.
struct FlowOutput {
    Var z;
    Var logdet;  // [R x 1]
};

// Mean negative log-likelihood per element under a standard-normal prior.
inline Var flow_nll(const FlowOutput& out) {
    const double n = static_cast<double>(out.z.value().size());
    Var quad = op::scale(op::mean(op::square(out.z)), 0.5);
    Var ld = op::scale(op::sum(out.logdet), -1.0 / n);
    return op::add_scalar(op::add(quad, ld), 0.5 * std::log(2.0 * std::numbers::pi));
}

// 0.5 * mean(z^2); equals 0.5 for a standard-normal latent.
inline double prior_monitor(const Mat& z) {
    if (z.size() == 0) throw EmptySequenceError("prior monitor over an empty latent");
    return 0.5 * z.squaredNorm() / static_cast<double>(z.size());
}

namespace detail {

// Number of predictor outputs for a coupling over `dims` channels.
inline int coupling_param_count(CouplingKind kind, int dims, const SplineShape& shape) {
    return kind == CouplingKind::affine ? 2 * dims : dims * shape.params_per_dim();
}

// Applies the coupling transform to x_a with predictor output p on the tape.
inline std::pair<Var, Var> coupling_forward(CouplingKind kind, Var x_a, Var p, const SplineShape& shape) {
    const Eigen::Index dims = x_a.cols();
    if (kind == CouplingKind::affine) {
        return op::affine(x_a, op::slice_cols(p, 0, dims), op::slice_cols(p, dims, dims));
    }
    Var raw_w = op::slice_cols(p, 0, dims * shape.bins);
    Var raw_v = op::slice_cols(p, dims * shape.bins, dims * (shape.bins + 1));
    return op::spline(x_a, raw_w, raw_v, shape);
}

inline Mat coupling_inverse(CouplingKind kind, const Mat& y_a, const Mat& p, const SplineShape& shape) {
    const Eigen::Index dims = y_a.cols();
    if (kind == CouplingKind::affine) {
        const Mat s = p.leftCols(dims);
        const Mat b = p.middleCols(dims, dims);
        return (y_a - b).cwiseProduct(Mat(s.array().exp().inverse().matrix()));
    }
    const Mat raw_w = p.leftCols(dims * shape.bins);
    const Mat raw_v = p.middleCols(dims * shape.bins, dims * (shape.bins + 1));
    return spline_inverse_rows(y_a, raw_w, raw_v, shape);
}

}  // namespace detail

// Glow-style bipartite flow. Step k: invertible 1x1 convolution, then a
// coupling on the first ceil(D/2) channels with parameters predicted from the
// remaining channels and the grouped context row.
struct BgapModel {
    FlowConfig cfg;

    explicit BgapModel(FlowConfig c = FlowConfig::preset(ModelKind::bgap)) : cfg(std::move(c)) {}

    CouplingSplit split() const { return CouplingSplit::halves(cfg.data_channels()); }

    std::string prefix(int k) const { return "bgap." + std::to_string(k); }
    std::string invconv_name(int k) const { return prefix(k) + ".invconv"; }
    DenseLayer layer_in(int k) const {
        const auto s = split();
        return {prefix(k) + ".in", s.conditioning() + cfg.grouped_context_channels(), cfg.hidden, Activation::tanh};
    }
    DenseLayer layer_mid(int k) const { return {prefix(k) + ".mid", cfg.hidden, cfg.hidden, Activation::tanh}; }
    DenseLayer layer_out(int k) const {
        const int n = detail::coupling_param_count(cfg.couplings[static_cast<std::size_t>(k)], split().transformed,
                                                   cfg.spline_shape());
        return {prefix(k) + ".out", cfg.hidden, n, Activation::identity};
    }

    template <class Rng>
    void init(ParameterStore& store, Rng& rng) const {
        cfg.validate();
        for (int k = 0; k < cfg.steps(); ++k) {
            store.add(invconv_name(k), random_orthogonal(cfg.data_channels(), rng));
            layer_in(k).init(store, rng);
            layer_mid(k).init(store, rng);
            layer_out(k).init(store, rng, true);
        }
    }

    Var predictor(Graph& g, ParameterStore& store, int k, Var x_b, Var ctx) const {
        Var h = dense_apply(g, store, layer_in(k), op::concat_cols({x_b, ctx}));
        h = dense_apply(g, store, layer_mid(k), h);
        return dense_apply(g, store, layer_out(k), h);
    }

    void check_shapes(const Mat& x, const Mat& ctx) const {
        if (x.cols() != cfg.data_channels()) {
            throw ContractError("bgap expects " + std::to_string(cfg.data_channels()) + " data channels, got " +
                                shape_str(x));
        }
        if (ctx.rows() != x.rows() || ctx.cols() != cfg.grouped_context_channels()) {
            throw ContractError("bgap context " + shape_str(ctx) + " not aligned with data " + shape_str(x));
        }
    }

    // Data [R x D] and grouped context [R x N*C] to latent; rows are independent.
    FlowOutput forward(Graph& g, ParameterStore& store, Var x, Var ctx) const {
        check_shapes(x.value(), ctx.value());
        const auto s = split();
        Var h = x;
        Var logdet = g.constant(Mat::Zero(x.rows(), 1));
        for (int k = 0; k < cfg.steps(); ++k) {
            auto [y, ld_conv] = op::invconv(h, g.param(store, invconv_name(k)));
            Var y_a = op::slice_cols(y, 0, s.transformed);
            Var y_b = op::slice_cols(y, s.transformed, s.conditioning());
            Var p = predictor(g, store, k, y_b, ctx);
            auto [out_a, ld_cpl] = detail::coupling_forward(cfg.couplings[static_cast<std::size_t>(k)], y_a, p,
                                                            cfg.spline_shape());
            h = op::concat_cols({out_a, y_b});
            logdet = op::add(logdet, op::add(ld_conv, ld_cpl));
        }
        return {h, logdet};
    }

    // Latent to data, undoing the steps in reverse order.
    Mat inverse(const ParameterStore& store, const Mat& z, const Mat& ctx) const {
        check_shapes(z, ctx);
        const auto s = split();
        auto& params = const_cast<ParameterStore&>(store);  // gradients are disabled below
        Mat h = z;
        for (int k = cfg.steps(); k-- > 0;) {
            Graph g(false);
            const Mat y_b = h.rightCols(s.conditioning());
            const Mat p = predictor(g, params, k, g.constant(y_b), g.constant(ctx)).value();
            Mat y(h.rows(), h.cols());
            y.leftCols(s.transformed) =
                detail::coupling_inverse(cfg.couplings[static_cast<std::size_t>(k)], h.leftCols(s.transformed), p,
                                         cfg.spline_shape());
            y.rightCols(s.conditioning()) = y_b;
            h = invconv_inverse(y, InvConvParams{store.at(invconv_name(k)).value});
            require_finite(h, "bgap inverse step " + std::to_string(k));
        }
        return h;
    }
};

}  // namespace pflow
