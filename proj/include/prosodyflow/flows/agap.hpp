#pragma once

#include <string>
#include <vector>

#include "prosodyflow/coupling/reverse.hpp"
#include "prosodyflow/flows/bgap.hpp"

namespace pflow {

// act(x W^T + b) without a tape.
inline Mat dense_plain(const ParameterStore& store, const DenseLayer& layer, const Mat& x) {
    Mat a = x * store.at(layer.weight_name()).value.transpose();
    a.rowwise() += store.at(layer.bias_name()).value.row(0);
    switch (layer.activation) {
    case Activation::identity: break;
    case Activation::tanh: a = a.array().tanh().matrix(); break;
    case Activation::sigmoid: a = (1.0 / (1.0 + (-a.array()).exp())).matrix(); break;
    case Activation::relu: a = a.cwiseMax(0.0); break;
    }
    return a;
}

// Row indices that shift a time-major batch one step later, with a zero
// frame at t = 0.
inline std::vector<int> shift_in_time_index(Eigen::Index steps, int batch) {
    std::vector<int> idx(static_cast<std::size_t>(steps * batch));
    for (Eigen::Index t = 0; t < steps; ++t) {
        for (int b = 0; b < batch; ++b) {
            idx[static_cast<std::size_t>(t * batch + b)] = t == 0 ? -1 : static_cast<int>((t - 1) * batch + b);
        }
    }
    return idx;
}

// Autoregressive flow: each step predicts frame-t parameters from frames
// before t with two stacked LSTMs (the second also sees the context) and
// transforms frame t. Odd steps run on time-reversed sequences.
//
// Batches are time-major: row t*batch + b is frame t of sequence b.
struct AgapModel {
    FlowConfig cfg;

    explicit AgapModel(FlowConfig c = FlowConfig::preset(ModelKind::agap, FeatureKind::f0, AuxKind::diff, "spline"))
        : cfg(std::move(c)) {}

    std::string prefix(int k) const { return "agap." + std::to_string(k); }
    RecurrentCell lstm_data(int k) const { return {prefix(k) + ".lstm1", cfg.data_channels(), cfg.hidden}; }
    RecurrentCell lstm_context(int k) const {
        return {prefix(k) + ".lstm2", cfg.hidden + cfg.grouped_context_channels(), cfg.hidden};
    }
    DenseLayer layer_proj(int k) const { return {prefix(k) + ".proj", cfg.hidden, cfg.hidden, Activation::tanh}; }
    DenseLayer layer_out(int k) const {
        const int n = detail::coupling_param_count(cfg.couplings[static_cast<std::size_t>(k)], cfg.data_channels(),
                                                   cfg.spline_shape());
        return {prefix(k) + ".out", cfg.hidden, n, Activation::identity};
    }

    template <class Rng>
    void init(ParameterStore& store, Rng& rng) const {
        cfg.validate();
        for (int k = 0; k < cfg.steps(); ++k) {
            lstm_data(k).init(store, rng);
            lstm_context(k).init(store, rng);
            layer_proj(k).init(store, rng);
            layer_out(k).init(store, rng, true);
        }
    }

    void check_shapes(const Mat& x, const Mat& ctx, int batch) const {
        if (batch <= 0 || x.rows() % batch != 0) throw ContractError("agap: rows not divisible by batch");
        if (x.rows() == 0) throw EmptySequenceError("agap needs sequences of length >= 1");
        if (x.cols() != cfg.data_channels()) {
            throw ContractError("agap expects " + std::to_string(cfg.data_channels()) + " data channels, got " +
                                shape_str(x));
        }
        if (ctx.rows() != x.rows() || ctx.cols() != cfg.grouped_context_channels()) {
            throw ContractError("agap context " + shape_str(ctx) + " not aligned with data " + shape_str(x));
        }
    }

    FlowOutput forward(Graph& g, ParameterStore& store, Var x, Var ctx, int batch = 1) const {
        check_shapes(x.value(), ctx.value(), batch);
        const Eigen::Index steps = x.rows() / batch;
        const auto shift = shift_in_time_index(steps, batch);
        const SplineShape shape = cfg.spline_shape();
        const Eigen::Index dims = cfg.data_channels();
        Var h = x;
        Var logdet = g.constant(Mat::Zero(x.rows(), 1));
        for (int k = 0; k < cfg.steps(); ++k) {
            const bool reversed = k % 2 == 1;
            Var in = reversed ? op::reverse_time(h, batch) : h;
            Var c = reversed ? op::reverse_time(ctx, batch) : ctx;
            Var prev = op::gather_rows(in, shift);
            Var h1 = recurrent_scan(g, store, lstm_data(k), prev, batch);
            Var h2 = recurrent_scan(g, store, lstm_context(k), op::concat_cols({h1, c}), batch);
            Var p = dense_apply(g, store, layer_out(k), dense_apply(g, store, layer_proj(k), h2));
            Var out, ld;
            if (cfg.couplings[static_cast<std::size_t>(k)] == CouplingKind::affine) {
                // z = (x - b) * exp(-s)
                Var s = op::slice_cols(p, 0, dims);
                Var b = op::slice_cols(p, dims, dims);
                out = op::mul(op::sub(in, b), op::exp(op::neg(s)));
                ld = op::neg(op::sum_cols(s));
            } else {
                std::tie(out, ld) = detail::coupling_forward(CouplingKind::spline, in, p, shape);
            }
            if (reversed) {
                out = op::reverse_time(out, batch);
                ld = op::reverse_time(ld, batch);
            }
            h = out;
            logdet = op::add(logdet, ld);
        }
        return {h, logdet};
    }

    // Sequential inversion: frame t of each step is recovered after frames < t.
    Mat inverse(const ParameterStore& store, const Mat& z, const Mat& ctx, int batch = 1) const {
        check_shapes(z, ctx, batch);
        const Eigen::Index steps = z.rows() / batch;
        const Eigen::Index dims = cfg.data_channels();
        const SplineShape shape = cfg.spline_shape();
        Mat h = z;
        for (int k = cfg.steps(); k-- > 0;) {
            const bool reversed = k % 2 == 1;
            const Mat target = reversed ? reverse_time_batched(h, batch) : h;
            const Mat c = reversed ? reverse_time_batched(ctx, batch) : ctx;
            const RecurrentCell cell1 = lstm_data(k), cell2 = lstm_context(k);
            const DenseLayer proj = layer_proj(k), head = layer_out(k);
            const CouplingKind kind = cfg.couplings[static_cast<std::size_t>(k)];
            Mat h1 = Mat::Zero(batch, cfg.hidden), c1 = Mat::Zero(batch, cfg.hidden);
            Mat h2 = Mat::Zero(batch, cfg.hidden), c2 = Mat::Zero(batch, cfg.hidden);
            Mat prev = Mat::Zero(batch, dims);
            Mat x(target.rows(), dims);
            Mat in2(batch, cfg.hidden + ctx.cols());
            for (Eigen::Index t = 0; t < steps; ++t) {
                lstm_cell_step(store, cell1, prev, h1, c1);
                in2 << h1, c.middleRows(t * batch, batch);
                lstm_cell_step(store, cell2, in2, h2, c2);
                const Mat p = dense_plain(store, head, dense_plain(store, proj, h2));
                const Mat y_t = target.middleRows(t * batch, batch);
                Mat x_t;
                if (kind == CouplingKind::affine) {
                    const Mat s = p.leftCols(dims);
                    const Mat b = p.middleCols(dims, dims);
                    x_t = y_t.cwiseProduct(Mat(s.array().exp().matrix())) + b;
                } else {
                    x_t = detail::coupling_inverse(CouplingKind::spline, y_t, p, shape);
                }
                if (!all_finite(x_t)) {
                    throw NumericError("agap inverse step " + std::to_string(k) + ": non-finite value at frame " +
                                       std::to_string(t));
                }
                x.middleRows(t * batch, batch) = x_t;
                prev = x_t;
            }
            h = reversed ? reverse_time_batched(x, batch) : x;
        }
        return h;
    }
};

}  // namespace pflow
