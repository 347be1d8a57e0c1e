#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "prosodyflow/dcore/graph.hpp"

namespace pflow {

enum class Activation { identity, tanh, sigmoid, relu };

inline Var activate(Var x, Activation act) {
    switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return op::tanh(x);
    case Activation::sigmoid: return op::sigmoid(x);
    case Activation::relu: return op::relu(x);
    }
    return x;
}

// y = act(x W^T + b); parameters live in a ParameterStore under
// "<name>.weight" [out x in] and "<name>.bias" [1 x out].
struct DenseLayer {
    std::string name;
    int in = 0;
    int out = 0;
    Activation activation = Activation::identity;

    std::string weight_name() const { return name + ".weight"; }
    std::string bias_name() const { return name + ".bias"; }

    // Uniform in +-sqrt(1/fan_in); zero_init gives an all-zero layer, used for
    // predictor heads so that a fresh flow starts as the identity.
    template <class Rng>
    void init(ParameterStore& store, Rng& rng, bool zero_init = false) const {
        if (in <= 0 || out <= 0) throw ConfigError("dense layer '" + name + "' needs positive sizes");
        Mat w = Mat::Zero(out, in);
        Mat b = Mat::Zero(1, out);
        if (!zero_init) {
            const double bound = std::sqrt(1.0 / in);
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
            for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
        }
        store.add(weight_name(), std::move(w));
        store.add(bias_name(), std::move(b));
    }
};

inline Var dense_apply(Graph& g, ParameterStore& store, const DenseLayer& layer, Var x) {
    if (x.cols() != layer.in) {
        throw DimensionError("dense '" + layer.name + "': input has " + std::to_string(x.cols()) +
                             " channels, layer expects " + std::to_string(layer.in));
    }
    Var w = g.param(store, layer.weight_name());
    Var b = g.param(store, layer.bias_name());
    return activate(op::add_row(op::matmul_t(x, w), b), layer.activation);
}

// Long short-term memory cell, gate order (input, forget, cell, output).
// "<name>.w_ih" [4H x in], "<name>.w_hh" [4H x H], "<name>.bias" [1 x 4H].
struct RecurrentCell {
    std::string name;
    int input_size = 0;
    int hidden_size = 0;

    std::string w_ih_name() const { return name + ".w_ih"; }
    std::string w_hh_name() const { return name + ".w_hh"; }
    std::string bias_name() const { return name + ".bias"; }

    template <class Rng>
    void init(ParameterStore& store, Rng& rng) const {
        if (input_size <= 0 || hidden_size <= 0) throw ConfigError("recurrent cell '" + name + "' needs positive sizes");
        const int h = hidden_size;
        const double bound = std::sqrt(1.0 / h);
        std::uniform_real_distribution<double> u(-bound, bound);
        Mat wih(4 * h, input_size), whh(4 * h, h);
        for (Eigen::Index i = 0; i < wih.size(); ++i) wih.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < whh.size(); ++i) whh.data()[i] = u(rng);
        Mat b = Mat::Zero(1, 4 * h);
        b.middleCols(h, h).setConstant(1.0);  // forget gate
        store.add(w_ih_name(), std::move(wih));
        store.add(w_hh_name(), std::move(whh));
        store.add(bias_name(), std::move(b));
    }
};

namespace detail {

// One LSTM step for a batch of rows. Writes the post-activation gates into
// `gates` ([B x 4H], order i f g o) when provided.
inline void lstm_step(const Mat& x, const Mat& w_ih, const Mat& w_hh, const Mat& bias, Mat& h, Mat& c,
                      Mat* gates = nullptr) {
    const Eigen::Index hs = h.cols();
    Mat a = x * w_ih.transpose() + h * w_hh.transpose();
    a.rowwise() += bias.row(0);
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        for (Eigen::Index j = 0; j < hs; ++j) {
            const double i_g = op::sigmoid_scalar(a(r, j));
            const double f_g = op::sigmoid_scalar(a(r, hs + j));
            const double g_g = std::tanh(a(r, 2 * hs + j));
            const double o_g = op::sigmoid_scalar(a(r, 3 * hs + j));
            const double cn = f_g * c(r, j) + i_g * g_g;
            c(r, j) = cn;
            h(r, j) = o_g * std::tanh(cn);
            if (gates) {
                (*gates)(r, j) = i_g;
                (*gates)(r, hs + j) = f_g;
                (*gates)(r, 2 * hs + j) = g_g;
                (*gates)(r, 3 * hs + j) = o_g;
            }
        }
    }
}

}  // namespace detail

// Plain (tape-free) single step, used by sequential sampling.
inline void lstm_cell_step(const ParameterStore& store, const RecurrentCell& cell, const Mat& x, Mat& h, Mat& c) {
    detail::lstm_step(x, store.at(cell.w_ih_name()).value, store.at(cell.w_hh_name()).value,
                      store.at(cell.bias_name()).value, h, c);
}

namespace op {

// Runs an LSTM over a time-major batch: row t*batch + b of `inputs` is frame t
// of sequence b. Returns hidden states in the same layout. The backward pass
// is hand-written backpropagation through time.
inline Var lstm_scan(Var inputs, Var w_ih, Var w_hh, Var bias, Var h0, Var c0, int batch) {
    const Mat& xv = inputs.value();
    const Eigen::Index hs = w_hh.cols();
    if (batch <= 0 || xv.rows() % batch != 0) throw DimensionError("lstm_scan: rows not divisible by batch");
    const Eigen::Index steps = xv.rows() / batch;
    if (steps == 0) throw EmptySequenceError("lstm_scan over an empty sequence");
    if (w_ih.cols() != xv.cols() || w_ih.rows() != 4 * hs || w_hh.rows() != 4 * hs || bias.cols() != 4 * hs) {
        throw DimensionError("lstm_scan: parameter shapes do not match input " + shape_str(xv));
    }
    if (h0.rows() != batch || h0.cols() != hs || c0.rows() != batch || c0.cols() != hs) {
        throw DimensionError("lstm_scan: initial state must be [batch x hidden]");
    }
    detail::check_inputs({inputs}, "lstm_scan");

    struct Cache {
        Mat gates;   // [L*B x 4H]
        Mat cells;   // [L*B x H]
        Mat hidden;  // [L*B x H]
    };
    auto cache = std::make_shared<Cache>();
    cache->gates.resize(xv.rows(), 4 * hs);
    cache->cells.resize(xv.rows(), hs);
    cache->hidden.resize(xv.rows(), hs);

    Mat h = h0.value();
    Mat c = c0.value();
    Mat gates(batch, 4 * hs);
    for (Eigen::Index t = 0; t < steps; ++t) {
        Mat x_t = xv.middleRows(t * batch, batch);
        pflow::detail::lstm_step(x_t, w_ih.value(), w_hh.value(), bias.value(), h, c, &gates);
        cache->gates.middleRows(t * batch, batch) = gates;
        cache->cells.middleRows(t * batch, batch) = c;
        cache->hidden.middleRows(t * batch, batch) = h;
    }

    Graph& g = *inputs.graph;
    Mat out = cache->hidden;
    return g.make(std::move(out), {inputs, w_ih, w_hh, bias, h0, c0},
                  [=](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        const Mat& x = inputs.value();
        const Mat& wih = w_ih.value();
        const Mat& whh = w_hh.value();
        Mat d_wih = Mat::Zero(wih.rows(), wih.cols());
        Mat d_whh = Mat::Zero(whh.rows(), whh.cols());
        Mat d_b = Mat::Zero(1, 4 * hs);
        Mat d_x = Mat::Zero(x.rows(), x.cols());
        Mat dh_next = Mat::Zero(batch, hs);
        Mat dc_next = Mat::Zero(batch, hs);
        Mat da(batch, 4 * hs);
        for (Eigen::Index t = steps; t-- > 0;) {
            const Eigen::Index r0 = t * batch;
            for (Eigen::Index r = 0; r < batch; ++r) {
                for (Eigen::Index j = 0; j < hs; ++j) {
                    const double i_g = cache->gates(r0 + r, j);
                    const double f_g = cache->gates(r0 + r, hs + j);
                    const double g_g = cache->gates(r0 + r, 2 * hs + j);
                    const double o_g = cache->gates(r0 + r, 3 * hs + j);
                    const double c_t = cache->cells(r0 + r, j);
                    const double c_prev = t > 0 ? cache->cells(r0 - batch + r, j) : c0.value()(r, j);
                    const double tc = std::tanh(c_t);
                    const double dh = go(r0 + r, j) + dh_next(r, j);
                    const double d_o = dh * tc;
                    const double dc = dc_next(r, j) + dh * o_g * (1.0 - tc * tc);
                    const double d_i = dc * g_g;
                    const double d_g = dc * i_g;
                    const double d_f = dc * c_prev;
                    dc_next(r, j) = dc * f_g;
                    da(r, j) = d_i * i_g * (1.0 - i_g);
                    da(r, hs + j) = d_f * f_g * (1.0 - f_g);
                    da(r, 2 * hs + j) = d_g * (1.0 - g_g * g_g);
                    da(r, 3 * hs + j) = d_o * o_g * (1.0 - o_g);
                }
            }
            const Mat x_t = x.middleRows(r0, batch);
            const Mat h_prev = t > 0 ? Mat(cache->hidden.middleRows(r0 - batch, batch)) : h0.value();
            d_wih.noalias() += da.transpose() * x_t;
            d_whh.noalias() += da.transpose() * h_prev;
            d_b += da.colwise().sum();
            d_x.middleRows(r0, batch).noalias() = da * wih;
            dh_next = da * whh;
        }
        g.accumulate(inputs, d_x);
        g.accumulate(w_ih, d_wih);
        g.accumulate(w_hh, d_whh);
        g.accumulate(bias, d_b);
        g.accumulate(h0, dh_next);
        g.accumulate(c0, dc_next);
    }, "lstm_scan");
}

}  // namespace op

// recurrent_scan over a single sequence [T x in] or a time-major batch.
inline Var recurrent_scan(Graph& g, ParameterStore& store, const RecurrentCell& cell, Var inputs, Var h0, Var c0,
                          int batch = 1) {
    if (inputs.rows() == 0) throw EmptySequenceError("recurrent_scan needs T >= 1");
    return op::lstm_scan(inputs, g.param(store, cell.w_ih_name()), g.param(store, cell.w_hh_name()),
                         g.param(store, cell.bias_name()), h0, c0, batch);
}

inline Var recurrent_scan(Graph& g, ParameterStore& store, const RecurrentCell& cell, Var inputs, int batch = 1) {
    Var h0 = g.constant(Mat::Zero(batch, cell.hidden_size));
    Var c0 = g.constant(Mat::Zero(batch, cell.hidden_size));
    return recurrent_scan(g, store, cell, inputs, h0, c0, batch);
}

}  // namespace pflow
