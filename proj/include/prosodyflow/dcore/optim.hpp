#pragma once

#include <cmath>
#include <map>
#include <string>

#include "prosodyflow/dcore/tensor.hpp"

namespace pflow {

struct AdamMoments {
    Mat m;
    Mat v;
};

// Adam state: per-parameter first/second moments and a monotone step count.
struct OptimizerState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::map<std::string, AdamMoments> moments;
};

inline double global_grad_norm(const ParameterStore& params) {
    double s = 0.0;
    for (const auto& [_, p] : params) s += p.grad.squaredNorm();
    return std::sqrt(s);
}

// Rescales all gradients so that their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParameterStore& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [_, p] : params) p.grad *= s;
    }
    return norm;
}

inline void optimizer_step(OptimizerState& state, ParameterStore& params) {
    if (!(state.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    for (const auto& [name, p] : params) {
        if (!all_finite(p.grad)) throw NumericError("non-finite gradient for parameter '" + name + "'");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        auto it = state.moments.find(name);
        if (it == state.moments.end()) {
            it = state.moments.emplace(name, AdamMoments{Mat::Zero(p.value.rows(), p.value.cols()),
                                                         Mat::Zero(p.value.rows(), p.value.cols())}).first;
        }
        AdamMoments& mo = it->second;
        if (mo.m.rows() != p.value.rows() || mo.m.cols() != p.value.cols()) {
            throw DimensionError("optimizer moments for '" + name + "' do not match parameter shape");
        }
        mo.m = state.beta1 * mo.m + (1.0 - state.beta1) * p.grad;
        mo.v = state.beta2 * mo.v + (1.0 - state.beta2) * p.grad.cwiseProduct(p.grad);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            const double mh = mo.m.data()[i] / bc1;
            const double vh = mo.v.data()[i] / bc2;
            p.value.data()[i] -= state.learning_rate * mh / (std::sqrt(vh) + state.eps);
        }
    }
}

}  // namespace pflow
