#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "prosodyflow/dcore/graph.hpp"

namespace pflow {

using LossBuilder = std::function<Var(Graph&, ParameterStore&)>;

struct GradCheckOptions {
    double eps = 1e-6;
    // 0 checks every element; otherwise a seeded subset of this size per parameter.
    std::size_t max_per_param = 0;
    std::uint64_t seed = 0;
    // Denominator floor of the relative error. Central differences on an O(1)
    // loss resolve gradients only to ~1e-12 absolute, so full-model checks
    // raise this to compare near-zero gradients in absolute terms.
    double abs_floor = 1e-12;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    Eigen::Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    // Elements whose +-eps perturbation changed the kink signature.
    std::size_t skipped = 0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-12) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares tape gradients against central differences, one parameter element
// at a time.
inline GradCheckReport grad_check(const LossBuilder& f, ParameterStore& params, const GradCheckOptions& opts = {}) {
    params.zero_grad();
    std::vector<std::uint8_t> base_sig;
    {
        Graph g;
        Var loss = f(g, params);
        if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is not finite");
        g.backward(loss);
        base_sig = g.kink_signature();
    }

    auto evaluate = [&](std::vector<std::uint8_t>& sig) {
        Graph g(false);
        Var loss = f(g, params);
        const double v = loss.item();
        if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite under perturbation");
        sig = g.kink_signature();
        return v;
    };

    GradCheckReport report;
    std::mt19937_64 rng(opts.seed);
    std::vector<std::uint8_t> sig_plus, sig_minus;
    for (auto& [name, p] : params) {
        const Mat analytic = p.grad;
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(p.value.size()));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        if (opts.max_per_param > 0 && idx.size() > opts.max_per_param) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_per_param);
            std::sort(idx.begin(), idx.end());
        }
        for (Eigen::Index i : idx) {
            double& slot = p.value.data()[i];
            const double orig = slot;
            slot = orig + opts.eps;
            const double fp = evaluate(sig_plus);
            slot = orig - opts.eps;
            const double fm = evaluate(sig_minus);
            slot = orig;
            if (sig_plus != base_sig || sig_minus != base_sig) {
                report.skipped += 1;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * opts.eps);
            const double a = analytic.data()[i];
            const double err = relative_error(a, numeric, opts.abs_floor);
            report.checked += 1;
            if (err >= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    params.zero_grad();
    return report;
}

// Checks d(sum of f)/d(input) for a free-standing tensor function; used for
// primitive-op tests where there is no parameter store.
inline GradCheckReport grad_check_input(const std::function<Var(Graph&, Var)>& f, const Mat& x0,
                                        double eps = 1e-6) {
    Mat analytic;
    std::vector<std::uint8_t> base_sig;
    {
        Graph g;
        Var x = g.leaf(x0);
        Var loss = op::sum(f(g, x));
        g.backward(loss);
        analytic = g.grad(x);
        base_sig = g.kink_signature();
    }
    GradCheckReport report;
    Mat x = x0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        auto eval = [&](double v, std::vector<std::uint8_t>& sig) {
            x.data()[i] = v;
            Graph g(false);
            const double out = op::sum(f(g, g.constant(x))).item();
            sig = g.kink_signature();
            return out;
        };
        std::vector<std::uint8_t> sp, sm;
        const double fp = eval(x0.data()[i] + eps, sp);
        const double fm = eval(x0.data()[i] - eps, sm);
        x.data()[i] = x0.data()[i];
        if (sp != base_sig || sm != base_sig) {
            report.skipped += 1;
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = relative_error(analytic.data()[i], numeric);
        report.checked += 1;
        if (err >= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic.data()[i];
            report.worst_numeric = numeric;
        }
    }
    return report;
}

}  // namespace pflow
