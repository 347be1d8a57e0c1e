#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosodyflow/dcore/gradcheck.hpp"
#include "prosodyflow/flows/pipeline.hpp"

namespace pflow {

// One verified property: the measured value must stay below the tolerance.
struct CheckResult {
    std::string suite;
    std::string name;
    std::string metric;
    double value = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    double seconds = 0.0;
};

struct CheckOptions {
    std::uint64_t seed = 0;
    int inputs = 10000;            // random inputs per round-trip check
    int parameterizations = 100;   // random parameter sets per log-det check
    int gradient_models = 3;       // random models per gradient check
    bool flip_spline_logdet = false;  // fault injection: negate the spline log-det
};

namespace checks {

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

// log|det| of the central-difference Jacobian of f at x (all entries).
inline double numeric_log_abs_det(const std::function<Mat(const Mat&)>& f, const Mat& x, double h = 1e-6) {
    const Eigen::Index n = x.size();
    Eigen::MatrixXd jac(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Mat xp = x, xm = x;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        const Mat yp = f(xp), ym = f(xm);
        for (Eigen::Index j = 0; j < n; ++j) jac(j, i) = (yp.data()[j] - ym.data()[j]) / (2 * h);
    }
    return std::log(std::abs(jac.determinant()));
}

inline double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Small model sizes keep finite differences cheap.
inline FlowConfig check_config(ModelKind kind, const std::string& mode) {
    FlowConfig c = FlowConfig::preset(kind, FeatureKind::f0, AuxKind::diff, mode);
    c.vocab_size = 6;
    c.context_channels = 3;
    c.hidden = 6;
    c.classifier_hidden = 4;
    return c;
}

inline void perturb_heads(ParameterStore& store, std::mt19937_64& rng, double scale) {
    for (auto& [name, p] : store) {
        if (name.find(".out.") != std::string::npos) p.value = random_mat(p.value.rows(), p.value.cols(), rng, scale);
    }
}

inline FlowModel random_model(ModelKind kind, const std::string& mode, std::mt19937_64& rng, double head_scale) {
    FlowModel m = FlowModel::create(check_config(kind, mode), rng);
    perturb_heads(m.params, rng, head_scale);
    return m;
}

inline Mat invertible_matrix(int n, std::mt19937_64& rng) {
    Mat w = random_orthogonal(n, rng);
    const Mat s = random_mat(1, n, rng, 0.3);
    for (int c = 0; c < n; ++c) w.col(c) *= std::exp(s(0, c));
    return w;
}

template <class F>
CheckResult timed(const std::string& suite, const std::string& name, const std::string& metric, double tol, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    r.suite = suite;
    r.name = name;
    r.metric = metric;
    r.tolerance = tol;
    r.value = f();
    r.passed = std::isfinite(r.value) && r.value < tol;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace checks

// inverse(forward(x)) == x over random inputs, per layer and per model.
inline std::vector<CheckResult> run_invertibility_checks(const CheckOptions& o) {
    using namespace checks;
    std::vector<CheckResult> out;
    const Eigen::Index n = o.inputs;
    const std::string suite = "invertibility";
    const std::string metric = "max |inverse(forward(x)) - x|";
    out.push_back(timed(suite, "affine", metric, 1e-9, [&] {
        std::mt19937_64 rng(o.seed + 1);
        const Mat x = random_mat(n, 4, rng, 2.0);
        AffineParams p{Mat(random_mat(n, 4, rng, 0.5).array().exp()), random_mat(n, 4, rng)};
        return max_abs_diff(affine_inverse(affine_forward(x, p).y, p), x);
    }));
    out.push_back(timed(suite, "spline", metric, 1e-9, [&] {
        std::mt19937_64 rng(o.seed + 2);
        const Mat x = random_mat(n, 4, rng, 2.0);  // includes out-of-bound values
        SplineParams p{SplineShape{3.0, 24}, random_mat(4, 24, rng), random_mat(4, 25, rng)};
        return max_abs_diff(spline_inverse(spline_forward(x, p).y, p), x);
    }));
    out.push_back(timed(suite, "invconv", metric, 1e-9, [&] {
        std::mt19937_64 rng(o.seed + 3);
        const Mat x = random_mat(n, 4, rng, 2.0);
        const InvConvParams p{invertible_matrix(4, rng)};
        return max_abs_diff(invconv_inverse(invconv_forward(x, p).y, p), x);
    }));
    out.push_back(timed(suite, "reverse", metric, 1e-9, [&] {
        std::mt19937_64 rng(o.seed + 4);
        const Mat x = random_mat(n, 4, rng);
        return max_abs_diff(reverse_time_batched(reverse_time_batched(x, 10), 10), x);
    }));
    for (const std::string mode : {"affine", "spline", "hybrid"}) {
        out.push_back(timed(suite, "bgap_" + mode, metric, 1e-5, [&] {
            std::mt19937_64 rng(o.seed + 5);
            FlowModel m = random_model(ModelKind::bgap, mode, rng, 0.3);
            const Mat x = random_mat(n, m.cfg.data_channels(), rng);
            const Mat ctx = random_mat(n, m.cfg.grouped_context_channels(), rng);
            Graph g(false);
            const Mat z = m.forward(g, g.constant(x), g.constant(ctx)).z.value();
            return max_abs_diff(m.inverse(z, ctx), x);
        }));
        if (mode == "hybrid") continue;
        out.push_back(timed(suite, "agap_" + mode, metric, 1e-5, [&] {
            std::mt19937_64 rng(o.seed + 6);
            FlowModel m = random_model(ModelKind::agap, mode, rng, 0.3);
            const int batch = 50;
            const Eigen::Index rows = std::max<Eigen::Index>(batch, n / batch * batch);
            const Mat x = random_mat(rows, m.cfg.data_channels(), rng);
            const Mat ctx = random_mat(rows, m.cfg.grouped_context_channels(), rng);
            Graph g(false);
            const Mat z = m.forward(g, g.constant(x), g.constant(ctx), batch).z.value();
            return max_abs_diff(m.inverse(z, ctx, batch), x);
        }));
    }
    return out;
}

// exp(logdet) against the determinant of a finite-difference Jacobian.
inline std::vector<CheckResult> run_logdet_checks(const CheckOptions& o) {
    using namespace checks;
    std::vector<CheckResult> out;
    const std::string suite = "logdet";
    const std::string metric = "max relative error of exp(logdet) vs |det J_fd|";
    auto rel = [](double ld, double num) { return std::abs(std::exp(ld - num) - 1.0); };

    out.push_back(timed(suite, "affine", metric, 1e-6, [&] {
        std::mt19937_64 rng(o.seed + 11);
        double worst = 0.0;
        for (int k = 0; k < o.parameterizations; ++k) {
            const Mat x = random_mat(2, 4, rng), s = random_mat(2, 4, rng, 0.5), b = random_mat(2, 4, rng);
            auto f = [&](const Mat& xi) {
                Graph g(false);
                return Mat(op::affine(g.constant(xi), g.constant(s), g.constant(b)).first.value());
            };
            Graph g(false);
            const double ld = op::affine(g.constant(x), g.constant(s), g.constant(b)).second.value().sum();
            worst = std::max(worst, rel(ld, numeric_log_abs_det(f, x)));
        }
        return worst;
    }));
    out.push_back(timed(suite, "spline", metric, 1e-4, [&] {
        std::mt19937_64 rng(o.seed + 12);
        const SplineShape shape{3.0, 24};
        double worst = 0.0;
        for (int k = 0; k < o.parameterizations; ++k) {
            const Mat x = random_mat(1, 8, rng, 1.8);
            const Mat w = random_mat(1, 8 * 24, rng), v = random_mat(1, 8 * 25, rng);
            auto f = [&](const Mat& xi) {
                Graph g(false);
                return Mat(op::spline(g.constant(xi), g.constant(w), g.constant(v), shape).first.value());
            };
            Graph g(false);
            double ld = op::spline(g.constant(x), g.constant(w), g.constant(v), shape).second.value().sum();
            if (o.flip_spline_logdet) ld = -ld;
            worst = std::max(worst, rel(ld, numeric_log_abs_det(f, x)));
        }
        return worst;
    }));
    out.push_back(timed(suite, "invconv", metric, 1e-6, [&] {
        std::mt19937_64 rng(o.seed + 13);
        double worst = 0.0;
        for (int k = 0; k < o.parameterizations; ++k) {
            const Mat x = random_mat(1, 8, rng), w = invertible_matrix(8, rng);
            auto f = [&](const Mat& xi) {
                Graph g(false);
                return Mat(op::invconv(g.constant(xi), g.constant(w)).first.value());
            };
            Graph g(false);
            const double ld = op::invconv(g.constant(x), g.constant(w)).second.value().sum();
            worst = std::max(worst, rel(ld, numeric_log_abs_det(f, x)));
        }
        return worst;
    }));
    for (ModelKind kind : {ModelKind::bgap, ModelKind::agap}) {
        out.push_back(timed(suite, to_string(kind) + "_spline", metric, 1e-4, [&] {
            std::mt19937_64 rng(o.seed + 14);
            double worst = 0.0;
            for (int k = 0; k < std::max(1, o.parameterizations / 10); ++k) {
                FlowModel m = random_model(kind, "spline", rng, 0.3);
                const Mat x = random_mat(2, m.cfg.data_channels(), rng, 0.7);  // 8 dims
                const Mat ctx = random_mat(2, m.cfg.grouped_context_channels(), rng);
                auto f = [&](const Mat& xi) {
                    Graph g(false);
                    return Mat(m.forward(g, g.constant(xi), g.constant(ctx)).z.value());
                };
                Graph g(false);
                const double ld = m.forward(g, g.constant(x), g.constant(ctx)).logdet.value().sum();
                worst = std::max(worst, rel(ld, numeric_log_abs_det(f, x)));
            }
            return worst;
        }));
    }
    return out;
}

// NLL parameter gradients against central differences on in-bound batches.
inline std::vector<CheckResult> run_gradient_checks(const CheckOptions& o) {
    using namespace checks;
    std::vector<CheckResult> out;
    for (ModelKind kind : {ModelKind::bgap, ModelKind::agap}) {
        for (const std::string mode : {"affine", "spline"}) {
            out.push_back(timed("gradient", to_string(kind) + "_" + mode, "max relative gradient error", 1e-4, [&] {
                std::mt19937_64 rng(o.seed + 21);
                double worst = 0.0;
                for (int k = 0; k < o.gradient_models; ++k) {
                    FlowModel m = random_model(kind, mode, rng, 0.3);
                    const int batch = 2;
                    const Mat x = random_mat(3 * batch, m.cfg.data_channels(), rng, 0.6);
                    const Mat ctx = random_mat(3 * batch, m.cfg.grouped_context_channels(), rng);
                    auto loss = [&](Graph& g, ParameterStore& s) {
                        FlowOutput fo = kind == ModelKind::bgap
                                            ? BgapModel(m.cfg).forward(g, s, g.constant(x), g.constant(ctx))
                                            : AgapModel(m.cfg).forward(g, s, g.constant(x), g.constant(ctx), batch);
                        return flow_nll(fo);
                    };
                    GradCheckOptions opts;
                    opts.eps = 1e-4;
                    opts.abs_floor = 1e-6;
                    opts.max_per_param = 8;
                    opts.seed = o.seed + static_cast<std::uint64_t>(k);
                    worst = std::max(worst, grad_check(loss, m.params, opts).max_rel_error);
                }
                return worst;
            }));
        }
    }
    return out;
}

inline nlohmann::json checks_to_json(const std::vector<CheckResult>& results) {
    nlohmann::json arr = nlohmann::json::array();
    bool all = true;
    for (const auto& r : results) {
        all = all && r.passed;
        arr.push_back({{"suite", r.suite},
                       {"name", r.name},
                       {"metric", r.metric},
                       {"value", r.value},
                       {"tolerance", r.tolerance},
                       {"passed", r.passed},
                       {"seconds", r.seconds}});
    }
    return {{"passed", all}, {"checks", arr}};
}

}  // namespace pflow
