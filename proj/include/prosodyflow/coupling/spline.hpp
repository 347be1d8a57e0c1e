#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <utility>

#include "prosodyflow/dcore/graph.hpp"

namespace pflow {

// Monotone piecewise-quadratic map on [-B, B]: the integral of a positive
// piecewise-linear density, normalized so the map fixes both endpoints.
// Outside the bound the map is the identity with zero log-det.
//
// Normalization (per transformed dimension):
//   widths   W_k = 2B * (m + (1 - K m) softmax(w)_k)           k < K
//   vertices V_j = (softplus(v_j) + 1e-3) * 2B / A              j <= K
//   A        = sum_k W_k (s_k + s_{k+1}) / 2
// Uniform raw parameters give W_k = 2B/K and V_j = 1, i.e. the identity.
// The floor m (fraction of the interval per bin) keeps bins from collapsing.
inline constexpr int kMaxSplineBins = 128;
inline constexpr double kSplineVertexFloor = 1e-3;
inline constexpr double kDefaultMinBinFraction = 1e-3;
inline constexpr double kDegenerateBinWidth = 1e-6;

struct SplineShape {
    double bound = 3.0;
    int bins = 24;
    double min_bin_fraction = kDefaultMinBinFraction;

    void validate() const {
        if (!(bound > 0.0)) throw ParameterizationError("spline bound must be positive");
        if (bins < 1 || bins > kMaxSplineBins) throw ParameterizationError("spline bins out of range [1, 128]");
        if (min_bin_fraction < 0.0 || min_bin_fraction * bins >= 1.0) {
            throw ParameterizationError("min_bin_fraction * bins must be < 1");
        }
    }
    int widths_per_dim() const { return bins; }
    int vertices_per_dim() const { return bins + 1; }
    int params_per_dim() const { return 2 * bins + 1; }
};

// Normalized knots of one spline; lives on the stack.
struct SplineKnots {
    int bins = 0;
    double bound = 0.0;
    double area = 0.0;
    std::array<double, kMaxSplineBins> softmax{};
    std::array<double, kMaxSplineBins> width{};
    std::array<double, kMaxSplineBins + 1> raw_vertex{};
    std::array<double, kMaxSplineBins + 1> vertex{};
    std::array<double, kMaxSplineBins + 1> x_knot{};
    std::array<double, kMaxSplineBins + 1> y_knot{};
};

inline void spline_normalize(const double* raw_w, const double* raw_v, const SplineShape& shape, SplineKnots& kn) {
    const int k_bins = shape.bins;
    const double span = 2.0 * shape.bound;
    kn.bins = k_bins;
    kn.bound = shape.bound;

    double mx = raw_w[0];
    for (int k = 1; k < k_bins; ++k) mx = std::max(mx, raw_w[k]);
    double z = 0.0;
    for (int k = 0; k < k_bins; ++k) {
        kn.softmax[k] = std::exp(raw_w[k] - mx);
        z += kn.softmax[k];
    }
    const double m = shape.min_bin_fraction;
    for (int k = 0; k < k_bins; ++k) {
        kn.softmax[k] /= z;
        kn.width[k] = span * (m + (1.0 - k_bins * m) * kn.softmax[k]);
        if (!(kn.width[k] >= kDegenerateBinWidth)) {
            throw ParameterizationError("spline bin width collapsed below 1e-6");
        }
    }
    for (int j = 0; j <= k_bins; ++j) kn.raw_vertex[j] = op::softplus_scalar(raw_v[j]) + kSplineVertexFloor;
    double area = 0.0;
    for (int k = 0; k < k_bins; ++k) area += kn.width[k] * 0.5 * (kn.raw_vertex[k] + kn.raw_vertex[k + 1]);
    kn.area = area;
    for (int j = 0; j <= k_bins; ++j) kn.vertex[j] = kn.raw_vertex[j] * span / area;

    kn.x_knot[0] = -shape.bound;
    kn.y_knot[0] = -shape.bound;
    for (int k = 0; k < k_bins; ++k) {
        kn.x_knot[k + 1] = kn.x_knot[k] + kn.width[k];
        kn.y_knot[k + 1] = kn.y_knot[k] + kn.width[k] * 0.5 * (kn.vertex[k] + kn.vertex[k + 1]);
    }
    // Pin the right edge exactly; accumulated rounding would otherwise leave
    // it a few ulps off B.
    kn.x_knot[k_bins] = shape.bound;
    kn.y_knot[k_bins] = shape.bound;
}

inline bool spline_in_bound(double x, double bound) { return x >= -bound && x <= bound; }

inline int spline_find_bin(const double* knots, int bins, double v) {
    const double* it = std::upper_bound(knots + 1, knots + bins, v);
    return static_cast<int>(it - (knots + 1));
}

// Forward map of one value; `logdet` receives log of the density at x.
inline double spline_eval(const SplineKnots& kn, double x, double& logdet) {
    if (!spline_in_bound(x, kn.bound)) {
        logdet = 0.0;
        return x;
    }
    const int k = spline_find_bin(kn.x_knot.data(), kn.bins, x);
    const double w = kn.width[k];
    const double alpha = std::clamp((x - kn.x_knot[k]) / w, 0.0, 1.0);
    const double vk = kn.vertex[k];
    const double d = kn.vertex[k + 1] - vk;
    logdet = std::log(vk + d * alpha);
    return kn.y_knot[k] + w * (vk * alpha + 0.5 * d * alpha * alpha);
}

// Inverse map of one value; `logdet` receives the forward log-density at the
// recovered x (so inverse log-det is its negation).
inline double spline_invert(const SplineKnots& kn, double y, double& logdet) {
    if (!std::isfinite(y)) throw NumericError("spline inverse of non-finite value");
    if (!spline_in_bound(y, kn.bound)) {
        logdet = 0.0;
        return y;
    }
    const int k = spline_find_bin(kn.y_knot.data(), kn.bins, y);
    const double w = kn.width[k];
    const double vk = kn.vertex[k];
    const double d = kn.vertex[k + 1] - vk;
    // w*d/2 a^2 + w*vk a - (y - y_k) = 0, solved with the cancellation-free root.
    const double qa = 0.5 * w * d;
    const double qb = w * vk;
    const double qc = kn.y_knot[k] - y;
    const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
    const double alpha = std::clamp(-2.0 * qc / (qb + std::sqrt(disc)), 0.0, 1.0);
    logdet = std::log(vk + d * alpha);
    return kn.x_knot[k] + alpha * w;
}

// Backpropagates (gy, gl) for one element, where gl is the gradient of the
// element's log-det. Adds raw-parameter gradients into g_raw_w / g_raw_v and
// returns dL/dx.
inline double spline_backward(const SplineKnots& kn, const SplineShape& shape, const double* raw_v, double x,
                              double gy, double gl, double* g_raw_w, double* g_raw_v) {
    if (!spline_in_bound(x, kn.bound)) return gy;
    const int nb = kn.bins;
    const int k = spline_find_bin(kn.x_knot.data(), nb, x);
    const double w = kn.width[k];
    const double alpha = std::clamp((x - kn.x_knot[k]) / w, 0.0, 1.0);
    const double vk = kn.vertex[k];
    const double vk1 = kn.vertex[k + 1];
    const double d = vk1 - vk;
    const double rho = vk + d * alpha;

    const double g_rho = gl / rho;
    const double g_alpha = gy * w * rho + g_rho * d;
    const double gx = g_alpha / w;

    std::array<double, kMaxSplineBins> g_w{};
    std::array<double, kMaxSplineBins + 1> g_v{};
    const double g_yk = gy;
    const double g_xk = -g_alpha / w;
    g_w[k] += gy * (vk * alpha + 0.5 * d * alpha * alpha) - g_alpha * alpha / w;
    g_v[k] += gy * w * (alpha - 0.5 * alpha * alpha) + g_rho * (1.0 - alpha);
    g_v[k + 1] += gy * w * 0.5 * alpha * alpha + g_rho * alpha;
    for (int j = 0; j < k; ++j) {
        g_w[j] += g_yk * 0.5 * (kn.vertex[j] + kn.vertex[j + 1]) + g_xk;
        g_v[j] += g_yk * 0.5 * kn.width[j];
        g_v[j + 1] += g_yk * 0.5 * kn.width[j];
    }

    const double span = 2.0 * shape.bound;
    std::array<double, kMaxSplineBins + 1> g_s{};
    double g_area = 0.0;
    for (int j = 0; j <= nb; ++j) {
        g_s[j] = g_v[j] * span / kn.area;
        g_area -= g_v[j] * kn.raw_vertex[j] * span / (kn.area * kn.area);
    }
    for (int q = 0; q < nb; ++q) {
        g_w[q] += g_area * 0.5 * (kn.raw_vertex[q] + kn.raw_vertex[q + 1]);
        g_s[q] += g_area * 0.5 * kn.width[q];
        g_s[q + 1] += g_area * 0.5 * kn.width[q];
    }
    for (int j = 0; j <= nb; ++j) g_raw_v[j] += g_s[j] * op::sigmoid_scalar(raw_v[j]);

    const double scale = span * (1.0 - nb * shape.min_bin_fraction);
    double dot = 0.0;
    for (int q = 0; q < nb; ++q) dot += kn.softmax[q] * g_w[q] * scale;
    for (int q = 0; q < nb; ++q) g_raw_w[q] += kn.softmax[q] * (g_w[q] * scale - dot);
    return gx;
}

// Per-dimension spline parameters shared by every row of the input.
struct SplineParams {
    SplineShape shape;
    Mat raw_widths;    // [D x K]
    Mat raw_vertices;  // [D x (K+1)]
};

struct TransformResult {
    Mat y;
    double logdet = 0.0;
};

namespace detail {
inline void check_spline_params(const SplineParams& p, Eigen::Index dims) {
    p.shape.validate();
    if (p.raw_widths.rows() != dims || p.raw_widths.cols() != p.shape.bins ||
        p.raw_vertices.rows() != dims || p.raw_vertices.cols() != p.shape.bins + 1) {
        throw DimensionError("spline parameters do not match input dimensionality");
    }
}
}  // namespace detail

inline TransformResult spline_forward(const Mat& x, const SplineParams& p) {
    detail::check_spline_params(p, x.cols());
    require_finite(x, "spline_forward input");
    TransformResult r{Mat(x.rows(), x.cols()), 0.0};
    SplineKnots kn;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        spline_normalize(p.raw_widths.row(c).data(), p.raw_vertices.row(c).data(), p.shape, kn);
        for (Eigen::Index t = 0; t < x.rows(); ++t) {
            double ld = 0.0;
            r.y(t, c) = spline_eval(kn, x(t, c), ld);
            r.logdet += ld;
        }
    }
    return r;
}

inline Mat spline_inverse(const Mat& y, const SplineParams& p) {
    detail::check_spline_params(p, y.cols());
    Mat x(y.rows(), y.cols());
    SplineKnots kn;
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        spline_normalize(p.raw_widths.row(c).data(), p.raw_vertices.row(c).data(), p.shape, kn);
        for (Eigen::Index t = 0; t < y.rows(); ++t) {
            double ld = 0.0;
            x(t, c) = spline_invert(kn, y(t, c), ld);
        }
    }
    return x;
}

// Row-wise parameters as emitted by a predictor: raw_w [R x D*K], raw_v
// [R x D*(K+1)]. Returns x and writes the per-row forward log-det.
inline Mat spline_inverse_rows(const Mat& y, const Mat& raw_w, const Mat& raw_v, const SplineShape& shape,
                               Mat* logdet_rows = nullptr) {
    const int nb = shape.bins;
    if (raw_w.rows() != y.rows() || raw_w.cols() != y.cols() * nb || raw_v.cols() != y.cols() * (nb + 1)) {
        throw DimensionError("spline_inverse_rows: parameter layout mismatch");
    }
    Mat x(y.rows(), y.cols());
    if (logdet_rows) *logdet_rows = Mat::Zero(y.rows(), 1);
    SplineKnots kn;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            spline_normalize(raw_w.row(r).data() + c * nb, raw_v.row(r).data() + c * (nb + 1), shape, kn);
            double ld = 0.0;
            x(r, c) = spline_invert(kn, y(r, c), ld);
            if (logdet_rows) (*logdet_rows)(r, 0) += ld;
        }
    }
    return x;
}

namespace op {

// Tape op: elementwise spline with row-wise parameters. Returns
// (y [R x D], per-row log-det [R x 1]).
inline std::pair<Var, Var> spline(Var x, Var raw_w, Var raw_v, const SplineShape& shape) {
    shape.validate();
    const Mat& xv = x.value();
    const int nb = shape.bins;
    const Eigen::Index rows = xv.rows(), dims = xv.cols();
    if (raw_w.rows() != rows || raw_w.cols() != dims * nb || raw_v.rows() != rows ||
        raw_v.cols() != dims * (nb + 1)) {
        throw DimensionError("spline: parameters " + shape_str(raw_w.value()) + "/" + shape_str(raw_v.value()) +
                             " do not match input " + shape_str(xv));
    }
    detail::check_inputs({x, raw_w, raw_v}, "spline");
    Mat y(rows, dims);
    Mat ld = Mat::Zero(rows, 1);
    Graph& g = *x.graph;
    auto& sig = g.kink_signature();
    SplineKnots kn;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < dims; ++c) {
            spline_normalize(raw_w.value().row(r).data() + c * nb, raw_v.value().row(r).data() + c * (nb + 1),
                             shape, kn);
            double l = 0.0;
            y(r, c) = spline_eval(kn, xv(r, c), l);
            ld(r, 0) += l;
            // Out of bound -> 0, otherwise 1 + bin index: FD probes must not cross a knot.
            sig.push_back(spline_in_bound(xv(r, c), shape.bound)
                              ? static_cast<std::uint8_t>(1 + spline_find_bin(kn.x_knot.data(), nb, xv(r, c)))
                              : std::uint8_t{0});
        }
    }

    // Both outputs share one backward; whichever node the tape reaches first
    // (the log-det, created second) runs it.
    auto done = std::make_shared<bool>(false);
    const SplineShape sh = shape;
    auto full_backward = [x, raw_w, raw_v, sh, nb, rows, dims](Graph& g, const Mat* gy, const Mat* gl) {
        Mat gx(rows, dims);
        Mat grw = Mat::Zero(rows, dims * nb);
        Mat grv = Mat::Zero(rows, dims * (nb + 1));
        SplineKnots kn;
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double glr = gl ? (*gl)(r, 0) : 0.0;
            for (Eigen::Index c = 0; c < dims; ++c) {
                const double* rw = raw_w.value().row(r).data() + c * nb;
                const double* rv = raw_v.value().row(r).data() + c * (nb + 1);
                spline_normalize(rw, rv, sh, kn);
                const double gyv = gy ? (*gy)(r, c) : 0.0;
                gx(r, c) = spline_backward(kn, sh, rv, x.value()(r, c), gyv, glr, grw.row(r).data() + c * nb,
                                           grv.row(r).data() + c * (nb + 1));
            }
        }
        g.accumulate(x, gx);
        g.accumulate(raw_w, grw);
        g.accumulate(raw_v, grv);
    };

    Var y_var = g.make(std::move(y), {x, raw_w, raw_v}, [done, full_backward](Graph& g, std::size_t self) {
        if (*done) {
            *done = false;
            return;
        }
        full_backward(g, &g.out_grad(self), nullptr);
    }, "spline");
    const Var yv = y_var;
    Var ld_var = g.make(std::move(ld), {x, raw_w, raw_v}, [done, full_backward, yv](Graph& g, std::size_t self) {
        *done = true;
        full_backward(g, g.grad_or_null(yv), &g.out_grad(self));
    }, "spline_logdet");
    return {y_var, ld_var};
}

}  // namespace op
}  // namespace pflow
