#pragma once

#include <cmath>

#include "prosodyflow/coupling/spline.hpp"

namespace pflow {

// Elementwise affine map x* = D x + beta. Both arrays either match x's shape
// or are a single row broadcast over time.
struct AffineParams {
    Mat scale;  // D, strictly positive
    Mat bias;   // beta
};

namespace detail {
inline Mat broadcast_to(const Mat& p, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (p.rows() == rows && p.cols() == cols) return p;
    if (p.rows() == 1 && p.cols() == cols) return p.replicate(rows, 1);
    throw DimensionError(std::string("affine ") + what + " " + shape_str(p) + " does not match input");
}

inline void check_affine_scale(const Mat& d) {
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (!(d.data()[i] > 0.0)) throw ParameterizationError("affine scale must be strictly positive");
    }
}
}  // namespace detail

inline TransformResult affine_forward(const Mat& x_a, const AffineParams& p) {
    require_finite(x_a, "affine_forward input");
    const Mat d = detail::broadcast_to(p.scale, x_a.rows(), x_a.cols(), "scale");
    const Mat b = detail::broadcast_to(p.bias, x_a.rows(), x_a.cols(), "bias");
    detail::check_affine_scale(d);
    TransformResult r;
    r.y = d.cwiseProduct(x_a) + b;
    r.logdet = d.array().log().sum();
    return r;
}

inline Mat affine_inverse(const Mat& y, const AffineParams& p) {
    require_finite(y, "affine_inverse input");
    const Mat d = detail::broadcast_to(p.scale, y.rows(), y.cols(), "scale");
    const Mat b = detail::broadcast_to(p.bias, y.rows(), y.cols(), "bias");
    detail::check_affine_scale(d);
    return (y - b).cwiseQuotient(d);
}

namespace op {

// Tape form used inside models: the predictor emits an unconstrained log-scale
// so D = exp(log_scale) is positive by construction. Returns (y, per-row logdet).
inline std::pair<Var, Var> affine(Var x, Var log_scale, Var bias) {
    Var y = add(mul(x, exp(log_scale)), bias);
    return {y, sum_cols(log_scale)};
}

}  // namespace op
}  // namespace pflow
