#pragma once

#include <cmath>
#include <random>

#include "prosodyflow/coupling/spline.hpp"

namespace pflow {

inline constexpr double kMinInvConvDet = 1e-12;

// Channel-mixing 1x1 convolution: z[t] = W x[t] for every time step.
struct InvConvParams {
    Mat weight;  // [C x C]
};

// log|det W|; throws if W is singular to within 1e-12.
inline double invconv_log_abs_det(const Mat& w) {
    if (w.rows() != w.cols() || w.rows() == 0) throw DimensionError("1x1 convolution weight must be square");
    const double det = Eigen::PartialPivLU<Eigen::MatrixXd>(Eigen::MatrixXd(w)).determinant();
    if (!(std::abs(det) > kMinInvConvDet)) throw SingularityError("1x1 convolution weight has |det| <= 1e-12");
    return std::log(std::abs(det));
}

inline TransformResult invconv_forward(const Mat& x, const InvConvParams& p) {
    if (x.cols() != p.weight.rows()) throw DimensionError("invconv: channel count mismatch");
    require_finite(x, "invconv_forward input");
    const double lad = invconv_log_abs_det(p.weight);
    return {x * p.weight.transpose(), static_cast<double>(x.rows()) * lad};
}

inline Mat invconv_inverse(const Mat& z, const InvConvParams& p) {
    if (z.cols() != p.weight.rows()) throw DimensionError("invconv: channel count mismatch");
    invconv_log_abs_det(p.weight);
    Eigen::MatrixXd w = p.weight;
    const Eigen::MatrixXd w_inv = Eigen::PartialPivLU<Eigen::MatrixXd>(w).inverse();
    return z * w_inv.transpose();
}

// Random orthogonal matrix (QR of a Gaussian matrix, sign-fixed), |det| = 1.
template <class Rng>
Mat random_orthogonal(int n, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    return Mat(q);
}

namespace op {

// Tape form: (z = x W^T, per-row log|det W| [R x 1]).
inline std::pair<Var, Var> invconv(Var x, Var w) {
    const Mat& xv = x.value();
    const Mat& wv = w.value();
    if (xv.cols() != wv.rows()) throw DimensionError("invconv: input " + shape_str(xv) + " vs weight " + shape_str(wv));
    const double lad = invconv_log_abs_det(wv);
    Var z = matmul_t(x, w);
    Graph& g = *x.graph;
    Mat ld = Mat::Constant(xv.rows(), 1, lad);
    Var ld_var = g.make(std::move(ld), {w}, [w](Graph& g, std::size_t self) {
        const double total = g.out_grad(self).sum();
        Eigen::MatrixXd wd = w.value();
        const Eigen::MatrixXd inv_t = Eigen::PartialPivLU<Eigen::MatrixXd>(wd).inverse().transpose();
        g.accumulate(w, Mat(total * inv_t));
    }, "invconv_logdet");
    return {z, ld_var};
}

}  // namespace op
}  // namespace pflow
