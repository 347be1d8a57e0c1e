#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Cholesky>

#include "prosodyflow/prep/features.hpp"

namespace pflow {

constexpr int kCwtScales = 10;
constexpr int kCwtChannels = kCwtScales + 2;
constexpr double kCwtBaseScale = 1.0;  // frames
constexpr double kCwtSupport = 5.0;    // kernel truncation in units of scale
constexpr double kCwtRidge = 1e-6;

inline double mexican_hat(double u) {
    const double norm = 2.0 / (std::sqrt(3.0) * std::pow(std::numbers::pi, 0.25));
    return norm * (1.0 - u * u) * std::exp(-0.5 * u * u);
}

inline double cwt_scale(int j) { return kCwtBaseScale * std::ldexp(1.0, j); }

namespace detail {

// Analysis operator for one scale: row t holds psi((tau - t)/s)/sqrt(s).
inline Mat cwt_analysis_matrix(Eigen::Index n, double s) {
    Mat a = Mat::Zero(n, n);
    const double reach = kCwtSupport * s;
    const double inv_sqrt = 1.0 / std::sqrt(s);
    for (Eigen::Index t = 0; t < n; ++t) {
        for (Eigen::Index tau = 0; tau < n; ++tau) {
            const double u = static_cast<double>(tau - t);
            if (std::abs(u) > reach) continue;
            a(t, tau) = mexican_hat(u / s) * inv_sqrt;
        }
    }
    return a;
}

struct CwtBasis {
    std::vector<Mat> analysis;       // one [T x T] per scale
    Eigen::LLT<Mat> normal_factor;   // of sum_j A_j^T A_j + ridge * I
};

// Bases depend only on T; cache them since decoding solves a T x T system.
inline std::shared_ptr<const CwtBasis> cwt_basis(Eigen::Index n) {
    static std::mutex mu;
    static std::map<Eigen::Index, std::shared_ptr<const CwtBasis>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto basis = std::make_shared<CwtBasis>();
    Mat normal = Mat::Zero(n, n);
    for (int j = 0; j < kCwtScales; ++j) {
        basis->analysis.push_back(cwt_analysis_matrix(n, cwt_scale(j)));
        normal.noalias() += basis->analysis.back().transpose() * basis->analysis.back();
    }
    const double ridge = kCwtRidge * std::max(normal.trace() / static_cast<double>(n), 1.0);
    normal.diagonal().array() += ridge;
    basis->normal_factor.compute(normal);
    if (cache.size() > 64) cache.clear();
    cache.emplace(n, basis);
    return basis;
}

}  // namespace detail

// Interpolate, standardize, project onto 10 Mexican-hat scales, then append
// the pre-standardization mean and variance as constant channels.
inline Mat cwt_encode(const std::vector<double>& f0_log, const std::vector<int>& voiced) {
    detail::require_some_voiced(voiced, f0_log.size(), 2);
    const std::vector<double> filled = linear_interp_fill(f0_log, voiced);
    const Eigen::Index n = static_cast<Eigen::Index>(filled.size());
    Eigen::Map<const Eigen::VectorXd> x(filled.data(), n);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    if (!(var > 1e-12)) throw DegenerateInputError("cwt_encode: signal has zero variance");
    const Eigen::VectorXd z = (x.array() - mean) / std::sqrt(var);
    const auto basis = detail::cwt_basis(n);
    Mat out(n, kCwtChannels);
    for (int j = 0; j < kCwtScales; ++j) out.col(j) = basis->analysis[j] * z;
    out.col(kCwtScales).setConstant(mean);
    out.col(kCwtScales + 1).setConstant(var);
    return out;
}

// Least-squares inverse of the analysis operators, then de-standardize with
// the time-averaged mean/variance channels.
inline std::vector<double> cwt_decode(const Mat& m) {
    if (m.cols() != kCwtChannels) {
        throw DimensionError("cwt_decode expects " + std::to_string(kCwtChannels) + " channels, got " + shape_str(m));
    }
    const Eigen::Index n = m.rows();
    if (n == 0) throw EmptySequenceError("cwt_decode on an empty sequence");
    require_finite(m, "cwt_decode input");
    const double mean = m.col(kCwtScales).mean();
    const double var = m.col(kCwtScales + 1).mean();
    if (!(var > 0.0)) throw FormatError("cwt_decode: variance channel must be positive");
    const auto basis = detail::cwt_basis(n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < kCwtScales; ++j) rhs.noalias() += basis->analysis[j].transpose() * m.col(j);
    const Eigen::VectorXd z = basis->normal_factor.solve(rhs);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (Eigen::Index t = 0; t < n; ++t) out[static_cast<std::size_t>(t)] = mean + std::sqrt(var) * z(t);
    return out;
}

}  // namespace pflow
