#pragma once

#include <vector>

#include "prosodyflow/dcore/graph.hpp"

namespace pflow {

// Frame-order reversal. Volume preserving and an involution.
inline Mat reverse_time(const Mat& x) { return x.colwise().reverse(); }

// Row indices that reverse time in a time-major batch (row t*batch + b).
inline std::vector<int> reverse_time_index(Eigen::Index steps, int batch) {
    std::vector<int> idx(static_cast<std::size_t>(steps * batch));
    for (Eigen::Index t = 0; t < steps; ++t) {
        for (int b = 0; b < batch; ++b) idx[static_cast<std::size_t>(t * batch + b)] = static_cast<int>((steps - 1 - t) * batch + b);
    }
    return idx;
}

inline Mat reverse_time_batched(const Mat& x, int batch) {
    const Eigen::Index steps = x.rows() / batch;
    Mat out(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < steps; ++t) out.middleRows(t * batch, batch) = x.middleRows((steps - 1 - t) * batch, batch);
    return out;
}

namespace op {
inline Var reverse_time(Var x, int batch = 1) {
    if (batch <= 0 || x.rows() % batch != 0) throw DimensionError("reverse_time: rows not divisible by batch");
    return gather_rows(x, reverse_time_index(x.rows() / batch, batch));
}
}  // namespace op

}  // namespace pflow
