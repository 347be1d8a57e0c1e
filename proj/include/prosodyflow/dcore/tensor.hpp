#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "prosodyflow/errors.hpp"

namespace pflow {

// Dense real array. Rows are frames/groups, columns are channels; storage is
// row-major so that checkpoints and reshapes see the natural order.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline bool all_finite(const Mat& m) {
    const double* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

inline void require_finite(const Mat& m, const std::string& where) {
    if (!all_finite(m)) throw NumericError("non-finite value produced by " + where);
}

inline std::string shape_str(const Mat& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

// Named trainable array with its gradient accumulator.
struct Parameter {
    Mat value;
    Mat grad;

    Parameter() = default;
    explicit Parameter(Mat v) : value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
};

// Ordered name -> parameter map. std::map keeps iteration order fixed, which
// the optimizer and checkpoint writer rely on for deterministic replay.
class ParameterStore {
public:
    Parameter& add(const std::string& name, Mat value) {
        auto [it, inserted] = params_.insert_or_assign(name, Parameter(std::move(value)));
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Parameter& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Parameter& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    void zero_grad() {
        for (auto& [_, p] : params_) p.grad.setZero();
    }

    std::size_t size() const { return params_.size(); }
    std::size_t num_elements() const {
        std::size_t n = 0;
        for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Parameter> params_;
};

}  // namespace pflow
