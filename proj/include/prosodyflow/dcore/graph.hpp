#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "prosodyflow/dcore/tensor.hpp"

namespace pflow {

class Graph;

// Handle to a node on a Graph's tape. Cheap to copy; only valid while the
// owning Graph is alive.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double item() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so iterating ids
// downward is a valid reverse topological order.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Mat v) { return push(std::move(v), false, nullptr, "constant"); }

    // FlowTensor leaf: gradients accumulate into grad(var) across backward calls.
    Var leaf(Mat v, bool requires_grad = true) {
        const bool needs = requires_grad && grad_enabled_;
        Var out = push(std::move(v), needs, nullptr, "leaf");
        Node& n = nodes_[out.id];
        n.is_leaf = true;
        if (needs) {
            n.leaf_grad = Mat::Zero(n.value.rows(), n.value.cols());
            n.fn = [](Graph& g, std::size_t self) {
                Node& node = g.nodes_[self];
                node.leaf_grad += node.grad;
            };
        }
        return out;
    }

    // Parameter leaf: backward adds into Parameter::grad.
    Var param(Parameter& p) {
        const bool needs = grad_enabled_;
        Var out = push(p.value, needs, nullptr, "param");
        if (needs) {
            Parameter* target = &p;
            nodes_[out.id].fn = [target](Graph& g, std::size_t self) {
                target->grad += g.nodes_[self].grad;
            };
        }
        return out;
    }

    Var param(ParameterStore& store, const std::string& name) { return param(store.at(name)); }

    const Mat& value(Var v) const { return nodes_.at(v.id).value; }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    // Accumulated gradient of a requires_grad leaf.
    const Mat& grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (!n.is_leaf || !n.needs_grad) throw ContractError("grad() requested on a non-differentiable node");
        return n.leaf_grad;
    }

    void backward(Var loss) {
        if (loss.graph != this) throw ContractError("loss belongs to a different graph");
        const Mat& lv = value(loss);
        if (lv.rows() != 1 || lv.cols() != 1) {
            throw ContractError("backward() needs a scalar loss, got " + shape_str(lv));
        }
        if (!nodes_[loss.id].needs_grad) return;
        for (std::size_t i = 0; i <= loss.id; ++i) nodes_[i].has_grad = false;
        seed_grad(loss.id, Mat::Ones(1, 1));
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.has_grad && n.fn) n.fn(*this, i);
        }
    }

    // --- op authoring interface -------------------------------------------

    // Creates a node computed from `inputs`. The backward closure runs only if
    // some input needs a gradient.
    Var make(Mat value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op) {
        return make(std::move(value), std::vector<Var>(inputs), std::move(fn), op);
    }
    Var make(Mat value, const std::vector<Var>& inputs, BackwardFn fn, const char* op) {
        require_finite(value, op);
        bool needs = false;
        if (grad_enabled_) {
            for (const Var& in : inputs) {
                if (in.graph != this) throw ContractError(std::string(op) + ": input from another graph");
                needs = needs || nodes_[in.id].needs_grad;
            }
        }
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, op);
    }

    // Gradient of a node during backward (valid inside a BackwardFn).
    const Mat& out_grad(std::size_t self) const { return nodes_[self].grad; }

    // Gradient received so far by `v`, or nullptr if nothing flowed into it.
    const Mat* grad_or_null(Var v) const {
        const Node& n = nodes_[v.id];
        return n.has_grad ? &n.grad : nullptr;
    }

    void accumulate(Var v, const Mat& g) {
        Node& n = nodes_[v.id];
        if (!n.needs_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    // Like accumulate but lets callers build the contribution in place.
    Mat& grad_slot(Var v) {
        Node& n = nodes_[v.id];
        if (!n.has_grad) {
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
        return n.grad;
    }

    // Records which side of every non-smooth point the evaluation landed on;
    // the gradient checker compares signatures to skip kink crossings.
    std::vector<std::uint8_t>& kink_signature() { return kinks_; }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        Mat leaf_grad;
        bool needs_grad = false;
        bool has_grad = false;
        bool is_leaf = false;
        BackwardFn fn;
    };

    Var push(Mat v, bool needs, BackwardFn fn, const char* op) {
        (void)op;
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs;
        n.fn = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    void seed_grad(std::size_t id, const Mat& g) {
        nodes_[id].grad = g;
        nodes_[id].has_grad = true;
    }

    bool grad_enabled_;
    std::deque<Node> nodes_;
    std::vector<std::uint8_t> kinks_;
};

inline const Mat& Var::value() const { return graph->value(*this); }
inline double Var::item() const {
    const Mat& v = value();
    if (v.size() != 1) throw ContractError("item() on non-scalar " + shape_str(v));
    return v(0, 0);
}

namespace op {

namespace detail {
inline void same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}
inline void check_inputs(std::initializer_list<Var> vs, const char* op) {
    for (const Var& v : vs) require_finite(v.value(), std::string(op) + " input");
}
}  // namespace detail

inline Var add(Var a, Var b) {
    detail::same_shape(a.value(), b.value(), "add");
    Graph& g = *a.graph;
    return g.make(a.value() + b.value(), {a, b}, [a, b](Graph& g, std::size_t self) {
        g.accumulate(a, g.out_grad(self));
        g.accumulate(b, g.out_grad(self));
    }, "add");
}

inline Var sub(Var a, Var b) {
    detail::same_shape(a.value(), b.value(), "sub");
    Graph& g = *a.graph;
    return g.make(a.value() - b.value(), {a, b}, [a, b](Graph& g, std::size_t self) {
        g.accumulate(a, g.out_grad(self));
        g.accumulate(b, -g.out_grad(self));
    }, "sub");
}

inline Var mul(Var a, Var b) {
    detail::same_shape(a.value(), b.value(), "mul");
    Graph& g = *a.graph;
    return g.make(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        if (g.needs_grad(a)) g.accumulate(a, go.cwiseProduct(b.value()));
        if (g.needs_grad(b)) g.accumulate(b, go.cwiseProduct(a.value()));
    }, "mul");
}

inline Var scale(Var a, double s) {
    Graph& g = *a.graph;
    return g.make(a.value() * s, {a}, [a, s](Graph& g, std::size_t self) {
        g.accumulate(a, g.out_grad(self) * s);
    }, "scale");
}

inline Var add_scalar(Var a, double s) {
    Graph& g = *a.graph;
    Mat out = a.value().array() + s;
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        g.accumulate(a, g.out_grad(self));
    }, "add_scalar");
}

inline Var neg(Var a) { return scale(a, -1.0); }

// a[R x C] + row[1 x C] broadcast over rows.
inline Var add_row(Var a, Var row) {
    const Mat& av = a.value();
    const Mat& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw DimensionError("add_row: bias " + shape_str(rv) + " does not broadcast over " + shape_str(av));
    }
    Graph& g = *a.graph;
    Mat out = av.rowwise() + rv.row(0);
    return g.make(std::move(out), {a, row}, [a, row](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        g.accumulate(a, go);
        if (g.needs_grad(row)) g.accumulate(row, go.colwise().sum());
    }, "add_row");
}

// a[R x C] * col[R x 1] broadcast over columns.
inline Var mul_col(Var a, Var col) {
    const Mat& av = a.value();
    const Mat& cv = col.value();
    if (cv.cols() != 1 || cv.rows() != av.rows()) {
        throw DimensionError("mul_col: " + shape_str(cv) + " does not broadcast over " + shape_str(av));
    }
    Graph& g = *a.graph;
    Mat out = av.array().colwise() * cv.col(0).array();
    return g.make(std::move(out), {a, col}, [a, col](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        if (g.needs_grad(a)) {
            Mat ga = go.array().colwise() * col.value().col(0).array();
            g.accumulate(a, ga);
        }
        if (g.needs_grad(col)) {
            Mat gc = go.cwiseProduct(a.value()).rowwise().sum();
            g.accumulate(col, gc);
        }
    }, "mul_col");
}

// a[R x K] * b[K x C]
inline Var matmul(Var a, Var b) {
    const Mat& av = a.value();
    const Mat& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: " + shape_str(av) + " x " + shape_str(bv));
    }
    Graph& g = *a.graph;
    Mat out = av * bv;
    return g.make(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        if (g.needs_grad(a)) g.accumulate(a, go * b.value().transpose());
        if (g.needs_grad(b)) g.accumulate(b, a.value().transpose() * go);
    }, "matmul");
}

// x[R x in] * W^T with W stored [out x in].
inline Var matmul_t(Var x, Var w) {
    const Mat& xv = x.value();
    const Mat& wv = w.value();
    if (xv.cols() != wv.cols()) {
        throw DimensionError("matmul_t: input " + shape_str(xv) + " vs weight " + shape_str(wv));
    }
    Graph& g = *x.graph;
    Mat out = xv * wv.transpose();
    return g.make(std::move(out), {x, w}, [x, w](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        if (g.needs_grad(x)) g.accumulate(x, go * w.value());
        if (g.needs_grad(w)) g.accumulate(w, go.transpose() * x.value());
    }, "matmul_t");
}

inline Var exp(Var a) {
    Graph& g = *a.graph;
    Mat out = a.value().array().exp();
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        g.accumulate(a, g.out_grad(self).cwiseProduct(g.value(Var{&g, self})));
    }, "exp");
}

inline Var log(Var a) {
    if ((a.value().array() <= 0.0).any()) throw NumericError("log of non-positive value");
    Graph& g = *a.graph;
    Mat out = a.value().array().log();
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        g.accumulate(a, g.out_grad(self).cwiseQuotient(a.value()));
    }, "log");
}

inline Var tanh(Var a) {
    Graph& g = *a.graph;
    Mat out = a.value().array().tanh();
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        const Mat& y = g.value(Var{&g, self});
        Mat d = (1.0 - y.array().square()).matrix();
        g.accumulate(a, g.out_grad(self).cwiseProduct(d));
    }, "tanh");
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Var sigmoid(Var a) {
    Graph& g = *a.graph;
    Mat out = a.value().unaryExpr([](double v) { return sigmoid_scalar(v); });
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        const Mat& y = g.value(Var{&g, self});
        Mat d = (y.array() * (1.0 - y.array())).matrix();
        g.accumulate(a, g.out_grad(self).cwiseProduct(d));
    }, "sigmoid");
}

inline Var relu(Var a) {
    Graph& g = *a.graph;
    const Mat& av = a.value();
    auto& sig = g.kink_signature();
    for (Eigen::Index i = 0; i < av.size(); ++i) sig.push_back(av.data()[i] > 0.0 ? 1 : 0);
    Mat out = av.cwiseMax(0.0);
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        Mat d = (a.value().array() > 0.0).cast<double>().matrix();
        g.accumulate(a, g.out_grad(self).cwiseProduct(d));
    }, "relu");
}

inline Var softplus(Var a) {
    Graph& g = *a.graph;
    Mat out = a.value().unaryExpr([](double v) { return softplus_scalar(v); });
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        Mat d = a.value().unaryExpr([](double v) { return sigmoid_scalar(v); });
        g.accumulate(a, g.out_grad(self).cwiseProduct(d));
    }, "softplus");
}

inline Var square(Var a) {
    Graph& g = *a.graph;
    Mat out = a.value().array().square();
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        g.accumulate(a, 2.0 * g.out_grad(self).cwiseProduct(a.value()));
    }, "square");
}

inline Var sum(Var a) {
    Graph& g = *a.graph;
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        const double go = g.out_grad(self)(0, 0);
        g.accumulate(a, Mat::Constant(a.rows(), a.cols(), go));
    }, "sum");
}

inline Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw EmptySequenceError("mean of empty tensor");
    return scale(sum(a), 1.0 / n);
}

// [R x C] -> [R x 1]
inline Var sum_cols(Var a) {
    Graph& g = *a.graph;
    Mat out = a.value().rowwise().sum();
    return g.make(std::move(out), {a}, [a](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        Mat ga = go.col(0).replicate(1, a.cols());
        g.accumulate(a, ga);
    }, "sum_cols");
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols of nothing");
    Graph& g = *parts.front().graph;
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat out(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return g.make(std::move(out), parts, [parts](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        Eigen::Index off = 0;
        for (const Var& p : parts) {
            if (g.needs_grad(p)) g.accumulate(p, go.middleCols(off, p.cols()));
            off += p.cols();
        }
    }, "concat_cols");
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_rows of nothing");
    Graph& g = *parts.front().graph;
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Mat out(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return g.make(std::move(out), parts, [parts](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        Eigen::Index off = 0;
        for (const Var& p : parts) {
            if (g.needs_grad(p)) g.accumulate(p, go.middleRows(off, p.rows()));
            off += p.rows();
        }
    }, "concat_rows");
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw DimensionError("slice_cols out of range on " + shape_str(a.value()));
    }
    Graph& g = *a.graph;
    Mat out = a.value().middleCols(start, count);
    return g.make(std::move(out), {a}, [a, start, count](Graph& g, std::size_t self) {
        Mat& slot = g.grad_slot(a);
        slot.middleCols(start, count) += g.out_grad(self);
    }, "slice_cols");
}

// out.row(i) = a.row(index[i]); index -1 yields a zero row.
inline Var gather_rows(Var a, std::vector<int> index) {
    const Mat& av = a.value();
    Mat out = Mat::Zero(static_cast<Eigen::Index>(index.size()), av.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const int src = index[i];
        if (src < -1 || src >= av.rows()) throw DimensionError("gather_rows: index out of range");
        if (src >= 0) out.row(static_cast<Eigen::Index>(i)) = av.row(src);
    }
    Graph& g = *a.graph;
    return g.make(std::move(out), {a}, [a, index = std::move(index)](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        Mat& slot = g.grad_slot(a);
        for (std::size_t i = 0; i < index.size(); ++i) {
            if (index[i] >= 0) slot.row(index[i]) += go.row(static_cast<Eigen::Index>(i));
        }
    }, "gather_rows");
}

// Row-major reshape; element order is unchanged.
inline Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    const Mat& av = a.value();
    if (rows * cols != av.size()) {
        throw DimensionError("reshape " + shape_str(av) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    Mat out = Eigen::Map<const Mat>(av.data(), rows, cols);
    Graph& g = *a.graph;
    const Eigen::Index r0 = av.rows(), c0 = av.cols();
    return g.make(std::move(out), {a}, [a, r0, c0](Graph& g, std::size_t self) {
        const Mat& go = g.out_grad(self);
        Mat back = Eigen::Map<const Mat>(go.data(), r0, c0);
        g.accumulate(a, back);
    }, "reshape");
}

// Stable binary cross-entropy from logits, averaged over elements.
inline Var bce_with_logits(Var logits, const Mat& targets) {
    detail::same_shape(logits.value(), targets, "bce_with_logits");
    Graph& g = *logits.graph;
    const Mat& l = logits.value();
    Mat terms(l.rows(), l.cols());
    for (Eigen::Index i = 0; i < l.size(); ++i) {
        terms.data()[i] = softplus_scalar(l.data()[i]) - targets.data()[i] * l.data()[i];
    }
    Mat out(1, 1);
    const double n = static_cast<double>(l.size());
    out(0, 0) = terms.sum() / n;
    return g.make(std::move(out), {logits}, [logits, targets, n](Graph& g, std::size_t self) {
        const double go = g.out_grad(self)(0, 0);
        const Mat& l = logits.value();
        Mat d(l.rows(), l.cols());
        for (Eigen::Index i = 0; i < l.size(); ++i) {
            d.data()[i] = go * (sigmoid_scalar(l.data()[i]) - targets.data()[i]) / n;
        }
        g.accumulate(logits, d);
    }, "bce_with_logits");
}

}  // namespace op
}  // namespace pflow
