#pragma once

// Tape-based reverse-mode automatic differentiation over Eigen matrices.
//
// Pullbacks are recorded as tape operations themselves, so the result of
// gradients() is again differentiable. That is what lets the gradient
// penalty of the adversarial loss — a function of an input gradient — be
// differentiated with respect to network parameters.

#include "cfrec/common.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace cfrec::ad {

class Tape;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

using Pullback = std::function<Var(Tape&, Var)>;

struct Edge {
    int parent;
    Pullback pull;
};

class Tape {
public:
    Var put(Mat value, std::vector<Edge> edges = {}) {
        nodes_.push_back(Node{std::move(value), std::move(edges)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Mat& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

    std::size_t size() const { return nodes_.size(); }

    // Gradients of a 1x1 root with respect to each entry of `wrt`.
    // Unreachable inputs yield zero gradients of matching shape.
    std::vector<Var> gradients(Var root, const std::vector<Var>& wrt);

    // Smallest |x| observed at a piecewise-linear activation. Finite
    // differences are only a valid derivative oracle when perturbations
    // stay on one linear piece; checks can assert margin > step.
    double kink_margin = std::numeric_limits<double>::infinity();

private:
    struct Node {
        Mat value;
        std::vector<Edge> edges;
    };
    std::vector<Node> nodes_;
};

inline Var constant(Tape& t, Mat v) { return t.put(std::move(v)); }

inline Var scalar(Tape& t, double v) { return t.put(Mat::Constant(1, 1, v)); }

namespace detail {
inline void check_same_shape(const Tape& t, Var a, Var b, const char* op) {
    if (t.val(a).rows() != t.val(b).rows() || t.val(a).cols() != t.val(b).cols())
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(t.val(a).rows()) +
                         "x" + std::to_string(t.val(a).cols()) + " vs " +
                         std::to_string(t.val(b).rows()) + "x" + std::to_string(t.val(b).cols()) +
                         ")");
}
}  // namespace detail

inline Var add(Tape& t, Var a, Var b) {
    detail::check_same_shape(t, a, b, "add");
    return t.put(t.val(a) + t.val(b), {{a.id, [](Tape&, Var g) { return g; }},
                                       {b.id, [](Tape&, Var g) { return g; }}});
}

inline Var neg(Tape& t, Var a) {
    return t.put(-t.val(a), {{a.id, [](Tape& tt, Var g) { return neg(tt, g); }}});
}

inline Var sub(Tape& t, Var a, Var b) {
    detail::check_same_shape(t, a, b, "sub");
    return t.put(t.val(a) - t.val(b), {{a.id, [](Tape&, Var g) { return g; }},
                                       {b.id, [](Tape& tt, Var g) { return neg(tt, g); }}});
}

inline Var mul(Tape& t, Var a, Var b) {
    detail::check_same_shape(t, a, b, "mul");
    return t.put(t.val(a).cwiseProduct(t.val(b)),
                 {{a.id, [b](Tape& tt, Var g) { return mul(tt, g, b); }},
                  {b.id, [a](Tape& tt, Var g) { return mul(tt, g, a); }}});
}

inline Var div(Tape& t, Var a, Var b) {
    detail::check_same_shape(t, a, b, "div");
    return t.put(t.val(a).cwiseQuotient(t.val(b)),
                 {{a.id, [b](Tape& tt, Var g) { return div(tt, g, b); }},
                  {b.id, [a, b](Tape& tt, Var g) {
                       return neg(tt, div(tt, mul(tt, g, a), mul(tt, b, b)));
                   }}});
}

inline Var scale(Tape& t, Var a, double c) {
    return t.put(t.val(a) * c, {{a.id, [c](Tape& tt, Var g) { return scale(tt, g, c); }}});
}

inline Var add_scalar(Tape& t, Var a, double c) {
    return t.put(t.val(a).array() + c, {{a.id, [](Tape&, Var g) { return g; }}});
}

// Elementwise product with a constant matrix (no gradient through the mask).
inline Var cmul(Tape& t, Var a, Mat mask) {
    if (t.val(a).rows() != mask.rows() || t.val(a).cols() != mask.cols())
        throw ShapeError("cmul: shape mismatch");
    Mat v = t.val(a).cwiseProduct(mask);
    return t.put(std::move(v),
                 {{a.id, [mask](Tape& tt, Var g) { return cmul(tt, g, mask); }}});
}

inline Var cadd(Tape& t, Var a, const Mat& c) {
    if (t.val(a).rows() != c.rows() || t.val(a).cols() != c.cols())
        throw ShapeError("cadd: shape mismatch");
    return t.put(t.val(a) + c, {{a.id, [](Tape&, Var g) { return g; }}});
}

inline Var transpose(Tape& t, Var a) {
    return t.put(t.val(a).transpose(),
                 {{a.id, [](Tape& tt, Var g) { return transpose(tt, g); }}});
}

inline Var matmul(Tape& t, Var a, Var b) {
    if (t.val(a).cols() != t.val(b).rows())
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(t.val(a).cols()) +
                         " vs " + std::to_string(t.val(b).rows()) + ")");
    return t.put(t.val(a) * t.val(b),
                 {{a.id, [b](Tape& tt, Var g) { return matmul(tt, g, transpose(tt, b)); }},
                  {b.id, [a](Tape& tt, Var g) { return matmul(tt, transpose(tt, a), g); }}});
}

inline Var sum(Tape& t, Var a);

// 1x1 -> rows x cols broadcast
inline Var broadcast_scalar(Tape& t, Var s, Eigen::Index rows, Eigen::Index cols) {
    if (t.val(s).size() != 1) throw ShapeError("broadcast_scalar: input is not 1x1");
    return t.put(Mat::Constant(rows, cols, t.val(s)(0, 0)),
                 {{s.id, [](Tape& tt, Var g) { return sum(tt, g); }}});
}

inline Var sum(Tape& t, Var a) {
    const Eigen::Index r = t.val(a).rows(), c = t.val(a).cols();
    return t.put(Mat::Constant(1, 1, t.val(a).sum()),
                 {{a.id, [r, c](Tape& tt, Var g) { return broadcast_scalar(tt, g, r, c); }}});
}

inline Var sum_rows(Tape& t, Var a);

// 1 x m -> n x m replication
inline Var repeat_rows(Tape& t, Var a, Eigen::Index n) {
    if (t.val(a).rows() != 1) throw ShapeError("repeat_rows: input must have one row");
    return t.put(t.val(a).replicate(n, 1),
                 {{a.id, [](Tape& tt, Var g) { return sum_rows(tt, g); }}});
}

inline Var sum_rows(Tape& t, Var a) {
    const Eigen::Index n = t.val(a).rows();
    return t.put(t.val(a).colwise().sum(),
                 {{a.id, [n](Tape& tt, Var g) { return repeat_rows(tt, g, n); }}});
}

inline Var pad_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index total);

inline Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index len) {
    if (start < 0 || len < 0 || start + len > t.val(a).cols())
        throw ShapeError("slice_cols: range out of bounds");
    const Eigen::Index total = t.val(a).cols();
    return t.put(t.val(a).middleCols(start, len),
                 {{a.id, [start, total](Tape& tt, Var g) { return pad_cols(tt, g, start, total); }}});
}

inline Var pad_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index total) {
    const Eigen::Index len = t.val(a).cols();
    Mat v = Mat::Zero(t.val(a).rows(), total);
    v.middleCols(start, len) = t.val(a);
    return t.put(std::move(v),
                 {{a.id, [start, len](Tape& tt, Var g) { return slice_cols(tt, g, start, len); }}});
}

inline Var concat_cols(Tape& t, Var a, Var b) {
    if (t.val(a).rows() != t.val(b).rows()) throw ShapeError("concat_cols: row count differs");
    const Eigen::Index ca = t.val(a).cols(), cb = t.val(b).cols();
    Mat v(t.val(a).rows(), ca + cb);
    v << t.val(a), t.val(b);
    return t.put(std::move(v),
                 {{a.id, [ca](Tape& tt, Var g) { return slice_cols(tt, g, 0, ca); }},
                  {b.id, [ca, cb](Tape& tt, Var g) { return slice_cols(tt, g, ca, cb); }}});
}

inline Var scatter_cols(Tape& t, Var g, const std::vector<int>& idx, Eigen::Index src_cols);

// Column gather; idx entries of -1 produce zero columns. Used for the
// convolution index plumbing of the ladder backbone.
inline Var gather_cols(Tape& t, Var a, const std::vector<int>& idx) {
    const Mat& av = t.val(a);
    Mat v = Mat::Zero(av.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] >= 0) {
            if (idx[j] >= av.cols()) throw ShapeError("gather_cols: index out of range");
            v.col(static_cast<Eigen::Index>(j)) = av.col(idx[j]);
        }
    }
    const Eigen::Index src_cols = av.cols();
    return t.put(std::move(v), {{a.id, [idx, src_cols](Tape& tt, Var g) {
                                     return scatter_cols(tt, g, idx, src_cols);
                                 }}});
}

inline Var scatter_cols(Tape& t, Var g, const std::vector<int>& idx, Eigen::Index src_cols) {
    const Mat& gv = t.val(g);
    Mat v = Mat::Zero(gv.rows(), src_cols);
    for (std::size_t j = 0; j < idx.size(); ++j)
        if (idx[j] >= 0) v.col(idx[j]) += gv.col(static_cast<Eigen::Index>(j));
    return t.put(std::move(v), {{g.id, [idx](Tape& tt, Var gg) { return gather_cols(tt, gg, idx); }}});
}

// Row-major reshape.
inline Var reshape_rm(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols) {
    const Mat& av = t.val(a);
    if (rows * cols != av.size()) throw ShapeError("reshape_rm: element count differs");
    Mat v(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < av.rows(); ++i)
        for (Eigen::Index j = 0; j < av.cols(); ++j, ++k) v(k / cols, k % cols) = av(i, j);
    const Eigen::Index ar = av.rows(), ac = av.cols();
    return t.put(std::move(v),
                 {{a.id, [ar, ac](Tape& tt, Var g) { return reshape_rm(tt, g, ar, ac); }}});
}

// Multiply a matrix by a 1x1 variable.
inline Var smul(Tape& t, Var a, Var s) {
    if (t.val(s).size() != 1) throw ShapeError("smul: scale is not 1x1");
    return t.put(t.val(a) * t.val(s)(0, 0),
                 {{a.id, [s](Tape& tt, Var g) { return smul(tt, g, s); }},
                  {s.id, [a](Tape& tt, Var g) { return sum(tt, mul(tt, g, a)); }}});
}

inline Var leaky_relu(Tape& t, Var a, double slope) {
    t.kink_margin = std::min(t.kink_margin, t.val(a).cwiseAbs().minCoeff());
    Mat mask = (t.val(a).array() > 0.0).select(Mat::Ones(t.val(a).rows(), t.val(a).cols()),
                                               Mat::Constant(t.val(a).rows(), t.val(a).cols(), slope));
    return cmul(t, a, std::move(mask));
}

inline Var relu(Tape& t, Var a) { return leaky_relu(t, a, 0.0); }

// min(x, 0); paired with relu to build PReLU.
inline Var min0(Tape& t, Var a) {
    t.kink_margin = std::min(t.kink_margin, t.val(a).cwiseAbs().minCoeff());
    Mat mask = (t.val(a).array() < 0.0).select(Mat::Ones(t.val(a).rows(), t.val(a).cols()),
                                               Mat::Zero(t.val(a).rows(), t.val(a).cols()));
    return cmul(t, a, std::move(mask));
}

inline Var sigmoid(Tape& t, Var a) {
    Mat v = t.val(a).unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    return t.put(std::move(v), {{a.id, [a](Tape& tt, Var g) {
                                     Var s = sigmoid(tt, a);
                                     Var one_minus = add_scalar(tt, neg(tt, s), 1.0);
                                     return mul(tt, g, mul(tt, s, one_minus));
                                 }}});
}

inline Var softplus(Tape& t, Var a) {
    Mat v = t.val(a).unaryExpr(
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return t.put(std::move(v),
                 {{a.id, [a](Tape& tt, Var g) { return mul(tt, g, sigmoid(tt, a)); }}});
}

inline Var exp(Tape& t, Var a) {
    return t.put(t.val(a).array().exp(),
                 {{a.id, [a](Tape& tt, Var g) { return mul(tt, g, exp(tt, a)); }}});
}

inline Var log(Tape& t, Var a) {
    return t.put(t.val(a).array().log(),
                 {{a.id, [a](Tape& tt, Var g) { return div(tt, g, a); }}});
}

inline Var sqrt(Tape& t, Var a) {
    return t.put(t.val(a).array().sqrt(), {{a.id, [a](Tape& tt, Var g) {
                                                return div(tt, scale(tt, g, 0.5), sqrt(tt, a));
                                            }}});
}

inline Var square(Tape& t, Var a) { return mul(t, a, a); }

inline Var mean(Tape& t, Var a) {
    return scale(t, sum(t, a), 1.0 / static_cast<double>(t.val(a).size()));
}

// Cuts the gradient: downstream consumers see a constant.
inline Var detach(Tape& t, Var a) { return t.put(t.val(a)); }

// ---- composites ----------------------------------------------------------

// Per-row squared L2 norm, n x m -> n x 1.
inline Var rowwise_sqnorm(Tape& t, Var a) {
    Var sq = square(t, a);
    Var ones = constant(t, Mat::Ones(t.val(a).cols(), 1));
    return matmul(t, sq, ones);
}

// Per-row L2 norm, n x m -> n x 1.
inline Var rowwise_norm(Tape& t, Var a) { return sqrt(t, rowwise_sqnorm(t, a)); }

// Per-row log-sum-exp, n x m -> n x 1. The max shift is a constant, which
// leaves both the value and the gradient exact.
inline Var logsumexp_rows(Tape& t, Var a) {
    const Mat& av = t.val(a);
    Mat shift = av.rowwise().maxCoeff();                       // n x 1
    Mat shift_b = shift.replicate(1, av.cols());               // n x m
    Var centered = cadd(t, a, -shift_b);
    Var e = exp(t, centered);
    Var ones = constant(t, Mat::Ones(av.cols(), 1));
    Var s = matmul(t, e, ones);                                // n x 1
    return cadd(t, log(t, s), shift);
}

inline std::vector<Var> Tape::gradients(Var root, const std::vector<Var>& wrt) {
    if (!root.valid()) throw Error("gradients: invalid root");
    if (val(root).size() != 1) throw ShapeError("gradients: root must be 1x1");

    const int n = root.id + 1;
    std::vector<Var> adj(static_cast<std::size_t>(n));
    adj[static_cast<std::size_t>(root.id)] = put(Mat::Ones(1, 1));

    for (int i = root.id; i >= 0; --i) {
        Var g = adj[static_cast<std::size_t>(i)];
        if (!g.valid()) continue;
        // copy: pullbacks append nodes and may reallocate nodes_
        const std::vector<Edge> edges = nodes_[static_cast<std::size_t>(i)].edges;
        for (const Edge& e : edges) {
            Var contrib = e.pull(*this, g);
            Var& slot = adj[static_cast<std::size_t>(e.parent)];
            slot = slot.valid() ? add(*this, slot, contrib) : contrib;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
        if (w.id < n && adj[static_cast<std::size_t>(w.id)].valid())
            out.push_back(adj[static_cast<std::size_t>(w.id)]);
        else
            out.push_back(put(Mat::Zero(val(w).rows(), val(w).cols())));
    }
    return out;
}

}  // namespace cfrec::ad
