#pragma once

// Dense double-precision tensors (rank 1/2) with reverse-mode autodiff.
// Primitives record themselves on the thread-local active tape; backward()
// replays the tape in exact reverse order. Heavy kernels map onto Eigen.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acot {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(val.size(), 0.0);
    }
};

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<TensorNode>()) {
        node_->shape = std::move(shape);
        node_->val.assign(shape_numel(node_->shape), fill);
    }

    Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<TensorNode>()) {
        if (shape_numel(shape) != values.size()) {
            throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                        " values for shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->val = std::move(values);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->val.size(); }
    int rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
    int cols() const { return node_->shape.size() == 2 ? node_->shape[1] : node_->shape[0]; }

    std::vector<double>& values() { return node_->val; }
    const std::vector<double>& values() const { return node_->val; }
    std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg = true) { node_->requires_grad = rg; return *this; }

    double item() const {
        if (numel() != 1) {
            throw std::invalid_argument("item: tensor has shape " + shape_str(node_->shape));
        }
        return node_->val[0];
    }

    double& at(int r, int c) { return node_->val[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return node_->val[static_cast<size_t>(r) * cols() + c]; }

    MatMap mat() { return MatMap(node_->val.data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(node_->val.data(), rows(), cols()); }
    MatMap grad_mat() { node_->ensure_grad(); return MatMap(node_->grad.data(), rows(), cols()); }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// ------------------------------ tape ------------------------------

class Tape {
public:
    void record(std::function<void()> backward_step) {
        steps_.push_back(std::move(backward_step));
    }
    size_t size() const { return steps_.size(); }

    // Seeds d(root)/d(root)=1 and visits recorded ops newest-first.
    void backward(Tensor root) {
        if (root.numel() != 1) {
            throw std::invalid_argument("backward: root must be scalar, got shape " +
                                        shape_str(root.shape()));
        }
        root.node()->ensure_grad();
        root.node()->grad[0] += 1.0;
        for (size_t i = steps_.size(); i > 0; --i) steps_[i - 1]();
    }

    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

inline Tape*& active_tape() {
    thread_local Tape* tape = nullptr;
    return tape;
}

struct TapeScope {
    explicit TapeScope(Tape& tape) : prev_(active_tape()) { active_tape() = &tape; }
    ~TapeScope() { active_tape() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

struct NoGradScope {
    NoGradScope() : prev_(active_tape()) { active_tape() = nullptr; }
    ~NoGradScope() { active_tape() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* prev_;
};

namespace detail {

inline bool grad_enabled(const Tensor& a) { return active_tape() && a.requires_grad(); }

inline Tensor make_out(Shape shape, bool requires_grad) {
    Tensor t(std::move(shape));
    t.set_requires_grad(requires_grad && active_tape() != nullptr);
    return t;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ------------------------------ primitives ------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    Tensor out = detail::make_out({a.rows(), b.cols()}, a.requires_grad() || b.requires_grad());
    out.mat().noalias() = a.mat() * b.mat();
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape()->record([an, bn, on] {
            ConstMatMap dy(on->grad.data(), on->shape[0], on->shape[1]);
            ConstMatMap av(an->val.data(), an->shape[0], an->shape[1]);
            ConstMatMap bv(bn->val.data(), bn->shape[0], bn->shape[1]);
            if (an->requires_grad) {
                an->ensure_grad();
                MatMap(an->grad.data(), an->shape[0], an->shape[1]).noalias() += dy * bv.transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MatMap(bn->grad.data(), bn->shape[0], bn->shape[1]).noalias() += av.transpose() * dy;
            }
        });
    }
    return out;
}

// a @ b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    Tensor out = detail::make_out({a.rows(), b.rows()}, a.requires_grad() || b.requires_grad());
    out.mat().noalias() = a.mat() * b.mat().transpose();
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape()->record([an, bn, on] {
            ConstMatMap dy(on->grad.data(), on->shape[0], on->shape[1]);
            ConstMatMap av(an->val.data(), an->shape[0], an->shape[1]);
            ConstMatMap bv(bn->val.data(), bn->shape[0], bn->shape[1]);
            if (an->requires_grad) {
                an->ensure_grad();
                MatMap(an->grad.data(), an->shape[0], an->shape[1]).noalias() += dy * bv;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MatMap(bn->grad.data(), bn->shape[0], bn->shape[1]).noalias() += dy.transpose() * av;
            }
        });
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    Tensor out = detail::make_out(a.shape(), a.requires_grad() || b.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape()->record([an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    Tensor out = detail::make_out(a.shape(), a.requires_grad() || b.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape()->record([an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    Tensor out = detail::make_out(a.shape(), a.requires_grad() || b.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        active_tape()->record([an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->val[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->val[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = detail::make_out(a.shape(), a.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] * s;
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        active_tape()->record([an, on, s] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
        });
    }
    return out;
}

// x: [m,n], bias: [n]; adds bias to every row.
inline Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
    if (x.shape().size() != 2 || bias.numel() != static_cast<size_t>(x.cols())) {
        throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(x.shape()) +
                                    " vs " + shape_str(bias.shape()));
    }
    Tensor out = detail::make_out(x.shape(), x.requires_grad() || bias.requires_grad());
    const int m = x.rows(), n = x.cols();
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
            out.values()[static_cast<size_t>(r) * n + c] =
                x.values()[static_cast<size_t>(r) * n + c] + bias.values()[c];
    if (out.requires_grad()) {
        auto xn = x.node(), bn = bias.node(), on = out.node();
        active_tape()->record([xn, bn, on, m, n] {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c)
                        bn->grad[c] += on->grad[static_cast<size_t>(r) * n + c];
            }
        });
    }
    return out;
}

inline Tensor softmax_rows(const Tensor& x) {
    Tensor out = detail::make_out(x.shape(), x.requires_grad());
    const int m = x.rows(), n = x.cols();
    for (int r = 0; r < m; ++r) {
        const double* xv = x.values().data() + static_cast<size_t>(r) * n;
        double* ov = out.values().data() + static_cast<size_t>(r) * n;
        double mx = xv[0];
        for (int c = 1; c < n; ++c) mx = std::max(mx, xv[c]);
        double sum = 0.0;
        for (int c = 0; c < n; ++c) {
            ov[c] = std::exp(xv[c] - mx);
            sum += ov[c];
        }
        for (int c = 0; c < n; ++c) ov[c] /= sum;
    }
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on, m, n] {
            xn->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* y = on->val.data() + static_cast<size_t>(r) * n;
                const double* dy = on->grad.data() + static_cast<size_t>(r) * n;
                double* dx = xn->grad.data() + static_cast<size_t>(r) * n;
                double dot = 0.0;
                for (int c = 0; c < n; ++c) dot += dy[c] * y[c];
                for (int c = 0; c < n; ++c) dx[c] += y[c] * (dy[c] - dot);
            }
        });
    }
    return out;
}

inline Tensor log_softmax_rows(const Tensor& x) {
    Tensor out = detail::make_out(x.shape(), x.requires_grad());
    const int m = x.rows(), n = x.cols();
    for (int r = 0; r < m; ++r) {
        const double* xv = x.values().data() + static_cast<size_t>(r) * n;
        double* ov = out.values().data() + static_cast<size_t>(r) * n;
        double mx = xv[0];
        for (int c = 1; c < n; ++c) mx = std::max(mx, xv[c]);
        double sum = 0.0;
        for (int c = 0; c < n; ++c) sum += std::exp(xv[c] - mx);
        const double lse = mx + std::log(sum);
        for (int c = 0; c < n; ++c) ov[c] = xv[c] - lse;
    }
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on, m, n] {
            xn->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* y = on->val.data() + static_cast<size_t>(r) * n;
                const double* dy = on->grad.data() + static_cast<size_t>(r) * n;
                double* dx = xn->grad.data() + static_cast<size_t>(r) * n;
                double dsum = 0.0;
                for (int c = 0; c < n; ++c) dsum += dy[c];
                for (int c = 0; c < n; ++c) dx[c] += dy[c] - std::exp(y[c]) * dsum;
            }
        });
    }
    return out;
}

// Per-row layer norm with learned gain/bias (population variance).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    const int m = x.rows(), n = x.cols();
    if (gain.numel() != static_cast<size_t>(n) || bias.numel() != static_cast<size_t>(n)) {
        throw std::invalid_argument("layer_norm_rows: shape mismatch " + shape_str(x.shape()) +
                                    " vs " + shape_str(gain.shape()));
    }
    Tensor out = detail::make_out(x.shape(),
                                  x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    std::vector<double> inv_std(m), mean(m);
    for (int r = 0; r < m; ++r) {
        const double* xv = x.values().data() + static_cast<size_t>(r) * n;
        double mu = 0.0;
        for (int c = 0; c < n; ++c) mu += xv[c];
        mu /= n;
        double var = 0.0;
        for (int c = 0; c < n; ++c) var += (xv[c] - mu) * (xv[c] - mu);
        var /= n;
        mean[r] = mu;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        double* ov = out.values().data() + static_cast<size_t>(r) * n;
        for (int c = 0; c < n; ++c)
            ov[c] = (xv[c] - mu) * inv_std[r] * gain.values()[c] + bias.values()[c];
    }
    if (out.requires_grad()) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        active_tape()->record([xn, gn, bn, on, m, n, mean, inv_std] {
            for (int r = 0; r < m; ++r) {
                const double* xv = xn->val.data() + static_cast<size_t>(r) * n;
                const double* dy = on->grad.data() + static_cast<size_t>(r) * n;
                const double mu = mean[r], is = inv_std[r];
                if (gn->requires_grad || bn->requires_grad) {
                    if (gn->requires_grad) gn->ensure_grad();
                    if (bn->requires_grad) bn->ensure_grad();
                    for (int c = 0; c < n; ++c) {
                        if (gn->requires_grad) gn->grad[c] += dy[c] * (xv[c] - mu) * is;
                        if (bn->requires_grad) bn->grad[c] += dy[c];
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* dx = xn->grad.data() + static_cast<size_t>(r) * n;
                    // dxhat = dy * g;  dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double s1 = 0.0, s2 = 0.0;
                    for (int c = 0; c < n; ++c) {
                        const double dxhat = dy[c] * gn->val[c];
                        const double xhat = (xv[c] - mu) * is;
                        s1 += dxhat;
                        s2 += dxhat * xhat;
                    }
                    s1 /= n;
                    s2 /= n;
                    for (int c = 0; c < n; ++c) {
                        const double dxhat = dy[c] * gn->val[c];
                        const double xhat = (xv[c] - mu) * is;
                        dx[c] += is * (dxhat - s1 - xhat * s2);
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor log(const Tensor& x) {
    Tensor out = detail::make_out(x.shape(), x.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = std::log(x.values()[i]);
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] / xn->val[i];
        });
    }
    return out;
}

inline Tensor exp(const Tensor& x) {
    Tensor out = detail::make_out(x.shape(), x.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = std::exp(x.values()[i]);
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * on->val[i];
        });
    }
    return out;
}

inline Tensor gelu(const Tensor& x) {
    // tanh approximation
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    Tensor out = detail::make_out(x.shape(), x.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i) {
        const double v = x.values()[i];
        out.values()[i] = 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v)));
    }
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) {
                const double v = xn->val[i];
                const double u = k * (v + 0.044715 * v * v * v);
                const double t = std::tanh(u);
                const double du = k * (1.0 + 3.0 * 0.044715 * v * v);
                xn->grad[i] += on->grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        });
    }
    return out;
}

// out[i,:] = table[ids[i],:]
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    const int n = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= table.rows()) {
            throw std::invalid_argument("gather_rows: row " + std::to_string(id) +
                                        " out of range for " + shape_str(table.shape()));
        }
    }
    Tensor out = detail::make_out({static_cast<int>(ids.size()), n}, table.requires_grad());
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.values().data() + static_cast<size_t>(ids[i]) * n, n,
                    out.values().data() + i * n);
    if (out.requires_grad()) {
        auto tn = table.node(), on = out.node();
        active_tape()->record([tn, on, ids, n] {
            tn->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                const double* src = on->grad.data() + i * n;
                double* dst = tn->grad.data() + static_cast<size_t>(ids[i]) * n;
                for (int c = 0; c < n; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

// out = fill where mask is true, x elsewhere. Gradient is blocked at filled entries.
inline Tensor masked_fill(const Tensor& x, const std::vector<uint8_t>& mask, double fill) {
    if (mask.size() != x.numel()) {
        throw std::invalid_argument("masked_fill: shape mismatch " + shape_str(x.shape()) +
                                    " vs mask [" + std::to_string(mask.size()) + "]");
    }
    Tensor out = detail::make_out(x.shape(), x.requires_grad());
    for (size_t i = 0; i < out.numel(); ++i)
        out.values()[i] = mask[i] ? fill : x.values()[i];
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on, mask] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                if (!mask[i]) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

// out[k] = x[row_ids[k], col_ids[k]]
inline Tensor pick(const Tensor& x, const std::vector<int>& row_ids,
                   const std::vector<int>& col_ids) {
    if (row_ids.size() != col_ids.size()) {
        throw std::invalid_argument("pick: " + std::to_string(row_ids.size()) + " rows vs " +
                                    std::to_string(col_ids.size()) + " cols");
    }
    const int n = x.cols();
    Tensor out = detail::make_out({static_cast<int>(row_ids.size())}, x.requires_grad());
    for (size_t k = 0; k < row_ids.size(); ++k) {
        if (row_ids[k] < 0 || row_ids[k] >= x.rows() || col_ids[k] < 0 || col_ids[k] >= n) {
            throw std::invalid_argument("pick: index (" + std::to_string(row_ids[k]) + "," +
                                        std::to_string(col_ids[k]) + ") out of range for " +
                                        shape_str(x.shape()));
        }
        out.values()[k] = x.values()[static_cast<size_t>(row_ids[k]) * n + col_ids[k]];
    }
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on, row_ids, col_ids, n] {
            xn->ensure_grad();
            for (size_t k = 0; k < row_ids.size(); ++k)
                xn->grad[static_cast<size_t>(row_ids[k]) * n + col_ids[k]] += on->grad[k];
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    Tensor out = detail::make_out({1}, x.requires_grad());
    double s = 0.0;
    for (double v : x.values()) s += v;
    out.values()[0] = s;
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on] {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int width) {
    const int m = x.rows(), n = x.cols();
    if (c0 < 0 || width <= 0 || c0 + width > n) {
        throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                    std::to_string(c0 + width) + ") out of range for " +
                                    shape_str(x.shape()));
    }
    Tensor out = detail::make_out({m, width}, x.requires_grad());
    for (int r = 0; r < m; ++r)
        std::copy_n(x.values().data() + static_cast<size_t>(r) * n + c0, width,
                    out.values().data() + static_cast<size_t>(r) * width);
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on, c0, width, m, n] {
            xn->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* src = on->grad.data() + static_cast<size_t>(r) * width;
                double* dst = xn->grad.data() + static_cast<size_t>(r) * n + c0;
                for (int c = 0; c < width; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int count) {
    const int m = x.rows(), n = x.cols();
    if (r0 < 0 || count <= 0 || r0 + count > m) {
        throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," +
                                    std::to_string(r0 + count) + ") out of range for " +
                                    shape_str(x.shape()));
    }
    Tensor out = detail::make_out({count, n}, x.requires_grad());
    std::copy_n(x.values().data() + static_cast<size_t>(r0) * n,
                static_cast<size_t>(count) * n, out.values().data());
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        active_tape()->record([xn, on, r0, count, n] {
            xn->ensure_grad();
            const double* src = on->grad.data();
            double* dst = xn->grad.data() + static_cast<size_t>(r0) * n;
            for (size_t i = 0; i < static_cast<size_t>(count) * n; ++i) dst[i] += src[i];
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int n = parts[0].cols();
    int m = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.cols() != n) {
            throw std::invalid_argument("concat_rows: shape mismatch " +
                                        shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        m += p.rows();
        rg = rg || p.requires_grad();
    }
    Tensor out = detail::make_out({m, n}, rg);
    size_t at = 0;
    for (const auto& p : parts) {
        std::copy_n(p.values().data(), p.numel(), out.values().data() + at);
        at += p.numel();
    }
    if (out.requires_grad()) {
        auto on = out.node();
        std::vector<std::shared_ptr<TensorNode>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        active_tape()->record([nodes, on] {
            size_t at = 0;
            for (auto& pn : nodes) {
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    const double* src = on->grad.data() + at;
                    for (size_t i = 0; i < pn->val.size(); ++i) pn->grad[i] += src[i];
                }
                at += pn->val.size();
            }
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int m = parts[0].rows();
    int n = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rows() != m) {
            throw std::invalid_argument("concat_cols: shape mismatch " +
                                        shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        }
        n += p.cols();
        rg = rg || p.requires_grad();
    }
    Tensor out = detail::make_out({m, n}, rg);
    int c0 = 0;
    for (const auto& p : parts) {
        const int w = p.cols();
        for (int r = 0; r < m; ++r)
            std::copy_n(p.values().data() + static_cast<size_t>(r) * w, w,
                        out.values().data() + static_cast<size_t>(r) * n + c0);
        c0 += w;
    }
    if (out.requires_grad()) {
        auto on = out.node();
        std::vector<std::shared_ptr<TensorNode>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        active_tape()->record([nodes, on, m, n] {
            int c0 = 0;
            for (auto& pn : nodes) {
                const int w = pn->shape[1];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int r = 0; r < m; ++r) {
                        const double* src = on->grad.data() + static_cast<size_t>(r) * n + c0;
                        double* dst = pn->grad.data() + static_cast<size_t>(r) * w;
                        for (int c = 0; c < w; ++c) dst[c] += src[c];
                    }
                }
                c0 += w;
            }
        });
    }
    return out;
}

inline void backward(Tensor root) {
    if (!active_tape()) throw std::runtime_error("backward: no active tape");
    active_tape()->backward(std::move(root));
}

}  // namespace acot
