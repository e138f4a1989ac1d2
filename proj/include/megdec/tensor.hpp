#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "megdec/common.hpp"

namespace megdec {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using CMatMap = Eigen::Map<const RowMatrix<S>>;

using RowMatrixXf = RowMatrix<float>;

inline Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename S>
struct TensorNode {
    Shape shape;
    ArrayX<S> data;
    ArrayX<S> grad;  // empty until backward first touches it
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backward_fn;

    void accumulate(const ArrayX<S>& g) {
        if (grad.size() == 0) {
            grad = g;
        } else {
            grad += g;
        }
    }
};

/// Dense n-d array on a reverse-mode tape. A Tensor is a cheap handle; the
/// node (data, grad, backward closure) is shared. Node data is treated as
/// immutable once an op has consumed it; only parameter leaves are updated
/// in place, by the optimizer, between tape builds.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return filled(std::move(shape), S(0));
    }

    static Tensor filled(Shape shape, S value) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->data = ArrayX<S>::Constant(shape_numel(t.node_->shape), value);
        return t;
    }

    static Tensor from_vector(Shape shape, const std::vector<S>& values) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        Index n = shape_numel(t.node_->shape);
        if (Index(values.size()) != n) {
            throw DimensionError("Tensor::from_vector: " + std::to_string(values.size()) +
                                 " values for shape " + shape_str(t.node_->shape));
        }
        t.node_->data = Eigen::Map<const ArrayX<S>>(values.data(), n);
        return t;
    }

    static Tensor from_array(Shape shape, ArrayX<S> values) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        if (values.size() != shape_numel(t.node_->shape)) {
            throw DimensionError("Tensor::from_array: size mismatch for shape " +
                                 shape_str(t.node_->shape));
        }
        t.node_->data = std::move(values);
        return t;
    }

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Index rank() const { return Index(node_->shape.size()); }
    Index dim(size_t i) const { return node_->shape[i]; }
    Index numel() const { return node_->data.size(); }

    ArrayX<S>& array() { return node_->data; }
    const ArrayX<S>& array() const { return node_->data; }

    MatMap<S> as_matrix(Index rows, Index cols) {
        return MatMap<S>(node_->data.data(), rows, cols);
    }
    CMatMap<S> as_matrix(Index rows, Index cols) const {
        return CMatMap<S>(node_->data.data(), rows, cols);
    }

    S item() const {
        if (numel() != 1) throw UsageError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() > 0; }
    const ArrayX<S>& grad() const {
        if (!has_grad()) throw UsageError("Tensor::grad: gradient not populated");
        return node_->grad;
    }
    void zero_grad() { node_->grad.resize(0); }

    /// Detached deep copy (leaf, no history).
    Tensor clone() const {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    std::shared_ptr<TensorNode<S>>& node() { return node_; }
    const std::shared_ptr<TensorNode<S>>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

template <typename S>
Tensor<S> make_uninit(Shape shape) {
    Tensor<S> t = Tensor<S>::from_array(shape, ArrayX<S>(shape_numel(shape)));
    return t;
}

/// Wires `out` to its parents: marks requires_grad if any parent needs it
/// and records the backward closure; otherwise the tape edge is dropped.
template <typename S>
void attach(Tensor<S>& out, std::initializer_list<Tensor<S>> parents,
            std::function<void(TensorNode<S>&)> fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (!needs) return;
    out.node()->requires_grad = true;
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(fn);
}

}  // namespace detail

// ----------------------------- backward -----------------------------

template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) {
        throw UsageError("backward: loss must be a scalar tensor, got shape " +
                         shape_str(loss.shape()));
    }
    // iterative post-order DFS over parents
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> done;
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (done.count(n)) {
            stack.pop_back();
            continue;
        }
        if (next < n->parents.size()) {
            TensorNode<S>* p = n->parents[next++].get();
            if (!done.count(p)) stack.push_back({p, 0});
        } else {
            done.insert(n);
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->grad = ArrayX<S>::Ones(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>* n = *it;
        if (n->backward_fn && n->grad.size() > 0) n->backward_fn(*n);
    }
}

// ----------------------------- elementwise ops -----------------------------

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "add");
    Tensor<S> out = Tensor<S>::from_array(a.shape(), a.array() + b.array());
    auto pa = a.node().get();
    auto pb = b.node().get();
    detail::attach<S>(out, {a, b}, [pa, pb](TensorNode<S>& self) {
        if (pa->requires_grad) pa->accumulate(self.grad);
        if (pb->requires_grad) pb->accumulate(self.grad);
    });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "sub");
    Tensor<S> out = Tensor<S>::from_array(a.shape(), a.array() - b.array());
    auto pa = a.node().get();
    auto pb = b.node().get();
    detail::attach<S>(out, {a, b}, [pa, pb](TensorNode<S>& self) {
        if (pa->requires_grad) pa->accumulate(self.grad);
        if (pb->requires_grad) pb->accumulate(ArrayX<S>(-self.grad));
    });
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "mul");
    Tensor<S> out = Tensor<S>::from_array(a.shape(), a.array() * b.array());
    auto pa = a.node().get();
    auto pb = b.node().get();
    detail::attach<S>(out, {a, b}, [pa, pb](TensorNode<S>& self) {
        if (pa->requires_grad) pa->accumulate(ArrayX<S>(self.grad * pb->data));
        if (pb->requires_grad) pb->accumulate(ArrayX<S>(self.grad * pa->data));
    });
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
    Tensor<S> out = Tensor<S>::from_array(a.shape(), ArrayX<S>(a.array() * s));
    auto pa = a.node().get();
    detail::attach<S>(out, {a}, [pa, s](TensorNode<S>& self) {
        pa->accumulate(ArrayX<S>(self.grad * s));
    });
    return out;
}

/// x viewed as [R, M] rows plus a broadcast row c of M elements.
template <typename S>
Tensor<S> add_broadcast_rows(const Tensor<S>& x, const Tensor<S>& c) {
    Index m = c.numel();
    if (m == 0 || x.numel() % m != 0) {
        throw DimensionError("add_broadcast_rows: " + shape_str(c.shape()) +
                             " does not tile " + shape_str(x.shape()));
    }
    Index rows = x.numel() / m;
    Tensor<S> out = detail::make_uninit<S>(x.shape());
    out.as_matrix(rows, m) = x.as_matrix(rows, m).rowwise() + c.as_matrix(1, m).row(0);
    auto px = x.node().get();
    auto pc = c.node().get();
    detail::attach<S>(out, {x, c}, [px, pc, rows, m](TensorNode<S>& self) {
        if (px->requires_grad) px->accumulate(self.grad);
        if (pc->requires_grad) {
            CMatMap<S> g(self.grad.data(), rows, m);
            ArrayX<S> dc = g.colwise().sum().transpose().array();
            pc->accumulate(dc);
        }
    });
    return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::from_array(a.shape(), ArrayX<S>(a.array().max(S(0))));
    auto pa = a.node().get();
    ArrayX<S> mask = (a.array() > S(0)).template cast<S>();
    detail::attach<S>(out, {a}, [pa, mask = std::move(mask)](TensorNode<S>& self) {
        pa->accumulate(ArrayX<S>(self.grad * mask));
    });
    return out;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::from_array({1}, ArrayX<S>::Constant(1, a.array().sum()));
    auto pa = a.node().get();
    Index n = a.numel();
    detail::attach<S>(out, {a}, [pa, n](TensorNode<S>& self) {
        pa->accumulate(ArrayX<S>::Constant(n, self.grad[0]));
    });
    return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), S(1) / S(a.numel()));
}

template <typename S>
Tensor<S> select_scalar(const Tensor<S>& a, Index flat_index) {
    if (flat_index < 0 || flat_index >= a.numel()) {
        throw UsageError("select_scalar: index " + std::to_string(flat_index) +
                         " out of range for " + std::to_string(a.numel()) + " elements");
    }
    Tensor<S> out = Tensor<S>::from_array({1}, ArrayX<S>::Constant(1, a.array()[flat_index]));
    auto pa = a.node().get();
    Index n = a.numel();
    detail::attach<S>(out, {a}, [pa, n, flat_index](TensorNode<S>& self) {
        ArrayX<S> g = ArrayX<S>::Zero(n);
        g[flat_index] = self.grad[0];
        pa->accumulate(g);
    });
    return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    }
    Tensor<S> out = Tensor<S>::from_array(std::move(shape), ArrayX<S>(a.array()));
    auto pa = a.node().get();
    detail::attach<S>(out, {a}, [pa](TensorNode<S>& self) { pa->accumulate(self.grad); });
    return out;
}

namespace detail {

inline std::vector<Index> row_major_strides(const Shape& s) {
    std::vector<Index> st(s.size(), 1);
    for (int i = int(s.size()) - 2; i >= 0; --i) st[size_t(i)] = st[size_t(i) + 1] * s[size_t(i) + 1];
    return st;
}

template <typename S>
ArrayX<S> permute_raw(const ArrayX<S>& data, const Shape& in_shape, const std::vector<int>& axes) {
    Shape out_shape(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[size_t(axes[i])];
    auto in_strides = row_major_strides(in_shape);
    auto out_strides = row_major_strides(out_shape);
    ArrayX<S> out(data.size());
    size_t r = axes.size();
    std::vector<Index> idx(r, 0);
    for (Index lin = 0; lin < data.size(); ++lin) {
        // lin indexes the output; map its multi-index back to the input
        Index rem = lin;
        Index src = 0;
        for (size_t d = 0; d < r; ++d) {
            Index q = rem / out_strides[d];
            rem -= q * out_strides[d];
            src += q * in_strides[size_t(axes[d])];
        }
        out[lin] = data[src];
    }
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> permute(const Tensor<S>& a, std::vector<int> axes) {
    if (Index(axes.size()) != a.rank()) {
        throw DimensionError("permute: axes rank mismatch for " + shape_str(a.shape()));
    }
    Shape out_shape(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = a.dim(size_t(axes[i]));
    Tensor<S> out = Tensor<S>::from_array(out_shape, detail::permute_raw(a.array(), a.shape(), axes));
    auto pa = a.node().get();
    std::vector<int> inv(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inv[size_t(axes[i])] = int(i);
    Shape oshape = out_shape;
    detail::attach<S>(out, {a}, [pa, inv = std::move(inv), oshape = std::move(oshape)](TensorNode<S>& self) {
        pa->accumulate(detail::permute_raw(self.grad, oshape, inv));
    });
    return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner axis mismatch (axis 1 of " + shape_str(a.shape()) +
                             " vs axis 0 of " + shape_str(b.shape()) + ")");
    }
    Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = detail::make_uninit<S>({m, n});
    out.as_matrix(m, n).noalias() = a.as_matrix(m, k) * b.as_matrix(k, n);
    auto pa = a.node().get();
    auto pb = b.node().get();
    detail::attach<S>(out, {a, b}, [pa, pb, m, k, n](TensorNode<S>& self) {
        CMatMap<S> g(self.grad.data(), m, n);
        if (pa->requires_grad) {
            ArrayX<S> da(m * k);
            MatMap<S>(da.data(), m, k).noalias() = g * CMatMap<S>(pb->data.data(), k, n).transpose();
            pa->accumulate(da);
        }
        if (pb->requires_grad) {
            ArrayX<S> db(k * n);
            MatMap<S>(db.data(), k, n).noalias() = CMatMap<S>(pa->data.data(), m, k).transpose() * g;
            pb->accumulate(db);
        }
    });
    return out;
}

/// Batched matmul over leading axis: [N,m,k] x [N,k,n] -> [N,m,n].
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
        throw DimensionError("bmm: expects [N,m,k] x [N,k,n], got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    if (a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: inner axis mismatch (axis 2 of " + shape_str(a.shape()) +
                             " vs axis 1 of " + shape_str(b.shape()) + ")");
    }
    Index N = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<S> out = detail::make_uninit<S>({N, m, n});
    for (Index i = 0; i < N; ++i) {
        MatMap<S>(out.array().data() + i * m * n, m, n).noalias() =
            CMatMap<S>(a.array().data() + i * m * k, m, k) *
            CMatMap<S>(b.array().data() + i * k * n, k, n);
    }
    auto pa = a.node().get();
    auto pb = b.node().get();
    detail::attach<S>(out, {a, b}, [pa, pb, N, m, k, n](TensorNode<S>& self) {
        if (pa->requires_grad) {
            ArrayX<S> da(N * m * k);
            for (Index i = 0; i < N; ++i) {
                MatMap<S>(da.data() + i * m * k, m, k).noalias() =
                    CMatMap<S>(self.grad.data() + i * m * n, m, n) *
                    CMatMap<S>(pb->data.data() + i * k * n, k, n).transpose();
            }
            pa->accumulate(da);
        }
        if (pb->requires_grad) {
            ArrayX<S> db(N * k * n);
            for (Index i = 0; i < N; ++i) {
                MatMap<S>(db.data() + i * k * n, k, n).noalias() =
                    CMatMap<S>(pa->data.data() + i * m * k, m, k).transpose() *
                    CMatMap<S>(self.grad.data() + i * m * n, m, n);
            }
            pb->accumulate(db);
        }
    });
    return out;
}

/// Mean over the last axis: [..., D] -> [...].
template <typename S>
Tensor<S> mean_lastdim(const Tensor<S>& a) {
    if (a.rank() < 2) throw DimensionError("mean_lastdim: expects rank >= 2");
    Index d = a.dim(size_t(a.rank() - 1));
    Index rows = a.numel() / d;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    Tensor<S> out = detail::make_uninit<S>(out_shape);
    Eigen::Map<ArrayX<S>>(out.array().data(), rows) =
        a.as_matrix(rows, d).rowwise().mean().array();
    auto pa = a.node().get();
    detail::attach<S>(out, {a}, [pa, rows, d](TensorNode<S>& self) {
        ArrayX<S> g(rows * d);
        MatMap<S> gm(g.data(), rows, d);
        gm = (Eigen::Map<const ArrayX<S>>(self.grad.data(), rows) / S(d))
                 .matrix()
                 .replicate(1, d);
        pa->accumulate(g);
    });
    return out;
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
    return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
    return mul(a, b);
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace megdec
