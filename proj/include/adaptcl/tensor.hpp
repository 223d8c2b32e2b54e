#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adaptcl/error.hpp"

namespace adaptcl {

template <typename Real>
class TapeT;

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

} // namespace detail

// Dense row-major tensor. A TensorT is a cheap handle: copies alias the
// same storage, and all operations in ops.hpp are functional (they allocate
// fresh storage for their result, never mutating inputs). In-place mutation
// is reserved for parameter updates between tape lifetimes.
template <typename Real>
class TensorT {
public:
    using value_type = Real;

    TensorT() : shape_{0}, st_(std::make_shared<Storage>()) {}

    static TensorT zeros(std::vector<std::size_t> shape) {
        check_positive(shape);
        return TensorT(std::move(shape), Real(0));
    }

    static TensorT full(std::vector<std::size_t> shape, Real v) {
        check_positive(shape);
        return TensorT(std::move(shape), v);
    }

    static TensorT scalar(Real v) { return TensorT({1}, v); }

    static TensorT from_data(std::vector<std::size_t> shape, std::vector<Real> data) {
        check_positive(shape);
        TensorT t;
        const std::size_t n = detail::shape_numel(shape);
        if (n != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + detail::shape_str(shape));
        }
        t.shape_ = std::move(shape);
        t.st_->data = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return st_->data.size(); }

    std::size_t rows() const {
        require_rank(2, "rows()");
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank(2, "cols()");
        return shape_[1];
    }

    bool is_scalar() const { return size() == 1; }

    std::vector<Real>& data() { return st_->data; }
    const std::vector<Real>& data() const { return st_->data; }

    Real& at(std::size_t i) { return st_->data[i]; }
    Real at(std::size_t i) const { return st_->data[i]; }
    Real& at(std::size_t r, std::size_t c) { return st_->data[r * shape_[1] + c]; }
    Real at(std::size_t r, std::size_t c) const { return st_->data[r * shape_[1] + c]; }

    Real item() const {
        if (!is_scalar()) {
            throw ContractError("item() requires a scalar tensor, got shape " +
                                detail::shape_str(shape_));
        }
        return st_->data[0];
    }

    bool requires_grad() const { return st_->requires_grad; }
    TensorT& set_requires_grad(bool b) {
        st_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return st_->has_grad; }

    const std::vector<Real>& grad() const {
        if (!st_->has_grad) {
            throw ContractError("grad accessed before backward populated it");
        }
        return st_->grad;
    }

    // Gradient state lives in the shared storage, so these are callable on
    // any handle, including the const copies captured by tape closures.
    void clear_grad() const {
        st_->grad.clear();
        st_->has_grad = false;
    }

    // Allocates a zeroed grad buffer on first use, then accumulates.
    void accumulate_grad(const std::vector<Real>& g) const {
        if (!st_->requires_grad) return;
        if (!st_->has_grad) {
            st_->grad.assign(size(), Real(0));
            st_->has_grad = true;
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            st_->grad[i] += g[i];
        }
    }

    void seed_grad(Real v) const {
        st_->grad.assign(size(), v);
        st_->has_grad = true;
    }

    // True when both handles alias the same storage.
    bool same_storage(const TensorT& other) const { return st_ == other.st_; }

    // Deep copy with detached gradient state.
    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.st_->data = st_->data;
        t.st_->requires_grad = st_->requires_grad;
        return t;
    }

    // Differentiation record: id of the tape node that produced this tensor,
    // or -1 for leaves.
    int node() const { return node_; }
    TapeT<Real>* tape() const { return tape_; }
    void set_record(TapeT<Real>* tape, int node) {
        tape_ = tape;
        node_ = node;
    }

private:
    struct Storage {
        std::vector<Real> data;
        std::vector<Real> grad;
        bool requires_grad = false;
        bool has_grad = false;
    };

    TensorT(std::vector<std::size_t> shape, Real fill) : shape_(std::move(shape)) {
        st_ = std::make_shared<Storage>();
        st_->data.assign(detail::shape_numel(shape_), fill);
    }

    void require_rank(std::size_t r, const char* what) const {
        if (shape_.size() != r) {
            throw DimensionError(std::string(what) + " requires rank-" + std::to_string(r) +
                                 " tensor, got shape " + detail::shape_str(shape_));
        }
    }

    static void check_positive(const std::vector<std::size_t>& shape) {
        if (shape.empty()) {
            throw DimensionError("tensor shape must have at least one dimension");
        }
        for (std::size_t d : shape) {
            if (d == 0) {
                throw DimensionError("tensor dimensions must be positive, got shape " +
                                     detail::shape_str(shape));
            }
        }
    }

    std::vector<std::size_t> shape_;
    std::shared_ptr<Storage> st_;
    TapeT<Real>* tape_ = nullptr;
    int node_ = -1;
};

// Reverse-mode tape. Operations append nodes in execution order, so every
// node's parents precede it and a single reverse sweep is a valid
// topological backward pass that touches each node exactly once.
//
// A tape is single-threaded: one training step records onto one tape.
// Activation is per-thread, so concurrent sweep grid points each own a tape.
template <typename Real>
class TapeT {
public:
    struct Node {
        const char* op;
        std::vector<int> parents; // node ids; -1 marks a leaf input
        std::function<void()> pull;
    };

    // RAII activation: ops record onto the innermost active tape of the
    // current thread.
    class Scope {
    public:
        explicit Scope(TapeT* t) : prev_(active_), mine_(t) { active_ = t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        TapeT* prev_;
        TapeT* mine_;
    };

    Scope activate() { return Scope(this); }

    static TapeT* active() { return active_; }

    int record(const char* op, std::vector<int> parents, std::function<void()> pull) {
        nodes_.push_back(Node{op, std::move(parents), std::move(pull)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t node_count() const { return nodes_.size(); }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

    // Reverse sweep from `from` down to node 0. Each node propagates its
    // output gradient into its parents' grad buffers.
    void run_backward_from(int from) {
        for (int i = from; i >= 0; --i) {
            nodes_[static_cast<std::size_t>(i)].pull();
        }
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
    static thread_local TapeT* active_;
};

template <typename Real>
thread_local TapeT<Real>* TapeT<Real>::active_ = nullptr;

// Seeds d(loss)/d(loss) = 1 and sweeps the tape the loss was recorded on.
// Frozen tensors (requires_grad == false) never receive gradients.
template <typename Real>
void backward(TensorT<Real>& loss) {
    if (!loss.is_scalar()) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            detail::shape_str(loss.shape()));
    }
    if (loss.tape() == nullptr || loss.node() < 0) {
        throw ContractError("backward requires a loss connected to a tape");
    }
    loss.seed_grad(Real(1));
    loss.tape()->run_backward_from(loss.node());
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using Tensor64 = TensorT<double>;
using Tape64 = TapeT<double>;

} // namespace adaptcl
