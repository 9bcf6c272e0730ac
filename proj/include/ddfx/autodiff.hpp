#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "ddfx/tensor.hpp"

// Tape-based reverse-mode automatic differentiation over Tensor.
//
// A Var wraps an immutable value. Untracked Vars (constants) never touch a
// tape and can be shared across threads. An operation whose inputs include a
// tracked Var records itself on that Var's tape; the tape's record order is a
// topological order, so backward is a single reverse sweep.

namespace ddfx {

class Tape;

using NodeId = std::int64_t;

using BackwardFn = std::function<void(const Tensor& out, const Tensor& grad_out, std::span<const Tensor* const> in,
                                      std::span<Tensor* const> grad_in)>;

namespace detail {
struct Node {
    Tensor value;
    std::vector<std::shared_ptr<const Node>> inputs;
    BackwardFn backward;
    Tape* tape = nullptr;
    NodeId id = -1;
};
}  // namespace detail

class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool defined() const { return node_ != nullptr; }
    bool tracked() const { return node_ && node_->tape != nullptr; }
    NodeId id() const { return node_ ? node_->id : -1; }
    Tape* tape() const { return node_ ? node_->tape : nullptr; }

private:
    explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend class Tape;
    friend Var constant(Tensor value);
    friend Var record_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward);
};

/// Untracked value.
Var constant(Tensor value);

/// Adjoints of the tracked leaves of a tape, keyed by node id.
class Gradients {
public:
    const Tensor& at(const Var& leaf) const;
    const Tensor& at(NodeId id) const;
    bool contains(NodeId id) const { return grads_.count(id) != 0; }
    std::size_t size() const { return grads_.size(); }

private:
    std::unordered_map<NodeId, Tensor> grads_;
    friend class Tape;
};

class Tape {
public:
    static constexpr std::size_t kDefaultBudgetBytes = std::size_t{3} << 30;

    explicit Tape(std::size_t budget_bytes = kDefaultBudgetBytes) : budget_(budget_bytes) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Tracked leaf (a parameter or input we want adjoints for).
    Var leaf(Tensor value);

    /// Adjoints of every tracked leaf. Does not mutate the tape, so repeated
    /// calls return identical results.
    Gradients backward(const Var& loss) const;

    std::size_t size() const { return nodes_.size(); }
    std::size_t bytes() const { return bytes_; }

private:
    Var push(std::shared_ptr<detail::Node> node);

    std::vector<std::shared_ptr<detail::Node>> nodes_;
    std::size_t budget_;
    std::size_t bytes_ = 0;

    friend Var record_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward);
};

/// Builds the result of a primitive. Checks finiteness and records on the tape
/// of the tracked inputs, if any.
Var record_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward);

namespace ad {

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var silu(const Var& a);

/// op(a) * op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// Batched matmul over a shared leading axis: [B, ., .] x [B, ., .].
Var bmm(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// x[..., in] * W^T + bias, W is [out, in].
Var linear(const Var& x, const Var& weight, const Var& bias = {});

Var softmax(const Var& a);  // over the last axis
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::int64_t begin, std::int64_t end);
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_axis(const Var& a, std::size_t axis);  // removes the axis
/// Right-aligned broadcast; each source extent equals the target or is 1.
Var broadcast_to(const Var& a, const Shape& shape);
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& perm);
Var gather_rows(const Var& table, const std::vector<std::int64_t>& rows);

/// grid [H, W, C], coords [P, 2] as (row, col) with cell (i, j) at integer
/// coordinates. Zero padding outside the grid. Returns [P, C].
Var bilinear_sample(const Var& grid, const Var& coords);

/// x [B, H, W, Cin], w [Cout, 3, 3, Cin]; stride 1, same padding.
Var conv3x3(const Var& x, const Var& w);
Var avg_pool(const Var& x, std::int64_t k);          // [B, H, W, C] -> [B, H/k, W/k, C]
Var upsample_nearest(const Var& x, std::int64_t k);  // [B, H, W, C] -> [B, kH, kW, C]

}  // namespace ad

/// max over coordinates of |analytic - central difference| / (|central difference| + 1e-8).
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h);

}  // namespace ddfx
