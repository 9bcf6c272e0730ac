#include "ddfx/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ddfx/errors.hpp"
#include "ddfx/kernels.hpp"

namespace ddfx {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void arg_error(const char* op, const std::string& what) {
    throw ContractError(std::string(op) + ": " + what);
}

std::int64_t product(const Shape& s, std::size_t begin, std::size_t end) {
    std::int64_t p = 1;
    for (std::size_t i = begin; i < end; ++i) p *= s[i];
    return p;
}

}  // namespace

const Tensor& Var::value() const {
    if (!node_) throw ContractError("Var: undefined value");
    return node_->value;
}

Var constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("constant: non-finite value");
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

const Tensor& Gradients::at(const Var& leaf) const { return at(leaf.id()); }

const Tensor& Gradients::at(NodeId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw ContractError("gradients: node " + std::to_string(id) + " is not a tracked leaf");
    return it->second;
}

Var Tape::push(std::shared_ptr<detail::Node> node) {
    const std::size_t cost = node->value.size() * sizeof(double) + sizeof(detail::Node);
    if (bytes_ + cost > budget_) {
        throw ResourceError("tape exhausted: " + std::to_string(bytes_ + cost) + " bytes exceeds budget of " +
                            std::to_string(budget_));
    }
    bytes_ += cost;
    node->tape = this;
    node->id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(node);
    return Var(std::move(node));
}

Var Tape::leaf(Tensor value) {
    if (!value.all_finite()) throw NumericError("leaf: non-finite value");
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    return push(std::move(n));
}

Gradients Tape::backward(const Var& loss) const {
    if (!loss.tracked() || loss.tape() != this) throw ContractError("backward: loss is not recorded on this tape");
    if (loss.value().size() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));

    const auto n = static_cast<std::size_t>(loss.id()) + 1;
    std::vector<Tensor> adj(n);
    std::vector<char> live(n, 0);
    adj[n - 1] = Tensor::full(loss.shape(), 1.0);
    live[n - 1] = 1;

    std::vector<const Tensor*> in;
    std::vector<Tensor*> gin;
    for (std::size_t i = n; i-- > 0;) {
        const auto& node = nodes_[i];
        if (!live[i] || !node->backward) continue;
        in.clear();
        gin.clear();
        for (const auto& p : node->inputs) {
            in.push_back(&p->value);
            if (p->tape == this) {
                const auto pid = static_cast<std::size_t>(p->id);
                if (!live[pid]) {
                    adj[pid] = Tensor(p->value.shape());
                    live[pid] = 1;
                }
                gin.push_back(&adj[pid]);
            } else {
                gin.push_back(nullptr);
            }
        }
        node->backward(node->value, adj[i], in, gin);
        adj[i] = Tensor();
    }

    Gradients g;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& node = nodes_[i];
        if (node->backward) continue;
        if (i < n && live[i])
            g.grads_.emplace(node->id, std::move(adj[i]));
        else
            g.grads_.emplace(node->id, Tensor(node->value.shape()));
    }
    return g;
}

Var record_op(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NumericError(std::string(name) + ": non-finite result");
    Tape* tape = nullptr;
    for (const auto& v : inputs) {
        if (!v.defined()) arg_error(name, "undefined input");
        if (v.tracked()) {
            if (tape && tape != v.tape()) arg_error(name, "inputs recorded on different tapes");
            tape = v.tape();
        }
    }
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    if (!tape) return Var(std::move(node));
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node_);
    node->backward = std::move(backward);
    return tape->push(std::move(node));
}

namespace ad {

namespace {

template <class Fwd, class Dfdx>
Var unary(const char* name, const Var& a, Fwd f, Dfdx df) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return record_op(name, std::move(y), {a},
                     [df](const Tensor& out, const Tensor& g, std::span<const Tensor* const> in,
                          std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         const Tensor& xin = *in[0];
                         Tensor& gx = *gin[0];
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xin[i], out[i]);
                     });
}

void require_same(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same("add", a, b);
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    return record_op("add", std::move(y), {a, b},
                     [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                         for (auto* gp : gin)
                             if (gp)
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
                     });
}

Var sub(const Var& a, const Var& b) {
    require_same("sub", a, b);
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
    return record_op("sub", std::move(y), {a, b},
                     [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                         if (gin[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                         if (gin[1])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                     });
}

Var mul(const Var& a, const Var& b) {
    require_same("mul", a, b);
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    return record_op("mul", std::move(y), {a, b},
                     [](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                        std::span<Tensor* const> gin) {
                         if (gin[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i];
                         if (gin[1])
                             for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*in[0])[i];
                     });
}

Var scale(const Var& a, double c) {
    return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
    return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var tanh(const Var& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sqrt(const Var& a) {
    for (double x : a.value().data())
        if (x < 0.0) throw NumericError("sqrt: negative input");
    return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var exp(const Var& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var silu(const Var& a) {
    return unary(
        "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

namespace {

// Gradients of C = op(A) op(B) for one (m, n, k) block, accumulated.
void gemm_backward(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const double* A,
                   const double* B, const double* G, double* gA, double* gB) {
    if (gA) {
        if (!trans_a && !trans_b) kernels::gemm(false, true, {m, k, n}, G, B, gA, true);
        else if (!trans_a && trans_b) kernels::gemm(false, false, {m, k, n}, G, B, gA, true);
        else if (trans_a && !trans_b) kernels::gemm(false, true, {k, m, n}, B, G, gA, true);
        else kernels::gemm(true, true, {k, m, n}, B, G, gA, true);
    }
    if (gB) {
        if (!trans_a && !trans_b) kernels::gemm(true, false, {k, n, m}, A, G, gB, true);
        else if (!trans_a && trans_b) kernels::gemm(true, false, {n, k, m}, G, A, gB, true);
        else if (trans_a && !trans_b) kernels::gemm(false, false, {k, n, m}, A, G, gB, true);
        else kernels::gemm(true, true, {n, k, m}, G, A, gB, true);
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2) shape_error("matmul", sa, sb);
    const std::int64_t m = trans_a ? sa[1] : sa[0];
    const std::int64_t k = trans_a ? sa[0] : sa[1];
    const std::int64_t kb = trans_b ? sb[1] : sb[0];
    const std::int64_t n = trans_b ? sb[0] : sb[1];
    if (k != kb) shape_error("matmul", sa, sb);
    Tensor y({m, n});
    kernels::gemm(trans_a, trans_b, {m, n, k}, a.value().data().data(), b.value().data().data(), y.data().data(),
                  false);
    return record_op("matmul", std::move(y), {a, b},
                     [=](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                         std::span<Tensor* const> gin) {
                         gemm_backward(trans_a, trans_b, m, n, k, in[0]->data().data(), in[1]->data().data(),
                                       g.data().data(), gin[0] ? gin[0]->data().data() : nullptr,
                                       gin[1] ? gin[1]->data().data() : nullptr);
                     });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) shape_error("bmm", sa, sb);
    const std::int64_t batch = sa[0];
    const std::int64_t m = trans_a ? sa[2] : sa[1];
    const std::int64_t k = trans_a ? sa[1] : sa[2];
    const std::int64_t kb = trans_b ? sb[2] : sb[1];
    const std::int64_t n = trans_b ? sb[1] : sb[2];
    if (k != kb) shape_error("bmm", sa, sb);
    const std::int64_t sza = m * k, szb = k * n, szc = m * n;
    Tensor y({batch, m, n});
    for (std::int64_t i = 0; i < batch; ++i)
        kernels::gemm(trans_a, trans_b, {m, n, k}, a.value().data().data() + i * sza,
                      b.value().data().data() + i * szb, y.data().data() + i * szc, false);
    return record_op("bmm", std::move(y), {a, b},
                     [=](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                         std::span<Tensor* const> gin) {
                         for (std::int64_t i = 0; i < batch; ++i)
                             gemm_backward(trans_a, trans_b, m, n, k, in[0]->data().data() + i * sza,
                                           in[1]->data().data() + i * szb, g.data().data() + i * szc,
                                           gin[0] ? gin[0]->data().data() + i * sza : nullptr,
                                           gin[1] ? gin[1]->data().data() + i * szb : nullptr);
                     });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sx.empty() || sw.size() != 2 || sx.back() != sw[1]) shape_error("linear", sx, sw);
    const std::int64_t rows = numel(sx) / sx.back();
    Var y = matmul(reshape(x, {rows, sx.back()}), weight, false, true);
    Shape out = sx;
    out.back() = sw[0];
    y = reshape(y, out);
    if (bias.defined()) {
        if (bias.shape() != Shape{sw[0]}) shape_error("linear bias", bias.shape(), {sw[0]});
        y = add(y, broadcast_to(bias, out));
    }
    return y;
}

Var softmax(const Var& a) {
    const Shape& s = a.shape();
    if (s.empty()) arg_error("softmax", "rank-0 input");
    const std::int64_t n = s.back();
    const std::int64_t rows = n == 0 ? 0 : numel(s) / n;
    Tensor y(s);
    const Tensor& x = a.value();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * n;
        double* yr = y.data().data() + r * n;
        double mx = xr[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::int64_t j = 0; j < n; ++j) yr[j] /= z;
    }
    return record_op("softmax", std::move(y), {a},
                     [n, rows](const Tensor& out, const Tensor& g, std::span<const Tensor* const>,
                               std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::int64_t r = 0; r < rows; ++r) {
                             const double* yr = out.data().data() + r * n;
                             const double* gr = g.data().data() + r * n;
                             double dot = 0.0;
                             for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                             double* gx = gin[0]->data().data() + r * n;
                             for (std::int64_t j = 0; j < n; ++j) gx[j] += yr[j] * (gr[j] - dot);
                         }
                     });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) arg_error("concat", "no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) arg_error("concat", "axis out of range for " + shape_str(s0));
    Shape out = s0;
    out[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) shape_error("concat", s0, s);
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d]) shape_error("concat", s0, s);
        out[axis] += s[axis];
    }
    const std::int64_t outer = product(s0, 0, axis);
    const std::int64_t inner = product(s0, axis + 1, s0.size());
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
    const std::int64_t total = out[axis] * inner;
    Tensor y(out);
    std::int64_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].value().data().data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(src + o * widths[k], widths[k], y.data().data() + o * total + off);
        off += widths[k];
    }
    return record_op("concat", std::move(y), parts,
                     [outer, total, widths](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                                            std::span<Tensor* const> gin) {
                         std::int64_t off = 0;
                         for (std::size_t k = 0; k < gin.size(); ++k) {
                             if (gin[k]) {
                                 double* dst = gin[k]->data().data();
                                 for (std::int64_t o = 0; o < outer; ++o)
                                     for (std::int64_t j = 0; j < widths[k]; ++j)
                                         dst[o * widths[k] + j] += g[o * total + off + j];
                             }
                             off += widths[k];
                         }
                     });
}

Var slice(const Var& a, std::size_t axis, std::int64_t begin, std::int64_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size() || begin < 0 || end < begin || end > s[axis])
        arg_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                               shape_str(s));
    Shape out = s;
    out[axis] = end - begin;
    const std::int64_t outer = product(s, 0, axis);
    const std::int64_t inner = product(s, axis + 1, s.size());
    const std::int64_t src_w = s[axis] * inner, dst_w = out[axis] * inner, off = begin * inner;
    Tensor y(out);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(a.value().data().data() + o * src_w + off, dst_w, y.data().data() + o * dst_w);
    return record_op("slice", std::move(y), {a},
                     [=](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                         std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         double* dst = gin[0]->data().data();
                         for (std::int64_t o = 0; o < outer; ++o)
                             for (std::int64_t j = 0; j < dst_w; ++j) dst[o * src_w + off + j] += g[o * dst_w + j];
                     });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return record_op("sum", Tensor::scalar(s), {a},
                     [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (auto& x : gin[0]->data()) x += g[0];
                     });
}

Var mean(const Var& a) {
    const auto n = a.value().size();
    if (n == 0) arg_error("mean", "empty input");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_axis(const Var& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) arg_error("mean_axis", "axis out of range for " + shape_str(s));
    if (s[axis] == 0) arg_error("mean_axis", "empty axis in " + shape_str(s));
    Shape out;
    for (std::size_t d = 0; d < s.size(); ++d)
        if (d != axis) out.push_back(s[d]);
    const std::int64_t outer = product(s, 0, axis), len = s[axis], inner = product(s, axis + 1, s.size());
    Tensor y(out);
    const double inv = 1.0 / static_cast<double>(len);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::int64_t l = 0; l < len; ++l) acc += a.value()[(o * len + l) * inner + i];
            y[o * inner + i] = acc * inv;
        }
    return record_op("mean_axis", std::move(y), {a},
                     [=](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                         std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::int64_t o = 0; o < outer; ++o)
                             for (std::int64_t l = 0; l < len; ++l)
                                 for (std::int64_t i = 0; i < inner; ++i)
                                     (*gin[0])[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                     });
}

Var broadcast_to(const Var& a, const Shape& shape) {
    const Shape& s = a.shape();
    if (s.size() > shape.size()) shape_error("broadcast", s, shape);
    const std::size_t lead = shape.size() - s.size();
    Shape padded(lead, 1);
    padded.insert(padded.end(), s.begin(), s.end());
    for (std::size_t d = 0; d < shape.size(); ++d)
        if (padded[d] != shape[d] && padded[d] != 1) shape_error("broadcast", s, shape);

    // Source index for each output element.
    const std::int64_t n = numel(shape);
    std::vector<std::int64_t> src(static_cast<std::size_t>(n));
    bool suffix = true;
    for (std::size_t d = lead; d < shape.size(); ++d) suffix = suffix && padded[d] == shape[d];
    if (suffix) {
        const std::int64_t m = numel(s);
        for (std::int64_t i = 0; i < n; ++i) src[i] = m == 0 ? 0 : i % m;
    } else {
        std::vector<std::int64_t> sstride(shape.size(), 0);
        std::int64_t st = 1;
        for (std::size_t d = shape.size(); d-- > 0;) {
            sstride[d] = padded[d] == 1 ? 0 : st;
            st *= padded[d];
        }
        for (std::int64_t i = 0; i < n; ++i) {
            std::int64_t rem = i, idx = 0;
            for (std::size_t d = shape.size(); d-- > 0;) {
                idx += (rem % shape[d]) * sstride[d];
                rem /= shape[d];
            }
            src[i] = idx;
        }
    }
    Tensor y(shape);
    for (std::int64_t i = 0; i < n; ++i) y[i] = a.value()[src[i]];
    return record_op("broadcast", std::move(y), {a},
                     [src = std::move(src)](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                                            std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < src.size(); ++i) (*gin[0])[src[i]] += g[i];
                     });
}

Var reshape(const Var& a, Shape shape) {
    if (numel(shape) != numel(a.shape())) shape_error("reshape", a.shape(), shape);
    Tensor y(std::move(shape), a.value().vec());
    return record_op("reshape", std::move(y), {a},
                     [](const Tensor&, const Tensor& g, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                     });
}

Var permute(const Var& a, const std::vector<std::size_t>& perm) {
    const Shape& s = a.shape();
    if (perm.size() != s.size()) arg_error("permute", "permutation rank mismatch for " + shape_str(s));
    std::vector<char> seen(s.size(), 0);
    for (auto p : perm) {
        if (p >= s.size() || seen[p]) arg_error("permute", "invalid permutation");
        seen[p] = 1;
    }
    Shape out(s.size());
    for (std::size_t d = 0; d < s.size(); ++d) out[d] = s[perm[d]];
    std::vector<std::int64_t> in_stride(s.size());
    std::int64_t st = 1;
    for (std::size_t d = s.size(); d-- > 0;) {
        in_stride[d] = st;
        st *= s[d];
    }
    const std::int64_t n = numel(s);
    std::vector<std::int64_t> src(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t rem = i, idx = 0;
        for (std::size_t d = out.size(); d-- > 0;) {
            idx += (rem % out[d]) * in_stride[perm[d]];
            rem /= out[d];
        }
        src[i] = idx;
    }
    Tensor y(out);
    for (std::int64_t i = 0; i < n; ++i) y[i] = a.value()[src[i]];
    return record_op("permute", std::move(y), {a},
                     [src = std::move(src)](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                                            std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::size_t i = 0; i < src.size(); ++i) (*gin[0])[src[i]] += g[i];
                     });
}

Var gather_rows(const Var& table, const std::vector<std::int64_t>& rows) {
    const Shape& s = table.shape();
    if (s.size() != 2) arg_error("gather_rows", "table must be rank 2, got " + shape_str(s));
    const std::int64_t w = s[1];
    Tensor y({static_cast<std::int64_t>(rows.size()), w});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= s[0]) arg_error("gather_rows", "row " + std::to_string(rows[r]) + " out of range");
        std::copy_n(table.value().data().data() + rows[r] * w, w, y.data().data() + r * w);
    }
    return record_op("gather_rows", std::move(y), {table},
                     [rows, w](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                               std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::size_t r = 0; r < rows.size(); ++r)
                             for (std::int64_t j = 0; j < w; ++j) (*gin[0])[rows[r] * w + j] += g[r * w + j];
                     });
}

Var bilinear_sample(const Var& grid, const Var& coords) {
    const Shape& gs = grid.shape();
    const Shape& cs = coords.shape();
    if (gs.size() != 3 || cs.size() != 2 || cs[1] != 2) shape_error("bilinear_sample", gs, cs);
    const std::int64_t H = gs[0], W = gs[1], C = gs[2], P = cs[0];
    const Tensor& gv = grid.value();
    const Tensor& cv = coords.value();
    auto cell = [&](const Tensor& t, std::int64_t r, std::int64_t c, std::int64_t ch) {
        return (r < 0 || r >= H || c < 0 || c >= W) ? 0.0 : t[(r * W + c) * C + ch];
    };
    Tensor y({P, C});
    for (std::int64_t p = 0; p < P; ++p) {
        const double r = cv[2 * p], c = cv[2 * p + 1];
        const double r0 = std::floor(r), c0 = std::floor(c);
        const double fr = r - r0, fc = c - c0;
        const auto ir = static_cast<std::int64_t>(r0), ic = static_cast<std::int64_t>(c0);
        for (std::int64_t ch = 0; ch < C; ++ch) {
            y[p * C + ch] = (1 - fr) * (1 - fc) * cell(gv, ir, ic, ch) + (1 - fr) * fc * cell(gv, ir, ic + 1, ch) +
                            fr * (1 - fc) * cell(gv, ir + 1, ic, ch) + fr * fc * cell(gv, ir + 1, ic + 1, ch);
        }
    }
    return record_op(
        "bilinear_sample", std::move(y), {grid, coords},
        [H, W, C, P](const Tensor&, const Tensor& g, std::span<const Tensor* const> in, std::span<Tensor* const> gin) {
            const Tensor& gv = *in[0];
            const Tensor& cv = *in[1];
            auto inside = [&](std::int64_t r, std::int64_t c) { return r >= 0 && r < H && c >= 0 && c < W; };
            auto cell = [&](std::int64_t r, std::int64_t c, std::int64_t ch) {
                return inside(r, c) ? gv[(r * W + c) * C + ch] : 0.0;
            };
            for (std::int64_t p = 0; p < P; ++p) {
                const double r = cv[2 * p], c = cv[2 * p + 1];
                const double r0 = std::floor(r), c0 = std::floor(c);
                const double fr = r - r0, fc = c - c0;
                const auto ir = static_cast<std::int64_t>(r0), ic = static_cast<std::int64_t>(c0);
                const double wts[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
                const std::int64_t rr[4] = {ir, ir, ir + 1, ir + 1};
                const std::int64_t cc[4] = {ic, ic + 1, ic, ic + 1};
                double dr = 0.0, dc = 0.0;
                for (std::int64_t ch = 0; ch < C; ++ch) {
                    const double go = g[p * C + ch];
                    if (gin[0])
                        for (int k = 0; k < 4; ++k)
                            if (inside(rr[k], cc[k])) (*gin[0])[(rr[k] * W + cc[k]) * C + ch] += wts[k] * go;
                    const double v00 = cell(ir, ic, ch), v01 = cell(ir, ic + 1, ch);
                    const double v10 = cell(ir + 1, ic, ch), v11 = cell(ir + 1, ic + 1, ch);
                    dr += go * ((1 - fc) * (v10 - v00) + fc * (v11 - v01));
                    dc += go * ((1 - fr) * (v01 - v00) + fr * (v11 - v10));
                }
                if (gin[1]) {
                    (*gin[1])[2 * p] += dr;
                    (*gin[1])[2 * p + 1] += dc;
                }
            }
        });
}

Var conv3x3(const Var& x, const Var& w) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sw[1] != 3 || sw[2] != 3 || sw[3] != sx[3]) shape_error("conv3x3", sx, sw);
    const kernels::ConvDims dims{sx[0], sx[1], sx[2], sx[3], sw[0]};
    Tensor y({sx[0], sx[1], sx[2], sw[0]});
    kernels::conv3x3(dims, x.value().data().data(), w.value().data().data(), y.data().data());
    return record_op("conv3x3", std::move(y), {x, w},
                     [dims](const Tensor&, const Tensor& g, std::span<const Tensor* const> in,
                            std::span<Tensor* const> gin) {
                         if (gin[0])
                             kernels::conv3x3_grad_input(dims, g.data().data(), in[1]->data().data(),
                                                         gin[0]->data().data());
                         if (gin[1])
                             kernels::conv3x3_grad_weight(dims, in[0]->data().data(), g.data().data(),
                                                          gin[1]->data().data());
                     });
}

Var avg_pool(const Var& x, std::int64_t k) {
    const Shape& s = x.shape();
    if (s.size() != 4 || k < 1 || s[1] % k != 0 || s[2] % k != 0)
        arg_error("avg_pool", "factor " + std::to_string(k) + " incompatible with " + shape_str(s));
    const std::int64_t B = s[0], H = s[1], W = s[2], C = s[3], h = H / k, w = W / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    Tensor y({B, h, w, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j)
                for (std::int64_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::int64_t di = 0; di < k; ++di)
                        for (std::int64_t dj = 0; dj < k; ++dj)
                            acc += x.value()[((b * H + i * k + di) * W + j * k + dj) * C + c];
                    y[((b * h + i) * w + j) * C + c] = acc * inv;
                }
    return record_op("avg_pool", std::move(y), {x},
                     [=](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                         std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::int64_t b = 0; b < B; ++b)
                             for (std::int64_t i = 0; i < H; ++i)
                                 for (std::int64_t j = 0; j < W; ++j)
                                     for (std::int64_t c = 0; c < C; ++c)
                                         (*gin[0])[((b * H + i) * W + j) * C + c] +=
                                             g[((b * h + i / k) * w + j / k) * C + c] * inv;
                     });
}

Var upsample_nearest(const Var& x, std::int64_t k) {
    const Shape& s = x.shape();
    if (s.size() != 4 || k < 1) arg_error("upsample_nearest", "bad input " + shape_str(s));
    const std::int64_t B = s[0], h = s[1], w = s[2], C = s[3], H = h * k, W = w * k;
    Tensor y({B, H, W, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j)
                for (std::int64_t c = 0; c < C; ++c)
                    y[((b * H + i) * W + j) * C + c] = x.value()[((b * h + i / k) * w + j / k) * C + c];
    return record_op("upsample_nearest", std::move(y), {x},
                     [=](const Tensor&, const Tensor& g, std::span<const Tensor* const>,
                         std::span<Tensor* const> gin) {
                         if (!gin[0]) return;
                         for (std::int64_t b = 0; b < B; ++b)
                             for (std::int64_t i = 0; i < H; ++i)
                                 for (std::int64_t j = 0; j < W; ++j)
                                     for (std::int64_t c = 0; c < C; ++c)
                                         (*gin[0])[((b * h + i / k) * w + j / k) * C + c] +=
                                             g[((b * H + i) * W + j) * C + c];
                     });
}

}  // namespace ad

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(xv);
    if (!y.value().all_finite()) throw NumericError("grad_check: function returned non-finite value");
    const Tensor analytic = tape.backward(y).at(xv);

    auto eval = [&](const Tensor& at) {
        const double v = f(constant(at)).value().item();
        if (!std::isfinite(v)) throw NumericError("grad_check: function returned non-finite value");
        return v;
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = eval(probe);
        probe[i] = x[i] - h;
        const double down = eval(probe);
        probe[i] = x[i];
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-8));
    }
    return worst;
}

}  // namespace ddfx
