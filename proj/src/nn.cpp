#include "ddfx/nn.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "ddfx/errors.hpp"
#include "ddfx/rng.hpp"

namespace ddfx {

void ParamStore::add(const std::string& name, Tensor value) {
    if (params_.count(name)) throw ContractError("param store: duplicate parameter " + name);
    params_.emplace(name, std::move(value));
}

void ParamStore::set(const std::string& name, Tensor value) {
    auto& slot = get_mut(name);
    if (slot.shape() != value.shape())
        throw ContractError("param store: shape change for " + name + ": " + shape_str(slot.shape()) + " vs " +
                            shape_str(value.shape()));
    slot = std::move(value);
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("param store: no parameter " + name);
    return it->second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("param store: no parameter " + name);
    return it->second;
}

std::string ParamStore::group_of(const std::string& name) { return name.substr(0, name.find('/')); }

std::vector<std::string> ParamStore::groups() const {
    std::set<std::string> g;
    for (const auto& [name, _] : params_) g.insert(group_of(name));
    return {g.begin(), g.end()};
}

bool ParamStore::has_group(const std::string& group) const {
    for (const auto& [name, _] : params_)
        if (group_of(name) == group) return true;
    return false;
}

std::uint64_t ParamStore::checksum(const std::string& group) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : params_) {
        if (group_of(name) != group) continue;
        mix(name.data(), name.size());
        mix(t.shape().data(), t.shape().size() * sizeof(std::int64_t));
        mix(t.data().data(), t.size() * sizeof(double));
    }
    return h;
}

Tensor init_normal(const Shape& shape, double stddev, std::uint64_t seed, const std::string& name) {
    Rng rng(seed ^ fnv1a(name));
    Tensor t(shape);
    for (auto& x : t.data()) x = stddev * rng.normal();
    return t;
}

Binding::Binding(const ParamStore& store) : store_(&store) {}

Binding::Binding(const ParamStore& store, Tape& tape, Predicate trainable)
    : store_(&store), tape_(&tape), trainable_(std::move(trainable)) {}

Var Binding::operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const Tensor& t = store_->get(name);
    Var v = (tape_ && trainable_ && trainable_(name)) ? tape_->leaf(t) : constant(t);
    cache_.emplace(name, v);
    return v;
}

void Binding::override(const std::string& name, Var v) {
    if (v.shape() != store_->get(name).shape())
        throw ContractError("binding override: shape mismatch for " + name);
    cache_[name] = std::move(v);
}

std::map<std::string, Tensor> Binding::gradients(const Gradients& g) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : cache_)
        if (v.tracked()) out.emplace(name, g.at(v));
    return out;
}

Var project(const Projection& p, const Var& x) {
    Var y = ad::linear(x, p.weight);
    if (p.adapter) {
        const Var delta = ad::linear(ad::linear(x, p.adapter->down), p.adapter->up);
        y = ad::add(y, ad::scale(delta, p.adapter->scale));
    }
    return y;
}

namespace {

void attach(Projection& p, const LowRank& lr) {
    const Shape& w = p.weight.shape();
    const Shape& a = lr.down.shape();
    const Shape& b = lr.up.shape();
    if (a.size() != 2 || b.size() != 2) throw ContractError("low-rank adapter: factors must be matrices");
    const std::int64_t rank = a[0];
    if (rank > std::min(w[0], w[1]))
        throw ContractError("low-rank adapter: rank " + std::to_string(rank) + " exceeds width " +
                            std::to_string(std::min(w[0], w[1])));
    if (a[1] != w[1] || b[0] != w[0] || b[1] != rank)
        throw ContractError("low-rank adapter: factor shapes " + shape_str(a) + ", " + shape_str(b) +
                            " incompatible with weight " + shape_str(w));
    p.adapter = lr;
}

}  // namespace

AttentionParams apply_low_rank_adapters(AttentionParams params, const LowRank& q, const LowRank& k, const LowRank& v,
                                        const LowRank& o) {
    attach(params.query, q);
    attach(params.key, k);
    attach(params.value, v);
    attach(params.output, o);
    return params;
}

AttentionParams bind_attention(Binding& b, const std::string& prefix, double adapter_scale) {
    AttentionParams p{{b(prefix + "/q"), {}}, {b(prefix + "/k"), {}}, {b(prefix + "/v"), {}}, {b(prefix + "/o"), {}}};
    const std::string ad = "adapters/" + prefix;
    if (!b.contains(ad + "/q/A")) return p;
    auto lr = [&](const char* which) {
        return LowRank{b(ad + "/" + which + "/A"), b(ad + "/" + which + "/B"), adapter_scale};
    };
    return apply_low_rank_adapters(std::move(p), lr("q"), lr("k"), lr("v"), lr("o"));
}

void init_attention(ParamStore& store, const std::string& prefix, std::int64_t width, std::uint64_t seed) {
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    for (const char* w : {"/q", "/k", "/v", "/o"})
        store.add(prefix + w, init_normal({width, width}, s, seed, prefix + w));
}

void init_attention_adapters(ParamStore& store, const std::string& prefix, std::int64_t width,
                             const AdapterConfig& cfg, std::uint64_t seed) {
    if (cfg.rank < 1 || cfg.rank > width)
        throw ContractError("adapter rank " + std::to_string(cfg.rank) + " must be in [1, " + std::to_string(width) + "]");
    const std::string ad = "adapters/" + prefix;
    for (const char* w : {"/q", "/k", "/v", "/o"}) {
        store.add(ad + w + "/A", init_normal({cfg.rank, width}, 1.0 / std::sqrt(static_cast<double>(width)), seed,
                                             ad + w + "/A"));
        store.add(ad + w + "/B", Tensor({width, cfg.rank}));
    }
}

void init_dense(ParamStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, std::uint64_t seed,
                double gain) {
    store.add(prefix + "/w", init_normal({out, in}, gain / std::sqrt(static_cast<double>(in)), seed, prefix + "/w"));
    store.add(prefix + "/b", Tensor({out}));
}

void init_zero_dense(ParamStore& store, const std::string& prefix, std::int64_t in, std::int64_t out) {
    store.add(prefix + "/w", Tensor({out, in}));
    store.add(prefix + "/b", Tensor({out}));
}

Var dense(Binding& b, const std::string& prefix, const Var& x) {
    return ad::linear(x, b(prefix + "/w"), b(prefix + "/b"));
}

void init_conv(ParamStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, std::uint64_t seed) {
    store.add(prefix + "/w",
              init_normal({out, 3, 3, in}, 1.0 / std::sqrt(9.0 * static_cast<double>(in)), seed, prefix + "/w"));
    store.add(prefix + "/b", Tensor({out}));
}

Var conv(Binding& b, const std::string& prefix, const Var& x) {
    Var y = ad::conv3x3(x, b(prefix + "/w"));
    return ad::add(y, ad::broadcast_to(b(prefix + "/b"), y.shape()));
}

Var attention_weights(const AttentionParams& p, const Var& queries, const Var& keys) {
    const Var q = project(p.query, queries);
    const Var k = project(p.key, keys);
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
    return ad::softmax(ad::scale(ad::bmm(q, k, false, true), inv));
}

Var attention(const AttentionParams& p, const Var& queries, const Var& context) {
    if (queries.shape().size() != 3 || context.shape().size() != 3 || queries.shape()[0] != context.shape()[0] ||
        queries.shape()[2] != context.shape()[2])
        throw ContractError("attention: shape mismatch " + shape_str(queries.shape()) + " vs " +
                            shape_str(context.shape()));
    const Var w = attention_weights(p, queries, context);
    const Var v = project(p.value, context);
    return project(p.output, ad::bmm(w, v));
}

void Adam::step(ParamStore& store, const std::map<std::string, Tensor>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        Tensor& p = store.get_mut(name);
        if (g.shape() != p.shape()) throw ContractError("adam: gradient shape mismatch for " + name);
        auto [mit, fresh] = m_.try_emplace(name, Tensor(p.shape()));
        Tensor& m = mit->second;
        Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

}  // namespace ddfx
