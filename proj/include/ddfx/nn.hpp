#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include "ddfx/autodiff.hpp"

namespace ddfx {

/// Named parameters, grouped by the prefix before the first '/'
/// (encoders, branches, sfa, base, adapters).
class ParamStore {
public:
    void add(const std::string& name, Tensor value);
    void set(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get_mut(const std::string& name);
    const std::map<std::string, Tensor>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    static std::string group_of(const std::string& name);
    std::vector<std::string> groups() const;
    bool has_group(const std::string& group) const;

    /// FNV-1a over names, shapes and raw bytes of every parameter in a group.
    std::uint64_t checksum(const std::string& group) const;

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::map<std::string, Tensor> params_;
};

/// Deterministic Gaussian init seeded by (seed, name).
Tensor init_normal(const Shape& shape, double stddev, std::uint64_t seed, const std::string& name);

/// Maps parameter names to Vars for one forward pass. Trainable parameters
/// become tracked leaves on the tape; everything else is a constant.
class Binding {
public:
    using Predicate = std::function<bool(const std::string& name)>;

    /// Inference binding: every parameter is a constant.
    explicit Binding(const ParamStore& store);
    Binding(const ParamStore& store, Tape& tape, Predicate trainable);

    Var operator()(const std::string& name);
    /// Uses v in place of the stored parameter for this binding.
    void override(const std::string& name, Var v);
    bool contains(const std::string& name) const { return store_->contains(name); }
    const ParamStore& store() const { return *store_; }
    Tape* tape() const { return tape_; }

    /// Adjoints for every tracked parameter that was used.
    std::map<std::string, Tensor> gradients(const Gradients& g) const;

private:
    const ParamStore* store_;
    Tape* tape_ = nullptr;
    Predicate trainable_;
    std::unordered_map<std::string, Var> cache_;
};

struct LowRank {
    Var down;  // A, [r, in]
    Var up;    // B, [out, r]
    double scale = 1.0;
};

/// Linear map W x, optionally with a low-rank delta s * B (A x).
struct Projection {
    Var weight;  // [out, in]
    std::optional<LowRank> adapter;
};

Var project(const Projection& p, const Var& x);

struct AttentionParams {
    Projection query, key, value, output;
};

struct AdapterConfig {
    std::int64_t rank = 4;
    double scale = 1.0;
};

/// Attaches adapters to every projection. Throws ContractError when the rank
/// exceeds the projection width or shapes disagree.
AttentionParams apply_low_rank_adapters(AttentionParams params, const LowRank& q, const LowRank& k, const LowRank& v,
                                        const LowRank& o);

/// Reads prefix/{q,k,v,o}; attaches adapters stored under adapters/prefix/*.
AttentionParams bind_attention(Binding& b, const std::string& prefix, double adapter_scale);

/// Adds d x d projections for prefix/{q,k,v,o}.
void init_attention(ParamStore& store, const std::string& prefix, std::int64_t width, std::uint64_t seed);
/// Adds adapters/prefix/{q,k,v,o}/{A,B} with B = 0.
void init_attention_adapters(ParamStore& store, const std::string& prefix, std::int64_t width,
                             const AdapterConfig& cfg, std::uint64_t seed);

/// Linear layer prefix/w [out, in] and prefix/b [out].
void init_dense(ParamStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, std::uint64_t seed,
                double gain = 1.0);
void init_zero_dense(ParamStore& store, const std::string& prefix, std::int64_t in, std::int64_t out);
Var dense(Binding& b, const std::string& prefix, const Var& x);

/// 3x3 conv prefix/w [out, 3, 3, in] and prefix/b [out].
void init_conv(ParamStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, std::uint64_t seed);
Var conv(Binding& b, const std::string& prefix, const Var& x);

/// Softmax attention weights [B, Nq, Nk] for queries [B, Nq, d] and keys [B, Nk, d].
Var attention_weights(const AttentionParams& p, const Var& queries, const Var& keys);

/// Single-head scaled dot-product attention, batched over the leading axis:
/// queries [B, Nq, d], context [B, Nk, d] -> [B, Nq, d]. No residual.
Var attention(const AttentionParams& p, const Var& queries, const Var& context);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction; moments are keyed by parameter name.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    void step(ParamStore& store, const std::map<std::string, Tensor>& grads);
    std::int64_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace ddfx
