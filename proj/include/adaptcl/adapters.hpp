#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adaptcl/encoder.hpp"
#include "adaptcl/error.hpp"
#include "adaptcl/ops.hpp"
#include "adaptcl/rng.hpp"
#include "adaptcl/serialize.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

// The three bottleneck sub-modules, distinguished only by where they tap and
// where they merge: AdaptMLP taps the post-attention activation and merges
// into the block output; AdaptAtten taps the block input and merges into the
// post-attention activation; AdaptAll taps the block input and merges into
// the block output.
enum class AdapterKind { AdaptMLP = 1, AdaptAtten = 2, AdaptAll = 3 };

inline const char* kind_name(AdapterKind k) {
    switch (k) {
    case AdapterKind::AdaptMLP: return "mlp";
    case AdapterKind::AdaptAtten: return "atten";
    case AdapterKind::AdaptAll: return "all";
    }
    return "?";
}

struct AdapterPlacement {
    std::size_t block = 0;
    AdapterKind kind = AdapterKind::AdaptMLP;

    bool operator<(const AdapterPlacement& o) const {
        return block != o.block ? block < o.block : static_cast<int>(kind) < static_cast<int>(o.kind);
    }
    bool operator==(const AdapterPlacement& o) const {
        return block == o.block && kind == o.kind;
    }
};

struct AdapterConfig {
    std::vector<AdapterPlacement> placements; // kept sorted and unique
    std::size_t bottleneck = 64;
    double alpha = 0.1;

    void canonicalize() {
        std::sort(placements.begin(), placements.end());
        placements.erase(std::unique(placements.begin(), placements.end()), placements.end());
    }

    void validate(std::size_t num_blocks) const {
        if (bottleneck == 0) {
            throw ConfigError("adapters: bottleneck must be positive");
        }
        if (alpha <= 0.0) {
            throw ConfigError("adapters: alpha must be positive, got " + std::to_string(alpha));
        }
        for (const auto& p : placements) {
            if (p.block >= num_blocks) {
                throw ConfigError("adapters: placement block " + std::to_string(p.block) +
                                  " out of range, encoder has " + std::to_string(num_blocks) +
                                  " blocks");
            }
        }
        for (std::size_t i = 1; i < placements.size(); ++i) {
            if (placements[i] == placements[i - 1]) {
                throw ConfigError("adapters: duplicate placement at block " +
                                  std::to_string(placements[i].block));
            }
        }
    }

    bool has(std::size_t block, AdapterKind kind) const {
        return std::find(placements.begin(), placements.end(), AdapterPlacement{block, kind}) !=
               placements.end();
    }
};

template <typename Real>
struct AdapterParamsT {
    TensorT<Real> w_down; // [D, R]
    TensorT<Real> b_down; // [R]
    TensorT<Real> w_up;   // [R, D]
    TensorT<Real> b_up;   // [D]
};

template <typename Real>
struct AdapterStateT {
    AdapterConfig config;
    std::map<AdapterPlacement, AdapterParamsT<Real>> params;

    std::vector<std::pair<std::string, TensorT<Real>*>> named_parameters() {
        std::vector<std::pair<std::string, TensorT<Real>*>> out;
        for (auto& [pl, ap] : params) {
            const std::string p =
                "adapter." + std::to_string(pl.block) + "." + kind_name(pl.kind) + ".";
            out.emplace_back(p + "w_down", &ap.w_down);
            out.emplace_back(p + "b_down", &ap.b_down);
            out.emplace_back(p + "w_up", &ap.w_up);
            out.emplace_back(p + "b_up", &ap.b_up);
        }
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& [name, t] : named_parameters()) {
            (void)name;
            t->set_requires_grad(trainable);
        }
    }

    void freeze() { set_trainable(false); }
};

// Down projections start from a truncated normal, up projections from zero,
// so a freshly initialized adapter contributes exactly nothing and training
// starts at the frozen-encoder function.
template <typename Real>
AdapterStateT<Real> init_adapters(const AdapterConfig& config, std::size_t embed_dim,
                                  std::uint64_t seed) {
    AdapterStateT<Real> s;
    s.config = config;
    s.config.canonicalize();
    const std::size_t r = config.bottleneck;
    for (const auto& pl : s.config.placements) {
        Rng rng(derive_seed(seed, {0x616470ULL, pl.block, static_cast<std::uint64_t>(pl.kind)}));
        AdapterParamsT<Real> ap;
        ap.w_down = detail::init_proj<Real>(rng, {embed_dim, r});
        ap.b_down = detail::init_const<Real>({r}, Real(0));
        ap.w_up = detail::init_const<Real>({r, embed_dim}, Real(0));
        ap.b_up = detail::init_const<Real>({embed_dim}, Real(0));
        s.params.emplace(pl, std::move(ap));
    }
    return s;
}

// Bottleneck branch: alpha * (ReLU(c.W_down + b_down).W_up + b_up).
// Output shape equals input shape; alpha scales the whole branch.
template <typename Real>
TensorT<Real> adapter_forward(const AdapterStateT<Real>& s, const AdapterPlacement& pl,
                              const TensorT<Real>& c) {
    auto it = s.params.find(pl);
    if (it == s.params.end()) {
        throw ConfigError("adapter_forward: no adapter at block " + std::to_string(pl.block) +
                          " kind " + kind_name(pl.kind));
    }
    const auto& ap = it->second;
    if (c.rank() != 2 || c.cols() != ap.w_down.rows()) {
        throw ConfigError("adapter_forward: input " + detail::shape_str(c.shape()) +
                          " incompatible with down projection " +
                          detail::shape_str(ap.w_down.shape()));
    }
    auto hidden = relu(linear(c, ap.w_down, ap.b_down));
    return scale(linear(hidden, ap.w_up, ap.b_up), static_cast<Real>(s.config.alpha));
}

// Block composition with adapter branches:
//   a = attention_stage(x) [+ AdaptAtten(x)]
//   h = mlp_stage(a) [+ AdaptMLP(a)] [+ AdaptAll(x)]
// With no adapters at the block this reduces to the plain frozen block.
template <typename Real>
TensorT<Real> compose_block(const EncoderStateT<Real>& enc, const AdapterStateT<Real>& ad,
                            std::size_t i, const TensorT<Real>& x) {
    auto a = attention_stage(enc, i, x);
    if (ad.config.has(i, AdapterKind::AdaptAtten)) {
        a = add(a, adapter_forward(ad, {i, AdapterKind::AdaptAtten}, x));
    }
    auto h = mlp_stage(enc, i, a);
    if (ad.config.has(i, AdapterKind::AdaptMLP)) {
        h = add(h, adapter_forward(ad, {i, AdapterKind::AdaptMLP}, a));
    }
    if (ad.config.has(i, AdapterKind::AdaptAll)) {
        h = add(h, adapter_forward(ad, {i, AdapterKind::AdaptAll}, x));
    }
    return h;
}

// BlockFn wiring compose_block into encode(). The adapter state must outlive
// the returned function.
template <typename Real>
BlockFn<Real> multi_adapter_block_fn(const AdapterStateT<Real>& ad) {
    return [&ad](const EncoderStateT<Real>& enc, std::size_t i, const TensorT<Real>& x) {
        return compose_block(enc, ad, i, x);
    };
}

// Encoder forward with Multi-Adapter branches. Without an adapter state this
// is the plain frozen encoder.
template <typename Real>
TensorT<Real> encode(const EncoderStateT<Real>& enc, const AdapterStateT<Real>* ad,
                     const std::vector<std::vector<Real>>& images) {
    if (ad == nullptr || ad->config.placements.empty()) {
        return encode<Real>(enc, images);
    }
    return encode<Real>(enc, images, multi_adapter_block_fn<Real>(*ad));
}

// Dedicated AdaptFormer route: bottleneck fed by the post-attention
// activation, summed into the block output. Kept as a separate composition
// path; its op sequence mirrors compose_block with only AdaptMLP present so
// the two routes agree bit-for-bit on identical parameters.
template <typename Real>
TensorT<Real> adaptformer_encode(const EncoderStateT<Real>& enc, const AdapterStateT<Real>& ad,
                                 const std::vector<std::vector<Real>>& images) {
    for (const auto& pl : ad.config.placements) {
        if (pl.kind != AdapterKind::AdaptMLP) {
            throw ConfigError("adaptformer_encode: only AdaptMLP placements allowed");
        }
    }
    BlockFn<Real> fn = [&ad](const EncoderStateT<Real>& e, std::size_t i, const TensorT<Real>& x) {
        auto a = attention_stage(e, i, x);
        auto h = mlp_stage(e, i, a);
        auto it = ad.params.find({i, AdapterKind::AdaptMLP});
        if (it != ad.params.end()) {
            const auto& ap = it->second;
            auto hidden = relu(linear(a, ap.w_down, ap.b_down));
            auto branch = scale(linear(hidden, ap.w_up, ap.b_up),
                                static_cast<Real>(ad.config.alpha));
            h = add(h, branch);
        }
        return h;
    };
    return encode<Real>(enc, images, fn);
}

// Exact trainable-parameter count. Per placement with biases:
// D*R + R + R*D + D; without: 2*D*R. classifier_dims, when present, adds
// rows*cols for the classification head.
inline std::size_t count_trainable(const AdapterConfig& config, std::size_t embed_dim,
                                   bool biases = true,
                                   const std::pair<std::size_t, std::size_t>* classifier_dims =
                                       nullptr) {
    const std::size_t d = embed_dim, r = config.bottleneck;
    const std::size_t per = biases ? (d * r + r + r * d + d) : (2 * d * r);
    std::size_t total = per * config.placements.size();
    if (classifier_dims != nullptr) {
        total += classifier_dims->first * classifier_dims->second;
    }
    return total;
}

// Embeds a trained adapter state into a larger placement set. Shared
// placements copy their parameters; new placements get fresh down
// projections but zero up projections, so the end-to-end function value is
// unchanged.
template <typename Real>
AdapterStateT<Real> embed_into_larger(const AdapterStateT<Real>& src, const AdapterConfig& target,
                                      std::size_t embed_dim, std::uint64_t seed) {
    AdapterConfig tgt = target;
    tgt.canonicalize();
    if (tgt.bottleneck != src.config.bottleneck) {
        throw ConfigError("embed_into_larger: bottleneck mismatch, " +
                          std::to_string(src.config.bottleneck) + " vs " +
                          std::to_string(tgt.bottleneck));
    }
    for (const auto& pl : src.config.placements) {
        if (!tgt.has(pl.block, pl.kind)) {
            throw ConfigError("embed_into_larger: target placements do not cover block " +
                              std::to_string(pl.block) + " kind " + kind_name(pl.kind));
        }
    }
    auto out = init_adapters<Real>(tgt, embed_dim, seed);
    for (const auto& [pl, ap] : src.params) {
        auto& dst = out.params.at(pl);
        dst.w_down = ap.w_down.clone();
        dst.b_down = ap.b_down.clone();
        dst.w_up = ap.w_up.clone();
        dst.b_up = ap.b_up.clone();
    }
    return out;
}

template <typename Real>
void save_adapters(AdapterStateT<Real>& s, const std::string& path) {
    std::vector<TensorRecord> records;
    for (auto& [name, t] : s.named_parameters()) {
        records.push_back(to_record(name, *t));
    }
    write_siml(path, std::move(records));
}

template <typename Real>
void load_adapters(AdapterStateT<Real>& s, const std::string& path) {
    auto index = index_records(read_siml(path));
    auto params = s.named_parameters();
    for (auto& [name, t] : params) {
        auto it = index.find(name);
        if (it == index.end()) {
            throw FormatError(path + ": missing record '" + name + "'");
        }
        std::vector<std::size_t> stored(it->second.dims.begin(), it->second.dims.end());
        if (stored != t->shape()) {
            throw FormatError(path + ": record '" + name + "' has dims " +
                              detail::shape_str(stored) + " but the configuration expects " +
                              detail::shape_str(t->shape()));
        }
    }
    for (auto& [name, t] : params) {
        load_into(index.at(name), *t);
    }
}

} // namespace adaptcl
