#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adaptcl/error.hpp"
#include "adaptcl/init.hpp"
#include "adaptcl/ops.hpp"
#include "adaptcl/rng.hpp"
#include "adaptcl/serialize.hpp"
#include "adaptcl/tensor.hpp"

namespace adaptcl {

constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
    std::size_t image_size = 16;
    std::size_t patch_size = 4;
    std::size_t channels = 1;
    std::size_t embed_dim = 32;
    std::size_t num_blocks = 2;
    std::size_t num_heads = 4;
    double mlp_ratio = 2.0;
    enum class Pooling { mean, cls_token };
    Pooling pooling = Pooling::mean;

    void validate() const {
        if (image_size == 0 || patch_size == 0 || channels == 0 || embed_dim == 0 ||
            num_blocks == 0 || num_heads == 0) {
            throw ConfigError("encoder: all dimensions must be positive");
        }
        if (image_size % patch_size != 0) {
            throw ConfigError("encoder: image_size " + std::to_string(image_size) +
                              " not divisible by patch_size " + std::to_string(patch_size));
        }
        if (embed_dim % num_heads != 0) {
            throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                              " not divisible by num_heads " + std::to_string(num_heads));
        }
        if (mlp_ratio <= 0.0 || mlp_hidden() == 0) {
            throw ConfigError("encoder: mlp_ratio must yield a positive hidden width");
        }
    }

    std::size_t patches_per_side() const { return image_size / patch_size; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t num_tokens() const {
        return num_patches() + (pooling == Pooling::cls_token ? 1 : 0);
    }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t mlp_hidden() const {
        return static_cast<std::size_t>(static_cast<double>(embed_dim) * mlp_ratio);
    }
    std::size_t image_numel() const { return channels * image_size * image_size; }
};

template <typename Real>
struct BlockParamsT {
    TensorT<Real> ln1_gamma, ln1_beta;
    // The key projection has no bias: a shared shift of every key is a
    // null direction of the row softmax, so such a parameter could never
    // be exercised or verified.
    TensorT<Real> wq, bq, wk, wv, bv, wo, bo;
    TensorT<Real> ln2_gamma, ln2_beta;
    TensorT<Real> w1, b1, w2, b2;
};

// Frozen (after freeze()) parameter store of the miniature ViT encoder:
// patch projection, learned positional embeddings, pre-norm blocks of
// self-attention + MLP, and a final norm before pooling.
template <typename Real>
struct EncoderStateT {
    EncoderConfig config;
    TensorT<Real> patch_weight; // [patch_dim, D]
    TensorT<Real> patch_bias;   // [D]
    TensorT<Real> pos_embed;    // [tokens, D]
    TensorT<Real> cls_token;    // [1, D], only under cls_token pooling
    std::vector<BlockParamsT<Real>> blocks;
    TensorT<Real> final_gamma, final_beta;
    bool frozen = false;

    std::vector<std::pair<std::string, TensorT<Real>*>> named_parameters() {
        std::vector<std::pair<std::string, TensorT<Real>*>> out;
        out.emplace_back("encoder.patch_proj.weight", &patch_weight);
        out.emplace_back("encoder.patch_proj.bias", &patch_bias);
        out.emplace_back("encoder.pos_embed", &pos_embed);
        if (config.pooling == EncoderConfig::Pooling::cls_token) {
            out.emplace_back("encoder.cls_token", &cls_token);
        }
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "encoder.block" + std::to_string(i) + ".";
            auto& b = blocks[i];
            out.emplace_back(p + "ln1.gamma", &b.ln1_gamma);
            out.emplace_back(p + "ln1.beta", &b.ln1_beta);
            out.emplace_back(p + "attn.wq", &b.wq);
            out.emplace_back(p + "attn.bq", &b.bq);
            out.emplace_back(p + "attn.wk", &b.wk);
            out.emplace_back(p + "attn.wv", &b.wv);
            out.emplace_back(p + "attn.bv", &b.bv);
            out.emplace_back(p + "attn.wo", &b.wo);
            out.emplace_back(p + "attn.bo", &b.bo);
            out.emplace_back(p + "ln2.gamma", &b.ln2_gamma);
            out.emplace_back(p + "ln2.beta", &b.ln2_beta);
            out.emplace_back(p + "mlp.w1", &b.w1);
            out.emplace_back(p + "mlp.b1", &b.b1);
            out.emplace_back(p + "mlp.w2", &b.w2);
            out.emplace_back(p + "mlp.b2", &b.b2);
        }
        out.emplace_back("encoder.final_norm.gamma", &final_gamma);
        out.emplace_back("encoder.final_norm.beta", &final_beta);
        return out;
    }

    void freeze() {
        for (auto& [name, t] : named_parameters()) {
            (void)name;
            t->set_requires_grad(false);
        }
        frozen = true;
    }
};

// Parameters sample in named_parameters order from a single seeded stream:
// truncated normal (std 0.02) for projections and embeddings, zeros for
// biases and norm shifts, ones for norm scales.
template <typename Real>
EncoderStateT<Real> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderStateT<Real> s;
    s.config = config;
    Rng rng(derive_seed(seed, {0x656e63ULL})); // "enc"

    const std::size_t d = config.embed_dim;
    const std::size_t hidden = config.mlp_hidden();

    s.patch_weight = detail::init_proj<Real>(rng, {config.patch_dim(), d});
    s.patch_bias = detail::init_const<Real>({d}, Real(0));
    s.pos_embed = detail::init_proj<Real>(rng, {config.num_tokens(), d});
    if (config.pooling == EncoderConfig::Pooling::cls_token) {
        s.cls_token = detail::init_proj<Real>(rng, {std::size_t{1}, d});
    }
    for (std::size_t i = 0; i < config.num_blocks; ++i) {
        BlockParamsT<Real> b;
        b.ln1_gamma = detail::init_const<Real>({d}, Real(1));
        b.ln1_beta = detail::init_const<Real>({d}, Real(0));
        b.wq = detail::init_proj<Real>(rng, {d, d});
        b.bq = detail::init_const<Real>({d}, Real(0));
        b.wk = detail::init_proj<Real>(rng, {d, d});
        b.wv = detail::init_proj<Real>(rng, {d, d});
        b.bv = detail::init_const<Real>({d}, Real(0));
        b.wo = detail::init_proj<Real>(rng, {d, d});
        b.bo = detail::init_const<Real>({d}, Real(0));
        b.ln2_gamma = detail::init_const<Real>({d}, Real(1));
        b.ln2_beta = detail::init_const<Real>({d}, Real(0));
        b.w1 = detail::init_proj<Real>(rng, {d, hidden});
        b.b1 = detail::init_const<Real>({hidden}, Real(0));
        b.w2 = detail::init_proj<Real>(rng, {hidden, d});
        b.b2 = detail::init_const<Real>({d}, Real(0));
        s.blocks.push_back(std::move(b));
    }
    s.final_gamma = detail::init_const<Real>({d}, Real(1));
    s.final_beta = detail::init_const<Real>({d}, Real(0));
    return s;
}

// Extracts non-overlapping patches from a flat [channels * H * W] image into
// a [num_patches, channels * p * p] matrix. Pure data movement; images are
// leaves and never carry gradients.
template <typename Real>
TensorT<Real> patchify(const EncoderConfig& config, const std::vector<Real>& image) {
    if (image.size() != config.image_numel()) {
        throw DimensionError("patchify: image has " + std::to_string(image.size()) +
                             " values, config expects " + std::to_string(config.image_numel()));
    }
    const std::size_t p = config.patch_size;
    const std::size_t side = config.patches_per_side();
    const std::size_t hw = config.image_size;
    auto out = TensorT<Real>::zeros({config.num_patches(), config.patch_dim()});
    for (std::size_t py = 0; py < side; ++py) {
        for (std::size_t px = 0; px < side; ++px) {
            const std::size_t patch = py * side + px;
            std::size_t k = 0;
            for (std::size_t c = 0; c < config.channels; ++c) {
                for (std::size_t dy = 0; dy < p; ++dy) {
                    for (std::size_t dx = 0; dx < p; ++dx) {
                        const std::size_t yy = py * p + dy;
                        const std::size_t xx = px * p + dx;
                        out.at(patch, k++) = image[c * hw * hw + yy * hw + xx];
                    }
                }
            }
        }
    }
    return out;
}

namespace detail {

template <typename Real>
TensorT<Real> multi_head_attention(const EncoderStateT<Real>& s, std::size_t i,
                                   const TensorT<Real>& xn) {
    const auto& b = s.blocks[i];
    const std::size_t heads = s.config.num_heads;
    const std::size_t dh = s.config.head_dim();
    auto q = linear(xn, b.wq, b.bq);
    auto k = matmul(xn, b.wk);
    auto v = linear(xn, b.wv, b.bv);
    std::vector<TensorT<Real>> outs;
    outs.reserve(heads);
    const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        auto attnw = softmax(scores, -1);
        outs.push_back(matmul(attnw, vh));
    }
    return linear(concat_cols(outs), b.wo, b.bo);
}

} // namespace detail

// Post-attention activation: a = x + Attention(LN1(x)).
template <typename Real>
TensorT<Real> attention_stage(const EncoderStateT<Real>& s, std::size_t i,
                              const TensorT<Real>& x) {
    if (i >= s.blocks.size()) {
        throw RangeError("block index " + std::to_string(i) + " out of range, encoder has " +
                         std::to_string(s.blocks.size()) + " blocks");
    }
    if (x.rank() != 2 || x.cols() != s.config.embed_dim) {
        throw DimensionError("attention_stage: tokens must be [n, " +
                             std::to_string(s.config.embed_dim) + "], got " +
                             detail::shape_str(x.shape()));
    }
    const auto& b = s.blocks[i];
    auto xn = layernorm(x, b.ln1_gamma, b.ln1_beta, Real(kLayerNormEps));
    return add(x, detail::multi_head_attention(s, i, xn));
}

// Post-MLP activation: h = a + MLP(LN2(a)), GELU in the hidden layer.
template <typename Real>
TensorT<Real> mlp_stage(const EncoderStateT<Real>& s, std::size_t i, const TensorT<Real>& a) {
    if (i >= s.blocks.size()) {
        throw RangeError("block index " + std::to_string(i) + " out of range, encoder has " +
                         std::to_string(s.blocks.size()) + " blocks");
    }
    const auto& b = s.blocks[i];
    auto an = layernorm(a, b.ln2_gamma, b.ln2_beta, Real(kLayerNormEps));
    auto hidden = gelu(linear(an, b.w1, b.b1));
    return add(a, linear(hidden, b.w2, b.b2));
}

// One encoder block. Both the post-attention and post-MLP activations are
// returned so adapter branches can tap either.
template <typename Real>
std::pair<TensorT<Real>, TensorT<Real>> block_forward(const EncoderStateT<Real>& s, std::size_t i,
                                                      const TensorT<Real>& x) {
    auto a = attention_stage(s, i, x);
    auto h = mlp_stage(s, i, a);
    return {a, h};
}

// Per-block hook: given (state, block index, block input) produce the block
// output. The default runs the plain frozen block; the adapters module
// substitutes compositions with adapter branches.
template <typename Real>
using BlockFn =
    std::function<TensorT<Real>(const EncoderStateT<Real>&, std::size_t, const TensorT<Real>&)>;

// Full forward pass over a batch of flat images: patch embedding, positional
// embeddings, all blocks, final norm, pooling. Returns [batch, embed_dim].
template <typename Real>
TensorT<Real> encode(const EncoderStateT<Real>& s, const std::vector<std::vector<Real>>& images,
                     const BlockFn<Real>& block_fn = nullptr) {
    if (images.empty()) {
        throw ContractError("encode: empty image batch");
    }
    std::vector<TensorT<Real>> feats;
    feats.reserve(images.size());
    for (const auto& img : images) {
        auto tok = linear(patchify(s.config, img), s.patch_weight, s.patch_bias);
        if (s.config.pooling == EncoderConfig::Pooling::cls_token) {
            tok = concat_rows<Real>({s.cls_token, tok});
        }
        tok = add(tok, s.pos_embed);
        for (std::size_t i = 0; i < s.blocks.size(); ++i) {
            tok = block_fn ? block_fn(s, i, tok) : block_forward(s, i, tok).second;
        }
        tok = layernorm(tok, s.final_gamma, s.final_beta, Real(kLayerNormEps));
        feats.push_back(s.config.pooling == EncoderConfig::Pooling::mean ? mean_rows(tok)
                                                                         : select_row(tok, 0));
    }
    return stack_rows(feats);
}

template <typename Real>
void save_weights(EncoderStateT<Real>& s, const std::string& path) {
    std::vector<TensorRecord> records;
    for (auto& [name, t] : s.named_parameters()) {
        records.push_back(to_record(name, *t));
    }
    write_siml(path, std::move(records));
}

// Loads every encoder.* record into the state, shape-checked against the
// configuration. All records are validated before any parameter is written,
// so a failed load leaves the state untouched. Records outside the encoder.*
// namespace are ignored so a combined model file can be loaded piecewise.
template <typename Real>
void load_weights(EncoderStateT<Real>& s, const std::string& path) {
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
    for (const auto& [name, rec] : index) {
        (void)rec;
        if (name.rfind("encoder.", 0) == 0) {
            bool known = false;
            for (auto& [pname, t] : params) {
                (void)t;
                if (pname == name) {
                    known = true;
                    break;
                }
            }
            if (!known) {
                throw FormatError(path + ": unexpected record '" + name + "'");
            }
        }
    }
    for (auto& [name, t] : params) {
        load_into(index.at(name), *t);
    }
}

} // namespace adaptcl
