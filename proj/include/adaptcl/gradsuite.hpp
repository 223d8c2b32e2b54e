#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adaptcl/adapters.hpp"
#include "adaptcl/encoder.hpp"
#include "adaptcl/gradcheck.hpp"
#include "adaptcl/protoclf.hpp"
#include "adaptcl/rng.hpp"

namespace adaptcl {

template <typename Real>
struct GradSuiteCase {
    std::string name;
    Real worst_rel_error = Real(0);
    bool pass = true;
};

template <typename Real>
struct GradSuiteResult {
    std::vector<GradSuiteCase<Real>> cases;
    Real worst_rel_error = Real(0);
    std::string worst_case;
    bool pass = true;
};

namespace gradsuite_detail {

// Uniform values with |v| in [lo, hi]; keeps ReLU inputs away from the kink
// so central differences stay on one side.
template <typename Real>
TensorT<Real> rand_margin(Rng& rng, std::vector<std::size_t> shape, double lo, double hi,
                          bool grad) {
    auto t = TensorT<Real>::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double mag = rng.uniform(lo, hi);
        t.at(i) = static_cast<Real>(rng.uniform() < 0.5 ? -mag : mag);
    }
    t.set_requires_grad(grad);
    return t;
}

// Reduces a tensor to a scalar through fixed random weights, so every output
// coordinate influences the loss with a distinct sensitivity.
template <typename Real>
TensorT<Real> weigh(Rng& rng, const TensorT<Real>& x) {
    auto c = rand_margin<Real>(rng, x.shape(), 0.2, 1.0, false);
    return sum(mul(x, c));
}

// Scales encoder projections from training init (std 0.02) up to O(0.5).
// At training scale the attention scores are nearly zero, softmax barely
// reacts, and the key-path gradients sink below the finite-difference noise
// floor; the check needs a well-conditioned operating point.
template <typename Real>
void condition_encoder(EncoderStateT<Real>& enc, Real factor) {
    for (auto& [name, t] : enc.named_parameters()) {
        const bool projection = name.find(".w") != std::string::npos ||
                                name.find("weight") != std::string::npos ||
                                name.find("pos_embed") != std::string::npos ||
                                name.find("cls_token") != std::string::npos;
        if (!projection) continue;
        for (std::size_t i = 0; i < t->size(); ++i) t->at(i) *= factor;
    }
}

} // namespace gradsuite_detail

inline EncoderConfig default_gradcheck_config() {
    EncoderConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.channels = 1;
    cfg.embed_dim = 8;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2.0;
    return cfg;
}

// Frozen encoder + randomized Multi-Adapter + cosine head over a fixed
// two-image batch: the composite whose gradients the suite certifies.
// Identical seeds produce value-identical fixtures across scalar types
// (all draws happen in double and cast).
template <typename Real>
struct CompositeFixture {
    EncoderStateT<Real> encoder;
    AdapterStateT<Real> adapters;
    CosineHeadT<Real> head;
    std::vector<std::vector<Real>> images;
    std::vector<int> labels;

    TensorT<Real> loss() const {
        auto feats = encode<Real>(encoder, &adapters, images);
        return cross_entropy_logits(head.logits(feats), labels);
    }

    std::vector<std::pair<std::string, TensorT<Real>>> trainable() {
        std::vector<std::pair<std::string, TensorT<Real>>> params;
        for (auto& [name, t] : adapters.named_parameters()) params.emplace_back(name, *t);
        params.emplace_back("head.weight", head.weight);
        return params;
    }
};

template <typename Real>
CompositeFixture<Real> make_composite_fixture(std::uint64_t seed, const EncoderConfig& config,
                                              std::size_t bottleneck) {
    EncoderConfig cfg = config;
    cfg.validate();
    CompositeFixture<Real> fix;
    fix.encoder = init_encoder<Real>(cfg, derive_seed(seed, {15}));
    gradsuite_detail::condition_encoder<Real>(fix.encoder, Real(25));
    fix.encoder.freeze();

    AdapterConfig acfg;
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        acfg.placements.push_back({b, AdapterKind::AdaptMLP});
        acfg.placements.push_back({b, AdapterKind::AdaptAtten});
        acfg.placements.push_back({b, AdapterKind::AdaptAll});
    }
    acfg.bottleneck = bottleneck;
    fix.adapters = init_adapters<Real>(acfg, cfg.embed_dim, derive_seed(seed, {16}));
    // Randomize away from the zero init so the check is not vacuous; the
    // down-projection biases sit at +/-0.5 to keep hidden ReLU inputs clear
    // of the kink under finite-difference steps.
    Rng arng(derive_seed(seed, {17}));
    for (auto& [name, t] : fix.adapters.named_parameters()) {
        if (name.rfind("w_up") == name.size() - 4 || name.rfind("w_down") == name.size() - 6) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                const double mag = arng.uniform(0.2, 0.5);
                t->at(i) = static_cast<Real>(arng.uniform() < 0.5 ? -mag : mag);
            }
        } else if (name.rfind("b_down") == name.size() - 6) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                t->at(i) = (i % 2 == 0) ? Real(0.5) : Real(-0.5);
            }
        } else {
            for (std::size_t i = 0; i < t->size(); ++i) {
                const double mag = arng.uniform(0.05, 0.2);
                t->at(i) = static_cast<Real>(arng.uniform() < 0.5 ? -mag : mag);
            }
        }
    }
    fix.adapters.set_trainable(true);

    fix.head = init_cosine_head<Real>(2, cfg.embed_dim, Real(0.07), derive_seed(seed, {18}));

    Rng irng(derive_seed(seed, {19}));
    for (int i = 0; i < 2; ++i) {
        std::vector<Real> img(cfg.image_numel());
        for (auto& v : img) v = static_cast<Real>(irng.uniform(-1.0, 1.0));
        fix.images.push_back(std::move(img));
    }
    fix.labels = {0, 1};
    return fix;
}

// Certifies single-precision analytic gradients of the composite against a
// double-precision central-difference reference taken at the identical
// (float-representable) point. A 32-bit forward cannot provide the FD
// reference itself: its rounding noise eps*|f|/(2h) sits above the smallest
// true sensitivities of a two-block composite.
inline GradSuiteCase<float> check_composite_against_f64(std::uint64_t seed,
                                                        const EncoderConfig& config,
                                                        std::size_t bottleneck, float tol) {
    auto fix32 = make_composite_fixture<float>(seed, config, bottleneck);
    auto fix64 = make_composite_fixture<double>(seed, config, bottleneck);

    // Pin the double twin to the float values (exact widening casts).
    {
        auto p32 = fix32.encoder.named_parameters();
        auto p64 = fix64.encoder.named_parameters();
        for (std::size_t i = 0; i < p32.size(); ++i) {
            for (std::size_t j = 0; j < p32[i].second->size(); ++j) {
                p64[i].second->at(j) = static_cast<double>(p32[i].second->at(j));
            }
        }
    }
    {
        auto t32 = fix32.trainable();
        auto t64 = fix64.trainable();
        for (std::size_t i = 0; i < t32.size(); ++i) {
            for (std::size_t j = 0; j < t32[i].second.size(); ++j) {
                t64[i].second.at(j) = static_cast<double>(t32[i].second.at(j));
            }
        }
    }
    for (std::size_t i = 0; i < fix32.images.size(); ++i) {
        for (std::size_t j = 0; j < fix32.images[i].size(); ++j) {
            fix64.images[i][j] = static_cast<double>(fix32.images[i][j]);
        }
    }

    auto params32 = fix32.trainable();
    std::vector<std::vector<float>> analytic(params32.size());
    {
        TapeT<float> tape;
        auto scope = tape.activate();
        auto loss = fix32.loss();
        backward(loss);
        for (std::size_t p = 0; p < params32.size(); ++p) {
            auto& t = params32[p].second;
            analytic[p] = t.has_grad() ? t.grad() : std::vector<float>(t.size(), 0.0f);
            t.clear_grad();
        }
    }

    GradSuiteCase<float> result{"composite_f32_vs_f64_reference", 0.0f, true};
    auto params64 = fix64.trainable();
    const double h = 1e-5;
    for (std::size_t p = 0; p < params64.size(); ++p) {
        auto& t = params64[p].second;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t.at(i);
            t.at(i) = saved + h;
            const double fp = fix64.loss().item();
            t.at(i) = saved - h;
            const double fm = fix64.loss().item();
            t.at(i) = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double g = static_cast<double>(analytic[p][i]);
            const double denom = std::max({std::abs(g), std::abs(numeric), 1e-8});
            const double rel = std::abs(g - numeric) / denom;
            if (rel > result.worst_rel_error) {
                result.worst_rel_error = static_cast<float>(rel);
            }
        }
    }
    result.pass = result.worst_rel_error <= tol;
    return result;
}

// Finite-difference checks for every differentiable primitive plus a full
// encoder + Multi-Adapter + cosine-head composite with frozen encoder
// parameters. Deterministic per seed.
template <typename Real>
GradSuiteResult<Real> run_gradient_suite(Real h, Real tol, std::uint64_t seed,
                                         const EncoderConfig& composite_config =
                                             default_gradcheck_config(),
                                         std::size_t composite_bottleneck = 2) {
    using gradsuite_detail::rand_margin;
    using gradsuite_detail::weigh;
    GradSuiteResult<Real> result;

    auto run_case = [&](const std::string& name, const std::function<TensorT<Real>()>& f,
                        std::vector<std::pair<std::string, TensorT<Real>>> params) {
        auto report = grad_check<Real>(f, std::move(params), h, tol);
        GradSuiteCase<Real> c{name, report.worst_rel_error, report.pass};
        result.cases.push_back(c);
        if (report.worst_rel_error >= result.worst_rel_error) {
            result.worst_rel_error = report.worst_rel_error;
            result.worst_case = name;
        }
        result.pass = result.pass && report.pass;
    };

    {
        Rng rng(derive_seed(seed, {1}));
        auto a = rand_margin<Real>(rng, {3, 4}, 0.2, 1.0, true);
        auto b = rand_margin<Real>(rng, {4, 2}, 0.2, 1.0, true);
        auto w = rand_margin<Real>(rng, {3, 2}, 0.2, 1.0, false);
        run_case("matmul", [=]() { return sum(mul(matmul(a, b), w)); },
                 {{"a", a}, {"b", b}});
    }
    {
        Rng rng(derive_seed(seed, {2}));
        auto x = rand_margin<Real>(rng, {3, 4}, 0.2, 1.0, true);
        auto w = rand_margin<Real>(rng, {4, 2}, 0.2, 1.0, true);
        auto b = rand_margin<Real>(rng, {2}, 0.2, 1.0, true);
        auto c = rand_margin<Real>(rng, {3, 2}, 0.2, 1.0, false);
        run_case("linear", [=]() { return sum(mul(linear(x, w, b), c)); },
                 {{"x", x}, {"w", w}, {"b", b}});
    }
    {
        Rng rng(derive_seed(seed, {3}));
        auto a = rand_margin<Real>(rng, {2, 3}, 0.2, 1.0, true);
        auto b = rand_margin<Real>(rng, {2, 3}, 0.2, 1.0, true);
        auto s = rand_margin<Real>(rng, {1}, 0.2, 1.0, true);
        auto c = rand_margin<Real>(rng, {2, 3}, 0.2, 1.0, false);
        run_case("add_mul_scale",
                 [=]() {
                     auto y = add(mul(a, b), mul(s, a));
                     return sum(mul(add_scalar(scale(y, Real(0.7)), Real(0.3)), c));
                 },
                 {{"a", a}, {"b", b}, {"s", s}});
    }
    {
        Rng rng(derive_seed(seed, {4}));
        auto x = rand_margin<Real>(rng, {2, 5}, 0.15, 1.0, true);
        auto c = rand_margin<Real>(rng, {2, 5}, 0.2, 1.0, false);
        run_case("relu", [=]() { return sum(mul(relu(x), c)); }, {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {5}));
        auto x = rand_margin<Real>(rng, {2, 5}, 0.05, 1.5, true);
        auto c = rand_margin<Real>(rng, {2, 5}, 0.2, 1.0, false);
        run_case("gelu", [=]() { return sum(mul(gelu(x), c)); }, {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {6}));
        auto x = rand_margin<Real>(rng, {3, 5}, 0.1, 1.5, true);
        auto c = rand_margin<Real>(rng, {3, 5}, 0.2, 1.0, false);
        run_case("softmax_rows", [=]() { return sum(mul(softmax(x, -1), c)); }, {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {61}));
        auto x = rand_margin<Real>(rng, {3, 5}, 0.4, 1.6, true);
        auto c0 = rand_margin<Real>(rng, {3, 5}, 0.3, 1.0, false);
        run_case("softmax_axis0", [=]() { return sum(mul(softmax(x, 0), c0)); }, {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {7}));
        auto x = rand_margin<Real>(rng, {3, 6}, 0.2, 1.2, true);
        auto gm = rand_margin<Real>(rng, {6}, 0.5, 1.5, true);
        auto bt = rand_margin<Real>(rng, {6}, 0.1, 0.6, true);
        auto c = rand_margin<Real>(rng, {3, 6}, 0.2, 1.0, false);
        run_case("layernorm",
                 [=]() { return sum(mul(layernorm(x, gm, bt, Real(kLayerNormEps)), c)); },
                 {{"x", x}, {"gamma", gm}, {"beta", bt}});
    }
    {
        Rng rng(derive_seed(seed, {8}));
        auto x = rand_margin<Real>(rng, {3, 5}, 0.2, 1.0, true);
        auto c = rand_margin<Real>(rng, {5, 3}, 0.2, 1.0, false);
        run_case("structural",
                 [=]() {
                     auto t = transpose(x);
                     auto parts = std::vector<TensorT<Real>>{slice_cols(t, 0, 1),
                                                             slice_cols(t, 1, 2)};
                     return sum(mul(concat_cols(parts), c));
                 },
                 {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {9}));
        auto x = rand_margin<Real>(rng, {4, 3}, 0.2, 1.0, true);
        auto c = rand_margin<Real>(rng, {2, 3}, 0.2, 1.0, false);
        run_case("rows_roundtrip",
                 [=]() {
                     auto pooled = mean_rows(x);
                     auto row = select_row(x, 1);
                     auto stacked = stack_rows<Real>({pooled, row});
                     return sum(mul(stacked, c));
                 },
                 {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {10}));
        auto x = rand_margin<Real>(rng, {3, 4}, 0.3, 1.0, true);
        auto c = rand_margin<Real>(rng, {3, 4}, 0.2, 1.0, false);
        run_case("normalize_rows", [=]() { return sum(mul(normalize_rows(x), c)); }, {{"x", x}});
    }
    {
        Rng rng(derive_seed(seed, {11}));
        auto z = rand_margin<Real>(rng, {4, 5}, 0.1, 2.0, true);
        const std::vector<int> labels = {0, 3, 1, 4};
        run_case("cross_entropy", [=]() { return cross_entropy_logits(z, labels); }, {{"z", z}});
    }
    {
        Rng rng(derive_seed(seed, {12}));
        auto x = rand_margin<Real>(rng, {2, 4}, 0.2, 1.0, true);
        run_case("sum_mean", [=]() { return add(sum(x), mean(x)); }, {{"x", x}});
    }

    // Whole block with trainable encoder parameters. 64-bit only: the
    // float FD noise floor (~eps*|f|/2h) sits above the smallest key-path
    // sensitivities, so single-precision differences cannot certify these
    // coordinates at any honest tolerance.
    if constexpr (sizeof(Real) == 8) {
        EncoderConfig cfg;
        cfg.image_size = 8;
        cfg.patch_size = 4;
        cfg.channels = 1;
        cfg.embed_dim = 4;
        cfg.num_blocks = 1;
        cfg.num_heads = 2;
        cfg.mlp_ratio = 2.0;
        auto enc = init_encoder<Real>(cfg, derive_seed(seed, {13}));
        gradsuite_detail::condition_encoder<Real>(enc, Real(25));
        Rng rng(derive_seed(seed, {14}));
        auto x = rand_margin<Real>(rng, {3, 4}, 0.2, 1.0, false);
        auto c = rand_margin<Real>(rng, {3, 4}, 0.2, 1.0, false);
        std::vector<std::pair<std::string, TensorT<Real>>> params;
        for (auto& [name, t] : enc.named_parameters()) params.emplace_back(name, *t);
        run_case("encoder_block",
                 [&enc, x, c]() { return sum(mul(block_forward(enc, 0, x).second, c)); },
                 std::move(params));
    }

    // Full composite: frozen encoder, trainable Multi-Adapter and cosine
    // head, cross-entropy loss. In double the FD step drops to 1e-5: the
    // 0.07 temperature sharpens the head's curvature and the truncation
    // term h^2 f''' would otherwise dominate. In float the analytic
    // gradients are certified against the double FD reference instead.
    if constexpr (sizeof(Real) == 8) {
        auto fix = make_composite_fixture<Real>(seed, composite_config, composite_bottleneck);
        auto params = fix.trainable();
        // Frozen encoder parameters ride along to prove they are excluded.
        params.emplace_back("encoder.patch_proj.weight", fix.encoder.patch_weight);
        auto report = grad_check<Real>([&fix]() { return fix.loss(); }, std::move(params),
                                       Real(1e-5), tol);
        GradSuiteCase<Real> c{"composite_encoder_adapter_head", report.worst_rel_error,
                              report.pass};
        result.cases.push_back(c);
        if (report.worst_rel_error >= result.worst_rel_error) {
            result.worst_rel_error = report.worst_rel_error;
            result.worst_case = c.name;
        }
        result.pass = result.pass && report.pass;
    } else {
        auto c = check_composite_against_f64(seed, composite_config, composite_bottleneck,
                                             static_cast<float>(tol));
        result.cases.push_back(c);
        if (c.worst_rel_error >= result.worst_rel_error) {
            result.worst_rel_error = c.worst_rel_error;
            result.worst_case = c.name;
        }
        result.pass = result.pass && c.pass;
    }

    return result;
}

} // namespace adaptcl
