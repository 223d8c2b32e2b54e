#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "adaptcl/adapters.hpp"
#include "adaptcl/protoclf.hpp"
#include "adaptcl/rng.hpp"
#include "oracle.hpp"

using namespace adaptcl;

namespace {

EncoderConfig tiny_config() {
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

AdapterConfig all_kinds_config(std::size_t blocks, std::size_t r) {
    AdapterConfig cfg;
    for (std::size_t b = 0; b < blocks; ++b) {
        cfg.placements.push_back({b, AdapterKind::AdaptMLP});
        cfg.placements.push_back({b, AdapterKind::AdaptAtten});
        cfg.placements.push_back({b, AdapterKind::AdaptAll});
    }
    cfg.bottleneck = r;
    return cfg;
}

template <typename Real>
void randomize(AdapterStateT<Real>& ad, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, t] : ad.named_parameters()) {
        (void)name;
        for (std::size_t i = 0; i < t->size(); ++i) {
            t->at(i) = static_cast<Real>(rng.uniform(-0.5, 0.5));
        }
    }
}

template <typename Real>
std::vector<std::vector<Real>> random_images(std::uint64_t seed, std::size_t count,
                                             std::size_t numel) {
    Rng rng(seed);
    std::vector<std::vector<Real>> images;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<Real> img(numel);
        for (auto& v : img) v = static_cast<Real>(rng.uniform(-1.0, 1.0));
        images.push_back(std::move(img));
    }
    return images;
}

} // namespace

TEST_CASE("zero up-projection annihilates the adapter branch") {
    AdapterConfig cfg;
    cfg.placements = {{0, AdapterKind::AdaptMLP}};
    cfg.bottleneck = 3;
    auto ad = init_adapters<float>(cfg, 8, 1); // w_up starts at zero
    Rng rng(5);
    auto c = Tensor::zeros({4, 8});
    for (std::size_t i = 0; i < c.size(); ++i) c.at(i) = static_cast<float>(rng.uniform(-2, 2));
    auto out = adapter_forward(ad, {0, AdapterKind::AdaptMLP}, c);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == 0.0f);
}

TEST_CASE("hand-computed bottleneck with R=1, D=2") {
    AdapterConfig cfg;
    cfg.placements = {{0, AdapterKind::AdaptAtten}};
    cfg.bottleneck = 1;
    cfg.alpha = 0.1;
    auto ad = init_adapters<float>(cfg, 2, 1);
    auto& p = ad.params.at({0, AdapterKind::AdaptAtten});
    p.w_down = Tensor::from_data({2, 1}, {1, 0});
    p.b_down = Tensor::from_data({1}, {0});
    p.w_up = Tensor::from_data({1, 2}, {2, 0});
    p.b_up = Tensor::from_data({2}, {0, 0});

    auto out = adapter_forward(ad, {0, AdapterKind::AdaptAtten},
                               Tensor::from_data({1, 2}, {3, -5}));
    CHECK(out.at(0, 0) == doctest::Approx(0.6));
    CHECK(out.at(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("adapter forward matches the straight-line oracle") {
    AdapterConfig cfg;
    cfg.placements = {{1, AdapterKind::AdaptAll}};
    cfg.bottleneck = 4;
    auto ad = init_adapters<double>(cfg, 8, 3);
    randomize(ad, 301);
    Rng rng(9);
    auto c = Tensor64::zeros({5, 8});
    for (std::size_t i = 0; i < c.size(); ++i) c.at(i) = rng.uniform(-1, 1);

    auto out = adapter_forward(ad, {1, AdapterKind::AdaptAll}, c);
    oracle::Mat cm(5, std::vector<double>(8));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) cm[i][j] = c.at(i, j);
    auto expect = oracle::adapter(ad, {1, AdapterKind::AdaptAll}, cm);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out.at(i, j) - expect[i][j]) <= 1e-6);
}

TEST_CASE("adapter output is linear in alpha") {
    AdapterConfig cfg;
    cfg.placements = {{0, AdapterKind::AdaptMLP}};
    cfg.bottleneck = 4;
    auto ad = init_adapters<double>(cfg, 8, 3);
    randomize(ad, 302);
    Rng rng(10);
    auto c = Tensor64::zeros({3, 8});
    for (std::size_t i = 0; i < c.size(); ++i) c.at(i) = rng.uniform(-1, 1);

    auto base = adapter_forward(ad, {0, AdapterKind::AdaptMLP}, c);
    ad.config.alpha = 0.3;
    auto tripled = adapter_forward(ad, {0, AdapterKind::AdaptMLP}, c);
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(tripled.at(i) == doctest::Approx(3.0 * base.at(i)).epsilon(1e-9));
    }
}

TEST_CASE("empty placement set reduces compose_block to the plain block") {
    auto enc = init_encoder<float>(tiny_config(), 21);
    AdapterConfig cfg;
    cfg.bottleneck = 2;
    auto ad = init_adapters<float>(cfg, 8, 1);
    Rng rng(12);
    auto x = Tensor::zeros({4, 8});
    for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = static_cast<float>(rng.uniform(-1, 1));

    auto composed = compose_block(enc, ad, 0, x);
    auto plain = block_forward(enc, 0, x).second;
    for (std::size_t i = 0; i < composed.size(); ++i) CHECK(composed.at(i) == plain.at(i));
}

TEST_CASE("full Z composition equals the manually assembled sum") {
    auto enc = init_encoder<double>(tiny_config(), 22);
    auto ad = init_adapters<double>(all_kinds_config(2, 3), 8, 2);
    randomize(ad, 303);
    Rng rng(13);
    auto x = Tensor64::zeros({4, 8});
    for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = rng.uniform(-1, 1);

    auto composed = compose_block(enc, ad, 0, x);

    // Assemble by hand from block stages and adapter branches.
    auto a_pre = attention_stage(enc, 0, x);
    auto a = add(a_pre, adapter_forward(ad, {0, AdapterKind::AdaptAtten}, x));
    auto h = mlp_stage(enc, 0, a);
    h = add(h, adapter_forward(ad, {0, AdapterKind::AdaptMLP}, a));
    h = add(h, adapter_forward(ad, {0, AdapterKind::AdaptAll}, x));

    for (std::size_t i = 0; i < composed.size(); ++i) {
        CHECK(composed.at(i) == doctest::Approx(h.at(i)).epsilon(1e-12));
    }

    // And against the independent oracle.
    oracle::Mat xm(4, std::vector<double>(8));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j) xm[i][j] = x.at(i, j);
    auto expect = oracle::block(enc, &ad, 0, xm).second;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(std::abs(composed.at(i, j) - expect[i][j]) <= 1e-6);
}

TEST_CASE("Multi-Adapter with Z={1} is bit-identical to the AdaptFormer route") {
    auto cfg = tiny_config();
    auto enc = init_encoder<float>(cfg, 23);
    AdapterConfig acfg;
    acfg.placements = {{0, AdapterKind::AdaptMLP}, {1, AdapterKind::AdaptMLP}};
    acfg.bottleneck = 3;
    auto ad = init_adapters<float>(acfg, 8, 4);
    randomize(ad, 304);
    auto images = random_images<float>(305, 3, cfg.image_numel());

    auto multi = encode<float>(enc, &ad, images);
    auto dedicated = adaptformer_encode<float>(enc, ad, images);
    REQUIRE(multi.size() == dedicated.size());
    for (std::size_t i = 0; i < multi.size(); ++i) {
        CHECK(multi.at(i) == dedicated.at(i)); // bit-for-bit
    }

    AdapterConfig bad;
    bad.placements = {{0, AdapterKind::AdaptAtten}};
    bad.bottleneck = 3;
    auto ad_bad = init_adapters<float>(bad, 8, 4);
    CHECK_THROWS_AS(adaptformer_encode<float>(enc, ad_bad, images), ConfigError);
}

TEST_CASE("zeroed adapters leave the encoder function untouched") {
    auto cfg = tiny_config();
    auto enc = init_encoder<float>(cfg, 24);
    auto ad = init_adapters<float>(all_kinds_config(2, 4), 8, 5); // up projections zero
    auto images = random_images<float>(306, 2, cfg.image_numel());

    auto plain = encode<float>(enc, images);
    auto with = encode<float>(enc, &ad, images);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(std::abs(plain.at(i) - with.at(i)) <= 1e-6f);
    }
}

TEST_CASE("trainable parameter counts are exact at ViT-B scale") {
    AdapterConfig one_kind;
    for (std::size_t b = 0; b < 12; ++b) one_kind.placements.push_back({b, AdapterKind::AdaptMLP});
    one_kind.bottleneck = 64;
    CHECK(count_trainable(one_kind, 768, false) == 1'179'648);
    CHECK(count_trainable(one_kind, 768, true) == 1'189'632);
    CHECK(std::abs(count_trainable(one_kind, 768, true) / 1e6 - 1.19) <= 0.005);

    AdapterConfig two_kinds;
    for (std::size_t b = 0; b < 12; ++b) {
        two_kinds.placements.push_back({b, AdapterKind::AdaptMLP});
        two_kinds.placements.push_back({b, AdapterKind::AdaptAtten});
    }
    two_kinds.bottleneck = 64;
    CHECK(count_trainable(two_kinds, 768, true) == 2'379'264);
    CHECK(std::abs(count_trainable(two_kinds, 768, true) / 1e6 - 2.38) <= 0.005);

    AdapterConfig three_kinds;
    for (std::size_t b = 0; b < 12; ++b) {
        three_kinds.placements.push_back({b, AdapterKind::AdaptMLP});
        three_kinds.placements.push_back({b, AdapterKind::AdaptAtten});
        three_kinds.placements.push_back({b, AdapterKind::AdaptAll});
    }
    three_kinds.bottleneck = 64;
    CHECK(count_trainable(three_kinds, 768, true) == 3'568'896);
    CHECK(std::abs(count_trainable(three_kinds, 768, true) / 1e6 - 3.57) <= 0.005);

    AdapterConfig empty;
    empty.bottleneck = 64;
    CHECK(count_trainable(empty, 768) == 0);

    const std::pair<std::size_t, std::size_t> clf{16, 10};
    CHECK(count_trainable(empty, 768, true, &clf) == 160);
}

TEST_CASE("count_trainable equals the coordinates the tape actually feeds") {
    auto cfg = tiny_config();
    auto enc = init_encoder<float>(cfg, 25);
    enc.freeze();
    AdapterConfig acfg = all_kinds_config(2, 2);
    auto ad = init_adapters<float>(acfg, 8, 6);
    ad.set_trainable(true);
    auto head = init_cosine_head<float>(2, 8, 0.07f, 7);
    auto images = random_images<float>(307, 2, cfg.image_numel());

    Tape tape;
    {
        auto scope = tape.activate();
        auto feats = encode<float>(enc, &ad, images);
        auto loss = cross_entropy_logits(head.logits(feats), {0, 1});
        backward(loss);
    }
    std::size_t observed = 0;
    for (auto& [name, t] : ad.named_parameters()) {
        (void)name;
        if (t->has_grad()) observed += t->size();
    }
    if (head.weight.has_grad()) observed += head.weight.size();

    const std::pair<std::size_t, std::size_t> clf{head.weight.rows(), head.weight.cols()};
    CHECK(observed == count_trainable(acfg, 8, true, &clf));
}

TEST_CASE("embedding into a larger placement set preserves the function") {
    auto cfg = tiny_config();
    auto enc = init_encoder<float>(cfg, 26);
    AdapterConfig small;
    small.placements = {{0, AdapterKind::AdaptMLP}};
    small.bottleneck = 3;
    auto ad_small = init_adapters<float>(small, 8, 8);
    randomize(ad_small, 308);
    auto images = random_images<float>(309, 3, cfg.image_numel());
    auto before = encode<float>(enc, &ad_small, images);

    auto larger = all_kinds_config(2, 3);
    auto embedded = embed_into_larger(ad_small, larger, 8, 9);
    auto after = encode<float>(enc, &embedded, images);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(std::abs(before.at(i) - after.at(i)) <= 1e-6f);
    }

    // Plain encoder embeds as the all-zero state.
    AdapterConfig none;
    none.bottleneck = 3;
    auto ad_none = init_adapters<float>(none, 8, 10);
    auto embedded_none = embed_into_larger(ad_none, larger, 8, 11);
    auto enc_only = encode<float>(enc, images);
    auto with_none = encode<float>(enc, &embedded_none, images);
    for (std::size_t i = 0; i < enc_only.size(); ++i) {
        CHECK(std::abs(enc_only.at(i) - with_none.at(i)) <= 1e-6f);
    }

    // Shrinking is rejected.
    CHECK_THROWS_AS(embed_into_larger(embedded, small, 8, 12), ConfigError);
}

TEST_CASE("one small descent step from an embedded state does not increase the loss") {
    auto cfg = tiny_config();
    auto enc = init_encoder<float>(cfg, 27);
    enc.freeze();
    AdapterConfig small;
    small.placements = {{0, AdapterKind::AdaptMLP},
                        {0, AdapterKind::AdaptAtten},
                        {1, AdapterKind::AdaptMLP}};
    small.bottleneck = 2;
    auto trained = init_adapters<float>(small, 8, 13);
    randomize(trained, 310); // stands in for a trained state

    auto embedded = embed_into_larger(trained, all_kinds_config(2, 2), 8, 14);
    embedded.set_trainable(true);
    auto head = init_cosine_head<float>(2, 8, 0.07f, 15);
    auto images = random_images<float>(311, 4, cfg.image_numel());
    const std::vector<int> labels = {0, 1, 0, 1};

    auto loss_value = [&]() {
        auto feats = encode<float>(enc, &embedded, images);
        return cross_entropy_logits(head.logits(feats), labels).item();
    };
    const float before = loss_value();

    Tape tape;
    {
        auto scope = tape.activate();
        auto feats = encode<float>(enc, &embedded, images);
        auto loss = cross_entropy_logits(head.logits(feats), labels);
        backward(loss);
    }
    const float lr = 1e-4f;
    for (auto& [name, t] : embedded.named_parameters()) {
        (void)name;
        if (!t->has_grad()) continue;
        for (std::size_t i = 0; i < t->size(); ++i) t->at(i) -= lr * t->grad()[i];
        t->clear_grad();
    }
    if (head.weight.has_grad()) {
        for (std::size_t i = 0; i < head.weight.size(); ++i) {
            head.weight.at(i) -= lr * head.weight.grad()[i];
        }
        head.weight.clear_grad();
    }
    CHECK(loss_value() <= before);
}

TEST_CASE("placement validation") {
    AdapterConfig cfg;
    cfg.placements = {{5, AdapterKind::AdaptMLP}};
    cfg.bottleneck = 2;
    CHECK_THROWS_AS(cfg.validate(2), ConfigError);

    AdapterConfig dup;
    dup.placements = {{0, AdapterKind::AdaptMLP}, {0, AdapterKind::AdaptMLP}};
    dup.bottleneck = 2;
    CHECK_THROWS_AS(dup.validate(2), ConfigError);

    AdapterConfig bad_alpha;
    bad_alpha.bottleneck = 2;
    bad_alpha.alpha = -1.0;
    CHECK_THROWS_WITH_AS(bad_alpha.validate(2), doctest::Contains("alpha"), ConfigError);
}

TEST_CASE("adapter save/load round trip") {
    const auto path = (std::filesystem::temp_directory_path() / "adaptcl_ad_rt.siml").string();
    auto ad = init_adapters<float>(all_kinds_config(2, 3), 8, 31);
    randomize(ad, 312);
    save_adapters(ad, path);

    auto fresh = init_adapters<float>(all_kinds_config(2, 3), 8, 32);
    load_adapters(fresh, path);
    auto pa = ad.named_parameters();
    auto pb = fresh.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t j = 0; j < pa[i].second->size(); ++j) {
            CHECK(pa[i].second->at(j) == pb[i].second->at(j));
        }
    }
    std::filesystem::remove(path);
}
