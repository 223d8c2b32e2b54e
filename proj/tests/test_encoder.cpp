#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adaptcl/encoder.hpp"
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

std::vector<float> random_image(std::uint64_t seed, std::size_t numel) {
    Rng rng(seed);
    std::vector<float> img(numel);
    for (auto& v : img) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return img;
}

std::string temp_path(const char* tag) {
    static int counter = 0;
    return (std::filesystem::temp_directory_path() /
            ("adaptcl_enc_" + std::string(tag) + "_" + std::to_string(++counter) + ".siml"))
        .string();
}

} // namespace

TEST_CASE("init shapes follow the configuration") {
    auto s = init_encoder<float>(tiny_config(), 5);
    CHECK(s.patch_weight.shape() == std::vector<std::size_t>{16, 8});
    CHECK(s.pos_embed.shape() == std::vector<std::size_t>{4, 8});
    REQUIRE(s.blocks.size() == 2);
    CHECK(s.blocks[0].w1.shape() == std::vector<std::size_t>{8, 16});
    CHECK(s.blocks[0].w2.shape() == std::vector<std::size_t>{16, 8});
}

TEST_CASE("same seed gives bit-identical states") {
    auto a = init_encoder<float>(tiny_config(), 7);
    auto b = init_encoder<float>(tiny_config(), 7);
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].second->size() == pb[i].second->size());
        for (std::size_t j = 0; j < pa[i].second->size(); ++j) {
            CHECK(pa[i].second->at(j) == pb[i].second->at(j));
        }
    }
    auto c = init_encoder<float>(tiny_config(), 8);
    bool any_diff = false;
    auto pc = c.named_parameters();
    for (std::size_t j = 0; j < pa[0].second->size(); ++j) {
        any_diff = any_diff || pa[0].second->at(j) != pc[0].second->at(j);
    }
    CHECK(any_diff);
}

TEST_CASE("invalid divisibility is a config error") {
    auto cfg = tiny_config();
    cfg.embed_dim = 7;
    CHECK_THROWS_AS(init_encoder<float>(cfg, 1), ConfigError);

    cfg = tiny_config();
    cfg.image_size = 9;
    CHECK_THROWS_AS(init_encoder<float>(cfg, 1), ConfigError);
}

TEST_CASE("zeroed output projections make the block an exact identity") {
    auto s = init_encoder<float>(tiny_config(), 3);
    for (auto& b : s.blocks) {
        for (auto* t : {&b.wo, &b.bo, &b.w2, &b.b2}) {
            for (std::size_t i = 0; i < t->size(); ++i) t->at(i) = 0.0f;
        }
    }
    Rng rng(11);
    auto x = Tensor::zeros({5, 8});
    for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = static_cast<float>(rng.uniform(-1, 1));
    auto [a, h] = block_forward(s, 0, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(a.at(i) == x.at(i));
        CHECK(h.at(i) == a.at(i));
    }
}

TEST_CASE("block outputs keep the token count and width") {
    auto s = init_encoder<float>(tiny_config(), 3);
    auto x = Tensor::zeros({5, 8});
    auto [a, h] = block_forward(s, 1, x);
    CHECK(a.shape() == std::vector<std::size_t>{5, 8});
    CHECK(h.shape() == std::vector<std::size_t>{5, 8});

    CHECK_THROWS_AS(block_forward(s, 2, x), RangeError);
    CHECK_THROWS_AS(block_forward(s, 0, Tensor::zeros({5, 4})), DimensionError);
}

TEST_CASE("block matches the straight-line oracle") {
    auto s = init_encoder<double>(tiny_config(), 17);
    Rng rng(23);
    auto x = Tensor64::zeros({4, 8});
    for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = rng.uniform(-1.0, 1.0);

    auto [a, h] = block_forward(s, 0, x);
    oracle::Mat xm(4, std::vector<double>(8));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j) xm[i][j] = x.at(i, j);
    auto [oa, oh] = oracle::block(s, nullptr, 0, xm);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(std::abs(a.at(i, j) - oa[i][j]) <= 1e-6);
            CHECK(std::abs(h.at(i, j) - oh[i][j]) <= 1e-6);
        }
    }
}

TEST_CASE("encode produces one feature row per image and matches the oracle") {
    auto cfg = tiny_config();
    auto s = init_encoder<double>(cfg, 29);
    std::vector<std::vector<double>> images;
    for (int i = 0; i < 3; ++i) {
        auto f = random_image(100 + static_cast<std::uint64_t>(i), cfg.image_numel());
        images.emplace_back(f.begin(), f.end());
    }
    auto feats = encode<double>(s, images);
    CHECK(feats.shape() == std::vector<std::size_t>{3, 8});

    for (std::size_t b = 0; b < 3; ++b) {
        auto expect = oracle::encode_image(s, nullptr, images[b]);
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(std::abs(feats.at(b, j) - expect[j]) <= 1e-6);
        }
    }
}

TEST_CASE("fixed seed and image reproduce the frozen golden feature vector") {
    // Golden values generated once from the straight-line oracle at
    // (seed 4242, image seed 77) and frozen here; the oracle regenerates
    // them on every run.
    auto cfg = tiny_config();
    auto s = init_encoder<double>(cfg, 4242);
    auto img_f = random_image(77, cfg.image_numel());
    std::vector<double> img(img_f.begin(), img_f.end());

    auto regen = oracle::encode_image(s, nullptr, img);
    auto feats = encode<double>(s, {img});

    const double golden[8] = {0.63214106241359125,   -0.30637164650355725, -1.2060314962935554,
                              0.031588731475954424,  -0.14326091385563641, 0.62266264751562406,
                              0.47716885373732576,   -0.10789723848974642};
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(std::abs(feats.at(0, j) - golden[j]) <= 1e-6);
        CHECK(std::abs(regen[j] - golden[j]) <= 1e-9);
    }
}

TEST_CASE("cls-token pooling returns the first token's feature") {
    auto cfg = tiny_config();
    cfg.pooling = EncoderConfig::Pooling::cls_token;
    auto s = init_encoder<float>(cfg, 31);
    CHECK(s.cls_token.shape() == std::vector<std::size_t>{1, 8});
    CHECK(s.pos_embed.shape() == std::vector<std::size_t>{5, 8});
    auto f = encode<float>(s, {random_image(5, cfg.image_numel())});
    CHECK(f.shape() == std::vector<std::size_t>{1, 8});
}

TEST_CASE("permuting the batch permutes the outputs identically") {
    auto cfg = tiny_config();
    auto s = init_encoder<float>(cfg, 37);
    std::vector<std::vector<float>> images = {random_image(1, cfg.image_numel()),
                                              random_image(2, cfg.image_numel()),
                                              random_image(3, cfg.image_numel())};
    auto fwd = encode<float>(s, images);
    std::vector<std::vector<float>> permuted = {images[2], images[0], images[1]};
    auto back = encode<float>(s, permuted);
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(back.at(0, j) == fwd.at(2, j));
        CHECK(back.at(1, j) == fwd.at(0, j));
        CHECK(back.at(2, j) == fwd.at(1, j));
    }
}

TEST_CASE("freeze clears requires_grad everywhere and blocks gradient flow") {
    auto s = init_encoder<float>(tiny_config(), 41);
    s.freeze();
    for (auto& [name, t] : s.named_parameters()) {
        (void)name;
        CHECK_FALSE(t->requires_grad());
    }
    Tape tape;
    auto scope = tape.activate();
    auto x = Tensor::zeros({3, 8});
    auto h = block_forward(s, 0, x).second;
    CHECK_FALSE(h.requires_grad());
    CHECK(tape.node_count() == 0);
}

TEST_CASE("weight save/load round trip is bit exact") {
    const auto path = temp_path("roundtrip");
    auto s = init_encoder<float>(tiny_config(), 43);
    save_weights(s, path);

    auto t = init_encoder<float>(tiny_config(), 99);
    load_weights(t, path);
    auto ps = s.named_parameters();
    auto pt = t.named_parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t j = 0; j < ps[i].second->size(); ++j) {
            CHECK(ps[i].second->at(j) == pt[i].second->at(j));
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated weight file leaves the state untouched") {
    const auto path = temp_path("trunc");
    auto s = init_encoder<float>(tiny_config(), 47);
    save_weights(s, path);
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    auto t = init_encoder<float>(tiny_config(), 53);
    const float before = t.patch_weight.at(0);
    CHECK_THROWS_AS(load_weights(t, path), FormatError);
    CHECK(t.patch_weight.at(0) == before);
    std::filesystem::remove(path);
}

TEST_CASE("dimension mismatch against the config is a format error naming dims") {
    const auto path = temp_path("dims");
    auto s = init_encoder<float>(tiny_config(), 59);
    save_weights(s, path);

    auto cfg = tiny_config();
    cfg.embed_dim = 4;
    cfg.num_heads = 2;
    auto t = init_encoder<float>(cfg, 61);
    const float before = t.patch_weight.at(0);
    CHECK_THROWS_WITH_AS(load_weights(t, path), doctest::Contains("[16,8]"), FormatError);
    CHECK(t.patch_weight.at(0) == before);
    std::filesystem::remove(path);
}
