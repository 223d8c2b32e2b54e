#include <doctest.h>

#include "adaptcl/config.hpp"
#include "adaptcl/error.hpp"

using namespace adaptcl;

namespace {

const char* kMinimal =
    "[encoder]\n"
    "image_size = 8\n"
    "patch_size = 4\n"
    "embed_dim = 16\n"
    "num_blocks = 2\n"
    "num_heads = 4\n"
    "[adapters]\n"
    "blocks = all\n"
    "kinds = mlp\n"
    "bottleneck = 8\n"
    "[recipe]\n"
    "epochs = 4\n"
    "batch_size = 16\n"
    "[data]\n"
    "num_classes = 10\n"
    "samples_per_class = 12\n"
    "[protocol]\n"
    "steps = 5\n"
    "classes_per_step = 2\n";

} // namespace

TEST_CASE("minimal config parses with defaults filled in") {
    auto cfg = parse_run_config(kMinimal);
    CHECK(cfg.spec.encoder.embed_dim == 16);
    CHECK(cfg.spec.encoder.mlp_ratio == doctest::Approx(2.0)); // default
    CHECK(cfg.spec.adapter_blocks == std::vector<std::size_t>{0, 1});
    CHECK(cfg.spec.adapter_kinds.size() == 1);
    CHECK(cfg.spec.bottleneck == 8);
    CHECK(cfg.spec.recipe.lr0 == doctest::Approx(0.01));
    CHECK(cfg.spec.recipe.weight_decay == doctest::Approx(0.0005));
    CHECK(cfg.spec.recipe.temperature == doctest::Approx(0.07));
    CHECK(cfg.spec.plan.step_classes == std::vector<std::size_t>(5, 2));
    CHECK(cfg.spec.imbalance == doctest::Approx(1.0));
    CHECK(cfg.fingerprint.size() == 64);
}

TEST_CASE("unknown keys and sections are rejected by name") {
    CHECK_THROWS_WITH_AS(parse_run_config("[encoder]\nwidth = 3\n"),
                         doctest::Contains("encoder.width"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config("[nonsense]\nx = 1\n"),
                         doctest::Contains("nonsense"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(kMinimal, {"adapters.rank=4"}),
                         doctest::Contains("adapters.rank"), ConfigError);
}

TEST_CASE("invalid values name the offending key") {
    std::string bad = std::string(kMinimal) + "[adapters]\nalpha = -1\n";
    CHECK_THROWS_WITH_AS(parse_run_config(bad), doctest::Contains("alpha"), ConfigError);

    std::string nan = std::string(kMinimal) + "[recipe]\nepochs = soon\n";
    CHECK_THROWS_WITH_AS(parse_run_config(nan), doctest::Contains("recipe.epochs"), ConfigError);

    std::string mismatch = std::string(kMinimal) + "[protocol]\nsteps = 4\n";
    CHECK_THROWS_AS(parse_run_config(mismatch), ConfigError);
}

TEST_CASE("fingerprint identifies the effective configuration") {
    auto a = parse_run_config(kMinimal);
    auto b = parse_run_config(kMinimal);
    CHECK(a.fingerprint == b.fingerprint);

    // Comments and spacing do not matter.
    std::string spaced = std::string("# header\n") + kMinimal;
    CHECK(parse_run_config(spaced).fingerprint == a.fingerprint);

    // Writing a default explicitly does not change the effective config.
    std::string with_default = std::string(kMinimal) + "[recipe]\nlr0 = 0.01\n";
    CHECK(parse_run_config(with_default).fingerprint == a.fingerprint);

    // Changing a value does.
    auto c = parse_run_config(kMinimal, {"recipe.lr0=0.02"});
    CHECK(c.fingerprint != a.fingerprint);
    CHECK(c.spec.recipe.lr0 == doctest::Approx(0.02));
}

TEST_CASE("override syntax is validated") {
    CHECK_THROWS_AS(parse_run_config(kMinimal, {"recipe.lr0"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(kMinimal, {"lr0=0.02"}), ConfigError);
}

TEST_CASE("block list forms") {
    CHECK(parse_blocks("none", 12).empty());
    CHECK(parse_blocks("all", 3) == std::vector<std::size_t>{0, 1, 2});
    CHECK(parse_blocks("1-3", 12) == std::vector<std::size_t>{0, 1, 2});
    CHECK(parse_blocks("10-12", 12) == std::vector<std::size_t>{9, 10, 11});
    CHECK(parse_blocks("1,5,3", 12) == std::vector<std::size_t>{0, 2, 4});
    CHECK_THROWS_AS(parse_blocks("0-3", 12), ConfigError);
    CHECK_THROWS_AS(parse_blocks("5-3", 12), ConfigError);
    CHECK_THROWS_AS(parse_blocks("1-13", 12), ConfigError);
}

TEST_CASE("kind list forms") {
    CHECK(parse_kinds("none").empty());
    CHECK(parse_kinds("mlp") == std::vector<AdapterKind>{AdapterKind::AdaptMLP});
    auto all = parse_kinds("mlp+atten+all");
    REQUIRE(all.size() == 3);
    CHECK(all[1] == AdapterKind::AdaptAtten);
    CHECK_THROWS_WITH_AS(parse_kinds("mlp+lora"), doctest::Contains("lora"), ConfigError);
}

TEST_CASE("step_list overrides uniform steps") {
    std::string cfg = std::string(kMinimal) + "[protocol]\nstep_list = 4,3,3\n";
    auto parsed = parse_run_config(cfg);
    CHECK(parsed.spec.plan.step_classes == std::vector<std::size_t>{4, 3, 3});
}

TEST_CASE("canonical text is sorted and stable") {
    auto cfg = parse_run_config(kMinimal);
    auto text = canonical_config_text(cfg.entries);
    CHECK(text.find("adapters.alpha=") != std::string::npos);
    CHECK(text.find("adapters.alpha=") < text.find("encoder.embed_dim="));
    CHECK(text.find("encoder.embed_dim=") < text.find("recipe.lr0="));
}
