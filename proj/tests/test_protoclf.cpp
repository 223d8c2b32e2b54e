#include <doctest.h>

#include <cmath>

#include "adaptcl/protoclf.hpp"
#include "adaptcl/rng.hpp"

using namespace adaptcl;

TEST_CASE("prototype of identical vectors is that vector") {
    auto feats = Tensor::from_data({2, 3}, {1, 2, 3, 1, 2, 3});
    auto protos = compute_prototypes(feats, {4, 4});
    REQUIRE(protos.count(4) == 1);
    CHECK(protos[4] == std::vector<float>{1, 2, 3});
}

TEST_CASE("prototype of two one-hot vectors is the midpoint") {
    auto feats = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto protos = compute_prototypes(feats, {0, 0});
    CHECK(protos[0][0] == doctest::Approx(0.5));
    CHECK(protos[0][1] == doctest::Approx(0.5));
}

TEST_CASE("prototypes match a per-class loop oracle on random data") {
    Rng rng(77);
    const std::size_t n = 50, d = 8;
    auto feats = Tensor::zeros({n, d});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(i % 5);
        for (std::size_t j = 0; j < d; ++j) {
            feats.at(i, j) = static_cast<float>(rng.uniform(-1, 1));
        }
    }
    auto protos = compute_prototypes(feats, labels);
    for (int cls = 0; cls < 5; ++cls) {
        std::vector<double> sum(d, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != cls) continue;
            ++count;
            for (std::size_t j = 0; j < d; ++j) sum[j] += feats.at(i, j);
        }
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(std::abs(protos[cls][j] - sum[j] / static_cast<double>(count)) <= 1e-6);
        }
    }
}

TEST_CASE("requesting a class with no samples is a contract error") {
    auto feats = Tensor::from_data({1, 2}, {1, 2});
    std::vector<int> required = {3, 4};
    CHECK_THROWS_AS(compute_prototypes(feats, {3}, &required), ContractError);
}

TEST_CASE("grow appends columns and never rewrites old ones") {
    PrototypeClassifier clf;
    clf.grow({{1, {1, 0}}, {0, {0, 1}}});
    CHECK(clf.num_classes() == 2);
    CHECK(clf.class_ids() == std::vector<int>{0, 1}); // ascending id order
    CHECK(clf.weight().at(0, 0) == 0.0f);
    CHECK(clf.weight().at(1, 0) == 1.0f);

    std::vector<float> col0_before = {clf.weight().at(0, 0), clf.weight().at(1, 0)};
    clf.grow({{7, {2, 2}}, {5, {3, -1}}});
    CHECK(clf.num_classes() == 4);
    CHECK(clf.class_ids() == std::vector<int>{0, 1, 5, 7});
    CHECK(clf.weight().at(0, 0) == col0_before[0]);
    CHECK(clf.weight().at(1, 0) == col0_before[1]);

    CHECK_THROWS_AS(clf.grow({{5, {1, 1}}}), ContractError);  // duplicate id
    CHECK_THROWS_AS(clf.grow({{9, {0, 0}}}), ContractError);  // zero prototype
    CHECK_THROWS_AS(clf.grow({{9, {1, 1, 1}}}), DimensionError);
}

TEST_CASE("ten then ten more classes keeps the first ten columns intact") {
    Rng rng(5);
    PrototypeClassifier clf;
    std::map<int, std::vector<float>> first;
    for (int c = 0; c < 10; ++c) {
        first[c] = {static_cast<float>(rng.uniform(0.1, 1)), static_cast<float>(rng.uniform(0.1, 1))};
    }
    clf.grow(first);
    auto before = clf.weight().clone();
    std::map<int, std::vector<float>> second;
    for (int c = 10; c < 20; ++c) {
        second[c] = {static_cast<float>(rng.uniform(0.1, 1)), static_cast<float>(rng.uniform(0.1, 1))};
    }
    clf.grow(second);
    CHECK(clf.num_classes() == 20);
    for (std::size_t dd = 0; dd < 2; ++dd)
        for (std::size_t k = 0; k < 10; ++k) CHECK(clf.weight().at(dd, k) == before.at(dd, k));
}

TEST_CASE("classify scores cosine similarity with lowest-id tie breaking") {
    PrototypeClassifier clf;
    clf.grow({{0, {1, 0}}, {1, {0, 1}}});

    auto exact = clf.classify(Tensor::from_data({1, 2}, {2, 0}));
    CHECK(exact.scores.at(0, 0) == doctest::Approx(1.0));
    CHECK(exact.predictions[0] == 0);

    // Antipodal feature against a single class scores -1.
    PrototypeClassifier single;
    single.grow({{3, {1, 1}}});
    auto anti = single.classify(Tensor::from_data({1, 2}, {-1, -1}));
    CHECK(anti.scores.at(0, 0) == doctest::Approx(-1.0));
    CHECK(anti.predictions[0] == 3);

    // Equidistant feature ties; the lower class id wins.
    auto tie = clf.classify(Tensor::from_data({1, 2}, {1, 1}));
    CHECK(tie.scores.at(0, 0) == doctest::Approx(tie.scores.at(0, 1)));
    CHECK(tie.predictions[0] == 0);

    CHECK_THROWS_AS(clf.classify(Tensor::from_data({1, 2}, {0, 0})), ContractError);
}

TEST_CASE("classify matches a normalized dot-product oracle") {
    Rng rng(99);
    PrototypeClassifier clf;
    std::map<int, std::vector<float>> protos;
    const std::size_t d = 6;
    for (int c = 0; c < 5; ++c) {
        std::vector<float> p(d);
        for (auto& v : p) v = static_cast<float>(rng.uniform(-1, 1));
        protos[c] = p;
    }
    clf.grow(protos);

    auto feats = Tensor::zeros({7, d});
    for (std::size_t i = 0; i < feats.size(); ++i) {
        feats.at(i) = static_cast<float>(rng.uniform(-1, 1));
    }
    auto result = clf.classify(feats);
    for (std::size_t i = 0; i < 7; ++i) {
        for (int c = 0; c < 5; ++c) {
            double dot = 0, nf = 0, np = 0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += feats.at(i, j) * protos[c][j];
                nf += feats.at(i, j) * feats.at(i, j);
                np += protos[c][j] * protos[c][j];
            }
            const double expect = dot / (std::sqrt(nf) * std::sqrt(np));
            CHECK(std::abs(result.scores.at(i, static_cast<std::size_t>(c)) - expect) <= 1e-6);
            CHECK(result.scores.at(i, static_cast<std::size_t>(c)) >= -1.0f - 1e-6f);
            CHECK(result.scores.at(i, static_cast<std::size_t>(c)) <= 1.0f + 1e-6f);
        }
    }
}

TEST_CASE("scores are invariant to positive feature scaling") {
    Rng rng(123);
    PrototypeClassifier clf;
    clf.grow({{0, {0.5f, 1.0f, -0.2f}}, {1, {-1.0f, 0.3f, 0.8f}}});
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> f = {static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1))};
        if (std::abs(f[0]) + std::abs(f[1]) + std::abs(f[2]) < 1e-3) continue;
        const float c = static_cast<float>(rng.uniform(0.1, 10.0));
        std::vector<float> scaled = {c * f[0], c * f[1], c * f[2]};
        auto r1 = clf.classify(Tensor::from_data({1, 3}, f));
        auto r2 = clf.classify(Tensor::from_data({1, 3}, scaled));
        CHECK(r1.scores.at(0, 0) == doctest::Approx(r2.scores.at(0, 0)).epsilon(1e-5));
        CHECK(r1.scores.at(0, 1) == doctest::Approx(r2.scores.at(0, 1)).epsilon(1e-5));
        CHECK(r1.predictions[0] == r2.predictions[0]);
    }
}

TEST_CASE("growth keeps old scores unchanged; predictions move only to new winners") {
    Rng rng(321);
    PrototypeClassifier clf;
    clf.grow({{0, {1.0f, 0.1f}}, {1, {0.1f, 1.0f}}});
    auto feats = Tensor::zeros({10, 2});
    for (std::size_t i = 0; i < feats.size(); ++i) {
        feats.at(i) = static_cast<float>(rng.uniform(-1, 1));
    }
    auto before = clf.classify(feats);
    clf.grow({{2, {-1.0f, -1.0f}}});
    auto after = clf.classify(feats);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(after.scores.at(i, 0) == before.scores.at(i, 0));
        CHECK(after.scores.at(i, 1) == before.scores.at(i, 1));
        if (after.predictions[i] != before.predictions[i]) {
            CHECK(after.predictions[i] == 2);
        }
    }
}

TEST_CASE("normalized columns have unit norm") {
    PrototypeClassifier clf;
    clf.grow({{0, {3, 4}}, {1, {0.01f, 0}}});
    auto r = clf.classify(Tensor::from_data({1, 2}, {3, 4}));
    CHECK(r.scores.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.scores.at(0, 1) == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("classifier records round trip through SIML names") {
    PrototypeClassifier clf;
    clf.grow({{3, {1, 2, 3}}, {11, {4, 5, 6}}});
    auto records = clf.to_records();
    REQUIRE(records.size() == 2);
    CHECK(records[0].name == "classifier.class_3");
    CHECK(records[1].name == "classifier.class_11");

    auto loaded = PrototypeClassifier::from_records(records);
    CHECK(loaded.class_ids() == clf.class_ids());
    for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t k = 0; k < 2; ++k) CHECK(loaded.weight().at(d, k) == clf.weight().at(d, k));
}

TEST_CASE("cosine head logits are temperature-scaled cosines") {
    auto head = init_cosine_head<float>(2, 4, 0.07f, 9);
    head.weight = Tensor::from_data({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0}).set_requires_grad(true);
    auto feats = Tensor::from_data({1, 4}, {2, 0, 0, 0});
    auto logits = head.logits(feats);
    CHECK(logits.at(0, 0) == doctest::Approx(1.0 / 0.07).epsilon(1e-5));
    CHECK(logits.at(0, 1) == doctest::Approx(0.0).epsilon(1e-6));
}
