#include <catch2/catch_amalgamated.hpp>

#include "cfrec/counterfactual.hpp"
#include "cfrec/data.hpp"
#include "helpers.hpp"

using namespace cfrec;

namespace {

SynthWorldConfig cf_world_config() {
    SynthWorldConfig c;
    c.num_seen = 4;
    c.num_unseen = 2;
    c.attr_dim = 3;
    c.z_dim = 3;
    c.feature_dim = 12;
    c.samples_per_class = 15;
    c.seed = 123;
    return c;
}

GcmModel exact_model(const OracleWorld& world) {
    const int z = world.z_dim(), a = world.attr_dim(), d = world.feature_dim();
    ModelConfig mc;
    mc.feature_dim = d;
    mc.attr_dim = a;
    mc.z_dim = z;
    mc.hidden_dim = 2 * d;
    mc.sigmoid_output = false;
    GcmModel m(mc, 0);
    Mat G(z + a, d);
    G << world.A, world.B;
    Mat pinv = G.transpose() * (G * G.transpose()).inverse();
    test::embed_linear_encoder_mean(m, pinv.leftCols(z), -(world.offset * pinv.leftCols(z)));
    test::embed_linear_decoder(m, G, world.offset);
    return m;
}

}  // namespace

TEST_CASE("euclidean distance", "[counterfactual]") {
    Vec a(2), b(2);
    a << 0, 0;
    b << 3, 4;
    REQUIRE(euclidean_distance(a, a) == 0.0);
    REQUIRE(euclidean_distance(a, b) == 5.0);  // 3-4-5 triangle
    REQUIRE(euclidean_distance(a, b) == euclidean_distance(b, a));
    REQUIRE_THROWS_AS(euclidean_distance(a, Vec::Zero(3)), ShapeError);
}

TEST_CASE("abduct modes", "[counterfactual]") {
    ModelConfig mc;
    mc.feature_dim = 6;
    mc.attr_dim = 3;
    mc.hidden_dim = 8;
    GcmModel m(mc, 2);
    Vec x = Vec::LinSpaced(6, -1, 1);

    SECTION("posterior_mean returns exactly the encoded mean") {
        auto zs = abduct(m, x, ZMode::mean());
        REQUIRE(zs.size() == 1);
        REQUIRE(zs[0] == m.encode(x).mean);
    }
    SECTION("seeded sampling is reproducible") {
        auto a = abduct(m, x, ZMode::sampled(5, 77));
        auto b = abduct(m, x, ZMode::sampled(5, 77));
        REQUIRE(a.size() == 5);
        for (int i = 0; i < 5; ++i) REQUIRE(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
        auto c = abduct(m, x, ZMode::sampled(5, 78));
        REQUIRE(a[0] != c[0]);
    }
    SECTION("draw count must be positive") {
        REQUIRE_THROWS_AS(ZMode::sampled(0, 1), ConfigError);
    }
}

TEST_CASE("abduction recovers the generating factors on a matched linear world",
          "[counterfactual]") {
    auto [bundle, world] = generate_synthetic_world(cf_world_config());
    GcmModel m = exact_model(world);
    for (int i : {0, 9, 33}) {
        Vec z_true = world.z_factors.row(i).transpose();
        Vec y = world.attrs.row(world.labels[static_cast<std::size_t>(i)]).transpose();
        Vec x = world.g(z_true, y);
        auto zs = abduct(m, x, ZMode::mean());
        REQUIRE((zs[0] - z_true).norm() < 1e-5);
    }
}

TEST_CASE("counterfactual generation follows the linear oracle arithmetic", "[counterfactual]") {
    auto [bundle, world] = generate_synthetic_world(cf_world_config());
    GcmModel m = exact_model(world);

    Vec z0 = world.z_factors.row(3).transpose();
    Vec y0 = world.attrs.row(world.labels[3]).transpose();
    Vec y1 = world.attrs.row(2).transpose();
    Vec x = world.g(z0, y0);

    // x = A z0 + B y0 (+ offset); intervening on y yields A z0 + B y1
    Vec xt = generate_counterfactual(m, x, y1);
    REQUIRE((xt - world.g(z0, y1)).norm() < 1e-8);

    SECTION("consistency: the true class attribute regenerates the sample") {
        Vec same = generate_counterfactual(m, x, y0);
        REQUIRE((same - x).norm() < 1e-8);
    }
    SECTION("posterior_mean generation is deterministic") {
        REQUIRE(generate_counterfactual(m, x, y1) == generate_counterfactual(m, x, y1));
    }
    SECTION("attribute dimension is checked") {
        REQUIRE_THROWS_AS(generate_counterfactual(m, x, Vec::Zero(5)), ShapeError);
    }
}

TEST_CASE("counterfactual set cardinality and distances", "[counterfactual]") {
    ModelConfig mc;
    mc.feature_dim = 6;
    mc.attr_dim = 3;
    mc.hidden_dim = 8;
    GcmModel m(mc, 4);
    RandomStream rng(5);
    Vec x = rng.normal_mat(6, 1);

    CounterfactualRequest req;
    req.x = x;
    for (int k = 0; k < 4; ++k) req.targets.push_back(rng.normal_mat(3, 1));

    SECTION("one entry per target with posterior mean") {
        auto set = counterfactual_set(m, req);
        REQUIRE(set.entries.size() == 4);
        for (const auto& e : set.entries) REQUIRE(e.distance >= 0.0);
    }
    SECTION("targets x draws entries when sampling") {
        req.z_mode = ZMode::sampled(3, 9);
        auto set = counterfactual_set(m, req);
        REQUIRE(set.entries.size() == 12);
        auto per_target = set.min_distance_per_target(4);
        REQUIRE(per_target.size() == 4);
    }
    SECTION("empty targets rejected") {
        req.targets.clear();
        REQUIRE_THROWS_AS(counterfactual_set(m, req), ValidationError);
    }
}

TEST_CASE("a counterfactual equal to the sample has zero distance", "[counterfactual]") {
    auto [bundle, world] = generate_synthetic_world(cf_world_config());
    GcmModel m = exact_model(world);
    Vec z0 = world.z_factors.row(11).transpose();
    Vec y0 = world.attrs.row(world.labels[11]).transpose();
    Vec x = world.g(z0, y0);

    CounterfactualRequest req;
    req.x = x;
    req.targets.push_back(y0);
    auto set = counterfactual_set(m, req);
    REQUIRE(set.entries[0].distance < 1e-8);
    REQUIRE(set.min_distance() < 1e-8);
}

TEST_CASE("batched distances agree with the per-sample pipeline", "[counterfactual]") {
    ModelConfig mc;
    mc.feature_dim = 6;
    mc.attr_dim = 3;
    mc.hidden_dim = 8;
    GcmModel m(mc, 6);
    RandomStream rng(15);
    Mat X = rng.normal_mat(5, 6);
    Mat targets = rng.normal_mat(3, 3);

    Mat D = counterfactual_distances(m, X, targets);
    REQUIRE(D.rows() == 5);
    REQUIRE(D.cols() == 3);
    for (int i = 0; i < 5; ++i) {
        CounterfactualRequest req;
        req.x = X.row(i).transpose();
        for (int tj = 0; tj < 3; ++tj) req.targets.push_back(targets.row(tj).transpose());
        auto set = counterfactual_set(m, req);
        for (int tj = 0; tj < 3; ++tj)
            REQUIRE(D(i, tj) == Catch::Approx(set.entries[static_cast<std::size_t>(tj)].distance)
                                    .margin(1e-12));
    }
}

TEST_CASE("generation does not mutate the model or the input", "[counterfactual]") {
    ModelConfig mc;
    mc.feature_dim = 6;
    mc.attr_dim = 3;
    mc.hidden_dim = 8;
    GcmModel m(mc, 8);
    Mat before = m.params().at("dec.w1");
    Vec x = Vec::Ones(6);
    Vec x_copy = x;
    (void)generate_counterfactual(m, x, Vec::Ones(3));
    REQUIRE(m.params().at("dec.w1") == before);
    REQUIRE(x == x_copy);
}
