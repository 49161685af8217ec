#include <catch2/catch_amalgamated.hpp>

#include "cfrec/data.hpp"

#include <filesystem>
#include <set>

using namespace cfrec;

namespace {

SynthWorldConfig small_world_config() {
    SynthWorldConfig c;
    c.num_seen = 4;
    c.num_unseen = 2;
    c.attr_dim = 3;
    c.z_dim = 3;
    c.feature_dim = 10;
    c.samples_per_class = 12;
    c.seed = 99;
    return c;
}

}  // namespace

TEST_CASE("synthetic world cardinality and determinism", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    REQUIRE(bundle.num_samples() == 6 * 12);
    REQUIRE(bundle.num_classes() == 6);
    REQUIRE(bundle.feature_dim() == 10);

    auto [bundle2, world2] = generate_synthetic_world(small_world_config());
    REQUIRE(encode_bundle(bundle) == encode_bundle(bundle2));  // bitwise identical
    REQUIRE(world.A == world2.A);

    SynthWorldConfig other = small_world_config();
    other.seed = 100;
    auto [bundle3, world3] = generate_synthetic_world(other);
    REQUIRE(encode_bundle(bundle) != encode_bundle(bundle3));
}

TEST_CASE("generator matrices have full column rank", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    Mat AB(world.z_dim() + world.attr_dim(), world.feature_dim());
    AB << world.A, world.B;
    Eigen::JacobiSVD<Mat> svd(AB);
    const auto sv = svd.singularValues();
    REQUIRE(sv.size() == 6);
    REQUIRE(sv.minCoeff() > 1e-6);
    REQUIRE(world.min_singular_value == Catch::Approx(sv.minCoeff()).margin(1e-12));
}

TEST_CASE("linear worlds invert exactly through the pseudoinverse", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    Mat G(world.z_dim() + world.attr_dim(), world.feature_dim());
    G << world.A, world.B;
    Mat pinv = G.transpose() * (G * G.transpose()).inverse();  // right inverse

    for (int i : {0, 5, 40, 71}) {
        Vec z = world.z_factors.row(i).transpose();
        Vec y = world.attrs.row(world.labels[static_cast<std::size_t>(i)]).transpose();
        Vec x = world.g(z, y);  // exact in double from the recorded factors
        Vec v = ((x.transpose() - world.offset) * pinv).transpose();
        REQUIRE((v.head(world.z_dim()) - z).norm() < 1e-10);
        REQUIRE((v.tail(world.attr_dim()) - y).norm() < 1e-10);
    }
}

TEST_CASE("class attributes honor the pairwise margin", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    for (int i = 0; i < bundle.num_classes(); ++i)
        for (int j = i + 1; j < bundle.num_classes(); ++j)
            REQUIRE((bundle.attributes.row(i) - bundle.attributes.row(j)).norm() >= 1.0);
}

TEST_CASE("bundle round trip", "[data]") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "cfrec_test_bundle.ds").string();
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    save_bundle(bundle, path);
    DatasetBundle loaded = load_bundle(path);
    REQUIRE(loaded.features == bundle.features);
    REQUIRE(loaded.labels == bundle.labels);
    REQUIRE(loaded.attributes == bundle.attributes);
    REQUIRE(loaded.split.train_idx == bundle.split.train_idx);
    REQUIRE(loaded.split.test_idx == bundle.split.test_idx);
    fs::remove(path);
}

TEST_CASE("bundle loader rejects malformed files", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    const std::string good = encode_bundle(bundle);

    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'Z';
        REQUIRE_THROWS_AS(decode_bundle(bad, "test"), FormatError);
    }
    SECTION("truncated") {
        REQUIRE_THROWS_AS(decode_bundle(good.substr(0, good.size() - 7), "test"), FormatError);
    }
    SECTION("trailing garbage") {
        REQUIRE_THROWS_AS(decode_bundle(good + "xx", "test"), FormatError);
    }
    SECTION("header label count mismatching sample count") {
        // re-encode with one label dropped from the header but blocks intact
        ByteReader r(good, "test");
        r.bytes(8);
        const std::uint32_t hlen = r.u32();
        auto header = nlohmann::ordered_json::parse(r.bytes(hlen));
        header["labels"].erase(header["labels"].size() - 1);
        const std::string blocks = good.substr(8 + 4 + hlen);
        std::string bad;
        bad.append(kBundleMagic, 8);
        const std::string hj = header.dump();
        put_u32(bad, static_cast<std::uint32_t>(hj.size()));
        bad += hj;
        bad += blocks;
        REQUIRE_THROWS_AS(decode_bundle(bad, "test"), ValidationError);
    }
}

TEST_CASE("bundle validation rejects NaN features", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    bundle.features(3, 3) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(bundle.validate(), ValidationError);
}

TEST_CASE("leakage guard rejects unseen samples in train indices", "[data]") {
    auto [bundle, world] = generate_synthetic_world(small_world_config());
    // find an unseen-class sample and sneak it into the train indices
    int unseen_idx = -1;
    std::set<int> unseen(bundle.split.unseen_ids.begin(), bundle.split.unseen_ids.end());
    for (int i = 0; i < bundle.num_samples(); ++i)
        if (unseen.count(bundle.labels[static_cast<std::size_t>(i)])) {
            unseen_idx = i;
            break;
        }
    REQUIRE(unseen_idx >= 0);
    bundle.split.train_idx.push_back(unseen_idx);
    REQUIRE_THROWS_AS(bundle.validate(), ValidationError);
}

TEST_CASE("make_split behavior", "[data]") {
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c)
        for (int s = 0; s < 10; ++s) labels.push_back(c);

    SECTION("train_fraction=1.0 leaves only unseen samples in test") {
        SplitSpec sp = make_split(labels, {0, 1, 2}, {3}, 1.0, 5);
        REQUIRE(sp.train_idx.size() == 30);
        REQUIRE(sp.test_idx.size() == 10);
        for (int i : sp.test_idx) REQUIRE(labels[static_cast<std::size_t>(i)] == 3);
    }
    SECTION("no unseen ids gives a pure supervised split") {
        std::vector<int> seen_labels(labels.begin(), labels.begin() + 30);
        SplitSpec sp = make_split(seen_labels, {0, 1, 2}, {}, 0.5, 5);
        REQUIRE(sp.train_idx.size() == 15);
        REQUIRE(sp.test_idx.size() == 15);
    }
    SECTION("same seed gives identical splits") {
        SplitSpec a = make_split(labels, {0, 1, 2}, {3}, 0.6, 5);
        SplitSpec b = make_split(labels, {0, 1, 2}, {3}, 0.6, 5);
        REQUIRE(a.train_idx == b.train_idx);
        REQUIRE(a.test_idx == b.test_idx);
    }
    SECTION("stratification is per class") {
        SplitSpec sp = make_split(labels, {0, 1, 2}, {3}, 0.7, 5);
        for (int c = 0; c < 3; ++c) {
            int n = 0;
            for (int i : sp.train_idx)
                if (labels[static_cast<std::size_t>(i)] == c) ++n;
            REQUIRE(n == 7);
        }
    }
    SECTION("overlapping ids rejected") {
        REQUIRE_THROWS_AS(make_split(labels, {0, 1, 2}, {2, 3}, 0.5, 5), ValidationError);
    }
    SECTION("uncovered label rejected") {
        REQUIRE_THROWS_AS(make_split(labels, {0, 1}, {3}, 0.5, 5), ValidationError);
    }
}
