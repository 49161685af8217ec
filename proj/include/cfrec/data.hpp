#pragma once

// Dataset bundles, seen/unseen split management and the synthetic world
// generator with ground-truth factors. Bundle file format "GCMCFDS1":
// magic, JSON header (dims, classes, labels, split), then row-major
// little-endian float32 blocks for features and attributes.

#include "cfrec/common.hpp"
#include "cfrec/oracle.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace cfrec {

inline constexpr char kBundleMagic[] = "GCMCFDS1";

struct SplitSpec {
    std::vector<int> seen_ids;
    std::vector<int> unseen_ids;
    std::vector<int> train_idx;
    std::vector<int> test_idx;
    std::uint64_t seed = 0;
};

struct DatasetBundle {
    Mat features;    // N x d
    std::vector<int> labels;
    Mat attributes;  // C x a
    SplitSpec split;

    int num_samples() const { return static_cast<int>(features.rows()); }
    int feature_dim() const { return static_cast<int>(features.cols()); }
    int attr_dim() const { return static_cast<int>(attributes.cols()); }
    int num_classes() const { return static_cast<int>(attributes.rows()); }

    bool attributes_one_hot() const {
        for (Eigen::Index i = 0; i < attributes.rows(); ++i) {
            int ones = 0;
            for (Eigen::Index j = 0; j < attributes.cols(); ++j) {
                const double v = attributes(i, j);
                if (v == 1.0)
                    ++ones;
                else if (v != 0.0)
                    return false;
            }
            if (ones != 1) return false;
        }
        return true;
    }

    void validate() const {
        if (features.rows() == 0) throw ValidationError("bundle: no samples");
        if (static_cast<int>(labels.size()) != num_samples())
            throw ValidationError("bundle: label count != sample count");
        if (!features.allFinite()) throw ValidationError("bundle: features contain NaN/Inf");
        if (!attributes.allFinite()) throw ValidationError("bundle: attributes contain NaN/Inf");
        const int C = num_classes();
        for (int l : labels)
            if (l < 0 || l >= C) throw ValidationError("bundle: label out of range [0, C)");
        std::set<int> seen(split.seen_ids.begin(), split.seen_ids.end());
        std::set<int> unseen(split.unseen_ids.begin(), split.unseen_ids.end());
        for (int id : seen)
            if (unseen.count(id)) throw ValidationError("bundle: seen and unseen class sets overlap");
        for (int id : split.seen_ids)
            if (id < 0 || id >= C) throw ValidationError("bundle: seen class id out of range");
        for (int id : split.unseen_ids)
            if (id < 0 || id >= C) throw ValidationError("bundle: unseen class id out of range");
        const int N = num_samples();
        for (int i : split.train_idx) {
            if (i < 0 || i >= N) throw ValidationError("bundle: train index out of range");
            // leakage guard: training must never see an unseen-class sample
            if (unseen.count(labels[static_cast<std::size_t>(i)]))
                throw ValidationError("bundle: train split contains an unseen-class sample (leak)");
            if (!seen.count(labels[static_cast<std::size_t>(i)]))
                throw ValidationError("bundle: train split contains a class outside the seen set");
        }
        for (int i : split.test_idx)
            if (i < 0 || i >= N) throw ValidationError("bundle: test index out of range");
    }

    Mat rows(const std::vector<int>& idx) const {
        Mat out(static_cast<Eigen::Index>(idx.size()), features.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = features.row(idx[k]);
        return out;
    }

    std::vector<int> labels_of(const std::vector<int>& idx) const {
        std::vector<int> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
        return out;
    }
};

// Stratified per-seen-class train/test split; every unseen-class sample
// lands in test.
inline SplitSpec make_split(const std::vector<int>& labels, std::vector<int> seen_ids,
                            std::vector<int> unseen_ids, double train_fraction, std::uint64_t seed) {
    if (train_fraction < 0.0 || train_fraction > 1.0)
        throw ConfigError("make_split: train_fraction must lie in [0,1]");
    std::set<int> seen(seen_ids.begin(), seen_ids.end());
    std::set<int> unseen(unseen_ids.begin(), unseen_ids.end());
    for (int id : seen_ids)
        if (unseen.count(id)) throw ValidationError("make_split: seen and unseen ids overlap");
    for (int l : labels)
        if (!seen.count(l) && !unseen.count(l))
            throw ValidationError("make_split: label " + std::to_string(l) + " not covered by the split ids");

    SplitSpec out;
    out.seen_ids = std::move(seen_ids);
    out.unseen_ids = std::move(unseen_ids);
    out.seed = seed;
    for (int cls : out.seen_ids) {
        std::vector<int> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(static_cast<int>(i));
        if (idx.empty()) throw ValidationError("make_split: seen class " + std::to_string(cls) + " has no samples");
        RandomStream rng(derive_seed(seed, "split/" + std::to_string(cls)));
        rng.shuffle(idx);
        const auto n_train = static_cast<std::size_t>(
            std::llround(train_fraction * static_cast<double>(idx.size())));
        for (std::size_t k = 0; k < idx.size(); ++k)
            (k < n_train ? out.train_idx : out.test_idx).push_back(idx[k]);
    }
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (unseen.count(labels[i])) out.test_idx.push_back(static_cast<int>(i));
    std::sort(out.train_idx.begin(), out.train_idx.end());
    std::sort(out.test_idx.begin(), out.test_idx.end());
    return out;
}

struct SynthWorldConfig {
    int num_seen = 6;
    int num_unseen = 4;
    int attr_dim = 4;
    int z_dim = 4;
    int feature_dim = 16;
    int samples_per_class = 200;
    Nonlinearity nonlinearity = Nonlinearity::linear;
    double train_fraction = 0.7;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_seen < 1 || num_unseen < 0 || samples_per_class < 1)
            throw ConfigError("synth world: counts must be >= 1 (unseen may be 0)");
        if (attr_dim < 1 || z_dim < 1 || feature_dim < 1)
            throw ConfigError("synth world: dims must be positive");
        if (feature_dim < z_dim + attr_dim)
            throw ConfigError("synth world: feature_dim must be >= z_dim + attr_dim");
        if (train_fraction < 0.0 || train_fraction > 1.0)
            throw ConfigError("synth world: train_fraction must lie in [0,1]");
    }
};

// Class attributes are drawn with a minimum pairwise margin so classes stay
// distinguishable at desk scale.
inline constexpr double kClassAttributeMargin = 1.0;

inline std::pair<DatasetBundle, OracleWorld> generate_synthetic_world(const SynthWorldConfig& cfg) {
    cfg.validate();
    const int C = cfg.num_seen + cfg.num_unseen;
    RandomStream rng(derive_seed(cfg.seed, "synth-world"));

    // class attributes with pairwise margin
    Mat attrs(C, cfg.attr_dim);
    for (int c = 0; c < C; ++c) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            Mat row = rng.normal_mat(1, cfg.attr_dim);
            quantize_f32(row);
            ok = true;
            for (int p = 0; p < c; ++p)
                if ((attrs.row(p) - row.row(0)).norm() < kClassAttributeMargin) ok = false;
            if (ok) attrs.row(c) = row.row(0);
        }
        if (!ok) throw ValidationError("synth world: could not place class attributes with margin");
    }

    // generator matrices with full column rank of [A; B]
    const double scale_a = 0.12 / std::sqrt(static_cast<double>(cfg.z_dim));
    const double scale_b = 0.12 / std::sqrt(static_cast<double>(cfg.attr_dim));
    Mat A, B;
    double min_sv = 0.0;
    bool full_rank = false;
    for (int attempt = 0; attempt < 100 && !full_rank; ++attempt) {
        A = rng.normal_mat(cfg.z_dim, cfg.feature_dim) * scale_a;
        B = rng.normal_mat(cfg.attr_dim, cfg.feature_dim) * scale_b;
        quantize_f32(A);
        quantize_f32(B);
        Mat AB(cfg.z_dim + cfg.attr_dim, cfg.feature_dim);
        AB << A, B;
        Eigen::JacobiSVD<Mat> svd(AB);
        min_sv = svd.singularValues().minCoeff();
        full_rank = min_sv > 1e-6;
    }
    if (!full_rank)
        throw ValidationError("synth world: generator matrices rank-deficient after 100 attempts");

    OracleWorld world;
    world.A = A;
    world.B = B;
    world.offset = Mat::Constant(1, cfg.feature_dim, 0.5);
    world.nonlin = cfg.nonlinearity;
    world.attrs = attrs;
    world.min_singular_value = min_sv;
    world.seed = cfg.seed;

    const int N = C * cfg.samples_per_class;
    Mat Z(N, cfg.z_dim);
    std::vector<int> labels(static_cast<std::size_t>(N));
    for (int c = 0; c < C; ++c) {
        for (int s = 0; s < cfg.samples_per_class; ++s) {
            const int i = c * cfg.samples_per_class + s;
            Mat z = rng.normal_mat(1, cfg.z_dim);
            quantize_f32(z);
            Z.row(i) = z.row(0);
            labels[static_cast<std::size_t>(i)] = c;
        }
    }
    world.z_factors = Z;
    world.labels = labels;
    for (int c = 0; c < cfg.num_seen; ++c) world.seen_ids.push_back(c);
    for (int c = cfg.num_seen; c < C; ++c) world.unseen_ids.push_back(c);

    DatasetBundle bundle;
    Mat Y(N, cfg.attr_dim);
    for (int i = 0; i < N; ++i) Y.row(i) = attrs.row(labels[static_cast<std::size_t>(i)]);
    bundle.features = world.g_batch(Z, Y);
    quantize_f32(bundle.features);
    bundle.labels = labels;
    bundle.attributes = attrs;
    bundle.split = make_split(labels, world.seen_ids, world.unseen_ids, cfg.train_fraction,
                              derive_seed(cfg.seed, "synth-split"));
    bundle.validate();
    return {bundle, world};
}

inline std::string encode_bundle(const DatasetBundle& b) {
    b.validate();
    std::string out;
    out.append(kBundleMagic, 8);
    nlohmann::ordered_json header;
    header["version"] = 1;
    header["num_samples"] = b.num_samples();
    header["feature_dim"] = b.feature_dim();
    header["attr_dim"] = b.attr_dim();
    header["num_classes"] = b.num_classes();
    header["labels"] = b.labels;
    header["split"] = {{"seen_ids", b.split.seen_ids},
                       {"unseen_ids", b.split.unseen_ids},
                       {"train_idx", b.split.train_idx},
                       {"test_idx", b.split.test_idx},
                       {"seed", b.split.seed}};
    const std::string hj = header.dump();
    put_u32(out, static_cast<std::uint32_t>(hj.size()));
    out += hj;
    auto put_block = [&out](const Mat& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) put_f32(out, static_cast<float>(m(i, j)));
    };
    put_block(b.features);
    put_block(b.attributes);
    return out;
}

inline void save_bundle(const DatasetBundle& b, const std::string& path) {
    write_file_atomic(path, encode_bundle(b));
}

inline DatasetBundle decode_bundle(const std::string& bytes, const std::string& origin) {
    ByteReader r(bytes, origin);
    if (r.bytes(8) != std::string(kBundleMagic, 8))
        throw FormatError(origin + ": bad magic, not a GCMCFDS1 bundle");
    const std::uint32_t hlen = r.u32();
    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(r.bytes(hlen));
    } catch (const std::exception& e) {
        throw FormatError(origin + ": bundle header is not valid JSON: " + e.what());
    }
    if (header.at("version").get<int>() != 1)
        throw FormatError(origin + ": unsupported bundle version");
    DatasetBundle b;
    const int N = header.at("num_samples").get<int>();
    const int d = header.at("feature_dim").get<int>();
    const int a = header.at("attr_dim").get<int>();
    const int C = header.at("num_classes").get<int>();
    if (N < 1 || d < 1 || a < 1 || C < 1) throw FormatError(origin + ": non-positive dimensions");
    b.labels = header.at("labels").get<std::vector<int>>();
    if (static_cast<int>(b.labels.size()) != N)
        throw ValidationError(origin + ": header label count mismatches num_samples");
    const auto& sp = header.at("split");
    b.split.seen_ids = sp.at("seen_ids").get<std::vector<int>>();
    b.split.unseen_ids = sp.at("unseen_ids").get<std::vector<int>>();
    b.split.train_idx = sp.at("train_idx").get<std::vector<int>>();
    b.split.test_idx = sp.at("test_idx").get<std::vector<int>>();
    b.split.seed = sp.at("seed").get<std::uint64_t>();
    b.features = Mat(N, d);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < d; ++j) b.features(i, j) = static_cast<double>(r.f32());
    b.attributes = Mat(C, a);
    for (int i = 0; i < C; ++i)
        for (int j = 0; j < a; ++j) b.attributes(i, j) = static_cast<double>(r.f32());
    if (!r.at_end()) throw FormatError(origin + ": trailing bytes after attribute block");
    b.validate();
    return b;
}

inline DatasetBundle load_bundle(const std::string& path) {
    return decode_bundle(read_file_bytes(path), path);
}

}  // namespace cfrec
