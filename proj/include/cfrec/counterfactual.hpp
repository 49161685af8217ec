#pragma once

// The three-step counterfactual pipeline: abduct the sample attribute from
// the posterior, intervene on the class attribute, regenerate the feature.
// Distances between a sample and its counterfactuals drive both binary
// inference rules.

#include "cfrec/model.hpp"

#include <optional>
#include <vector>

namespace cfrec {

struct ZMode {
    enum class Kind { posterior_mean, sample };
    Kind kind = Kind::posterior_mean;
    int n = 1;
    std::uint64_t seed = 0;

    static ZMode mean() { return {}; }
    static ZMode sampled(int n, std::uint64_t seed) {
        if (n < 1) throw ConfigError("z_mode sample: n must be >= 1");
        return {Kind::sample, n, seed};
    }
};

// Abduction: the endogenous sample attribute given the evidence x.
// posterior_mean is deterministic; sample mode draws n seeded
// reparameterized samples.
inline std::vector<Vec> abduct(const GcmModel& model, const Vec& x, const ZMode& mode) {
    GaussianPosterior post = model.encode(x);
    if (mode.kind == ZMode::Kind::posterior_mean) return {post.mean};
    RandomStream rng(derive_seed(mode.seed, "abduct"));
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(mode.n));
    for (int i = 0; i < mode.n; ++i)
        out.push_back(reparameterize(post, rng.normal_mat(post.mean.size(), 1)));
    return out;
}

// Batched abduction: one N x z matrix per draw (a single matrix for
// posterior_mean). Draw j of sample i is identical to the single-sample
// path given the same seed stream layout.
inline std::vector<Mat> abduct_batch(const GcmModel& model, const Mat& X, const ZMode& mode) {
    auto [mu, sigma] = model.encode_batch(X);
    if (mode.kind == ZMode::Kind::posterior_mean) return {mu};
    std::vector<Mat> out;
    out.reserve(static_cast<std::size_t>(mode.n));
    for (int j = 0; j < mode.n; ++j) out.push_back(Mat(mu.rows(), mu.cols()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        RandomStream rng(derive_seed(mode.seed ^ static_cast<std::uint64_t>(i), "abduct-batch"));
        for (int j = 0; j < mode.n; ++j) {
            for (Eigen::Index k = 0; k < mu.cols(); ++k)
                out[static_cast<std::size_t>(j)](i, k) = mu(i, k) + sigma(i, k) * rng.normal();
        }
    }
    return out;
}

inline double euclidean_distance(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw ShapeError("euclidean_distance: lengths differ (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
    return (a - b).norm();
}

// Action + prediction: regenerate x with its own sample attribute but the
// intervened class attribute; the regressed y(x) is discarded. With the
// feedback module enabled, the factual x supplies the regressor hidden
// state in a single pass.
inline Vec generate_counterfactual(const GcmModel& model, const Vec& x, const Vec& y,
                                   const ZMode& mode = ZMode::mean()) {
    if (y.size() != model.config().attr_dim)
        throw ShapeError("generate_counterfactual: attribute dimension mismatch");
    Vec z = abduct(model, x, mode).front();
    if (model.config().use_feedback)
        return model.decode_batch_feedback(z.transpose(), y.transpose(), x.transpose()).row(0).transpose();
    return model.decode(z, y);
}

struct CounterfactualRequest {
    Vec x;
    std::vector<Vec> targets;
    ZMode z_mode = ZMode::mean();
};

struct CounterfactualEntry {
    int target_index = 0;
    int draw_index = 0;
    Vec target;
    Vec x_tilde;
    double distance = 0.0;
};

struct CounterfactualSet {
    std::vector<CounterfactualEntry> entries;

    double min_distance() const {
        if (entries.empty()) throw ValidationError("counterfactual set is empty");
        double d = entries.front().distance;
        for (const auto& e : entries) d = std::min(d, e.distance);
        return d;
    }

    // minimum over z draws, one value per intervention target
    std::vector<double> min_distance_per_target(int num_targets) const {
        std::vector<double> d(static_cast<std::size_t>(num_targets),
                              std::numeric_limits<double>::infinity());
        for (const auto& e : entries)
            d[static_cast<std::size_t>(e.target_index)] =
                std::min(d[static_cast<std::size_t>(e.target_index)], e.distance);
        return d;
    }
};

inline CounterfactualSet counterfactual_set(const GcmModel& model, const CounterfactualRequest& req) {
    if (req.targets.empty()) throw ValidationError("counterfactual_set: targets must be non-empty");
    CounterfactualSet set;
    const auto draws = abduct(model, req.x, req.z_mode);
    const bool fb = model.config().use_feedback;
    for (std::size_t ti = 0; ti < req.targets.size(); ++ti) {
        const Vec& y = req.targets[ti];
        if (y.size() != model.config().attr_dim)
            throw ShapeError("counterfactual_set: attribute dimension mismatch");
        for (std::size_t di = 0; di < draws.size(); ++di) {
            Vec xt = fb ? Vec(model
                                  .decode_batch_feedback(draws[di].transpose(), y.transpose(),
                                                         req.x.transpose())
                                  .row(0)
                                  .transpose())
                        : model.decode(draws[di], y);
            set.entries.push_back(CounterfactualEntry{static_cast<int>(ti), static_cast<int>(di), y,
                                                      xt, euclidean_distance(req.x, xt)});
        }
    }
    return set;
}

// N x M matrix of min-over-draws distances between each sample and its
// counterfactual under each target. The batched fast path behind both
// inference rules.
inline Mat counterfactual_distances(const GcmModel& model, const Mat& X, const Mat& targets,
                                    const ZMode& mode = ZMode::mean()) {
    if (targets.cols() != model.config().attr_dim)
        throw ShapeError("counterfactual_distances: attribute dimension mismatch");
    if (targets.rows() == 0) throw ValidationError("counterfactual_distances: no targets");
    const auto draws = abduct_batch(model, X, mode);
    Mat d = Mat::Constant(X.rows(), targets.rows(), std::numeric_limits<double>::infinity());
    auto [yreg, hidden] = model.config().use_feedback ? model.regress_batch(X) : std::pair<Mat, Mat>{Mat(), Mat()};
    for (const Mat& Z : draws) {
        for (Eigen::Index tj = 0; tj < targets.rows(); ++tj) {
            Mat Y = targets.row(tj).replicate(X.rows(), 1);
            Mat xt = model.config().use_feedback ? model.decode_batch_feedback(Z, Y, X)
                                                 : model.decode_batch(Z, Y);
            for (Eigen::Index i = 0; i < X.rows(); ++i)
                d(i, tj) = std::min(d(i, tj), (X.row(i) - xt.row(i)).norm());
        }
    }
    return d;
}

// Counterfactual features for every (sample, target) pair, sample-major;
// used to train the joint classifier. Returns one (N*M) x d matrix per draw
// collapsed into one block, with target index (i % M).
inline Mat counterfactual_features(const GcmModel& model, const Mat& X, const Mat& targets,
                                   const ZMode& mode = ZMode::mean()) {
    if (targets.rows() == 0) throw ValidationError("counterfactual_features: no targets");
    const auto draws = abduct_batch(model, X, mode);
    const Eigen::Index M = targets.rows();
    Mat out(X.rows() * M * static_cast<Eigen::Index>(draws.size()), model.config().feature_dim);
    Eigen::Index row = 0;
    for (const Mat& Z : draws) {
        for (Eigen::Index tj = 0; tj < M; ++tj) {
            Mat Y = targets.row(tj).replicate(X.rows(), 1);
            Mat xt = model.config().use_feedback ? model.decode_batch_feedback(Z, Y, X)
                                                 : model.decode_batch(Z, Y);
            for (Eigen::Index i = 0; i < X.rows(); ++i) out.row(row++) = xt.row(i);
        }
    }
    // reorder: currently target-major per draw; emit sample-major (i, tj, draw)
    Mat reordered(out.rows(), out.cols());
    Eigen::Index k = 0;
    const Eigen::Index N = X.rows();
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index tj = 0; tj < M; ++tj)
            for (std::size_t dj = 0; dj < draws.size(); ++dj)
                reordered.row(k++) = out.row(static_cast<Eigen::Index>(dj) * N * M + tj * N + i);
    return reordered;
}

}  // namespace cfrec
