#pragma once

// Executable ground-truth machinery for synthetic worlds: the generating
// map with recorded factors, empirical injectivity checks, the residual of
// the commutation property T(g(v)) = g(T'(v)) restricted to class
// coordinates, and distance-to-manifold measurement. Faithfulness is
// reported as a continuous manifold distance since exact membership of a
// noisy generation in the feature manifold is measure-zero.

#include "cfrec/counterfactual.hpp"
#include "cfrec/model.hpp"
#include "cfrec/tensor_file.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace cfrec {

enum class Nonlinearity { linear, tanh_squash };

struct OracleWorld {
    Mat A;       // z_dim x feature_dim
    Mat B;       // attr_dim x feature_dim
    Mat offset;  // 1 x feature_dim
    Nonlinearity nonlin = Nonlinearity::linear;
    Mat attrs;                  // num_classes x attr_dim
    Mat z_factors;              // num_samples x z_dim
    std::vector<int> labels;    // num_samples
    std::vector<int> seen_ids;
    std::vector<int> unseen_ids;
    double min_singular_value = 0.0;  // of [A; B]
    std::uint64_t seed = 0;

    int z_dim() const { return static_cast<int>(A.rows()); }
    int attr_dim() const { return static_cast<int>(B.rows()); }
    int feature_dim() const { return static_cast<int>(A.cols()); }

    Mat g_batch(const Mat& Z, const Mat& Y) const {
        if (Z.cols() != A.rows() || Y.cols() != B.rows())
            throw ShapeError("oracle g: factor dimensions mismatch");
        Mat lin = Z * A + Y * B + offset.replicate(Z.rows(), 1);
        if (nonlin == Nonlinearity::linear) return lin;
        return 0.5 * (lin.array().tanh() + 1.0);
    }

    Vec g(const Vec& z, const Vec& y) const {
        return g_batch(z.transpose(), y.transpose()).row(0).transpose();
    }

    void save(const std::string& path) const {
        TensorContainer c;
        c.metadata["format"] = "GCMCF1";
        c.metadata["version"] = 1;
        c.metadata["kind"] = "oracle-world";
        c.metadata["nonlinearity"] = nonlin == Nonlinearity::linear ? "linear" : "tanh";
        c.metadata["seed"] = seed;
        c.metadata["min_singular_value"] = min_singular_value;
        c.metadata["labels"] = labels;
        c.metadata["seen_ids"] = seen_ids;
        c.metadata["unseen_ids"] = unseen_ids;
        c.tensors.emplace_back("A", A);
        c.tensors.emplace_back("B", B);
        c.tensors.emplace_back("offset", offset);
        c.tensors.emplace_back("attrs", attrs);
        c.tensors.emplace_back("z_factors", z_factors);
        save_tensor_container(c, path);
    }

    static OracleWorld load(const std::string& path) {
        TensorContainer c = load_tensor_container(path);
        if (!c.metadata.contains("kind") || c.metadata["kind"] != "oracle-world")
            throw FormatError(path + ": container is not an oracle world");
        OracleWorld w;
        w.A = c.at("A");
        w.B = c.at("B");
        w.offset = c.at("offset");
        w.attrs = c.at("attrs");
        w.z_factors = c.at("z_factors");
        w.nonlin = c.metadata.at("nonlinearity") == "linear" ? Nonlinearity::linear
                                                             : Nonlinearity::tanh_squash;
        w.seed = c.metadata.at("seed").get<std::uint64_t>();
        w.min_singular_value = c.metadata.at("min_singular_value").get<double>();
        w.labels = c.metadata.at("labels").get<std::vector<int>>();
        w.seen_ids = c.metadata.at("seen_ids").get<std::vector<int>>();
        w.unseen_ids = c.metadata.at("unseen_ids").get<std::vector<int>>();
        return w;
    }
};

struct InjectivityReport {
    bool pass = false;
    bool vacuous = false;
    double worst_ratio = std::numeric_limits<double>::infinity();
    int pairs_tested = 0;
};

// Samples factor pairs (fully random, shared-z/cross-y and shared-y/cross-z)
// with input distance >= margin and checks the generator separates them.
inline InjectivityReport verify_injectivity(const OracleWorld& world, int num_pairs, double margin,
                                            std::uint64_t seed = 20240801) {
    InjectivityReport rep;
    if (num_pairs == 0) {
        rep.pass = true;
        rep.vacuous = true;
        return rep;
    }
    if (num_pairs < 0) throw ConfigError("verify_injectivity: num_pairs must be >= 0");
    RandomStream rng(derive_seed(seed, "injectivity"));
    const int C = static_cast<int>(world.attrs.rows());
    int attempts = 0;
    while (rep.pairs_tested < num_pairs && attempts < num_pairs * 100) {
        ++attempts;
        Vec z1 = rng.normal_mat(world.z_dim(), 1);
        Vec z2 = rng.normal_mat(world.z_dim(), 1);
        int c1 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(C)));
        int c2 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(C)));
        switch (rep.pairs_tested % 3) {
            case 1: z2 = z1; break;                       // y-only difference
            case 2: c2 = c1; break;                       // z-only difference
            default: break;                               // both differ
        }
        Vec y1 = world.attrs.row(c1).transpose();
        Vec y2 = world.attrs.row(c2).transpose();
        Vec v1(world.z_dim() + world.attr_dim());
        v1 << z1, y1;
        Vec v2(world.z_dim() + world.attr_dim());
        v2 << z2, y2;
        const double din = (v1 - v2).norm();
        if (din < margin) continue;
        const double dout = (world.g(z1, y1) - world.g(z2, y2)).norm();
        rep.worst_ratio = std::min(rep.worst_ratio, dout / din);
        ++rep.pairs_tested;
    }
    rep.pass = rep.pairs_tested > 0 && rep.worst_ratio > 0.0;
    return rep;
}

// A transformation of the factor space that may only touch the class
// attribute coordinates. Supplying a sample-attribute replacement violates
// the contract.
struct ClassTransform {
    std::optional<Mat> y_targets;       // N x attr_dim, or 1 x attr_dim broadcast
    std::optional<Mat> z_replacement;   // never legal

    Vec target_for(Eigen::Index i, const Vec& fallback) const {
        if (!y_targets) return fallback;
        if (y_targets->rows() == 1) return y_targets->row(0).transpose();
        return y_targets->row(i).transpose();
    }
};

// Mean relative deviation between the model counterfactual of g(v) and the
// ground-truth generation g(T'(v)) over the given samples. Zero means the
// model's counterfactual map commutes with the class-coordinate edit.
inline double disentanglement_residual(const GcmModel& model, const OracleWorld& world,
                                       const ClassTransform& transform,
                                       const std::vector<int>& sample_indices) {
    if (transform.z_replacement)
        throw ContractError("disentanglement_residual: transform touches sample-attribute coordinates");
    if (sample_indices.empty()) throw ValidationError("disentanglement_residual: no samples");
    if (transform.y_targets && transform.y_targets->rows() != 1 &&
        transform.y_targets->rows() != static_cast<Eigen::Index>(sample_indices.size()))
        throw ShapeError("disentanglement_residual: y_targets row count mismatch");

    const Eigen::Index n = static_cast<Eigen::Index>(sample_indices.size());
    Mat X(n, world.feature_dim());
    Mat Ytarget(n, world.attr_dim());
    Mat Ztrue(n, world.z_dim());
    for (Eigen::Index k = 0; k < n; ++k) {
        const int i = sample_indices[static_cast<std::size_t>(k)];
        Vec z = world.z_factors.row(i).transpose();
        Vec y_true = world.attrs.row(world.labels[static_cast<std::size_t>(i)]).transpose();
        X.row(k) = world.g(z, y_true).transpose();
        Ytarget.row(k) = transform.target_for(k, y_true).transpose();
        Ztrue.row(k) = z.transpose();
    }

    Mat Zhat = abduct_batch(model, X, ZMode::mean()).front();
    Mat cf = model.config().use_feedback ? model.decode_batch_feedback(Zhat, Ytarget, X)
                                         : model.decode_batch(Zhat, Ytarget);
    Mat truth = world.g_batch(Ztrue, Ytarget);

    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double denom = std::max(truth.row(k).norm(), 1e-12);
        acc += (cf.row(k) - truth.row(k)).norm() / denom;
    }
    return acc / static_cast<double>(n);
}

namespace detail {

// Derivative-free coordinate descent on squared distance to the manifold
// slice of one class attribute; parabola steps with shrinking trust step.
inline double refine_sq_distance(const OracleWorld& world, const Vec& x_tilde, Vec z, const Vec& y,
                                 int max_sweeps) {
    auto f = [&](const Vec& zz) { return (x_tilde - world.g(zz, y)).squaredNorm(); };
    double best = f(z);
    double step = 0.5;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double sweep_gain = 0.0;
        for (Eigen::Index c = 0; c < z.size(); ++c) {
            const double orig = z(c);
            z(c) = orig + step;
            const double fp = f(z);
            z(c) = orig - step;
            const double fm = f(z);
            z(c) = orig;
            double cand_val = best;
            double cand_z = orig;
            const double curv = fp + fm - 2.0 * best;
            if (curv > 1e-18) {
                const double delta = -0.5 * step * (fp - fm) / curv;
                if (std::abs(delta) <= 10.0 * step) {
                    z(c) = orig + delta;
                    const double fv = f(z);
                    z(c) = orig;
                    if (fv < cand_val) {
                        cand_val = fv;
                        cand_z = orig + delta;
                    }
                }
            }
            if (fp < cand_val) {
                cand_val = fp;
                cand_z = orig + step;
            }
            if (fm < cand_val) {
                cand_val = fm;
                cand_z = orig - step;
            }
            if (cand_val < best) {
                sweep_gain += best - cand_val;
                best = cand_val;
                z(c) = cand_z;
            }
        }
        if (sweep_gain < 1e-18) {
            step *= 0.5;
            if (step < 1e-9) break;
        }
    }
    return best;
}

}  // namespace detail

// Approximate distance from a point to the true data manifold: minimum over
// a seeded factor sample (each z draw paired with an attribute-table class),
// refined per candidate. Refining every candidate keeps the reported value
// monotone nonincreasing in grid_size.
inline double manifold_distance(const Vec& x_tilde, const OracleWorld& world, int grid_size,
                                std::uint64_t seed = 20240802, int max_sweeps = 60) {
    if (grid_size < 1) throw ConfigError("manifold_distance: grid_size must be >= 1");
    if (x_tilde.size() != world.feature_dim())
        throw ShapeError("manifold_distance: feature dimension mismatch");
    if (max_sweeps > 200) max_sweeps = 200;
    RandomStream rng(derive_seed(seed, "manifold"));
    const int C = static_cast<int>(world.attrs.rows());
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < grid_size; ++k) {
        Vec z = rng.normal_mat(world.z_dim(), 1);
        const Vec y = world.attrs.row(k % C).transpose();
        best = std::min(best, detail::refine_sq_distance(world, x_tilde, z, y, max_sweeps));
    }
    return std::sqrt(best);
}

}  // namespace cfrec
