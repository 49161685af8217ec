#pragma once

// Shared test utilities: finite differences, zeroed networks and exact
// linear maps embedded into LeakyReLU MLPs (f(x) = LReLU(x)-LReLU(-x)
// rescaled recovers the identity, so a pair of mirrored rows per output
// coordinate makes the piecewise-linear net exactly linear).

#include "cfrec/model.hpp"

#include <functional>

namespace cfrec::test {

inline double rel_err(const Mat& a, const Mat& b) {
    const double denom = std::max(a.norm(), b.norm());
    if (denom < 1e-7) return 0.0;  // both vanish (e.g. a bias cancelling exactly)
    return (a - b).norm() / denom;
}

inline Mat fd_grad(Mat x, const std::function<double(const Mat&)>& f, double h = 1e-4) {
    Mat g(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double orig = x(i, j);
            x(i, j) = orig + h;
            const double fp = f(x);
            x(i, j) = orig - h;
            const double fm = f(x);
            x(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * h);
        }
    }
    return g;
}

inline void zero_params(GcmModel& m) {
    for (const auto& name : m.params().names()) {
        if (name.find(".bn_rvar") != std::string::npos) continue;  // keep unit variance
        m.params().at(name).setZero();
    }
}

// Writes weights for out = in * P + c into a two-layer LeakyReLU MLP whose
// hidden width is exactly 2 * P.cols().
inline void embed_linear_2layer(ParamStore& ps, const std::string& w1, const std::string& b1,
                                const std::string& w2, const std::string& b2, const Mat& P,
                                const Mat& c, double slope) {
    const Eigen::Index in = P.rows(), out = P.cols();
    Mat& W1 = ps.at(w1);
    Mat& B1 = ps.at(b1);
    Mat& W2 = ps.at(w2);
    Mat& B2 = ps.at(b2);
    if (W1.rows() != in || W1.cols() != 2 * out)
        throw Error("embed_linear_2layer: hidden width must be 2*out");
    W1.setZero();
    W1.leftCols(out) = P;
    W1.rightCols(out) = -P;
    B1.setZero();
    W2.setZero();
    const double k = 1.0 / (1.0 + slope);
    W2.topRows(out) = Mat::Identity(out, out) * k;
    W2.bottomRows(out) = -Mat::Identity(out, out) * k;
    B2 = c;
}

// Makes the MLP encoder's mean head compute exactly x * M + c; the spread
// head is zeroed (softplus(0) everywhere). Requires hidden_dim >= 2*z.
inline void embed_linear_encoder_mean(GcmModel& m, const Mat& M, const Mat& c) {
    const auto& cfg = m.config();
    const int z = cfg.resolved_z_dim();
    const double s = cfg.leaky_slope;
    if (cfg.hidden_dim < 2 * z) throw Error("embed_linear_encoder_mean: hidden_dim < 2*z");
    ParamStore& ps = m.params();
    for (const char* head : {"enc.mu", "enc.sig"}) {
        for (const char* n : {".w1", ".b1", ".w2", ".b2", ".w3", ".b3"})
            ps.at(std::string(head) + n).setZero();
    }
    // layer 1: v = x*M duplicated as [v, -v] in the first 2z hidden units
    Mat& W1 = ps.at("enc.mu.w1");
    W1.block(0, 0, M.rows(), z) = M;
    W1.block(0, z, M.rows(), z) = -M;
    // layer 2: recombine to w = v, split again as [w, -w] (width 2z)
    Mat& W2 = ps.at("enc.mu.w2");
    const double k = 1.0 / (1.0 + s);
    W2.block(0, 0, z, z) = Mat::Identity(z, z) * k;
    W2.block(z, 0, z, z) = -Mat::Identity(z, z) * k;
    W2.block(0, z, z, z) = -Mat::Identity(z, z) * k;
    W2.block(z, z, z, z) = Mat::Identity(z, z) * k;
    // layer 3: recombine
    Mat& W3 = ps.at("enc.mu.w3");
    W3.topRows(z) = Mat::Identity(z, z) * k;
    W3.bottomRows(z) = -Mat::Identity(z, z) * k;
    ps.at("enc.mu.b3") = c;
}

// Makes the decoder compute exactly [z y] * P + c. Requires
// sigmoid_output=false and hidden_dim == 2*feature_dim.
inline void embed_linear_decoder(GcmModel& m, const Mat& P, const Mat& c) {
    const auto& cfg = m.config();
    if (cfg.sigmoid_output) throw Error("embed_linear_decoder needs sigmoid_output=false");
    if (cfg.hidden_dim != 2 * cfg.feature_dim)
        throw Error("embed_linear_decoder: hidden_dim must be 2*feature_dim");
    embed_linear_2layer(m.params(), "dec.w1", "dec.b1", "dec.w2", "dec.b2", P, c, cfg.leaky_slope);
}

// Makes the discriminator compute exactly D(x, y) = [x y] * w (a column).
inline void embed_linear_discriminator(GcmModel& m, const Vec& w_xy) {
    const auto& cfg = m.config();
    if (cfg.hidden_dim < 2) throw Error("embed_linear_discriminator: hidden_dim < 2");
    ParamStore& ps = m.params();
    ps.at("disc.w1").setZero();
    ps.at("disc.b1").setZero();
    ps.at("disc.w2").setZero();
    ps.at("disc.b2").setZero();
    Mat& W1 = ps.at("disc.w1");
    W1.col(0) = w_xy;
    W1.col(1) = -w_xy;
    Mat& W2 = ps.at("disc.w2");
    const double k = 1.0 / (1.0 + cfg.leaky_slope);
    W2(0, 0) = k;
    W2(1, 0) = -k;
}

}  // namespace cfrec::test
