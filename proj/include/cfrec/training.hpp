#pragma once

// Counterfactual-faithful training: a beta-weighted VAE term, a contrastive
// term over class-attribute interventions, and a Wasserstein critic with
// gradient penalty, optimized in the standard critic/generator alternation.
// The regressor trains with squared error (dense attributes) or softmax
// cross-entropy (one-hot attributes) at unit weight.

#include "cfrec/counterfactual.hpp"
#include "cfrec/data.hpp"
#include "cfrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace cfrec {

enum class TaskMode { zsl, osr };

struct TrainingConfig {
    double beta = 6.0;
    double nu = 1.0;
    double rho = 1.0;
    double lambda_gp = 10.0;
    double learning_rate = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    int anneal_epochs = 40;
    int negatives_per_anchor = 0;  // 0 means "all"
    int critic_steps = 1;
    std::uint64_t seed = 0;
    bool contrastive_grad_to_encoder = true;

    void validate() const {
        if (beta < 0.0) throw ConfigError("beta must be >= 0");
        if (nu < 0.0) throw ConfigError("nu must be >= 0");
        if (rho < 0.0) throw ConfigError("rho must be >= 0");
        if (lambda_gp < 0.0) throw ConfigError("lambda_gp must be >= 0");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (epochs <= 0) throw ConfigError("epochs must be positive");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (anneal_epochs < 0) throw ConfigError("anneal_epochs must be >= 0");
        if (negatives_per_anchor < 0) throw ConfigError("negatives_per_anchor must be >= 0 (0 = all)");
        if (critic_steps <= 0) throw ConfigError("critic_steps must be positive");
    }
};

struct LossBreakdown {
    double loss_z = 0.0;
    double loss_recon = 0.0;
    double loss_kl = 0.0;
    double loss_y = 0.0;
    double loss_f = 0.0;
    double gp_term = 0.0;
    double total = 0.0;
};

// beta ramps linearly from zero over anneal_epochs, then stays flat
inline double beta_effective(double beta, int anneal_epochs, int epoch) {
    if (anneal_epochs == 0) return beta;
    return beta * std::min(1.0, static_cast<double>(epoch) / static_cast<double>(anneal_epochs));
}

// Closed-form KL(N(mu, diag sigma^2) || N(0, I)), summed over dimensions.
inline double kl_to_standard_normal(const Vec& mean, const Vec& stddev) {
    if (mean.size() != stddev.size()) throw ShapeError("kl: mean/stddev length mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double s2 = stddev(i) * stddev(i);
        acc += 0.5 * (mean(i) * mean(i) + s2 - 1.0 - std::log(s2));
    }
    return acc;
}

namespace trainer {

// Generator-side forward shared by the VAE and contrastive terms.
struct GenForward {
    ad::Var mu, sigma, z;
    std::optional<ad::Var> feedback_hidden;
    ad::Var x_recon;   // decode(z, y_true)
    ad::Var recon;     // mean over batch of the squared reconstruction error
    ad::Var kl;        // mean over batch of the summed closed-form KL
};

inline GenForward build_gen_forward(Fwd& f, const Mat& X, const Mat& Ytrue, const Mat& noise) {
    ad::Tape& t = f.tape;
    if (noise.rows() != X.rows()) throw ShapeError("loss_Z: noise batch size mismatch");
    GenForward g;
    ad::Var xin = ad::constant(t, X);
    auto post = f.model->encode_t(f, xin);
    g.mu = post.mean;
    g.sigma = post.stddev;
    if (noise.cols() != t.val(g.mu).cols()) throw ShapeError("loss_Z: noise dimension mismatch");
    g.z = ad::add(t, g.mu, ad::cmul(t, g.sigma, noise));
    if (f.model->config().use_feedback) {
        auto [yreg, hidden] = f.model->regress_t(f, xin);
        g.feedback_hidden = hidden;
    }
    g.x_recon = f.model->decode_t(f, g.z, ad::constant(t, Ytrue), g.feedback_hidden);
    ad::Var diff = ad::cadd(t, g.x_recon, -X);
    g.recon = ad::scale(t, ad::sum(t, ad::square(t, diff)), 1.0 / static_cast<double>(X.rows()));
    // 0.5 (mu^2 + sigma^2 - 1 - log sigma^2), summed over dims, batch mean
    ad::Var mu2 = ad::square(t, g.mu);
    ad::Var s2 = ad::square(t, g.sigma);
    ad::Var log_s2 = ad::log(t, s2);
    ad::Var per = ad::sub(t, ad::add(t, mu2, s2), ad::add_scalar(t, log_s2, 1.0));
    g.kl = ad::scale(t, ad::sum(t, per), 0.5 / static_cast<double>(X.rows()));
    return g;
}

// Contrastive term: candidate classes are decoded with the shared sample
// attribute; each anchor keeps its own class as the positive. Excluded
// candidates are masked out of the log-sum-exp with a large negative shift.
// candidate_mask(i, c) != 0 marks candidate c as active for anchor i;
// positive_col(i) is the anchor's own candidate column.
inline ad::Var build_loss_y(Fwd& f, const Mat& X, const Mat& candidate_attrs,
                            const std::vector<int>& positive_col, const Mat& candidate_mask,
                            ad::Var z, std::optional<ad::Var> feedback_hidden,
                            bool grad_to_encoder) {
    ad::Tape& t = f.tape;
    const Eigen::Index n = X.rows();
    const Eigen::Index C = candidate_attrs.rows();
    if (candidate_mask.rows() != n || candidate_mask.cols() != C)
        throw ShapeError("loss_Y: candidate mask shape mismatch");
    ad::Var zin = grad_to_encoder ? z : ad::detach(t, z);

    ad::Var dists;  // n x C, column per candidate class
    for (Eigen::Index c = 0; c < C; ++c) {
        Mat Yc = candidate_attrs.row(c).replicate(n, 1);
        ad::Var xt = f.model->decode_t(f, zin, ad::constant(t, Yc), feedback_hidden);
        ad::Var d = ad::rowwise_norm(t, ad::cadd(t, xt, -X));
        dists = (c == 0) ? d : ad::concat_cols(t, dists, d);
    }
    for (std::size_t i = 0; i < positive_col.size(); ++i) {
        const int p = positive_col[i];
        if (p < 0 || p >= C) throw ShapeError("loss_Y: positive column out of range");
        if (candidate_mask(static_cast<Eigen::Index>(i), p) == 0.0)
            throw ValidationError("loss_Y: anchor's positive candidate is masked out");
    }

    Mat mask_shift = Mat::Zero(n, C);
    Mat pos_select = Mat::Zero(n, C);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < C; ++c)
            if (candidate_mask(i, c) == 0.0) mask_shift(i, c) = -1e18;
        pos_select(i, positive_col[static_cast<std::size_t>(i)]) = 1.0;
    }

    ad::Var neg_d = ad::cadd(t, ad::neg(t, dists), mask_shift);
    ad::Var lse = ad::logsumexp_rows(t, neg_d);                        // n x 1
    ad::Var d_pos = ad::matmul(t, ad::mul(t, dists, ad::constant(t, pos_select)),
                               ad::constant(t, Mat::Ones(C, 1)));      // one-hot row selection
    ad::Var per_anchor = ad::add(t, d_pos, lse);
    return ad::mean(t, per_anchor);
}

struct CriticLoss {
    ad::Var lf;   // E[D(x,y)] - E[D(x',y)] - lambda * gp
    ad::Var gp;   // E[(||grad_xhat D||_2 - 1)^2]
};

inline CriticLoss build_loss_f_critic(Fwd& f, const Mat& X, const Mat& Y, const Mat& Xprime,
                                      const Vec& alphas, double lambda_gp) {
    ad::Tape& t = f.tape;
    const Eigen::Index n = X.rows();
    if (Xprime.rows() != n || Xprime.cols() != X.cols())
        throw ShapeError("loss_F: counterfactual batch shape mismatch");
    if (alphas.size() != n) throw ShapeError("loss_F: alpha count mismatch");
    for (Eigen::Index i = 0; i < n; ++i)
        if (alphas(i) < 0.0 || alphas(i) > 1.0)
            throw ConfigError("loss_F: alpha must lie in [0,1]");

    ad::Var yin = ad::constant(t, Y);
    ad::Var d_real = f.model->discriminate_t(f, ad::constant(t, X), yin);
    ad::Var d_fake = f.model->discriminate_t(f, ad::constant(t, Xprime), yin);

    Mat Xhat(n, X.cols());
    for (Eigen::Index i = 0; i < n; ++i)
        Xhat.row(i) = alphas(i) * X.row(i) + (1.0 - alphas(i)) * Xprime.row(i);
    ad::Var xhat = ad::constant(t, Xhat);  // leaf: the penalty differentiates against it
    ad::Var d_hat = f.model->discriminate_t(f, xhat, yin);
    ad::Var grad_x = t.gradients(ad::sum(t, d_hat), {xhat})[0];  // n x d, differentiable
    ad::Var norms = ad::rowwise_norm(t, grad_x);
    ad::Var gp = ad::mean(t, ad::square(t, ad::add_scalar(t, norms, -1.0)));

    ad::Var lf = ad::sub(t, ad::sub(t, ad::mean(t, d_real), ad::mean(t, d_fake)),
                         ad::scale(t, gp, lambda_gp));
    return {lf, gp};
}

// The only critic-free adversarial term seen by the generator.
inline ad::Var build_loss_f_gen(Fwd& f, ad::Var x_prime, const Mat& Y) {
    ad::Tape& t = f.tape;
    ad::Var d = f.model->discriminate_t(f, x_prime, ad::constant(t, Y));
    return ad::neg(t, ad::mean(t, d));
}

inline ad::Var build_regressor_loss(Fwd& f, const Mat& X, const Mat& Ytrue, TaskMode mode) {
    ad::Tape& t = f.tape;
    auto [y_hat, hidden] = f.model->regress_t(f, ad::constant(t, X));
    if (mode == TaskMode::zsl) {
        ad::Var diff = ad::cadd(t, y_hat, -Ytrue);
        return ad::scale(t, ad::sum(t, ad::square(t, diff)), 1.0 / static_cast<double>(X.rows()));
    }
    // one-hot attributes act as class labels: softmax cross-entropy
    ad::Var lse = ad::logsumexp_rows(t, y_hat);
    ad::Var picked = ad::matmul(t, ad::mul(t, y_hat, ad::constant(t, Ytrue)),
                                ad::constant(t, Mat::Ones(Ytrue.cols(), 1)));
    return ad::mean(t, ad::sub(t, lse, picked));
}

}  // namespace trainer

// ---- public per-operation entry points (spec contracts) -------------------

struct LossZValue {
    double loss = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

inline LossZValue loss_Z(GcmModel& model, const Mat& X, const Mat& Ytrue, double beta_eff,
                         const Mat& noise) {
    if (beta_eff < 0.0) throw ConfigError("loss_Z: beta_effective must be >= 0");
    ad::Tape t;
    Fwd f(t, model);
    auto g = trainer::build_gen_forward(f, X, Ytrue, noise);
    LossZValue v;
    v.recon = t.val(g.recon)(0, 0);
    v.kl = t.val(g.kl)(0, 0);
    v.loss = v.recon + beta_eff * v.kl;
    return v;
}

// Contrastive loss for one anchor with an explicit sample attribute;
// negatives must exclude the anchor's own attribute.
inline double loss_Y(GcmModel& model, const Vec& x, const Vec& y_true,
                     const std::vector<Vec>& negatives, const Vec& z) {
    if (negatives.empty()) throw ValidationError("loss_Y: negatives must be non-empty");
    for (const Vec& n : negatives)
        if (n.size() == y_true.size() && n == y_true)
            throw ValidationError("loss_Y: y_true appears among the negatives");

    ad::Tape t;
    Fwd f(t, model);
    Mat candidates(1 + negatives.size(), y_true.size());
    candidates.row(0) = y_true.transpose();
    for (std::size_t i = 0; i < negatives.size(); ++i)
        candidates.row(static_cast<Eigen::Index>(i + 1)) = negatives[i].transpose();
    Mat mask = Mat::Ones(1, candidates.rows());
    std::optional<ad::Var> fb;
    if (model.config().use_feedback) {
        auto [yr, hidden] = model.regress_t(f, ad::constant(t, x.transpose()));
        fb = hidden;
    }
    ad::Var zvar = ad::constant(t, z.transpose());
    ad::Var l = trainer::build_loss_y(f, x.transpose(), candidates, {0}, mask, zvar, fb, true);
    return t.val(l)(0, 0);
}

struct LossFValue {
    double loss = 0.0;      // E[D(x,y)] - E[D(x',y)] - lambda * penalty
    double penalty = 0.0;   // E[(||grad||-1)^2]
};

inline LossFValue loss_F(GcmModel& model, const Mat& X, const Mat& Y, const Mat& Xprime,
                         const Vec& alphas, double lambda_gp = 10.0) {
    ad::Tape t;
    Fwd f(t, model);
    auto crit = trainer::build_loss_f_critic(f, X, Y, Xprime, alphas, lambda_gp);
    return {t.val(crit.lf)(0, 0), t.val(crit.gp)(0, 0)};
}

// ---- optimizer -------------------------------------------------------------

// Adam with parameters projected back onto the float32 grid after each
// update, so checkpoints round-trip bit-exactly at any point in training.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(ParamStore& params, const std::vector<std::pair<std::string, Mat>>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (const auto& [name, g] : grads) {
            Mat& p = params.at(name);
            if (g.rows() != p.rows() || g.cols() != p.cols())
                throw ShapeError("Adam: gradient shape mismatch for " + name);
            auto& slot = state_[name];
            if (slot.m.size() == 0) {
                slot.m = Mat::Zero(p.rows(), p.cols());
                slot.v = Mat::Zero(p.rows(), p.cols());
            }
            slot.m = b1_ * slot.m + (1.0 - b1_) * g;
            slot.v = b2_ * slot.v + (1.0 - b2_) * g.cwiseProduct(g);
            Mat mhat = slot.m / bc1;
            Mat vhat = slot.v / bc2;
            p -= lr_ * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                          Mat::Constant(p.rows(), p.cols(), eps_));
            quantize_f32(p);
        }
    }

private:
    struct Slot {
        Mat m, v;
    };
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::unordered_map<std::string, Slot> state_;
};

// ---- the alternating step and the epoch loop -------------------------------

namespace trainer {

struct BatchData {
    Mat X;
    Mat Ytrue;                  // per-anchor class attributes
    Mat candidate_attrs;        // candidate classes for the contrastive term
    std::vector<int> positive_col;
    Mat candidate_mask;
};

inline void check_finite(double v, const char* term) {
    if (!std::isfinite(v))
        throw NumericError(std::string("train_step: non-finite ") + term +
                           " (diverged or invalid inputs)");
}

inline std::vector<std::pair<std::string, Mat>> trainable_grads(
    Fwd& f, ad::Tape& t, ad::Var loss, const std::vector<std::string>& prefixes) {
    std::vector<std::pair<std::string, ad::Var>> entries;
    for (const auto& pfx : prefixes)
        for (auto& e : f.touched(pfx))
            if (f.model->params().trainable(e.first)) entries.push_back(e);
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<ad::Var> wrt;
    wrt.reserve(entries.size());
    for (auto& e : entries) wrt.push_back(e.second);
    auto gvars = t.gradients(loss, wrt);
    std::vector<std::pair<std::string, Mat>> out;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i)
        out.emplace_back(entries[i].first, t.val(gvars[i]));
    return out;
}

inline LossBreakdown train_step(GcmModel& model, const BatchData& batch, const TrainingConfig& cfg,
                                TaskMode mode, double beta_eff, Adam& gen_opt, Adam& critic_opt,
                                RandomStream& rng) {
    LossBreakdown out;
    const Eigen::Index n = batch.X.rows();
    const int zd = model.config().resolved_z_dim();

    // critic phase: ascend rho * L_F in the discriminator only
    if (cfg.rho > 0.0) {
        for (int step = 0; step < cfg.critic_steps; ++step) {
            Mat noise = rng.normal_mat(n, zd);
            Mat Xprime;
            {
                ad::Tape t0;  // generator weights frozen: values only
                Fwd f0(t0, model);
                auto g0 = build_gen_forward(f0, batch.X, batch.Ytrue, noise);
                Xprime = t0.val(g0.x_recon);
            }
            Vec alphas(n);
            for (Eigen::Index i = 0; i < n; ++i) alphas(i) = rng.uniform();

            ad::Tape t;
            Fwd f(t, model);
            auto crit = build_loss_f_critic(f, batch.X, batch.Ytrue, Xprime, alphas, cfg.lambda_gp);
            out.loss_f = t.val(crit.lf)(0, 0);
            out.gp_term = cfg.lambda_gp * t.val(crit.gp)(0, 0);
            check_finite(out.loss_f, "loss_f");
            ad::Var objective = ad::scale(t, ad::neg(t, crit.lf), cfg.rho);  // descend -rho*L_F
            critic_opt.step(model.params(), trainable_grads(f, t, objective, {"disc."}));
        }
    }

    // generator phase: descend L_Z + nu*L_Y + rho*L_F_gen (+ regressor loss)
    {
        Mat noise = rng.normal_mat(n, zd);
        ad::Tape t;
        Fwd f(t, model, /*train=*/true);  // batch statistics for ladder norms
        auto g = build_gen_forward(f, batch.X, batch.Ytrue, noise);
        out.loss_recon = t.val(g.recon)(0, 0);
        out.loss_kl = t.val(g.kl)(0, 0);
        out.loss_z = out.loss_recon + beta_eff * out.loss_kl;
        check_finite(out.loss_recon, "loss_recon");
        check_finite(out.loss_kl, "loss_kl");

        ad::Var total = ad::add(t, g.recon, ad::scale(t, g.kl, beta_eff));
        if (cfg.nu > 0.0) {
            ad::Var ly = build_loss_y(f, batch.X, batch.candidate_attrs, batch.positive_col,
                                      batch.candidate_mask, g.z, g.feedback_hidden,
                                      cfg.contrastive_grad_to_encoder);
            out.loss_y = t.val(ly)(0, 0);
            check_finite(out.loss_y, "loss_y");
            total = ad::add(t, total, ad::scale(t, ly, cfg.nu));
        }
        if (cfg.rho > 0.0) {
            ad::Var lf_gen = build_loss_f_gen(f, g.x_recon, batch.Ytrue);
            check_finite(t.val(lf_gen)(0, 0), "loss_f_gen");
            total = ad::add(t, total, ad::scale(t, lf_gen, cfg.rho));
        }
        ad::Var reg_loss = build_regressor_loss(f, batch.X, batch.Ytrue, mode);
        check_finite(t.val(reg_loss)(0, 0), "regressor_loss");
        total = ad::add(t, total, reg_loss);

        // the critic is frozen here: its parameters are simply not updated
        gen_opt.step(model.params(),
                     trainable_grads(f, t, total, {"enc.", "dec.", "reg.", "fb.", "lad."}));
    }

    out.total = out.loss_z + cfg.nu * out.loss_y + cfg.rho * out.loss_f;
    return out;
}

}  // namespace trainer

struct TrainLog {
    std::vector<LossBreakdown> epochs;
    std::vector<double> beta_effective;
};

inline TrainLog fit(GcmModel& model, const DatasetBundle& bundle, const TrainingConfig& cfg,
                    TaskMode mode) {
    cfg.validate();
    bundle.validate();
    if (bundle.split.train_idx.empty()) throw ValidationError("fit: empty training split");
    if (mode == TaskMode::osr && !bundle.attributes_one_hot())
        throw ValidationError("fit: osr mode requires one-hot class attributes");

    const std::vector<int>& train_idx = bundle.split.train_idx;
    const int num_seen = static_cast<int>(bundle.split.seen_ids.size());
    Mat seen_attrs(num_seen, bundle.attr_dim());
    std::unordered_map<int, int> seen_col;  // class id -> candidate column
    for (int k = 0; k < num_seen; ++k) {
        seen_attrs.row(k) = bundle.attributes.row(bundle.split.seen_ids[static_cast<std::size_t>(k)]);
        seen_col[bundle.split.seen_ids[static_cast<std::size_t>(k)]] = k;
    }

    Adam gen_opt(cfg.learning_rate);
    Adam critic_opt(cfg.learning_rate);
    RandomStream step_rng(derive_seed(cfg.seed, "train/steps"));

    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double beta_eff = beta_effective(cfg.beta, cfg.anneal_epochs, epoch);
        std::vector<int> order = train_idx;
        RandomStream shuffle_rng(derive_seed(cfg.seed, "train/shuffle/" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        LossBreakdown epoch_acc;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t bs = end - start;
            trainer::BatchData batch;
            batch.X = Mat(bs, bundle.feature_dim());
            batch.Ytrue = Mat(bs, bundle.attr_dim());
            batch.positive_col.resize(bs);
            for (std::size_t k = 0; k < bs; ++k) {
                const int i = order[start + k];
                batch.X.row(static_cast<Eigen::Index>(k)) = bundle.features.row(i);
                const int label = bundle.labels[static_cast<std::size_t>(i)];
                batch.Ytrue.row(static_cast<Eigen::Index>(k)) = bundle.attributes.row(label);
                batch.positive_col[k] = seen_col.at(label);
            }

            // candidate classes: all seen classes, or a per-batch sample plus
            // each anchor's own class when capped
            if (cfg.negatives_per_anchor == 0 || cfg.negatives_per_anchor >= num_seen - 1) {
                batch.candidate_attrs = seen_attrs;
                batch.candidate_mask = Mat::Ones(bs, num_seen);
            } else {
                std::vector<int> cols(static_cast<std::size_t>(num_seen));
                for (int k = 0; k < num_seen; ++k) cols[static_cast<std::size_t>(k)] = k;
                step_rng.shuffle(cols);
                cols.resize(static_cast<std::size_t>(cfg.negatives_per_anchor));
                std::set<int> active(cols.begin(), cols.end());
                for (std::size_t k = 0; k < bs; ++k) active.insert(batch.positive_col[k]);
                std::vector<int> actives(active.begin(), active.end());
                batch.candidate_attrs = Mat(actives.size(), bundle.attr_dim());
                std::unordered_map<int, int> remap;
                for (std::size_t k = 0; k < actives.size(); ++k) {
                    batch.candidate_attrs.row(static_cast<Eigen::Index>(k)) = seen_attrs.row(actives[k]);
                    remap[actives[k]] = static_cast<int>(k);
                }
                batch.candidate_mask = Mat::Ones(bs, actives.size());
                for (std::size_t k = 0; k < bs; ++k) batch.positive_col[k] = remap.at(batch.positive_col[k]);
            }

            LossBreakdown b = trainer::train_step(model, batch, cfg, mode, beta_eff, gen_opt,
                                                  critic_opt, step_rng);
            epoch_acc.loss_z += b.loss_z;
            epoch_acc.loss_recon += b.loss_recon;
            epoch_acc.loss_kl += b.loss_kl;
            epoch_acc.loss_y += b.loss_y;
            epoch_acc.loss_f += b.loss_f;
            epoch_acc.gp_term += b.gp_term;
            epoch_acc.total += b.total;
            ++batches;
        }
        const double inv = 1.0 / static_cast<double>(batches);
        epoch_acc.loss_z *= inv;
        epoch_acc.loss_recon *= inv;
        epoch_acc.loss_kl *= inv;
        epoch_acc.loss_y *= inv;
        epoch_acc.loss_f *= inv;
        epoch_acc.gp_term *= inv;
        epoch_acc.total *= inv;
        log.epochs.push_back(epoch_acc);
        log.beta_effective.push_back(beta_eff);
    }
    return log;
}

}  // namespace cfrec
