#pragma once

// The generative causal model: encoder Q_phi(Z|X), conditional decoder
// P_theta(X|Z,Y), attribute regressor Q_psi(Y|X), conditional critic D(X,Y)
// and the feedback module that routes the regressor's hidden state into the
// decoder. Two backbones: an MLP for vector features and a probabilistic
// ladder of strided convolutions for small images.

#include "cfrec/autodiff.hpp"
#include "cfrec/common.hpp"
#include "cfrec/tensor_file.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cfrec {

struct LadderLayerSpec {
    int channels = 0;
    int kernel = 0;
    int stride = 1;
};

enum class Backbone { mlp, ladder };

struct ModelConfig {
    int feature_dim = 0;
    int attr_dim = 0;
    int z_dim = 0;  // 0 means "same as attr_dim"
    int hidden_dim = 64;
    double leaky_slope = 0.2;
    Backbone backbone = Backbone::mlp;
    std::vector<LadderLayerSpec> ladder_layers;
    int image_channels = 0;
    int image_height = 0;
    int image_width = 0;
    bool use_feedback = false;
    // Identity output lets the decoder realize exactly linear generators;
    // the default sigmoid matches recognition features living in [0,1].
    bool sigmoid_output = true;
    // The ladder's stochastic skip multiplies noise by the predicted
    // variance as printed; this switches to the standard deviation.
    bool ladder_stddev_noise = false;

    int resolved_z_dim() const { return z_dim > 0 ? z_dim : attr_dim; }

    void validate() const {
        if (feature_dim <= 0) throw ConfigError("feature_dim must be positive");
        if (attr_dim <= 0) throw ConfigError("attr_dim must be positive");
        if (z_dim < 0) throw ConfigError("z_dim must be positive (or 0 for attr_dim)");
        if (hidden_dim <= 0) throw ConfigError("hidden_dim must be positive");
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
            throw ConfigError("leaky_slope must lie in (0,1)");
        if (backbone == Backbone::ladder) {
            if (ladder_layers.empty())
                throw ConfigError("ladder_layers must be non-empty for the ladder backbone");
            for (const auto& l : ladder_layers)
                if (l.channels <= 0 || l.kernel <= 0 || l.stride <= 0)
                    throw ConfigError("ladder_layers entries must be positive");
            if (image_channels <= 0 || image_height <= 0 || image_width <= 0)
                throw ConfigError("ladder backbone requires an image shape");
            if (image_channels * image_height * image_width != feature_dim)
                throw ConfigError("feature_dim must equal image_channels*image_height*image_width");
            if (use_feedback)
                throw ConfigError("use_feedback is only supported by the mlp backbone");
        }
    }
};

inline void to_json(nlohmann::ordered_json& j, const ModelConfig& c) {
    j = nlohmann::ordered_json{{"feature_dim", c.feature_dim},
                               {"attr_dim", c.attr_dim},
                               {"z_dim", c.z_dim},
                               {"hidden_dim", c.hidden_dim},
                               {"leaky_slope", c.leaky_slope},
                               {"backbone", c.backbone == Backbone::mlp ? "mlp" : "ladder"},
                               {"image_channels", c.image_channels},
                               {"image_height", c.image_height},
                               {"image_width", c.image_width},
                               {"use_feedback", c.use_feedback},
                               {"sigmoid_output", c.sigmoid_output},
                               {"ladder_stddev_noise", c.ladder_stddev_noise}};
    auto layers = nlohmann::ordered_json::array();
    for (const auto& l : c.ladder_layers)
        layers.push_back(nlohmann::ordered_json{{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
    j["ladder_layers"] = layers;
}

inline void from_json(const nlohmann::ordered_json& j, ModelConfig& c) {
    c.feature_dim = j.at("feature_dim").get<int>();
    c.attr_dim = j.at("attr_dim").get<int>();
    c.z_dim = j.at("z_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.backbone = j.at("backbone").get<std::string>() == "ladder" ? Backbone::ladder : Backbone::mlp;
    c.image_channels = j.at("image_channels").get<int>();
    c.image_height = j.at("image_height").get<int>();
    c.image_width = j.at("image_width").get<int>();
    c.use_feedback = j.at("use_feedback").get<bool>();
    c.sigmoid_output = j.at("sigmoid_output").get<bool>();
    c.ladder_stddev_noise = j.at("ladder_stddev_noise").get<bool>();
    c.ladder_layers.clear();
    for (const auto& l : j.at("ladder_layers")) {
        c.ladder_layers.push_back(LadderLayerSpec{l.at("channels").get<int>(), l.at("kernel").get<int>(),
                                                  l.at("stride").get<int>()});
    }
}

struct GaussianPosterior {
    Vec mean;
    Vec stddev;

    void validate() const {
        if (mean.size() != stddev.size())
            throw ShapeError("GaussianPosterior: mean and stddev lengths differ");
        for (Eigen::Index i = 0; i < stddev.size(); ++i)
            if (!(stddev(i) > 0.0)) throw ValidationError("GaussianPosterior: stddev must be positive");
    }
};

inline Vec reparameterize(const GaussianPosterior& post, const Vec& noise) {
    if (noise.size() != post.mean.size())
        throw ShapeError("reparameterize: noise length " + std::to_string(noise.size()) +
                         " != z dim " + std::to_string(post.mean.size()));
    return post.mean + post.stddev.cwiseProduct(noise);
}

// Named parameter collection. Iteration follows registration order, which
// keeps initialization, optimizer updates and checkpoints deterministic.
class ParamStore {
public:
    Mat& add(const std::string& name, Mat init, bool trainable = true) {
        if (map_.count(name)) throw Error("ParamStore: duplicate parameter " + name);
        names_.push_back(name);
        auto& slot = map_[name];
        slot.first = std::move(init);
        slot.second = trainable;
        return slot.first;
    }

    Mat& at(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw Error("ParamStore: unknown parameter " + name);
        return it->second.first;
    }

    const Mat& at(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw Error("ParamStore: unknown parameter " + name);
        return it->second.first;
    }

    bool trainable(const std::string& name) const { return map_.at(name).second; }
    const std::vector<std::string>& names() const { return names_; }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& n : names_)
            if (n.rfind(prefix, 0) == 0) out.push_back(n);
        return out;
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::pair<Mat, bool>> map_;
};

namespace detail {

// Index map for a convolution over a (c,h,w) row-major flattened layout.
// Output entries are ordered (oy, ox, cin, ky, kx); -1 marks zero padding.
inline std::vector<int> conv_gather_idx(int cin, int h_in, int w_in, int k, int s, int p, int h_out,
                                        int w_out) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(h_out) * w_out * cin * k * k);
    for (int oy = 0; oy < h_out; ++oy)
        for (int ox = 0; ox < w_out; ++ox)
            for (int c = 0; c < cin; ++c)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int sy = oy * s + ky - p;
                        const int sx = ox * s + kx - p;
                        if (sy < 0 || sx < 0 || sy >= h_in || sx >= w_in)
                            idx.push_back(-1);
                        else
                            idx.push_back(c * h_in * w_in + sy * w_in + sx);
                    }
    return idx;
}

// Transposed convolution realized as a stride-1 convolution over the
// virtually dilated and padded input; composed into one gather.
inline std::vector<int> convT_gather_idx(int cin, int h_in, int w_in, int k, int s, int p, int h_out,
                                         int w_out) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(h_out) * w_out * cin * k * k);
    const int pad = k - 1 - p;
    for (int oy = 0; oy < h_out; ++oy)
        for (int ox = 0; ox < w_out; ++ox)
            for (int c = 0; c < cin; ++c)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int dy = oy + ky - pad;
                        const int dx = ox + kx - pad;
                        if (dy < 0 || dx < 0 || dy % s != 0 || dx % s != 0) {
                            idx.push_back(-1);
                            continue;
                        }
                        const int sy = dy / s;
                        const int sx = dx / s;
                        if (sy >= h_in || sx >= w_in)
                            idx.push_back(-1);
                        else
                            idx.push_back(c * h_in * w_in + sy * w_in + sx);
                    }
    return idx;
}

// Permutation from (oy,ox,cout)-minor matmul output back to the canonical
// channel-major (cout,oy,ox) layout.
inline std::vector<int> to_channel_major_idx(int cout, int h, int w) {
    std::vector<int> idx(static_cast<std::size_t>(cout) * h * w);
    for (int c = 0; c < cout; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) idx[static_cast<std::size_t>(c) * h * w + y * w + x] = (y * w + x) * cout + c;
    return idx;
}

struct LadderLevel {
    int channels, height, width;
    int flat() const { return channels * height * width; }
};

}  // namespace detail

class GcmModel;

// One forward pass context: owns the tape bindings of the parameters so a
// later gradients() call can address them.
struct Fwd {
    ad::Tape& tape;
    GcmModel* model;
    bool train_mode = false;
    std::unordered_map<std::string, ad::Var> pvars;

    Fwd(ad::Tape& t, GcmModel& m, bool train = false) : tape(t), model(&m), train_mode(train) {}

    ad::Var p(const std::string& name);

    // parameters touched so far whose name starts with prefix
    std::vector<std::pair<std::string, ad::Var>> touched(const std::string& prefix) const {
        std::vector<std::pair<std::string, ad::Var>> out;
        for (const auto& [n, v] : pvars)
            if (n.rfind(prefix, 0) == 0) out.emplace_back(n, v);
        return out;
    }
};

class GcmModel {
public:
    GcmModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        register_params();
        init_params(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // ---- tape-level forwards (batch rows) -------------------------------

    struct PosteriorT {
        ad::Var mean, stddev;
    };

    PosteriorT encode_t(Fwd& f, ad::Var x) {
        check_cols(f, x, cfg_.feature_dim, "encode");
        if (cfg_.backbone == Backbone::mlp) return mlp_encode(f, x);
        return ladder_encode(f, x);
    }

    ad::Var decode_t(Fwd& f, ad::Var z, ad::Var y, std::optional<ad::Var> feedback_hidden = {},
                     const Mat* ladder_noise = nullptr) {
        check_cols(f, z, cfg_.resolved_z_dim(), "decode(z)");
        check_cols(f, y, cfg_.attr_dim, "decode(y)");
        if (f.tape.val(z).rows() != f.tape.val(y).rows())
            throw ShapeError("decode: z and y batch sizes differ");
        if (cfg_.backbone == Backbone::mlp) return mlp_decode(f, z, y, feedback_hidden);
        return ladder_decode(f, z, y, ladder_noise);
    }

    std::pair<ad::Var, ad::Var> regress_t(Fwd& f, ad::Var x) {
        check_cols(f, x, cfg_.feature_dim, "regress");
        ad::Var h = ad::leaky_relu(f.tape, linear(f, x, "reg.w1", "reg.b1"), cfg_.leaky_slope);
        ad::Var y = linear(f, h, "reg.w2", "reg.b2");
        return {y, h};
    }

    ad::Var discriminate_t(Fwd& f, ad::Var x, ad::Var y) {
        check_cols(f, x, cfg_.feature_dim, "discriminate(x)");
        check_cols(f, y, cfg_.attr_dim, "discriminate(y)");
        ad::Var in = ad::concat_cols(f.tape, x, y);
        ad::Var h = ad::leaky_relu(f.tape, linear(f, in, "disc.w1", "disc.b1"), cfg_.leaky_slope);
        return linear(f, h, "disc.w2", "disc.b2");  // n x 1
    }

    ad::Var feedback_t(Fwd& f, ad::Var hidden) {
        ad::Var h = ad::leaky_relu(f.tape, linear(f, hidden, "fb.w1", "fb.b1"), cfg_.leaky_slope);
        return linear(f, h, "fb.w2", "fb.b2");
    }

    // ---- eval-mode conveniences ------------------------------------------

    std::pair<Mat, Mat> encode_batch(const Mat& X) const {
        ad::Tape t;
        Fwd f(t, *const_cast<GcmModel*>(this));
        auto post = const_cast<GcmModel*>(this)->encode_t(f, ad::constant(t, X));
        return {t.val(post.mean), t.val(post.stddev)};
    }

    GaussianPosterior encode(const Vec& x) const {
        auto [mu, sigma] = encode_batch(x.transpose());
        GaussianPosterior post{mu.row(0).transpose(), sigma.row(0).transpose()};
        post.validate();
        return post;
    }

    Mat decode_batch(const Mat& Z, const Mat& Y) const {
        ad::Tape t;
        Fwd f(t, *const_cast<GcmModel*>(this));
        return t.val(const_cast<GcmModel*>(this)->decode_t(f, ad::constant(t, Z), ad::constant(t, Y)));
    }

    // feedback-aware generation: the hidden state comes from regressing the
    // factual sample, fed forward once
    Mat decode_batch_feedback(const Mat& Z, const Mat& Y, const Mat& X_factual) const {
        if (!cfg_.use_feedback) return decode_batch(Z, Y);
        ad::Tape t;
        Fwd f(t, *const_cast<GcmModel*>(this));
        auto* self = const_cast<GcmModel*>(this);
        auto [yh, hidden] = self->regress_t(f, ad::constant(t, X_factual));
        return t.val(self->decode_t(f, ad::constant(t, Z), ad::constant(t, Y), hidden));
    }

    Vec decode(const Vec& z, const Vec& y) const {
        return decode_batch(z.transpose(), y.transpose()).row(0).transpose();
    }

    std::pair<Mat, Mat> regress_batch(const Mat& X) const {
        ad::Tape t;
        Fwd f(t, *const_cast<GcmModel*>(this));
        auto [y, h] = const_cast<GcmModel*>(this)->regress_t(f, ad::constant(t, X));
        return {t.val(y), t.val(h)};
    }

    std::pair<Vec, Vec> regress(const Vec& x) const {
        auto [Y, H] = regress_batch(x.transpose());
        return {Y.row(0).transpose(), H.row(0).transpose()};
    }

    Mat discriminate_batch(const Mat& X, const Mat& Y) const {
        ad::Tape t;
        Fwd f(t, *const_cast<GcmModel*>(this));
        return t.val(const_cast<GcmModel*>(this)->discriminate_t(f, ad::constant(t, X), ad::constant(t, Y)));
    }

    double discriminate(const Vec& x, const Vec& y) const {
        return discriminate_batch(x.transpose(), y.transpose())(0, 0);
    }

    // ---- checkpoint -------------------------------------------------------

    void save_checkpoint(const std::string& path) const {
        TensorContainer c;
        c.metadata["format"] = "GCMCF1";
        c.metadata["version"] = 1;
        c.metadata["kind"] = "checkpoint";
        nlohmann::ordered_json mc;
        to_json(mc, cfg_);
        c.metadata["model_config"] = mc;
        for (const auto& name : params_.names()) c.tensors.emplace_back(name, params_.at(name));
        save_tensor_container(c, path);
    }

    static GcmModel load_checkpoint(const std::string& path) {
        TensorContainer c = load_tensor_container(path);
        if (!c.metadata.contains("kind") || c.metadata["kind"] != "checkpoint")
            throw FormatError(path + ": container is not a model checkpoint");
        ModelConfig cfg;
        from_json(c.metadata.at("model_config"), cfg);
        GcmModel m(cfg, 0);
        std::size_t matched = 0;
        for (const auto& name : m.params_.names()) {
            if (!c.has(name)) throw FormatError(path + ": checkpoint is missing tensor " + name);
            const Mat& src = c.at(name);
            Mat& dst = m.params_.at(name);
            if (src.rows() != dst.rows() || src.cols() != dst.cols())
                throw FormatError(path + ": tensor " + name + " has inconsistent shape");
            dst = src;
            ++matched;
        }
        if (matched != c.tensors.size())
            throw FormatError(path + ": checkpoint contains unknown tensors");
        return m;
    }

private:
    void check_cols(Fwd& f, ad::Var v, int expect, const char* where) const {
        if (f.tape.val(v).cols() != expect)
            throw ShapeError(std::string(where) + ": expected " + std::to_string(expect) +
                             " columns, got " + std::to_string(f.tape.val(v).cols()));
    }

    ad::Var linear(Fwd& f, ad::Var x, const std::string& w, const std::string& b) {
        ad::Var wy = ad::matmul(f.tape, x, f.p(w));
        return ad::add(f.tape, wy, ad::repeat_rows(f.tape, f.p(b), f.tape.val(x).rows()));
    }

    // ---- MLP backbone ----------------------------------------------------

    // Two parallel three-layer heads (mean and spread); the spread passes
    // through softplus so positivity holds structurally.
    PosteriorT mlp_encode(Fwd& f, ad::Var x) {
        auto trunk = [&](const char* base) {
            std::string b(base);
            ad::Var h1 = ad::leaky_relu(f.tape, linear(f, x, b + ".w1", b + ".b1"), cfg_.leaky_slope);
            ad::Var h2 = ad::leaky_relu(f.tape, linear(f, h1, b + ".w2", b + ".b2"), cfg_.leaky_slope);
            return linear(f, h2, b + ".w3", b + ".b3");
        };
        ad::Var mu = trunk("enc.mu");
        ad::Var sigma = ad::softplus(f.tape, trunk("enc.sig"));
        return {mu, sigma};
    }

    ad::Var mlp_decode(Fwd& f, ad::Var z, ad::Var y, std::optional<ad::Var> feedback_hidden) {
        ad::Var in = ad::concat_cols(f.tape, z, y);
        ad::Var h = ad::leaky_relu(f.tape, linear(f, in, "dec.w1", "dec.b1"), cfg_.leaky_slope);
        if (feedback_hidden) {
            if (!cfg_.use_feedback) throw ContractError("decode: feedback hidden given but use_feedback is off");
            h = ad::add(f.tape, h, feedback_t(f, *feedback_hidden));
        }
        ad::Var out = linear(f, h, "dec.w2", "dec.b2");
        return cfg_.sigmoid_output ? ad::sigmoid(f.tape, out) : out;
    }

    // ---- ladder backbone ---------------------------------------------------

    std::vector<detail::LadderLevel> ladder_levels() const {
        std::vector<detail::LadderLevel> lv;
        lv.push_back({cfg_.image_channels, cfg_.image_height, cfg_.image_width});
        for (const auto& spec : cfg_.ladder_layers) {
            const auto& prev = lv.back();
            const int p = spec.kernel / 2;
            const int h = (prev.height + 2 * p - spec.kernel) / spec.stride + 1;
            const int w = (prev.width + 2 * p - spec.kernel) / spec.stride + 1;
            if (h <= 0 || w <= 0) throw ConfigError("ladder layer shrinks the image to nothing");
            lv.push_back({spec.channels, h, w});
        }
        return lv;
    }

    ad::Var batchnorm(Fwd& f, ad::Var x, const std::string& base, int channels, int hw) {
        ad::Tape& t = f.tape;
        const Eigen::Index n = t.val(x).rows();
        ad::Var gamma = f.p(base + ".bn_gamma");
        ad::Var beta = f.p(base + ".bn_beta");
        Mat& rmean = params_.at(base + ".bn_rmean");
        Mat& rvar = params_.at(base + ".bn_rvar");
        constexpr double eps = 1e-5;
        constexpr double momentum = 0.9;

        std::vector<ad::Var> outs;
        outs.reserve(static_cast<std::size_t>(channels));
        for (int c = 0; c < channels; ++c) {
            std::vector<int> cols(static_cast<std::size_t>(hw));
            for (int q = 0; q < hw; ++q) cols[static_cast<std::size_t>(q)] = c * hw + q;
            ad::Var sub = ad::gather_cols(t, x, cols);  // n x hw
            ad::Var g_c = ad::slice_cols(t, gamma, c, 1);
            ad::Var b_c = ad::slice_cols(t, beta, c, 1);
            ad::Var normed;
            if (f.train_mode) {
                const double cnt = static_cast<double>(n) * hw;
                ad::Var mu = ad::scale(t, ad::sum(t, sub), 1.0 / cnt);
                ad::Var centered = ad::sub(t, sub, ad::broadcast_scalar(t, mu, n, hw));
                ad::Var var = ad::scale(t, ad::sum(t, ad::square(t, centered)), 1.0 / cnt);
                ad::Var inv = ad::div(t, ad::scalar(t, 1.0),
                                      ad::sqrt(t, ad::add_scalar(t, var, eps)));
                normed = ad::smul(t, centered, inv);
                rmean(0, c) = momentum * rmean(0, c) + (1.0 - momentum) * t.val(mu)(0, 0);
                rvar(0, c) = momentum * rvar(0, c) + (1.0 - momentum) * t.val(var)(0, 0);
            } else {
                Mat mu_c = Mat::Constant(n, hw, rmean(0, c));
                const double inv = 1.0 / std::sqrt(rvar(0, c) + eps);
                normed = ad::scale(t, ad::cadd(t, sub, -mu_c), inv);
            }
            ad::Var scaled = ad::smul(t, normed, g_c);
            ad::Var shifted = ad::add(t, scaled, ad::broadcast_scalar(t, b_c, n, hw));
            outs.push_back(shifted);
        }
        ad::Var out = outs[0];
        for (std::size_t c = 1; c < outs.size(); ++c) out = ad::concat_cols(t, out, outs[c]);
        return out;
    }

    ad::Var prelu(Fwd& f, ad::Var x, const std::string& name) {
        ad::Tape& t = f.tape;
        return ad::add(t, ad::relu(t, x), ad::smul(t, ad::min0(t, x), f.p(name)));
    }

    PosteriorT ladder_encode(Fwd& f, ad::Var x) {
        ad::Tape& t = f.tape;
        const auto lv = ladder_levels();
        ad::Var cur = x;
        for (std::size_t i = 0; i < cfg_.ladder_layers.size(); ++i) {
            const auto& spec = cfg_.ladder_layers[i];
            const auto& in = lv[i];
            const auto& out = lv[i + 1];
            const std::string base = "lad.enc" + std::to_string(i + 1);
            const int p = spec.kernel / 2;
            const auto idx =
                detail::conv_gather_idx(in.channels, in.height, in.width, spec.kernel, spec.stride, p,
                                        out.height, out.width);
            const Eigen::Index n = t.val(cur).rows();
            ad::Var patches = ad::gather_cols(t, cur, idx);
            patches = ad::reshape_rm(t, patches, n * out.height * out.width,
                                     in.channels * spec.kernel * spec.kernel);
            ad::Var y = linear(f, patches, base + ".w", base + ".b");  // (n*oh*ow) x cout
            y = ad::reshape_rm(t, y, n, static_cast<Eigen::Index>(out.height) * out.width * out.channels);
            y = ad::gather_cols(t, y, detail::to_channel_major_idx(out.channels, out.height, out.width));
            y = batchnorm(f, y, base, out.channels, out.height * out.width);
            cur = prelu(f, y, base + ".prelu");
        }
        ad::Var mu = linear(f, cur, "lad.mu.w", "lad.mu.b");
        ad::Var var = ad::softplus(f.tape, linear(f, cur, "lad.sig.w", "lad.sig.b"));
        return {mu, ad::sqrt(f.tape, var)};
    }

    ad::Var ladder_decode(Fwd& f, ad::Var z, ad::Var y, const Mat* noise) {
        ad::Tape& t = f.tape;
        const auto lv = ladder_levels();
        const int L = static_cast<int>(cfg_.ladder_layers.size());
        const Eigen::Index n = t.val(z).rows();
        ad::Var cur = ad::concat_cols(t, z, y);  // t_L
        for (int l = L; l >= 1; --l) {
            const std::string base = "lad.dec" + std::to_string(l);
            const auto& hi = lv[static_cast<std::size_t>(l)];
            const auto& lo = lv[static_cast<std::size_t>(l - 1)];
            const auto& spec = cfg_.ladder_layers[static_cast<std::size_t>(l - 1)];
            ad::Var u = linear(f, cur, base + ".unflat.w", base + ".unflat.b");  // n x hi.flat
            const int p = spec.kernel / 2;
            const auto idx = detail::convT_gather_idx(hi.channels, hi.height, hi.width, spec.kernel,
                                                      spec.stride, p, lo.height, lo.width);
            ad::Var patches = ad::gather_cols(t, u, idx);
            patches = ad::reshape_rm(t, patches, n * lo.height * lo.width,
                                     hi.channels * spec.kernel * spec.kernel);
            ad::Var v = linear(f, patches, base + ".convw", base + ".convb");
            v = ad::reshape_rm(t, v, n, static_cast<Eigen::Index>(lo.height) * lo.width * lo.channels);
            v = ad::gather_cols(t, v, detail::to_channel_major_idx(lo.channels, lo.height, lo.width));
            if (l == 1) return cfg_.sigmoid_output ? ad::sigmoid(t, v) : v;
            ad::Var mu = linear(f, v, base + ".mu.w", base + ".mu.b");
            ad::Var var = ad::softplus(t, linear(f, v, base + ".sig.w", base + ".sig.b"));
            if (noise == nullptr) {
                cur = mu;  // deterministic path
            } else {
                if (noise->rows() != n || noise->cols() < t.val(mu).cols())
                    throw ShapeError("ladder decode: noise shape mismatch");
                Mat eps = noise->leftCols(t.val(mu).cols());
                ad::Var scale_term = cfg_.ladder_stddev_noise ? ad::sqrt(t, var) : var;
                cur = ad::add(t, mu, ad::cmul(t, scale_term, eps));
            }
        }
        throw Error("ladder_decode: unreachable");
    }

    // ---- parameter registration and init ---------------------------------

    void register_params() {
        const int d = cfg_.feature_dim;
        const int a = cfg_.attr_dim;
        const int z = cfg_.resolved_z_dim();
        const int m = cfg_.hidden_dim;

        auto reg_linear = [&](const std::string& base, int in, int out) {
            params_.add(base + ".w" , Mat::Zero(in, out));
            params_.add(base + ".b" , Mat::Zero(1, out));
        };

        if (cfg_.backbone == Backbone::mlp) {
            for (const char* head : {"enc.mu", "enc.sig"}) {
                params_.add(std::string(head) + ".w1", Mat::Zero(d, m));
                params_.add(std::string(head) + ".b1", Mat::Zero(1, m));
                params_.add(std::string(head) + ".w2", Mat::Zero(m, 2 * z));
                params_.add(std::string(head) + ".b2", Mat::Zero(1, 2 * z));
                params_.add(std::string(head) + ".w3", Mat::Zero(2 * z, z));
                params_.add(std::string(head) + ".b3", Mat::Zero(1, z));
            }
        } else {
            const auto lv = ladder_levels();
            for (std::size_t i = 0; i < cfg_.ladder_layers.size(); ++i) {
                const auto& spec = cfg_.ladder_layers[i];
                const std::string base = "lad.enc" + std::to_string(i + 1);
                const int cin = lv[i].channels;
                const int cout = lv[i + 1].channels;
                params_.add(base + ".w", Mat::Zero(cin * spec.kernel * spec.kernel, cout));
                params_.add(base + ".b", Mat::Zero(1, cout));
                params_.add(base + ".bn_gamma", Mat::Ones(1, cout));
                params_.add(base + ".bn_beta", Mat::Zero(1, cout));
                params_.add(base + ".bn_rmean", Mat::Zero(1, cout), /*trainable=*/false);
                params_.add(base + ".bn_rvar", Mat::Ones(1, cout), /*trainable=*/false);
                params_.add(base + ".prelu", Mat::Constant(1, 1, 0.25));
            }
            reg_linear("lad.mu", lv.back().flat(), z);
            reg_linear("lad.sig", lv.back().flat(), z);
            const int L = static_cast<int>(cfg_.ladder_layers.size());
            for (int l = L; l >= 1; --l) {
                const std::string base = "lad.dec" + std::to_string(l);
                const auto& hi = lv[static_cast<std::size_t>(l)];
                const auto& lo = lv[static_cast<std::size_t>(l - 1)];
                const auto& spec = cfg_.ladder_layers[static_cast<std::size_t>(l - 1)];
                const int t_in = (l == L) ? z + a : hi.flat();
                reg_linear(base + ".unflat", t_in, hi.flat());
                params_.add(base + ".convw", Mat::Zero(hi.channels * spec.kernel * spec.kernel, lo.channels));
                params_.add(base + ".convb", Mat::Zero(1, lo.channels));
                if (l > 1) {
                    reg_linear(base + ".mu", lo.flat(), lo.flat());
                    reg_linear(base + ".sig", lo.flat(), lo.flat());
                }
            }
        }

        if (cfg_.backbone == Backbone::mlp) {
            params_.add("dec.w1", Mat::Zero(z + a, m));
            params_.add("dec.b1", Mat::Zero(1, m));
            params_.add("dec.w2", Mat::Zero(m, d));
            params_.add("dec.b2", Mat::Zero(1, d));
        }
        params_.add("reg.w1", Mat::Zero(d, m));
        params_.add("reg.b1", Mat::Zero(1, m));
        params_.add("reg.w2", Mat::Zero(m, a));
        params_.add("reg.b2", Mat::Zero(1, a));
        params_.add("disc.w1", Mat::Zero(d + a, m));
        params_.add("disc.b1", Mat::Zero(1, m));
        params_.add("disc.w2", Mat::Zero(m, 1));
        params_.add("disc.b2", Mat::Zero(1, 1));
        if (cfg_.backbone == Backbone::mlp) {
            params_.add("fb.w1", Mat::Zero(m, m));
            params_.add("fb.b1", Mat::Zero(1, m));
            params_.add("fb.w2", Mat::Zero(m, m));
            params_.add("fb.b2", Mat::Zero(1, m));
        }
    }

    void init_params(std::uint64_t seed) {
        const double gain = std::sqrt(2.0 / (1.0 + cfg_.leaky_slope * cfg_.leaky_slope));
        for (const auto& name : params_.names()) {
            Mat& m = params_.at(name);
            const bool is_weight = name.find(".w") != std::string::npos || name.ends_with("w");
            const bool is_bn = name.find(".bn_") != std::string::npos;
            const bool is_prelu = name.ends_with(".prelu");
            if (!is_weight || is_bn || is_prelu) continue;  // biases, norms: keep registered defaults
            RandomStream rng(derive_seed(seed, "init/" + name));
            const double fan_in = static_cast<double>(m.rows());
            const double std = gain / std::sqrt(fan_in);
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal() * std;
            quantize_f32(m);
        }
    }

    ModelConfig cfg_;
    ParamStore params_;
};

inline ad::Var Fwd::p(const std::string& name) {
    auto it = pvars.find(name);
    if (it != pvars.end()) return it->second;
    ad::Var v = tape.put(model->params().at(name));
    pvars.emplace(name, v);
    return v;
}

}  // namespace cfrec
