#include "df2am/backbone.hpp"

#include <cmath>

#include "df2am/errors.hpp"
#include "df2am/rng.hpp"

namespace df2am {

const char* modality_name(Modality m) { return m == Modality::RGB ? "rgb" : "ir"; }

namespace {

std::size_t conv_out(std::size_t extent, std::size_t kernel, std::size_t stride) {
    const std::size_t pad = kernel / 2;
    return (extent + 2 * pad - kernel) / stride + 1;
}

std::size_t stride_of_stem_layer(const EncoderConfig& cfg, std::size_t layer) {
    return layer == 0 ? cfg.stem_stride : 1;
}

}  // namespace

std::size_t EncoderConfig::out_channels() const {
    return trunk_widths.empty() ? (stem_widths.empty() ? in_channels : stem_widths.back()) : trunk_widths.back();
}

std::size_t EncoderConfig::out_height() const {
    std::size_t h = in_height;
    for (std::size_t l = 0; l < stem_widths.size(); ++l) h = conv_out(h, kernel, stride_of_stem_layer(*this, l));
    return h;
}

std::size_t EncoderConfig::out_width() const {
    std::size_t w = in_width;
    for (std::size_t l = 0; l < stem_widths.size(); ++l) w = conv_out(w, kernel, stride_of_stem_layer(*this, l));
    return w;
}

void EncoderConfig::validate() const {
    if (in_channels == 0 || in_height == 0 || in_width == 0) throw ConfigError("encoder: input extents must be positive");
    if (stem_widths.empty()) throw ConfigError("encoder: at least one stem layer is required");
    if (trunk_widths.empty()) throw ConfigError("encoder: at least one trunk layer is required");
    for (auto w : stem_widths)
        if (w == 0) throw ConfigError("encoder: stem widths must be positive");
    for (auto w : trunk_widths)
        if (w == 0) throw ConfigError("encoder: trunk widths must be positive");
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("encoder: kernel must be odd and positive");
    if (stem_stride == 0) throw ConfigError("encoder: stem stride must be positive");
    if (identity_count == 0) throw ConfigError("encoder: identity_count must be positive");
    if (in_height + 2 * (kernel / 2) < kernel || in_width + 2 * (kernel / 2) < kernel) {
        throw ConfigError("encoder: input smaller than kernel");
    }
    if (parts == 0 || out_height() % parts != 0) {
        throw ConfigError("encoder: P=" + std::to_string(parts) + " does not divide H=" + std::to_string(out_height()));
    }
}

std::string stem_weight_name(Modality m, std::size_t layer) {
    return std::string("stem.") + modality_name(m) + "." + std::to_string(layer) + ".weight";
}
std::string stem_bias_name(Modality m, std::size_t layer) {
    return std::string("stem.") + modality_name(m) + "." + std::to_string(layer) + ".bias";
}
std::string trunk_weight_name(std::size_t layer) { return "trunk." + std::to_string(layer) + ".weight"; }
std::string trunk_bias_name(std::size_t layer) { return "trunk." + std::to_string(layer) + ".bias"; }

namespace {

void add_conv(ad::ParamStore& params, const std::string& wname, const std::string& bname, std::size_t out,
              std::size_t in, std::size_t k, Rng& rng) {
    const double s = std::sqrt(1.0 / static_cast<double>(in * k * k));
    Array w({out, in, k, k});
    for (auto& v : w.values()) v = rng.uniform(-s, s);
    Array b({out});
    for (auto& v : b.values()) v = rng.uniform(-s, s);
    params.add(wname, std::move(w));
    params.add(bname, std::move(b));
}

}  // namespace

void init_encoder(ad::ParamStore& params, const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::derive(seed, 1));
    for (Modality m : {Modality::RGB, Modality::IR}) {
        std::size_t in = cfg.in_channels;
        for (std::size_t l = 0; l < cfg.stem_widths.size(); ++l) {
            add_conv(params, stem_weight_name(m, l), stem_bias_name(m, l), cfg.stem_widths[l], in, cfg.kernel, rng);
            in = cfg.stem_widths[l];
        }
    }
    std::size_t in = cfg.stem_widths.back();
    for (std::size_t l = 0; l < cfg.trunk_widths.size(); ++l) {
        add_conv(params, trunk_weight_name(l), trunk_bias_name(l), cfg.trunk_widths[l], in, cfg.kernel, rng);
        in = cfg.trunk_widths[l];
    }
}

ad::Var encode(ad::Tape& tape, ad::ParamStore& params, const EncoderConfig& cfg, const Array& images,
               Modality modality) {
    if (images.rank() != 4 || Shape(images.shape().begin() + 1, images.shape().end()) != cfg.input_shape()) {
        throw ShapeError("encode: images " + shape_str(images.shape()) + " do not match input shape " +
                         shape_str(cfg.input_shape()));
    }
    const std::size_t pad = cfg.kernel / 2;
    ad::Var x = tape.constant(images);
    for (std::size_t l = 0; l < cfg.stem_widths.size(); ++l) {
        x = ad::relu(ad::conv2d(x, tape.param(params, stem_weight_name(modality, l)),
                                tape.param(params, stem_bias_name(modality, l)), stride_of_stem_layer(cfg, l), pad));
    }
    for (std::size_t l = 0; l < cfg.trunk_widths.size(); ++l) {
        x = ad::relu(ad::conv2d(x, tape.param(params, trunk_weight_name(l)), tape.param(params, trunk_bias_name(l)), 1,
                                pad));
    }
    return x;
}

ad::Var gap(ad::Var feature_maps) { return ad::spatial_mean(feature_maps); }

// ---- BatchNorm --------------------------------------------------------------

BatchNorm::BatchNorm(std::string name, std::size_t channels, double momentum, double eps)
    : name_(std::move(name)),
      running_mean_({channels}, 0.0),
      running_var_({channels}, 1.0),
      momentum_(momentum),
      eps_(eps) {}

void BatchNorm::init_params(ad::ParamStore& params) const {
    params.add(name_ + ".gamma", Array({channels()}, 1.0));
    params.add(name_ + ".beta", Array({channels()}, 0.0));
}

ad::Var BatchNorm::forward(ad::Tape& tape, ad::ParamStore& params, ad::Var x, Phase phase, bool update_running) {
    ad::Var gamma = tape.param(params, name_ + ".gamma");
    ad::Var beta = tape.param(params, name_ + ".beta");
    if (phase == Phase::Infer) return ad::batchnorm_infer(x, gamma, beta, running_mean_, running_var_, eps_);
    auto r = ad::batchnorm_train(x, gamma, beta, eps_);
    if (update_running) {
        const double n = static_cast<double>(x.shape()[0]);
        for (std::size_t j = 0; j < channels(); ++j) {
            running_mean_[j] = (1.0 - momentum_) * running_mean_[j] + momentum_ * r.batch_mean[j];
            running_var_[j] = (1.0 - momentum_) * running_var_[j] + momentum_ * r.batch_var[j] * n / (n - 1.0);
        }
    }
    return r.out;
}

void BatchNorm::set_running(Array mean, Array var) {
    require_same_shape(mean.shape(), running_mean_.shape(), "BatchNorm::set_running");
    require_same_shape(var.shape(), running_var_.shape(), "BatchNorm::set_running");
    running_mean_ = std::move(mean);
    running_var_ = std::move(var);
}

// ---- Classifier -------------------------------------------------------------

void Classifier::init_params(ad::ParamStore& params, std::uint64_t seed) const {
    Rng rng(seed);
    const double s = std::sqrt(1.0 / static_cast<double>(dim));
    Array w({classes, dim});
    for (auto& v : w.values()) v = rng.uniform(-s, s);
    Array b({classes});
    for (auto& v : b.values()) v = rng.uniform(-s, s);
    params.add(name + ".weight", std::move(w));
    params.add(name + ".bias", std::move(b));
}

ad::Var Classifier::logits(ad::Tape& tape, ad::ParamStore& params, ad::Var embeddings) const {
    if (embeddings.shape().size() != 2 || embeddings.shape()[1] != dim) {
        throw ShapeError("classify: embeddings " + shape_str(embeddings.shape()) + " do not match classifier dim " +
                         std::to_string(dim));
    }
    return ad::linear(embeddings, tape.param(params, name + ".weight"), tape.param(params, name + ".bias"));
}

ad::Var Classifier::probabilities(ad::Tape& tape, ad::ParamStore& params, ad::Var embeddings) const {
    return ad::softmax(logits(tape, params, embeddings));
}

}  // namespace df2am
