#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "df2am/array.hpp"
#include "df2am/autodiff.hpp"

namespace df2am {

enum class Modality { RGB, IR };

const char* modality_name(Modality m);

// Two-stream encoder geometry. Each stem is a stack of strided 3x3 conv + ReLU layers,
// one stack per modality; the trunk is a shared stack of stride-1 conv + ReLU layers.
struct EncoderConfig {
    std::size_t in_channels = 3;
    std::size_t in_height = 16;
    std::size_t in_width = 8;
    std::vector<std::size_t> stem_widths{16};
    std::size_t stem_stride = 2;
    std::vector<std::size_t> trunk_widths{32, 32};
    std::size_t kernel = 3;
    std::size_t identity_count = 0;
    // Number of horizontal parts the feature map is later split into; H must be divisible.
    std::size_t parts = 4;

    std::size_t out_channels() const;
    std::size_t out_height() const;
    std::size_t out_width() const;
    Shape input_shape() const { return {in_channels, in_height, in_width}; }
    Shape output_shape() const { return {out_channels(), out_height(), out_width()}; }

    // Throws ConfigError on non-positive widths or when parts does not divide the output height.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Parameter names used by the encoder.
std::string stem_weight_name(Modality m, std::size_t layer);
std::string stem_bias_name(Modality m, std::size_t layer);
std::string trunk_weight_name(std::size_t layer);
std::string trunk_bias_name(std::size_t layer);

// Uniform(-s, s) with s = sqrt(1 / fan_in) for every conv weight and bias.
void init_encoder(ad::ParamStore& params, const EncoderConfig& cfg, std::uint64_t seed);

// images [B, C0, H0, W0] -> feature maps [B, C, H, W]. Only the stem depends on `modality`.
ad::Var encode(ad::Tape& tape, ad::ParamStore& params, const EncoderConfig& cfg, const Array& images,
               Modality modality);

// [B, C, H, W] -> [B, C]
ad::Var gap(ad::Var feature_maps);

enum class Phase { Train, Infer };

// Per-channel batch normalization with learned scale/shift ("<name>.gamma", "<name>.beta")
// and running statistics (momentum 0.1; running variance uses the unbiased batch variance).
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5);

    void init_params(ad::ParamStore& params) const;

    // Train phase normalizes by batch statistics (batch >= 2); running statistics are
    // updated only when update_running is set. Infer phase uses running statistics.
    ad::Var forward(ad::Tape& tape, ad::ParamStore& params, ad::Var x, Phase phase, bool update_running);

    const std::string& name() const { return name_; }
    std::size_t channels() const { return running_mean_.size(); }
    const Array& running_mean() const { return running_mean_; }
    const Array& running_var() const { return running_var_; }
    void set_running(Array mean, Array var);
    double momentum() const { return momentum_; }
    double eps() const { return eps_; }

private:
    std::string name_;
    Array running_mean_;
    Array running_var_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
};

// Linear identity classifier "<name>.weight" [N, dim], "<name>.bias" [N].
struct Classifier {
    std::string name;
    std::size_t dim = 0;
    std::size_t classes = 0;

    void init_params(ad::ParamStore& params, std::uint64_t seed) const;
    ad::Var logits(ad::Tape& tape, ad::ParamStore& params, ad::Var embeddings) const;
    // softmax(W x + b) per row.
    ad::Var probabilities(ad::Tape& tape, ad::ParamStore& params, ad::Var embeddings) const;
};

}  // namespace df2am
