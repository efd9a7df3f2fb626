#pragma once

#include <cstdint>
#include <string>

#include "df2am/autodiff.hpp"
#include "df2am/backbone.hpp"

namespace df2am {

struct ModelConfig {
    EncoderConfig encoder;
    // One attention vector for both modality streams instead of one each.
    bool shared_attention = false;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Which embedding is used for retrieval: the fused BN(f_g) + f_star, or the GAP feature f_g.
enum class MatchEmbedding { Fused, Global };

// Encoder + fusion branch + the two identity classifiers, with all learnable state in one
// ParamStore:
//   stem.{rgb,ir}.L.{weight,bias}, trunk.L.{weight,bias}  encoder
//   bn.{rgb,ir}.{gamma,beta}                               BN of the global feature
//   attn.{rgb,ir} (or attn.shared)                         part attention logits
//   cls.base.{weight,bias}                                  baseline classifier on f_g
//   cls.dff.{weight,bias}                                   classifier on fused features
class Model {
public:
    struct StreamOutputs {
        ad::Var feature_maps;  // [B, C, H, W]
        ad::Var global;        // [B, C]
        ad::Var parts;         // [B, P, C]
        ad::Var local;         // [B, C], attention-weighted parts
        ad::Var fused;         // [B, C]
    };

    Model() = default;
    Model(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }
    BatchNorm& bn(Modality m) { return m == Modality::RGB ? bn_rgb_ : bn_ir_; }
    const BatchNorm& bn(Modality m) const { return m == Modality::RGB ? bn_rgb_ : bn_ir_; }
    const Classifier& base_classifier() const { return base_cls_; }
    const Classifier& dff_classifier() const { return dff_cls_; }

    StreamOutputs forward(ad::Tape& tape, const Array& images, Modality modality, Phase phase, bool update_running);

    // Inference-phase embeddings [n, C] without gradient bookkeeping.
    Array embed(const Array& images, Modality modality, MatchEmbedding which);

    // Checkpoint: JSON text tagged with a format version, holding the model config,
    // every parameter (name, shape, values) and the BN running statistics.
    void save(const std::string& path) const;
    static Model load(const std::string& path);

    friend bool operator==(const Model& a, const Model& b);

private:
    ModelConfig config_;
    ad::ParamStore params_;
    BatchNorm bn_rgb_;
    BatchNorm bn_ir_;
    Classifier base_cls_;
    Classifier dff_cls_;
};

inline constexpr const char* kCheckpointFormat = "df2am-checkpoint/1";

}  // namespace df2am
