#include "df2am/model.hpp"

#include <fstream>

#include "df2am/config_io.hpp"
#include "df2am/dff.hpp"
#include "df2am/errors.hpp"
#include "df2am/rng.hpp"

namespace df2am {

void ModelConfig::validate() const {
    encoder.validate();
    if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("model: bn_momentum must be in (0, 1]");
    if (!(bn_eps > 0)) throw ConfigError("model: bn_eps must be positive");
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const std::size_t c = config_.encoder.out_channels();
    init_encoder(params_, config_.encoder, seed);
    bn_rgb_ = BatchNorm("bn.rgb", c, config_.bn_momentum, config_.bn_eps);
    bn_ir_ = BatchNorm("bn.ir", c, config_.bn_momentum, config_.bn_eps);
    bn_rgb_.init_params(params_);
    bn_ir_.init_params(params_);
    dff::init_attention(params_, config_.encoder.parts, config_.shared_attention);
    base_cls_ = Classifier{"cls.base", c, config_.encoder.identity_count};
    dff_cls_ = Classifier{"cls.dff", c, config_.encoder.identity_count};
    base_cls_.init_params(params_, Rng::derive(seed, 2));
    dff_cls_.init_params(params_, Rng::derive(seed, 3));
}

Model::StreamOutputs Model::forward(ad::Tape& tape, const Array& images, Modality modality, Phase phase,
                                    bool update_running) {
    StreamOutputs out;
    out.feature_maps = encode(tape, params_, config_.encoder, images, modality);
    out.global = gap(out.feature_maps);
    out.parts = dff::pap(out.feature_maps, config_.encoder.parts);
    out.local = dff::local_attention_fuse(
        out.parts, tape.param(params_, dff::attention_name(modality, config_.shared_attention)));
    out.fused = dff::dual_fuse(tape, params_, bn(modality), out.global, out.local, phase, update_running);
    return out;
}

Array Model::embed(const Array& images, Modality modality, MatchEmbedding which) {
    ad::Tape tape(false);
    auto out = forward(tape, images, modality, Phase::Infer, false);
    return which == MatchEmbedding::Fused ? out.fused.value() : out.global.value();
}

bool operator==(const Model& a, const Model& b) {
    if (!(a.config_ == b.config_) || a.params_.names() != b.params_.names()) return false;
    for (const auto& n : a.params_.names()) {
        if (!(a.params_.value(n) == b.params_.value(n))) return false;
    }
    for (Modality m : {Modality::RGB, Modality::IR}) {
        if (!(a.bn(m).running_mean() == b.bn(m).running_mean()) || !(a.bn(m).running_var() == b.bn(m).running_var())) {
            return false;
        }
    }
    return true;
}

namespace {

nlohmann::json array_to_json(const Array& a) {
    return nlohmann::json{{"shape", a.shape()}, {"values", a.values()}};
}

Array array_from_json(const nlohmann::json& j) {
    return Array(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

}  // namespace

void Model::save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["model"] = model_config_to_json(config_);
    nlohmann::json params = nlohmann::json::array();
    for (const auto& n : params_.names()) {
        nlohmann::json p = array_to_json(params_.value(n));
        p["name"] = n;
        params.push_back(std::move(p));
    }
    j["params"] = std::move(params);
    nlohmann::json bn;
    for (Modality m : {Modality::RGB, Modality::IR}) {
        bn[this->bn(m).name()] = {{"running_mean", array_to_json(this->bn(m).running_mean())},
                                  {"running_var", array_to_json(this->bn(m).running_var())}};
    }
    j["batchnorm"] = std::move(bn);
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << j.dump() << '\n';
    if (!os) throw IoError("write failed: " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) {
            throw CheckpointError("unsupported checkpoint format '" + j.at("format").get<std::string>() + "' in " + path);
        }
        Model m(model_config_from_json(j.at("model")), 0);
        const auto& params = j.at("params");
        if (params.size() != m.params_.size()) throw CheckpointError("checkpoint parameter count mismatch: " + path);
        for (const auto& p : params) {
            const std::string name = p.at("name").get<std::string>();
            if (!m.params_.contains(name)) throw CheckpointError("checkpoint has unknown parameter " + name);
            Array v = array_from_json(p);
            if (v.shape() != m.params_.value(name).shape()) {
                throw CheckpointError("checkpoint parameter " + name + " has shape " + shape_str(v.shape()) +
                                      ", model expects " + shape_str(m.params_.value(name).shape()));
            }
            m.params_.value(name) = std::move(v);
        }
        for (Modality mod : {Modality::RGB, Modality::IR}) {
            const auto& e = j.at("batchnorm").at(m.bn(mod).name());
            m.bn(mod).set_running(array_from_json(e.at("running_mean")), array_from_json(e.at("running_var")));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
    } catch (const ShapeError& e) {
        throw CheckpointError("checkpoint " + path + ": " + e.what());
    }
}

}  // namespace df2am
