#include "df2am/config_io.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "df2am/errors.hpp"
#include "df2am/trainer.hpp"

namespace df2am {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

// Reads keys from one JSON object and rejects any key it was not asked about.
class StrictReader {
public:
    StrictReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + prefix() + key + "': " + e.what());
        }
    }

    const json* sub(const char* key) {
        if (!j_.contains(key)) return nullptr;
        seen_.insert(key);
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + prefix() + item.key() + "'");
        }
    }

private:
    std::string prefix() const { return section_.empty() ? std::string() : section_ + "."; }

    const json& j_;
    std::string section_;
    std::set<std::string> seen_;
};

}  // namespace

json synth_config_to_json(const SynthConfig& c) {
    return json{{"identity_count", c.identity_count},
                {"samples_per_identity", c.samples_per_identity},
                {"channels", c.channels},
                {"height", c.height},
                {"width", c.width},
                {"latent_dim", c.latent_dim},
                {"modality_gap", c.modality_gap},
                {"noise_std", c.noise_std},
                {"occlusion_prob", c.occlusion_prob},
                {"occlusion_fraction", c.occlusion_fraction},
                {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
    SynthConfig c;
    StrictReader r(j, "data");
    r.read("identity_count", c.identity_count);
    r.read("samples_per_identity", c.samples_per_identity);
    r.read("channels", c.channels);
    r.read("height", c.height);
    r.read("width", c.width);
    r.read("latent_dim", c.latent_dim);
    r.read("modality_gap", c.modality_gap);
    r.read("noise_std", c.noise_std);
    r.read("occlusion_prob", c.occlusion_prob);
    r.read("occlusion_fraction", c.occlusion_fraction);
    r.read("seed", c.seed);
    r.finish();
    return c;
}

json encoder_config_to_json(const EncoderConfig& c) {
    return json{{"in_channels", c.in_channels},   {"in_height", c.in_height},
                {"in_width", c.in_width},         {"stem_widths", c.stem_widths},
                {"stem_stride", c.stem_stride},   {"trunk_widths", c.trunk_widths},
                {"kernel", c.kernel},             {"identity_count", c.identity_count},
                {"parts", c.parts}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    StrictReader r(j, "encoder");
    r.read("in_channels", c.in_channels);
    r.read("in_height", c.in_height);
    r.read("in_width", c.in_width);
    r.read("stem_widths", c.stem_widths);
    r.read("stem_stride", c.stem_stride);
    r.read("trunk_widths", c.trunk_widths);
    r.read("kernel", c.kernel);
    r.read("identity_count", c.identity_count);
    r.read("parts", c.parts);
    r.finish();
    return c;
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"encoder", encoder_config_to_json(c.encoder)},
                {"shared_attention", c.shared_attention},
                {"bn_momentum", c.bn_momentum},
                {"bn_eps", c.bn_eps}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    StrictReader r(j, "model");
    if (const json* e = r.sub("encoder")) c.encoder = encoder_config_from_json(*e);
    r.read("shared_attention", c.shared_attention);
    r.read("bn_momentum", c.bn_momentum);
    r.read("bn_eps", c.bn_eps);
    r.finish();
    return c;
}

json loss_weights_to_json(const losses::LossWeights& w) {
    return json{{"lambda", w.lambda},
                {"zeta", w.zeta},
                {"triplet_margin", w.triplet_margin},
                {"margin", w.margin},
                {"delta", w.delta},
                {"affinity_loss", w.affinity == losses::AffinityLoss::Margin ? "margin" : "l1"}};
}

losses::LossWeights loss_weights_from_json(const json& j) {
    losses::LossWeights w;
    StrictReader r(j, "loss");
    r.read("lambda", w.lambda);
    r.read("zeta", w.zeta);
    r.read("triplet_margin", w.triplet_margin);
    r.read("margin", w.margin);
    r.read("delta", w.delta);
    std::string kind = "margin";
    r.read("affinity_loss", kind);
    if (kind == "margin") w.affinity = losses::AffinityLoss::Margin;
    else if (kind == "l1") w.affinity = losses::AffinityLoss::L1;
    else throw ConfigError("config key 'loss.affinity_loss' must be 'margin' or 'l1', got '" + kind + "'");
    r.finish();
    return w;
}

json batch_spec_to_json(const BatchSpec& b) {
    return json{{"identities", b.identities}, {"per_identity", b.per_identity}};
}

BatchSpec batch_spec_from_json(const json& j) {
    BatchSpec b;
    StrictReader r(j, "batch");
    r.read("identities", b.identities);
    r.read("per_identity", b.per_identity);
    r.finish();
    return b;
}

json eval_config_to_json(const EvalConfig& e) {
    return json{{"repetitions", e.repetitions},
                {"gallery_per_id", e.gallery_per_id},
                {"seed", e.seed},
                {"embedding", e.embedding == MatchEmbedding::Fused ? "fused" : "global"},
                {"ks", e.ks}};
}

EvalConfig eval_config_from_json(const json& j) {
    EvalConfig e;
    StrictReader r(j, "eval");
    r.read("repetitions", e.repetitions);
    r.read("gallery_per_id", e.gallery_per_id);
    r.read("seed", e.seed);
    std::string emb = "fused";
    r.read("embedding", emb);
    if (emb == "fused") e.embedding = MatchEmbedding::Fused;
    else if (emb == "global") e.embedding = MatchEmbedding::Global;
    else throw ConfigError("config key 'eval.embedding' must be 'fused' or 'global', got '" + emb + "'");
    r.read("ks", e.ks);
    r.finish();
    return e;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"batch", batch_spec_to_json(c.batch)},
                {"loss", loss_weights_to_json(c.loss)},
                {"model", model_config_to_json(c.model)},
                {"modules", c.modules.label()},
                {"data", synth_config_to_json(c.data)},
                {"dataset_file", c.dataset_file},
                {"train_fraction", c.train_fraction},
                {"val_fraction", c.val_fraction},
                {"direction", c.direction == Direction::IrToRgb ? "ir_to_rgb" : "rgb_to_ir"},
                {"epochs", c.epochs},
                {"base_lr", c.base_lr},
                {"momentum", c.momentum},
                {"lr_milestones", c.lr_milestones},
                {"lr_factors", c.lr_factors},
                {"weight_decay", c.weight_decay},
                {"grad_clip_norm", c.grad_clip_norm},
                {"eval", eval_config_to_json(c.eval)},
                {"checkpoint_interval", c.checkpoint_interval},
                {"seed", c.seed},
                {"out_dir", c.out_dir}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    StrictReader r(j, "");
    if (const json* s = r.sub("batch")) c.batch = batch_spec_from_json(*s);
    if (const json* s = r.sub("loss")) c.loss = loss_weights_from_json(*s);
    if (const json* s = r.sub("model")) c.model = model_config_from_json(*s);
    if (const json* s = r.sub("data")) c.data = synth_config_from_json(*s);
    if (const json* s = r.sub("eval")) c.eval = eval_config_from_json(*s);
    std::string modules = c.modules.label();
    r.read("modules", modules);
    c.modules = ModuleSet::parse(modules);
    r.read("dataset_file", c.dataset_file);
    r.read("train_fraction", c.train_fraction);
    r.read("val_fraction", c.val_fraction);
    std::string direction = "ir_to_rgb";
    r.read("direction", direction);
    if (direction == "ir_to_rgb") c.direction = Direction::IrToRgb;
    else if (direction == "rgb_to_ir") c.direction = Direction::RgbToIr;
    else throw ConfigError("config key 'direction' must be 'ir_to_rgb' or 'rgb_to_ir', got '" + direction + "'");
    r.read("epochs", c.epochs);
    r.read("base_lr", c.base_lr);
    r.read("momentum", c.momentum);
    r.read("lr_milestones", c.lr_milestones);
    r.read("lr_factors", c.lr_factors);
    r.read("weight_decay", c.weight_decay);
    r.read("grad_clip_norm", c.grad_clip_norm);
    r.read("checkpoint_interval", c.checkpoint_interval);
    r.read("seed", c.seed);
    r.read("out_dir", c.out_dir);
    r.finish();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return train_config_from_json(j);
}

void save_train_config(const TrainConfig& config, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << train_config_to_json(config).dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace df2am
