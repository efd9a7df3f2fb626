#include "df2am/dff.hpp"

#include "df2am/errors.hpp"
#include "df2am/losses.hpp"

namespace df2am::dff {

std::string attention_name(Modality m, bool shared) {
    return shared ? std::string("attn.shared") : std::string("attn.") + modality_name(m);
}

void init_attention(ad::ParamStore& params, std::size_t parts, bool shared) {
    if (parts == 0) throw ConfigError("attention: P must be positive");
    if (shared) {
        params.add(attention_name(Modality::RGB, true), Array({parts}, 0.0));
        return;
    }
    params.add(attention_name(Modality::RGB, false), Array({parts}, 0.0));
    params.add(attention_name(Modality::IR, false), Array({parts}, 0.0));
}

ad::Var pap(ad::Var feature_maps, std::size_t parts) {
    const Shape& s = feature_maps.shape();
    if (s.size() == 4 && (parts == 0 || s[2] % parts != 0)) {
        throw ConfigError("pap: P=" + std::to_string(parts) + " does not divide H=" + std::to_string(s[2]));
    }
    return ad::band_means(feature_maps, parts);
}

ad::Var attention_weights(ad::Var omega) { return ad::softmax(omega); }

ad::Var local_attention_fuse(ad::Var parts, ad::Var omega) {
    const Shape& ps = parts.shape();
    if (omega.shape().size() != 1 || ps.size() != 3 || omega.shape()[0] != ps[1]) {
        throw ShapeError("local_attention_fuse: shape mismatch parts " + shape_str(ps) + " vs attention " +
                         shape_str(omega.shape()));
    }
    return ad::weighted_parts(parts, attention_weights(omega));
}

ad::Var dual_fuse(ad::Tape& tape, ad::ParamStore& params, BatchNorm& bn, ad::Var global, ad::Var f_star,
                  Phase phase, bool update_running) {
    require_same_shape(global.shape(), f_star.shape(), "dual_fuse");
    return ad::add(bn.forward(tape, params, global, phase, update_running), f_star);
}

ad::Var dff_loss(ad::Var rgb_probs, ad::Var ir_probs, const std::vector<std::size_t>& rgb_labels,
                 const std::vector<std::size_t>& ir_labels, std::size_t* clamp_count) {
    return ad::add(losses::id_loss(rgb_probs, rgb_labels, clamp_count),
                   losses::id_loss(ir_probs, ir_labels, clamp_count));
}

}  // namespace df2am::dff
