#include "df2am/gradcheck.hpp"

#include "df2am/backbone.hpp"
#include "df2am/dff.hpp"
#include "df2am/losses.hpp"
#include "df2am/rng.hpp"
#include "df2am/trainer.hpp"

namespace df2am {

namespace {

Array random_array(Shape shape, Rng& rng, double scale = 1.0) {
    Array a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = scale * rng.normal();
    return a;
}

// ids identities, `per` samples each, identity-major.
std::vector<std::size_t> grouped_labels(std::size_t ids, std::size_t per) {
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < ids; ++i)
        for (std::size_t j = 0; j < per; ++j) labels.push_back(i);
    return labels;
}

ad::GradCheckResult check(const ad::LossFn& fn, ad::ParamStore& params, const GradSuiteOptions& o,
                          std::uint64_t stream) {
    return ad::finite_diff_check(fn, params, o.step, o.coordinates, Rng::derive(o.seed, stream), o.nudge);
}

ad::GradCheckResult check_id(const GradSuiteOptions& o) {
    Rng rng(Rng::derive(o.seed, 101));
    ad::ParamStore params;
    params.add("logits", random_array({12, 10}, rng));
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 12; ++i) labels.push_back(rng.below(10));
    return check([&](ad::Tape& t, ad::ParamStore& p) {
        return losses::id_loss(ad::softmax(t.param(p, "logits")), labels);
    }, params, o, 1);
}

ad::GradCheckResult check_triplet(const GradSuiteOptions& o) {
    Rng rng(Rng::derive(o.seed, 102));
    ad::ParamStore params;
    params.add("embeddings", random_array({12, 10}, rng));
    const auto labels = grouped_labels(4, 3);
    return check([&](ad::Tape& t, ad::ParamStore& p) {
        return losses::batch_hard_triplet(t.param(p, "embeddings"), labels, 0.3);
    }, params, o, 2);
}

ad::GradCheckResult check_dff(const GradSuiteOptions& o) {
    Rng rng(Rng::derive(o.seed, 103));
    const std::size_t b = 4, c = 8, h = 4, w = 2, parts = 4, classes = 3;
    ad::ParamStore params;
    params.add("maps.rgb", random_array({b, c, h, w}, rng));
    params.add("maps.ir", random_array({b, c, h, w}, rng));
    params.add("attn.rgb", random_array({parts}, rng));
    params.add("attn.ir", random_array({parts}, rng));
    BatchNorm bn_rgb("bn.rgb", c), bn_ir("bn.ir", c);
    bn_rgb.init_params(params);
    bn_ir.init_params(params);
    for (const char* n : {"bn.rgb.gamma", "bn.ir.gamma"})
        for (std::size_t i = 0; i < c; ++i) params.at(n).value[i] += 0.2 * rng.normal();
    Classifier cls{"cls", c, classes};
    cls.init_params(params, Rng::derive(o.seed, 104));
    const std::vector<std::size_t> labels{0, 1, 2, 1};
    return check([&](ad::Tape& t, ad::ParamStore& p) {
        auto fused = [&](const char* maps, const char* attn, BatchNorm& bn) {
            ad::Var f = t.param(p, maps);
            ad::Var local = dff::local_attention_fuse(dff::pap(f, parts), t.param(p, attn));
            return dff::dual_fuse(t, p, bn, gap(f), local, Phase::Train, false);
        };
        ad::Var rgb = fused("maps.rgb", "attn.rgb", bn_rgb);
        ad::Var ir = fused("maps.ir", "attn.ir", bn_ir);
        return dff::dff_loss(cls.probabilities(t, p, rgb), cls.probabilities(t, p, ir), labels, labels);
    }, params, o, 3);
}

ad::GradCheckResult check_affinity(const GradSuiteOptions& o, losses::AffinityLoss kind) {
    Rng rng(Rng::derive(o.seed, kind == losses::AffinityLoss::L1 ? 105 : 106));
    ad::ParamStore params;
    params.add("rgb", random_array({6, 10}, rng));
    params.add("ir", random_array({6, 10}, rng));
    auto labels = grouped_labels(3, 2);
    const auto rgb_labels = labels;
    labels.insert(labels.end(), rgb_labels.begin(), rgb_labels.end());
    const Array truth = losses::ground_truth_affinity(labels);
    return check([&](ad::Tape& t, ad::ParamStore& p) {
        ad::Var d = losses::affinity_matrix(t.param(p, "rgb"), t.param(p, "ir"));
        return kind == losses::AffinityLoss::L1 ? losses::l1_affinity_loss(d, truth, 2.0)
                                                : losses::margin_affinity_loss(d, truth, 0.6);
    }, params, o, kind == losses::AffinityLoss::L1 ? 4 : 5);
}

ad::GradCheckResult check_final(const GradSuiteOptions& o) {
    TrainConfig cfg;
    cfg.data.identity_count = 6;
    cfg.data.samples_per_identity = 4;
    cfg.data.seed = Rng::derive(o.seed, 107);
    cfg.batch = BatchSpec{3, 2};
    cfg.model.encoder.stem_widths = {4};
    cfg.model.encoder.trunk_widths = {6};
    cfg.model.encoder.identity_count = cfg.data.identity_count;
    const Dataset data = generate(cfg.data);
    Model model(cfg.model, Rng::derive(o.seed, 108));
    Rng rng(Rng::derive(o.seed, 109));
    const Batch batch = sample_batch(data.index, cfg.batch, rng);
    return check([&](ad::Tape& t, ad::ParamStore&) {
        return training_loss(t, model, data, batch, cfg, false);
    }, model.params(), o, 6);
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(const GradSuiteOptions& options) {
    return {
        {"L_ID", check_id(options)},
        {"L_BH", check_triplet(options)},
        {"L_D", check_dff(options)},
        {"L_1", check_affinity(options, losses::AffinityLoss::L1)},
        {"L_A", check_affinity(options, losses::AffinityLoss::Margin)},
        {"L_Final", check_final(options)},
    };
}

}  // namespace df2am
