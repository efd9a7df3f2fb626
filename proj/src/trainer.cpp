#include "df2am/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "df2am/config_io.hpp"
#include "df2am/dff.hpp"
#include "df2am/errors.hpp"
#include "df2am/rng.hpp"

namespace df2am {

// ---- ModuleSet --------------------------------------------------------------

std::string ModuleSet::label() const {
    std::string s;
    auto append = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += '+';
        s += name;
    };
    append(baseline, "B");
    append(dff, "DF2");
    append(affinity, "AM");
    return s.empty() ? "none" : s;
}

ModuleSet ModuleSet::parse(const std::string& label) {
    ModuleSet m{false, false, false};
    std::stringstream ss(label);
    std::string part;
    while (std::getline(ss, part, '+')) {
        if (part == "B") m.baseline = true;
        else if (part == "DF2") m.dff = true;
        else if (part == "AM") m.affinity = true;
        else throw ConfigError("unknown module '" + part + "' in '" + label + "' (expected B, DF2, AM)");
    }
    if (!m.baseline && !m.dff && !m.affinity) throw ConfigError("module set '" + label + "' enables nothing");
    return m;
}

// ---- config & schedule ------------------------------------------------------

void TrainConfig::validate() const {
    batch.validate();
    loss.validate();
    if (!dataset_file.empty()) {
        // data config comes from the file header
    } else {
        data.validate();
    }
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
    if (!(grad_clip_norm >= 0) || !std::isfinite(grad_clip_norm)) throw ConfigError("grad_clip_norm must be >= 0");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("train_fraction must be in (0, 1)");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must be in [0, 1)");
    if (!lr_milestones.empty() && lr_milestones.size() != lr_factors.size()) {
        throw ConfigError("lr_milestones and lr_factors must have the same length");
    }
    if (lr_milestones.empty() && lr_factors.size() != 2) {
        throw ConfigError("default milestones need exactly two lr_factors");
    }
    for (double f : lr_factors)
        if (!(f > 0) || !std::isfinite(f)) throw ConfigError("lr_factors must be positive");
    for (std::size_t i = 1; i < lr_milestones.size(); ++i) {
        if (lr_milestones[i] < lr_milestones[i - 1]) throw ConfigError("lr_milestones must be nondecreasing");
    }
    eval.validate();
}

std::vector<std::size_t> TrainConfig::milestones() const {
    if (!lr_milestones.empty()) return lr_milestones;
    const double e = static_cast<double>(epochs);
    return {static_cast<std::size_t>(std::llround(30.0 / 80.0 * e)),
            static_cast<std::size_t>(std::llround(50.0 / 80.0 * e))};
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
    if (epoch > config.epochs) {
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " beyond configured " +
                          std::to_string(config.epochs));
    }
    const auto ms = config.milestones();
    double factor = 1.0;
    for (std::size_t i = 0; i < ms.size(); ++i)
        if (epoch >= ms[i]) factor = config.lr_factors.at(i);
    // Dividing by the reciprocal keeps decade factors exact (0.1 * 0.1 != 0.01 in binary).
    return factor == 1.0 ? config.base_lr : config.base_lr / (1.0 / factor);
}

// ---- optimizer --------------------------------------------------------------

OptimizerState OptimizerState::zeros_like(const ad::ParamStore& params) {
    OptimizerState s;
    for (const auto& n : params.names()) s.velocity.emplace(n, Array(params.value(n).shape(), 0.0));
    return s;
}

void sgd_momentum_step(ad::ParamStore& params, OptimizerState& state, double lr, double momentum,
                       double weight_decay) {
    if (state.velocity.size() != params.size()) throw Error("optimizer state does not match parameters");
    for (const auto& n : params.names()) {
        auto it = state.velocity.find(n);
        if (it == state.velocity.end()) throw Error("optimizer state has no velocity for " + n);
        auto& entry = params.at(n);
        Array& v = it->second;
        if (v.shape() != entry.value.shape()) {
            throw Error("optimizer state shape drift for " + n + ": " + shape_str(v.shape()) + " vs " +
                        shape_str(entry.value.shape()));
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double g = entry.grad[i] + weight_decay * entry.value[i];
            v[i] = momentum * v[i] + g;
            entry.value[i] -= lr * v[i];
        }
    }
    params.zero_grad();
}

double clip_grad_norm(ad::ParamStore& params, double max_norm) {
    if (!(max_norm > 0)) throw ConfigError("clip_grad_norm: max_norm must be positive");
    double sq = 0.0;
    for (const auto& n : params.names())
        for (double g : params.grad(n).values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (const auto& n : params.names())
            for (double& g : params.at(n).grad.values()) g *= scale;
    }
    return norm;
}

// ---- run log ----------------------------------------------------------------

void RunLog::write_steps_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << kStepHeader << '\n';
    for (const auto& r : steps) {
        os << r.step << ',' << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.loss.baseline_rgb)
           << ',' << format_double(r.loss.baseline_ir) << ',' << format_double(r.loss.dff) << ','
           << format_double(r.loss.affinity) << ',' << format_double(r.loss.total) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

void RunLog::write_epochs_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << kEpochHeader << '\n';
    for (const auto& r : epochs) {
        os << r.epoch << ',' << format_double(r.mean_loss) << ',' << format_double(r.val_rank1) << ','
           << format_double(r.val_map) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

// ---- experiment -------------------------------------------------------------

namespace {

enum SeedStream : std::uint64_t {
    kSplitSeed = 10,
    kValidationSeed = 11,
    kSamplerSeed = 20,
    kInitSeed = 30,
    kValEvalSeed = 40,
};

}  // namespace

Experiment prepare_experiment(const TrainConfig& config) {
    config.validate();
    Experiment e;
    e.data = config.dataset_file.empty() ? generate(config.data) : load_dataset(config.dataset_file);
    e.split = split(e.data, config.train_fraction, Rng::derive(config.seed, kSplitSeed), config.direction);
    if (config.val_fraction > 0) {
        const std::size_t n = e.split.train.identities.size();
        const std::size_t val =
            std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n))));
        if (n < val + 2) {
            throw ConfigError("not enough training identities (" + std::to_string(n) + ") to hold out " +
                              std::to_string(val) + " for validation");
        }
        auto [train, validation] = split_subset(e.split.train, static_cast<double>(n - val) / static_cast<double>(n),
                                                Rng::derive(config.seed, kValidationSeed));
        e.train = std::move(train);
        e.validation = std::move(validation);
        e.validation_set = make_retrieval_set(e.data, e.validation, config.direction);
    } else {
        e.train = e.split.train;
    }
    if (e.train.identities.size() < config.batch.identities) {
        throw ConfigError("training split has " + std::to_string(e.train.identities.size()) +
                          " identities, fewer than N*=" + std::to_string(config.batch.identities));
    }
    return e;
}

namespace {

template <typename Fn>
ad::Var named_term(const char* term, Fn&& fn) {
    try {
        return fn();
    } catch (const NumericalError& err) {
        throw TrainingAborted(std::string("training aborted in ") + term + ": " + err.what());
    }
}

MatchEmbedding match_embedding(const TrainConfig& config) {
    return config.modules.dff ? config.eval.embedding : MatchEmbedding::Global;
}

}  // namespace

ad::Var training_loss(ad::Tape& tape, Model& model, const Dataset& data, const Batch& batch,
                      const TrainConfig& config, bool update_running, losses::LossBreakdown* breakdown) {
    const auto rgb_labels = batch.rgb_labels();
    const auto ir_labels = batch.ir_labels();
    Model::StreamOutputs rgb, ir;
    named_term("encoder", [&] {
        rgb = model.forward(tape, data.stack(batch.rgb_samples()), Modality::RGB, Phase::Train, update_running);
        ir = model.forward(tape, data.stack(batch.ir_samples()), Modality::IR, Phase::Train, update_running);
        return rgb.global;
    });

    losses::LossTerms terms;
    const auto& w = config.loss;
    if (config.modules.baseline) {
        const Classifier& cls = model.base_classifier();
        terms.baseline_rgb = named_term("L_B^RGB", [&] {
            return losses::baseline_loss(cls.probabilities(tape, model.params(), rgb.global), rgb.global, rgb_labels,
                                         w.triplet_margin);
        });
        terms.baseline_ir = named_term("L_B^IR", [&] {
            return losses::baseline_loss(cls.probabilities(tape, model.params(), ir.global), ir.global, ir_labels,
                                         w.triplet_margin);
        });
    }
    if (config.modules.dff) {
        const Classifier& cls = model.dff_classifier();
        terms.dff = named_term("L_D", [&] {
            return dff::dff_loss(cls.probabilities(tape, model.params(), rgb.fused),
                                 cls.probabilities(tape, model.params(), ir.fused), rgb_labels, ir_labels);
        });
    }
    if (config.modules.affinity) {
        terms.affinity = named_term("L_A", [&] {
            ad::Var d = losses::affinity_matrix(rgb.global, ir.global);
            const Array g = losses::ground_truth_affinity(batch.labels);
            return w.affinity == losses::AffinityLoss::Margin ? losses::margin_affinity_loss(d, g, w.margin)
                                                              : losses::l1_affinity_loss(d, g, w.delta);
        });
    }
    return named_term("L_Final", [&] { return losses::final_loss(tape, terms, w, breakdown); });
}

losses::LossBreakdown training_step_gradients(Model& model, const Dataset& data, const Batch& batch,
                                              const TrainConfig& config, bool update_running) {
    ad::Tape tape;
    losses::LossBreakdown breakdown;
    tape.backward(training_loss(tape, model, data, batch, config, update_running, &breakdown));
    return breakdown;
}

namespace {

void write_outputs(const TrainConfig& config, const Model& model, const RunLog& log) {
    namespace fs = std::filesystem;
    if (config.out_dir.empty()) return;
    fs::create_directories(config.out_dir);
    const fs::path dir(config.out_dir);
    model.save((dir / "checkpoint.json").string());
    log.write_steps_csv((dir / "runlog.csv").string());
    log.write_epochs_csv((dir / "epochs.csv").string());
    save_train_config(config, (dir / "config.json").string());
}

}  // namespace

TrainResult train(const TrainConfig& config, const Experiment& experiment) {
    config.validate();
    ModelConfig mc = config.model;
    mc.encoder.identity_count = experiment.train.identities.size();
    mc.encoder.in_channels = experiment.data.config.channels;
    mc.encoder.in_height = experiment.data.config.height;
    mc.encoder.in_width = experiment.data.config.width;

    TrainResult result{Model(mc, Rng::derive(config.seed, kInitSeed)), {}};
    Model& model = result.model;
    OptimizerState state = OptimizerState::zeros_like(model.params());
    EpochSampler sampler(experiment.train.index, config.batch, Rng::derive(config.seed, kSamplerSeed));

    namespace fs = std::filesystem;
    if (!config.out_dir.empty()) fs::create_directories(config.out_dir);

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        double loss_sum = 0.0;
        const auto batches = sampler.next_epoch();
        for (const auto& batch : batches) {
            model.params().zero_grad();
            losses::LossBreakdown b;
            try {
                b = training_step_gradients(model, experiment.data, batch, config, true);
            } catch (const TrainingAborted&) {
                if (!config.out_dir.empty()) model.save((fs::path(config.out_dir) / "checkpoint_last_good.json").string());
                throw;
            }
            if (config.grad_clip_norm > 0) clip_grad_norm(model.params(), config.grad_clip_norm);
            sgd_momentum_step(model.params(), state, lr, config.momentum, config.weight_decay);
            result.log.steps.push_back(StepRow{step++, epoch, lr, b});
            loss_sum += b.total;
        }
        EpochRow row;
        row.epoch = epoch;
        row.mean_loss = loss_sum / static_cast<double>(batches.size());
        if (!experiment.validation.identities.empty()) {
            EvalConfig ec = config.eval;
            ec.seed = Rng::derive(config.seed, kValEvalSeed + epoch);
            ec.repetitions = 1;
            ec.embedding = match_embedding(config);
            auto rep = evaluate(model, experiment.data, experiment.validation_set, ec);
            row.val_rank1 = rep.cmc.front();
            row.val_map = rep.map;
        }
        result.log.epochs.push_back(row);
        if (config.checkpoint_interval > 0 && (epoch + 1) % config.checkpoint_interval == 0 && !config.out_dir.empty()) {
            model.save((fs::path(config.out_dir) / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".json")).string());
        }
    }
    write_outputs(config, model, result.log);
    return result;
}

TrainResult train(const TrainConfig& config) { return train(config, prepare_experiment(config)); }

MetricsReport evaluate_model(Model& model, const TrainConfig& config, const Experiment& experiment) {
    EvalConfig ec = config.eval;
    ec.embedding = match_embedding(config);
    MetricsReport report = evaluate(model, experiment.data, experiment.split.retrieval, ec);
    report.config = train_config_to_json(config).dump();
    return report;
}

// ---- ablation ---------------------------------------------------------------

namespace {

double parse_real(const std::string& s) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("not a number: '" + s + "'");
    }
}

std::size_t parse_count(const std::string& s) {
    const double v = parse_real(s);
    if (v < 1 || v != std::floor(v)) throw ConfigError("not a positive integer: '" + s + "'");
    return static_cast<std::size_t>(v);
}

AblationRow run_one(const TrainConfig& cfg, const std::string& axis, const std::string& value) {
    Experiment e = prepare_experiment(cfg);
    TrainResult r = train(cfg, e);
    MetricsReport rep = evaluate_model(r.model, cfg, e);
    return AblationRow{axis, value, rep.map, rep.cmc.front()};
}

}  // namespace

std::vector<AblationRow> ablate(const TrainConfig& base, const std::string& axis, const std::vector<std::string>& values) {
    if (values.empty()) throw ConfigError("ablate: no values given");
    TrainConfig b = base;
    b.out_dir.clear();
    std::vector<AblationRow> rows;
    for (const auto& v : values) {
        TrainConfig c = b;
        if (axis == "P") {
            c.model.encoder.parts = parse_count(v);
        } else if (axis == "lambda") {
            c.loss.lambda = parse_real(v);
        } else if (axis == "zeta") {
            c.loss.zeta = parse_real(v);
        } else if (axis == "margin_vs_delta") {
            const double x = parse_real(v);
            TrainConfig margin = c, l1 = c;
            margin.loss.affinity = losses::AffinityLoss::Margin;
            margin.loss.margin = x;
            l1.loss.affinity = losses::AffinityLoss::L1;
            l1.loss.delta = x;
            rows.push_back(run_one(margin, axis, "L_A:" + v));
            rows.push_back(run_one(l1, axis, "L_1:" + v));
            continue;
        } else if (axis == "NM") {
            const auto x = v.find('x');
            if (x == std::string::npos) throw ConfigError("ablate NM values look like 8x4, got '" + v + "'");
            c.batch.identities = parse_count(v.substr(0, x));
            c.batch.per_identity = parse_count(v.substr(x + 1));
        } else if (axis == "modules") {
            c.modules = ModuleSet::parse(v);
        } else {
            throw ConfigError("unknown ablation axis '" + axis + "' (P, lambda, zeta, margin_vs_delta, NM, modules)");
        }
        rows.push_back(run_one(c, axis, v));
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "axis,value,mAP,rank1\n";
    for (const auto& r : rows) os << r.axis << ',' << r.value << ',' << format_double(r.map) << ',' << format_double(r.rank1) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace df2am
