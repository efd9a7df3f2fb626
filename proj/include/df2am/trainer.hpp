#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "df2am/errors.hpp"
#include "df2am/evaluation.hpp"
#include "df2am/losses.hpp"
#include "df2am/model.hpp"
#include "df2am/sampling.hpp"
#include "df2am/synthdata.hpp"

namespace df2am {

// Which parts of the joint objective are active. A disabled term is neither computed
// nor applied and is logged as 0.
struct ModuleSet {
    bool baseline = true;
    bool dff = true;
    bool affinity = true;

    std::string label() const;  // e.g. "B+DF2+AM"
    static ModuleSet parse(const std::string& label);
    friend bool operator==(const ModuleSet&, const ModuleSet&) = default;
};

struct TrainConfig {
    BatchSpec batch;
    losses::LossWeights loss;
    ModelConfig model;
    ModuleSet modules;
    SynthConfig data;
    std::string dataset_file;  // when set, loaded instead of generating from `data`
    double train_fraction = 0.6;
    double val_fraction = 0.1;  // of training identities, held out for per-epoch metrics
    Direction direction = Direction::IrToRgb;
    std::size_t epochs = 40;
    double base_lr = 0.1;
    double momentum = 0.9;
    // Empty milestones mean round(30/80 E) and round(50/80 E) for E epochs.
    std::vector<std::size_t> lr_milestones;
    std::vector<double> lr_factors{0.1, 0.01};  // relative to base_lr, one per milestone
    double weight_decay = 0.0;                  // off by default
    double grad_clip_norm = 1.0;                // global gradient L2 norm cap; 0 = off
    EvalConfig eval;
    std::size_t checkpoint_interval = 0;  // epochs between intermediate checkpoints; 0 = end only
    std::uint64_t seed = 1;
    std::string out_dir;

    // Throws ConfigError on any violated constraint.
    void validate() const;
    std::vector<std::size_t> milestones() const;
};

// Learning rate for a 0-based epoch: base_lr times the factor of the last milestone reached.
double lr_at(std::size_t epoch, const TrainConfig& config);

struct OptimizerState {
    std::map<std::string, Array> velocity;

    // Zero velocities shaped like every parameter.
    static OptimizerState zeros_like(const ad::ParamStore& params);
};

// Classical momentum: v <- momentum * v + grad; param <- param - lr * v; then gradients
// are reset. Throws Error when state and params disagree in names or shapes.
void sgd_momentum_step(ad::ParamStore& params, OptimizerState& state, double lr, double momentum,
                       double weight_decay = 0.0);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_grad_norm(ad::ParamStore& params, double max_norm);

struct StepRow {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    losses::LossBreakdown loss;
};

struct EpochRow {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_rank1 = 0.0;
    double val_map = 0.0;
};

struct RunLog {
    std::vector<StepRow> steps;
    std::vector<EpochRow> epochs;

    static constexpr const char* kStepHeader = "step,epoch,lr,loss_b_rgb,loss_b_ir,loss_d,loss_a,loss_final";
    static constexpr const char* kEpochHeader = "epoch,mean_loss_final,val_rank1,val_mAP";
    void write_steps_csv(const std::string& path) const;
    void write_epochs_csv(const std::string& path) const;
};

// Data handed to a training run: the dataset and its identity-disjoint partitions.
struct Experiment {
    Dataset data;
    Split split;
    IdentitySubset train;       // training identities minus validation
    IdentitySubset validation;  // held-out identities for per-epoch metrics
    RetrievalSet validation_set;
};

Experiment prepare_experiment(const TrainConfig& config);

// Joint objective for one batch, recorded on `tape`. Fills `breakdown` when given.
ad::Var training_loss(ad::Tape& tape, Model& model, const Dataset& data, const Batch& batch,
                      const TrainConfig& config, bool update_running, losses::LossBreakdown* breakdown = nullptr);

// One forward/backward pass over a batch. Gradients are added into the model's params.
// Running BN statistics are updated only when update_running is set.
losses::LossBreakdown training_step_gradients(Model& model, const Dataset& data, const Batch& batch,
                                              const TrainConfig& config, bool update_running);

struct TrainResult {
    Model model;
    RunLog log;
};

// Raised when a loss term goes non-finite; the caller keeps the last good checkpoint.
class TrainingAborted : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// Full training loop. When out_dir is set, writes checkpoint.json, runlog.csv, epochs.csv
// (and checkpoint_epoch<E>.json at the configured interval).
TrainResult train(const TrainConfig& config, const Experiment& experiment);
TrainResult train(const TrainConfig& config);

// Test-split evaluation of a trained model with the experiment's retrieval set.
MetricsReport evaluate_model(Model& model, const TrainConfig& config, const Experiment& experiment);

struct AblationRow {
    std::string axis;
    std::string value;
    double map = 0.0;
    double rank1 = 0.0;
};

// Axes: "P", "lambda", "zeta", "margin_vs_delta", "NM" (values "N,M"... as "NxM"), "modules".
// margin_vs_delta trains one L_A model (margin = v) and one L_1 model (delta = v) per value.
std::vector<AblationRow> ablate(const TrainConfig& base, const std::string& axis,
                                const std::vector<std::string>& values);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace df2am
