#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "df2am/config_io.hpp"
#include "df2am/errors.hpp"
#include "df2am/gradcheck.hpp"
#include "df2am/trainer.hpp"

namespace fs = std::filesystem;
using namespace df2am;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kNumerical = 2, kIo = 3 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lambda;
    std::optional<double> zeta;
    std::optional<double> margin;
    std::optional<std::size_t> parts;
    std::string out;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON config file (defaults apply when omitted)");
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--lambda", o.lambda, "weight of the fusion loss");
    cmd->add_option("--zeta", o.zeta, "weight of the affinity loss");
    cmd->add_option("--margin", o.margin, "affinity hinge margin m");
    cmd->add_option("--parts", o.parts, "number of horizontal parts P");
}

TrainConfig resolve(const Overrides& o) {
    TrainConfig c = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.epochs) c.epochs = *o.epochs;
    if (o.lambda) c.loss.lambda = *o.lambda;
    if (o.zeta) c.loss.zeta = *o.zeta;
    if (o.margin) c.loss.margin = *o.margin;
    if (o.parts) c.model.encoder.parts = *o.parts;
    c.validate();
    return c;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void print_report(const MetricsReport& r) {
    for (std::size_t i = 0; i < r.ks.size(); ++i) std::printf("rank-%zu %.4f\n", r.ks[i], r.cmc[i]);
    std::printf("mAP %.4f\n", r.map);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DF2AM cross-modality re-identification: data, training, evaluation"};
    app.require_subcommand(1);

    Overrides gen_o, train_o, eval_o, abl_o;
    std::string dataset_in, checkpoint, axis, values, metrics_in;
    std::uint64_t gc_seed = 1;
    std::size_t gc_coords = 100;

    auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset file");
    add_common(gen, gen_o);
    gen->add_option("--out", gen_o.out, "dataset file")->required();

    auto* tr = app.add_subcommand("train", "train a model and write checkpoint and run logs");
    add_common(tr, train_o);
    tr->add_option("--dataset", dataset_in, "dataset file from generate-data");
    tr->add_option("--out", train_o.out, "output directory");

    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    add_common(ev, eval_o);
    ev->add_option("--dataset", dataset_in, "dataset file from generate-data");
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    ev->add_option("--out", eval_o.out, "metrics report (JSON)")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss");
    gc->add_option("--seed", gc_seed, "instance seed");
    gc->add_option("--coords", gc_coords, "coordinates per loss");

    auto* ab = app.add_subcommand("ablate", "train one model per value and tabulate test metrics");
    add_common(ab, abl_o);
    ab->add_option("--dataset", dataset_in, "dataset file from generate-data");
    ab->add_option("--axis", axis, "P, lambda, zeta, margin_vs_delta, NM or modules")->required();
    ab->add_option("--values", values, "comma-separated values, e.g. 3,4,5 or B,B+DF2")->required();
    ab->add_option("--out", abl_o.out, "ablation CSV")->required();

    auto* ex = app.add_subcommand("export-metrics", "convert a metrics report to CSV");
    std::string export_out;
    ex->add_option("--metrics", metrics_in, "metrics report (JSON)")->required();
    ex->add_option("--out", export_out, "CSV file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (gen->parsed()) {
            TrainConfig c = resolve(gen_o);
            if (gen_o.seed) c.data.seed = *gen_o.seed;
            const Dataset d = generate(c.data);
            save_dataset(d, gen_o.out);
            std::printf("wrote %zu samples (%zu identities) to %s\n", d.samples.size(), c.data.identity_count,
                        gen_o.out.c_str());
        } else if (tr->parsed()) {
            TrainConfig c = resolve(train_o);
            if (!dataset_in.empty()) c.dataset_file = dataset_in;
            if (!train_o.out.empty()) c.out_dir = train_o.out;
            const Experiment e = prepare_experiment(c);
            TrainResult r = train(c, e);
            const auto& last = r.log.steps.back();
            std::printf("trained %zu steps over %zu epochs; final L_Final %.6f\n", r.log.steps.size(), c.epochs,
                        last.loss.total);
            if (!r.log.epochs.empty() && !e.validation.identities.empty()) {
                std::printf("validation rank-1 %.4f mAP %.4f\n", r.log.epochs.back().val_rank1,
                            r.log.epochs.back().val_map);
            }
            if (!c.out_dir.empty()) std::printf("outputs in %s\n", c.out_dir.c_str());
        } else if (ev->parsed()) {
            TrainConfig c = resolve(eval_o);
            if (!dataset_in.empty()) c.dataset_file = dataset_in;
            const Experiment e = prepare_experiment(c);
            Model m = Model::load(checkpoint);
            MetricsReport r = evaluate_model(m, c, e);
            write_report(r, eval_o.out);
            print_report(r);
        } else if (gc->parsed()) {
            GradSuiteOptions o;
            o.seed = gc_seed;
            o.coordinates = gc_coords;
            bool ok = true;
            for (const auto& entry : gradient_suite(o)) {
                const bool pass = entry.result.max_error <= 1e-4;
                ok = ok && pass;
                std::printf("%-8s %s max_rel_err=%.3e checked=%zu kink_skips=%zu nudges=%zu\n", entry.loss.c_str(),
                            pass ? "ok  " : "FAIL", entry.result.max_error, entry.result.checked,
                            entry.result.kink_crossings, entry.result.nudges);
            }
            return ok ? kOk : kNumerical;
        } else if (ab->parsed()) {
            TrainConfig c = resolve(abl_o);
            if (!dataset_in.empty()) c.dataset_file = dataset_in;
            const auto rows = ablate(c, axis, split_list(values));
            write_ablation_csv(rows, abl_o.out);
            for (const auto& r : rows) std::printf("%s=%s mAP %.4f rank-1 %.4f\n", r.axis.c_str(), r.value.c_str(), r.map, r.rank1);
        } else if (ex->parsed()) {
            write_report_csv(read_report(metrics_in), export_out);
            std::printf("wrote %s\n", export_out.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return kNumerical;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfig;
    }
    return kOk;
}
