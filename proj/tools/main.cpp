#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "sspain/attention.hpp"
#include "sspain/config.hpp"
#include "sspain/data.hpp"
#include "sspain/diagnostics.hpp"
#include "sspain/error.hpp"
#include "sspain/evaluation.hpp"
#include "sspain/network.hpp"
#include "sspain/training.hpp"

namespace fs = std::filesystem;
using namespace sspain;

namespace {

Dataset load_input(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return load_dataset(cfg.data_dir, cfg.rescale_table);
    return generate_synthetic(cfg.synth);
}

// jsonl sink: a marker line whenever the stage changes, then one line per step.
struct JsonlLogger {
    std::ofstream out;
    std::string last_stage;

    explicit JsonlLogger(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw IoError("cannot write training log: " + path);
    }
    void operator()(const std::string& stage, const LossReport& rep) {
        if (stage != last_stage) {
            nlohmann::ordered_json marker;
            marker["stage"] = stage;
            out << marker.dump() << "\n";
            last_stage = stage;
        }
        out << to_json_line(rep) << "\n";
    }
};

int cmd_synth(const RunConfig& cfg) {
    write_config_echo(cfg.out_dir, cfg);
    const std::string root = cfg.data_dir.empty() ? cfg.out_dir + "/data" : cfg.data_dir;
    Dataset ds = generate_synthetic(cfg.synth);
    save_dataset(ds, root);
    std::printf("wrote %zu frames / %zu subjects to %s\n", ds.frames.size(), ds.subjects.size(),
                root.c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    write_config_echo(cfg.out_dir, cfg);
    Dataset ds = load_input(cfg);
    auto logger = std::make_shared<JsonlLogger>(cfg.out_dir + "/train.log.jsonl");
    Model m = train(ds, cfg.model, cfg.train, cfg.variant,
                    [logger](const std::string& stage, const LossReport& rep) {
                        (*logger)(stage, rep);
                    });
    const std::string ckpt = cfg.out_dir + "/model.ckpt";
    save_model(ckpt, m);
    std::printf("trained %s on %zu frames; checkpoint at %s\n", cfg.variant.c_str(),
                ds.frames.size(), ckpt.c_str());
    return 0;
}

// With a checkpoint in --out, scores it over the dataset's sequences.
// Without one, runs the full leave-one-subject-out protocol (training per
// fold) and reports held-out metrics.
int cmd_eval(const RunConfig& cfg) {
    write_config_echo(cfg.out_dir, cfg);
    Dataset ds = load_input(cfg);
    const std::string ckpt = cfg.out_dir + "/model.ckpt";
    MetricsReport report;
    if (fs::exists(ckpt)) {
        Model m = load_model(ckpt);
        report = evaluate_model(m, ds, cfg.train, cfg.variant);
    } else {
        auto logger = std::make_shared<JsonlLogger>(cfg.out_dir + "/train.log.jsonl");
        report = cross_validate(ds, cfg.model, cfg.train, cfg.variant,
                                [logger](const std::string& stage, const LossReport& rep) {
                                    (*logger)(stage, rep);
                                });
    }
    report.rescale_table = cfg.rescale_table;
    write_metrics(cfg.out_dir, report);
    std::printf("MAE %.4f  MSE %.4f  PCC %.4f  wMAE %.4f  wMSE %.4f\n", report.mae, report.mse,
                report.pcc, report.wmae, report.wmse);
    return 0;
}

// Frame attention for export: every AU with nonzero value contributes, weight
// proportional to its value (uniform when the frame is neutral).
Tensor frame_attention(const Frame& f, int image_h, int image_w, int half) {
    AUPartition part;
    double total = 0.0;
    for (std::size_t k = 0; k < f.au_values.size(); ++k) total += f.au_values[k];
    for (std::size_t k = 0; k < f.au_values.size(); ++k) {
        const double w = total > 0.0 ? f.au_values[k] / total : 1.0 / f.au_values.size();
        if (w > 0.0) {
            part.set_A.push_back(static_cast<int>(k));
            part.weights[static_cast<int>(k)] = w;
        }
    }
    std::vector<PatchBox> boxes;
    for (std::size_t k = 0; k < f.landmarks.size(); ++k) {
        PatchBox b = patch_box(f.landmarks[k].first, f.landmarks[k].second, image_h, image_w, half);
        b.au = static_cast<int>(k);
        boxes.push_back(b);
    }
    return render_attention_map(part, boxes, image_h, image_w);
}

int cmd_saliency(const RunConfig& cfg, const std::string& subject_arg) {
    write_config_echo(cfg.out_dir, cfg);
    Dataset ds = load_input(cfg);
    Model m = load_model(cfg.out_dir + "/model.ckpt");

    std::string subject = subject_arg;
    if (subject.empty()) {
        if (ds.subjects.empty()) throw RangeError("dataset has no subjects");
        subject = ds.subjects.front();
    }
    if (std::find(ds.subjects.begin(), ds.subjects.end(), subject) == ds.subjects.end())
        throw RangeError("unknown subject: " + subject);

    fs::create_directories(cfg.out_dir + "/saliency");
    fs::create_directories(cfg.out_dir + "/attention");
    int count = 0;
    for (const Frame& f : ds.frames) {
        if (f.subject_id != subject) continue;
        EncodeTrace tr = encode(m, f.image);
        DecodeTrace dec = decode_saliency(m, tr.feature);
        save_pgm(cfg.out_dir + "/saliency/" + f.frame_id + ".pgm", dec.norm.normalized);
        Tensor att = frame_attention(f, m.cfg.image_h, m.cfg.image_w, cfg.train.patch_half);
        save_pgm(cfg.out_dir + "/attention/" + f.frame_id + ".pgm",
                 minmax_normalize(att).normalized);
        ++count;
    }
    std::printf("wrote %d saliency/attention pairs for subject %s under %s\n", count,
                subject.c_str(), cfg.out_dir.c_str());
    return 0;
}

int cmd_suite(const RunConfig& cfg, bool gradients) {
    write_config_echo(cfg.out_dir, cfg);
    std::vector<CheckResult> results = gradients ? gradient_suite() : oracle_suite();
    std::fputs(format_results(results).c_str(), stdout);
    return all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"saliency-supervised pain intensity estimation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, variant, subject;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--data", data_dir, "dataset directory (overrides config)");
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--variant", variant, "training variant (overrides config)")
            ->check(CLI::IsMember({"regression_only", "method1", "method2"}));
        return sub;
    };
    CLI::App* c_synth = add_common(app.add_subcommand("synth", "generate a synthetic dataset"));
    CLI::App* c_train = add_common(app.add_subcommand("train", "train one model on a dataset"));
    CLI::App* c_eval = add_common(
        app.add_subcommand("eval", "score a checkpoint, or run leave-one-subject-out"));
    CLI::App* c_sal =
        add_common(app.add_subcommand("saliency", "export saliency and attention maps"));
    c_sal->add_option("--subject", subject, "subject whose frames to export");
    CLI::App* c_grad = add_common(app.add_subcommand("gradcheck", "run the gradient check suite"));
    CLI::App* c_oracle =
        add_common(app.add_subcommand("oracle", "run the brute-force equivalence suites"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = parse_config_file(config_path);
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!variant.empty()) cfg.variant = variant;

        if (c_synth->parsed()) return cmd_synth(cfg);
        if (c_train->parsed()) return cmd_train(cfg);
        if (c_eval->parsed()) return cmd_eval(cfg);
        if (c_sal->parsed()) return cmd_saliency(cfg, subject);
        if (c_grad->parsed()) return cmd_suite(cfg, true);
        if (c_oracle->parsed()) return cmd_suite(cfg, false);
        std::fputs("no command given\n", stderr);
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
