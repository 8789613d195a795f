#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sspain/data.hpp"
#include "sspain/network.hpp"
#include "sspain/training.hpp"

namespace sspain {

// Held-out predictions for one subject's sequence.
struct SequenceResult {
    std::string subject_id;
    std::vector<double> predictions;
    std::vector<double> labels;
};

struct BasicMetrics {
    double mae = 0.0;
    double mse = 0.0;
    double pcc = 0.0;
    int constant_sequences = 0;  // sequences whose PCC was pinned to 0
};

struct WeightedMetrics {
    double wmae = 0.0;
    double wmse = 0.0;
};

// Per-sequence MAE/MSE/PCC averaged over sequences. A sequence with constant
// predictions or labels has undefined correlation; it counts as 0 and is
// flagged.
BasicMetrics compute_metrics(const std::vector<SequenceResult>& results);

// Pool every frame, compute MAE/MSE per ground-truth level, then average the
// levels uniformly (uniform class weighting).
WeightedMetrics weighted_metrics(const std::vector<SequenceResult>& results);

struct MetricsReport {
    double mae = 0.0, mse = 0.0, pcc = 0.0;
    double wmae = 0.0, wmse = 0.0;
    int constant_sequences = 0;
    std::vector<std::string> fold_subjects;
    std::vector<BasicMetrics> per_fold;
    // reproducibility echo
    std::string variant;
    std::uint64_t seed = 0;
    double alpha = 0.0, beta = 0.0;
    bool verbatim_loss_signs = false;
    RescaleTable rescale_table;
};

// Called after each fold with the trained model and held-out results.
using FoldObserver =
    std::function<void(int fold, const Model& model, const SequenceResult& result)>;

// Leave-one-subject-out: train once per subject, predict the held-out
// sequence, aggregate. Needs at least two subjects.
MetricsReport cross_validate(const Dataset& ds, const ModelConfig& model_cfg,
                             const TrainConfig& train_cfg, const std::string& variant,
                             const LogSink& log = {}, const FoldObserver& observer = {});

// Evaluate an already-trained model on every sequence of a dataset.
MetricsReport evaluate_model(const Model& m, const Dataset& ds, const TrainConfig& train_cfg,
                             const std::string& variant);

// Mean decoded saliency inside the relevant-AU patch boxes over mean inside
// the irrelevant ones, averaged over frames; +infinity when the irrelevant
// mass is exactly zero.
double saliency_concentration(const Model& m, const std::vector<Frame>& frames,
                              const std::vector<int>& relevant_au_positions, int patch_half);

std::string metrics_json(const MetricsReport& r);
std::string metrics_text(const MetricsReport& r);
// Writes metrics.json and metrics.txt under out_dir.
void write_metrics(const std::string& out_dir, const MetricsReport& r);

}  // namespace sspain
