#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sspain/attention.hpp"
#include "sspain/data.hpp"
#include "sspain/losses.hpp"
#include "sspain/network.hpp"
#include "sspain/rng.hpp"

namespace sspain {

struct TrainConfig {
    double lr_global = 0.001;
    double lr_local = 0.01;
    double lr_finetune = 0.001;
    double beta = 0.2;    // global-margin scale on the level gap
    double alpha = 1.0;   // AU relevance threshold
    int batch_size = 24;
    int alt_steps = 2000;
    int finetune_steps = 2000;
    std::uint64_t seed = 7;
    int emd_bins = 32;
    int patch_half = 5;   // 11x11 saliency patches at the default
    double lambda_center = 0.01;
    bool verbatim_loss_signs = false;
    bool finetune_all = false;  // unfreeze conv layers during finetuning
};

void validate_train_config(const TrainConfig& cfg);

// Level-stratified sample of frame indices: levels with at least two frames
// are visited round-robin, two distinct frames drawn per visit so every
// represented level admits positives.
std::vector<int> sample_batch(const Dataset& ds, const TrainConfig& cfg, Rng& rng);

// Batch-hard mining: per anchor, the farthest same-level frame and the
// nearest other-level frame (Euclidean distance on unit features). Ties go to
// the lowest dataset index. Indices in the result are batch positions; gap is
// the anchor/negative level difference.
std::vector<Triplet> mine_hard_triplets(const std::vector<Tensor>& unit_features,
                                        const std::vector<int>& levels,
                                        const std::vector<int>& ds_indices);

// One optimization step of the saliency-supervision stage. Phase 1 descends
// the global triplet loss; with local_phase, phase 2 re-encodes the updated
// weights and descends the patch loss on the same mined triplets (the decoder
// keeps mirroring the encoder; it never gets its own update). Triplets whose
// relevant set is empty are skipped by the local phase.
LossReport alternating_step(Model& m, const Dataset& ds, const std::vector<int>& batch,
                            const TrainConfig& cfg, int step, bool local_phase,
                            std::vector<Triplet>* mined_out = nullptr);

// Conv activations are frozen during finetuning, so each frame's flattened
// conv output is computed once and reused.
struct FeatureCache {
    std::vector<Tensor> flat;
    std::vector<char> ready;
};

// Regression step: smooth-L1 on the scaled-sigmoid head plus weighted L1
// center loss; trains head + bottleneck (everything with finetune_all), then
// nudges the touched class centers halfway toward their batch means.
LossReport finetune_step(Model& m, const Dataset& ds, const std::vector<int>& batch,
                         const TrainConfig& cfg, int step, FeatureCache& cache);

using LogSink = std::function<void(const std::string& stage, const LossReport&)>;

// Full pipeline for one variant:
//   regression_only  finetune from random init
//   method1          global-loss stage, then finetune
//   method2          alternating global+local stage, then finetune
Model train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
            const std::string& variant, const LogSink& log = {});

}  // namespace sspain
