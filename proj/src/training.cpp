#include "sspain/training.hpp"

#include <algorithm>
#include <cmath>

#include "sspain/error.hpp"

namespace sspain {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.lr_global <= 0 || cfg.lr_local <= 0 || cfg.lr_finetune <= 0)
        throw ConfigError("learning rates must be positive");
    if (cfg.batch_size < 6) throw ConfigError("batch_size must be at least 6 to admit triplets");
    if (cfg.beta <= 0) throw ConfigError("beta must be positive");
    if (cfg.alpha <= 0) throw ConfigError("alpha must be positive");
    if (cfg.alt_steps < 0 || cfg.finetune_steps < 0) throw ConfigError("step counts must be >= 0");
    if (cfg.emd_bins < 2) throw ConfigError("emd_bins must be at least 2");
    if (cfg.patch_half < 1) throw ConfigError("patch_half must be at least 1");
    if (cfg.lambda_center < 0) throw ConfigError("lambda_center must be non-negative");
}

std::vector<int> sample_batch(const Dataset& ds, const TrainConfig& cfg, Rng& rng) {
    if (ds.frames.empty()) throw RangeError("cannot sample from an empty dataset");
    std::vector<std::vector<int>> pools(6);
    for (std::size_t i = 0; i < ds.frames.size(); ++i)
        pools[ds.frames[i].level].push_back(static_cast<int>(i));
    std::vector<int> rotation;
    for (int level = 0; level < 6; ++level)
        if (pools[level].size() >= 2) rotation.push_back(level);
    if (rotation.empty()) throw RangeError("cannot form positives");

    std::vector<int> batch;
    std::size_t r = 0;
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
        bool drew = false;
        for (std::size_t tries = 0; tries < rotation.size() && !drew; ++tries) {
            std::vector<int>& pool = pools[rotation[r++ % rotation.size()]];
            if (pool.size() < 2) continue;
            for (int take = 0; take < 2; ++take) {
                const int j = rng.uniform_int(static_cast<int>(pool.size()));
                batch.push_back(pool[j]);
                pool[j] = pool.back();
                pool.pop_back();
            }
            drew = true;
        }
        if (!drew) break;  // every pool is out of pairs
    }
    if (static_cast<int>(batch.size()) > cfg.batch_size) batch.resize(cfg.batch_size);
    return batch;
}

std::vector<Triplet> mine_hard_triplets(const std::vector<Tensor>& unit_features,
                                        const std::vector<int>& levels,
                                        const std::vector<int>& ds_indices) {
    const int n = static_cast<int>(unit_features.size());
    if (static_cast<int>(levels.size()) != n ||
        (!ds_indices.empty() && static_cast<int>(ds_indices.size()) != n))
        throw DimensionError("mine_hard_triplets input lengths differ");
    auto order_key = [&](int j) { return ds_indices.empty() ? j : ds_indices[j]; };
    std::vector<Triplet> out;
    for (int a = 0; a < n; ++a) {
        int best_p = -1, best_n = -1;
        double pd = 0.0, nd = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == a) continue;
            const double d = euclidean_distance(unit_features[a], unit_features[j]);
            if (levels[j] == levels[a]) {
                if (best_p < 0 || d > pd || (d == pd && order_key(j) < order_key(best_p))) {
                    best_p = j;
                    pd = d;
                }
            } else {
                if (best_n < 0 || d < nd || (d == nd && order_key(j) < order_key(best_n))) {
                    best_n = j;
                    nd = d;
                }
            }
        }
        if (best_p < 0 || best_n < 0) continue;
        Triplet t;
        t.anchor = a;
        t.positive = best_p;
        t.negative = best_n;
        t.gap = std::abs(levels[a] - levels[best_n]);
        out.push_back(t);
    }
    return out;
}

namespace {

void apply_sgd(Model& m, const ParamSet& grads, double lr, bool conv, bool fc, bool head) {
    for (auto& [name, p] : m.params) {
        const bool take = (conv && name.rfind("conv", 0) == 0) ||
                          (fc && name.rfind("fc.", 0) == 0) ||
                          (head && name.rfind("head.", 0) == 0);
        if (!take) continue;
        const Tensor& g = grads.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }
}

bool any_nonzero(const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] != 0.0) return true;
    return false;
}

std::map<int, PatchBox> boxes_for(const Frame& fr, const AUPartition& part, int half) {
    std::map<int, PatchBox> boxes;
    const int h = fr.image.extent(1), w = fr.image.extent(2);
    auto add = [&](int k) {
        PatchBox b = patch_box(fr.landmarks[k].first, fr.landmarks[k].second, h, w, half);
        b.au = k;
        boxes[k] = b;
    };
    for (int k : part.set_A) add(k);
    for (int k : part.set_B) add(k);
    return boxes;
}

}  // namespace

LossReport alternating_step(Model& m, const Dataset& ds, const std::vector<int>& batch,
                            const TrainConfig& cfg, int step, bool local_phase,
                            std::vector<Triplet>* mined_out) {
    LossReport rep;
    rep.step = step;
    const int n = static_cast<int>(batch.size());

    // Phase 1: global triplet loss on normalized bottleneck features.
    std::vector<EncodeTrace> traces;
    traces.reserve(n);
    std::vector<L2Norm> norms(n);
    std::vector<Tensor> units(n);
    std::vector<int> levels(n);
    for (int i = 0; i < n; ++i) {
        const Frame& fr = ds.frames[batch[i]];
        traces.push_back(encode(m, fr.image));
        norms[i] = l2_normalize(traces[i].feature);
        units[i] = norms[i].unit;
        levels[i] = fr.level;
    }
    const std::vector<Triplet> triplets = mine_hard_triplets(units, levels, batch);
    if (mined_out) *mined_out = triplets;

    if (!triplets.empty()) {
        ParamSet grads = m.params.zeros_like();
        std::vector<Tensor> gu(n, Tensor::zeros({m.cfg.bottleneck_dim}));
        const double inv = 1.0 / triplets.size();
        double total = 0.0;
        for (const Triplet& t : triplets)
            total += global_triplet_loss_grad(units[t.anchor], units[t.positive],
                                              units[t.negative], t.gap, cfg.beta,
                                              cfg.verbatim_loss_signs, inv, gu[t.anchor],
                                              gu[t.positive], gu[t.negative]);
        rep.loss_G = total * inv;
        for (int i = 0; i < n; ++i) {
            if (!any_nonzero(gu[i])) continue;
            encode_backward(m, traces[i], l2_normalize_backward(norms[i], gu[i]), grads);
        }
        apply_sgd(m, grads, cfg.lr_global, true, true, false);
    }

    // Phase 2: patch loss with the same triplets on the updated weights.
    if (local_phase && !triplets.empty()) {
        sync_decoder(m);
        struct Item {
            const Triplet* t;
            AUPartition part;
        };
        std::vector<Item> items;
        for (const Triplet& t : triplets) {
            AUPartition part = partition_aus(ds.frames[batch[t.anchor]].au_values,
                                             ds.frames[batch[t.positive]].au_values,
                                             ds.frames[batch[t.negative]].au_values, cfg.alpha);
            if (!part.set_A.empty()) items.push_back({&t, std::move(part)});
        }
        if (!items.empty()) {
            std::vector<char> needed(n, 0);
            for (const Item& it : items)
                needed[it.t->anchor] = needed[it.t->positive] = needed[it.t->negative] = 1;
            std::vector<EncodeTrace> etr(n);
            std::vector<DecodeTrace> dtr(n);
            std::vector<Tensor> map_grads(n);
            for (int i = 0; i < n; ++i) {
                if (!needed[i]) continue;
                etr[i] = encode(m, ds.frames[batch[i]].image);
                dtr[i] = decode_saliency(m, etr[i].feature);
                map_grads[i] = Tensor::zeros(dtr[i].norm.normalized.shape());
            }
            const double inv = 1.0 / items.size();
            LocalLossConfig lcfg;
            lcfg.emd_bins = cfg.emd_bins;
            lcfg.verbatim = cfg.verbatim_loss_signs;
            for (const Item& it : items) {
                const int a = it.t->anchor, p = it.t->positive, g = it.t->negative;
                LocalLossResult res = local_loss_on_maps(
                    dtr[a].norm.normalized, dtr[p].norm.normalized, dtr[g].norm.normalized,
                    it.part, boxes_for(ds.frames[batch[a]], it.part, cfg.patch_half),
                    boxes_for(ds.frames[batch[p]], it.part, cfg.patch_half),
                    boxes_for(ds.frames[batch[g]], it.part, cfg.patch_half), it.t->gap, lcfg);
                rep.loss_A += res.loss_A * inv;
                rep.loss_B += res.loss_B * inv;
                for (std::size_t i = 0; i < map_grads[a].size(); ++i) {
                    map_grads[a][i] += res.grad_a[i] * inv;
                    map_grads[p][i] += res.grad_p[i] * inv;
                    map_grads[g][i] += res.grad_n[i] * inv;
                }
            }
            // The decoder is frozen: the patch loss differentiates through the
            // decode operation into the feature and from there through the
            // encoder, never into the decoder's own weight occurrences.
            ParamSet grads = m.params.zeros_like();
            for (int i = 0; i < n; ++i) {
                if (!needed[i]) continue;
                Tensor g_feature = decode_backward(m, dtr[i], map_grads[i]);
                encode_backward(m, etr[i], g_feature, grads);
            }
            apply_sgd(m, grads, cfg.lr_local, true, true, false);
        }
    }
    rep.loss_L = rep.loss_A + rep.loss_B;
    return rep;
}

LossReport finetune_step(Model& m, const Dataset& ds, const std::vector<int>& batch,
                         const TrainConfig& cfg, int step, FeatureCache& cache) {
    LossReport rep;
    rep.step = step;
    const int n = static_cast<int>(batch.size());
    if (n == 0) return rep;
    ParamSet grads = m.params.zeros_like();
    const Tensor& centers = m.params.at("centers");

    std::vector<Tensor> feats(n), g_feats(n);
    std::vector<EncodeTrace> traces;
    for (int i = 0; i < n; ++i) {
        const Frame& fr = ds.frames[batch[i]];
        Tensor feature;
        if (cfg.finetune_all) {
            traces.push_back(encode(m, fr.image));
            feature = traces.back().feature;
        } else {
            const int di = batch[i];
            if (!cache.ready[di]) {
                cache.flat[di] = encode(m, fr.image).flat;
                cache.ready[di] = 1;
            }
            feature = linear(m.params.at("fc.w"), m.params.at("fc.b"), cache.flat[di]);
        }
        const double pred = regress(m, feature);
        rep.reg += smooth_l1(pred, fr.level);
        rep.center += center_loss_l1(feature, fr.level, centers);
        Tensor gf = regress_backward(m, feature, pred, smooth_l1_grad(pred, fr.level) / n, grads);
        center_loss_l1_backward(feature, fr.level, centers, cfg.lambda_center / n, gf, nullptr);
        feats[i] = std::move(feature);
        g_feats[i] = std::move(gf);
    }
    rep.reg /= n;
    rep.center /= n;

    const Tensor& fcw = m.params.at("fc.w");
    for (int i = 0; i < n; ++i) {
        if (cfg.finetune_all) {
            encode_backward(m, traces[i], g_feats[i], grads);
        } else {
            Tensor& dw = grads.at("fc.w");
            Tensor& db = grads.at("fc.b");
            const Tensor& flat = cache.flat[batch[i]];
            for (int d = 0; d < fcw.extent(0); ++d) {
                const double gd = g_feats[i][d];
                if (gd == 0.0) continue;
                db[d] += gd;
                for (int j = 0; j < fcw.extent(1); ++j) dw.at2(d, j) += gd * flat[j];
            }
        }
    }
    apply_sgd(m, grads, cfg.lr_finetune, cfg.finetune_all, true, true);

    // Pull each touched class center halfway toward its batch mean.
    Tensor& c = m.params.at("centers");
    for (int level = 0; level < 6; ++level) {
        Tensor mean = Tensor::zeros({m.cfg.bottleneck_dim});
        int count = 0;
        for (int i = 0; i < n; ++i) {
            if (ds.frames[batch[i]].level != level) continue;
            for (int d = 0; d < m.cfg.bottleneck_dim; ++d) mean[d] += feats[i][d];
            ++count;
        }
        if (count == 0) continue;
        for (int d = 0; d < m.cfg.bottleneck_dim; ++d)
            c.at2(level, d) += 0.5 * (mean[d] / count - c.at2(level, d));
    }
    return rep;
}

Model train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
            const std::string& variant, const LogSink& log) {
    validate_train_config(cfg);
    if (variant != "method1" && variant != "method2" && variant != "regression_only")
        throw ConfigError("unknown variant: " + variant);
    Model m = init_model(model_cfg, mix_seed(cfg.seed, 1));
    if (variant != "regression_only" && cfg.alt_steps > 0) {
        Rng rng(mix_seed(cfg.seed, 2));
        const bool local = variant == "method2";
        const std::string stage = local ? "alternating" : "global";
        for (int s = 0; s < cfg.alt_steps; ++s) {
            const std::vector<int> batch = sample_batch(ds, cfg, rng);
            const LossReport rep = alternating_step(m, ds, batch, cfg, s, local);
            if (log) log(stage, rep);
        }
    }
    if (cfg.finetune_steps > 0) {
        Rng rng(mix_seed(cfg.seed, 3));
        FeatureCache cache;
        cache.flat.resize(ds.frames.size());
        cache.ready.assign(ds.frames.size(), 0);
        for (int s = 0; s < cfg.finetune_steps; ++s) {
            const std::vector<int> batch = sample_batch(ds, cfg, rng);
            const LossReport rep = finetune_step(m, ds, batch, cfg, s, cache);
            if (log) log("finetune", rep);
        }
    }
    return m;
}

}  // namespace sspain
