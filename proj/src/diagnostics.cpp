#include "sspain/diagnostics.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "sspain/attention.hpp"
#include "sspain/losses.hpp"
#include "sspain/network.hpp"
#include "sspain/rng.hpp"
#include "sspain/training.hpp"

namespace sspain {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Small model + one hand-built triplet that exercises every loss term.
struct ToyFixture {
    ModelConfig cfg;
    Model model;
    std::vector<Tensor> images;           // anchor, positive, negative
    std::vector<int> levels = {2, 2, 4};
    AUPartition partition;                // A = {0,1}, B = {2,3}
    std::map<int, PatchBox> boxes;        // shared landmarks -> same boxes
    int emd_bins = 8;
    int patch_half = 2;
    double lambda_center = 0.5;

    explicit ToyFixture(std::uint64_t image_seed = 98) {
        cfg.conv_channels = {2, 4};
        cfg.bottleneck_dim = 8;
        cfg.image_h = cfg.image_w = 8;
        model = init_model(cfg, 321);
        Rng rng(image_seed);
        for (int i = 0; i < 3; ++i) {
            Tensor img = Tensor::zeros({1, 8, 8});
            for (std::size_t p = 0; p < img.size(); ++p) img[p] = rng.uniform();
            images.push_back(std::move(img));
        }
        // Random centers so the L1 center loss has nontrivial gradients.
        Tensor& centers = model.params.at("centers");
        for (std::size_t i = 0; i < centers.size(); ++i) centers[i] = rng.gaussian(0.0, 0.5);

        const std::vector<double> va = {2.0, 3.0, 1.0, 2.5};
        const std::vector<double> vp = {2.2, 2.8, 1.3, 2.7};
        const std::vector<double> vn = {4.0, 0.5, 1.4, 2.2};
        partition = partition_aus(va, vp, vn, 1.0);
        const int lms[4][2] = {{2, 2}, {5, 5}, {2, 5}, {5, 2}};
        for (int k = 0; k < 4; ++k) {
            PatchBox b = patch_box(lms[k][0], lms[k][1], 8, 8, patch_half);
            b.au = k;
            boxes[k] = b;
        }
    }

    LossEval eval_global(const ParamSet& params) const {
        Model m{cfg, model.geom, params};
        LossEval out;
        out.grads = params.zeros_like();
        std::vector<EncodeTrace> tr;
        std::vector<L2Norm> norms(3);
        std::vector<Tensor> units(3);
        for (int i = 0; i < 3; ++i) {
            tr.push_back(encode(m, images[i]));
            norms[i] = l2_normalize(tr[i].feature);
            units[i] = norms[i].unit;
        }
        std::vector<Tensor> gu(3, Tensor::zeros({cfg.bottleneck_dim}));
        out.value = global_triplet_loss_grad(units[0], units[1], units[2], 2.0, 0.2, false, 1.0,
                                             gu[0], gu[1], gu[2]);
        for (int i = 0; i < 3; ++i)
            encode_backward(m, tr[i], l2_normalize_backward(norms[i], gu[i]), out.grads);
        return out;
    }

    // The decoder is a frozen view during the patch phase: encode runs with
    // the candidate params, decode with the base weights, and the gradient
    // reaches the shared weights through the encode path only.
    LossEval eval_local(const ParamSet& params, bool include_A, bool include_B,
                        double gap) const {
        Model enc{cfg, model.geom, params};
        LossEval out;
        out.grads = params.zeros_like();
        std::vector<EncodeTrace> etr;
        std::vector<DecodeTrace> dtr;
        for (int i = 0; i < 3; ++i) {
            etr.push_back(encode(enc, images[i]));
            dtr.push_back(decode_saliency(model, etr[i].feature));
        }
        LocalLossConfig lc;
        lc.emd_bins = emd_bins;
        lc.include_A = include_A;
        lc.include_B = include_B;
        LocalLossResult res =
            local_loss_on_maps(dtr[0].norm.normalized, dtr[1].norm.normalized,
                               dtr[2].norm.normalized, partition, boxes, boxes, boxes, gap, lc);
        out.value = res.loss_A + res.loss_B;
        const Tensor* grads[3] = {&res.grad_a, &res.grad_p, &res.grad_n};
        for (int i = 0; i < 3; ++i) {
            Tensor g_feature = decode_backward(model, dtr[i], *grads[i]);
            encode_backward(enc, etr[i], g_feature, out.grads);
        }
        return out;
    }

    LossEval eval_regression(const ParamSet& params) const {
        Model m{cfg, model.geom, params};
        LossEval out;
        out.grads = params.zeros_like();
        const Tensor& centers = params.at("centers");
        for (int i = 0; i < 3; ++i) {
            EncodeTrace tr = encode(m, images[i]);
            const double pred = regress(m, tr.feature);
            out.value += smooth_l1(pred, levels[i]) / 3.0;
            out.value += lambda_center * center_loss_l1(tr.feature, levels[i], centers) / 3.0;
            Tensor gf = regress_backward(m, tr.feature, pred,
                                         smooth_l1_grad(pred, levels[i]) / 3.0, out.grads);
            center_loss_l1_backward(tr.feature, levels[i], centers, lambda_center / 3.0, gf,
                                    &out.grads.at("centers"));
            encode_backward(m, tr, gf, out.grads);
        }
        return out;
    }

    LossEval eval_combined(const ParamSet& params) const {
        LossEval g = eval_global(params);
        const LossEval l = eval_local(params, true, true, 0.4);
        const LossEval r = eval_regression(params);
        g.value += l.value + r.value;
        g.grads.add_scaled(l.grads, 1.0);
        g.grads.add_scaled(r.grads, 1.0);
        return g;
    }
};

CheckResult run_grad_check(const std::string& name, const LossFn& fn, const ParamSet& params,
                           double tol) {
    CheckResult r;
    r.name = name;
    r.tolerance = tol;
    const double t0 = now_seconds();
    const double base = fn(params).value;
    r.measure = grad_check(fn, params, 1e-4);
    r.seconds = now_seconds() - t0;
    r.passed = r.measure < tol && base > 0.0;
    if (base <= 0.0) r.note = "loss inactive at the test point";
    return r;
}

}  // namespace

std::vector<CheckResult> gradient_suite() {
    const ToyFixture fx;
    const ParamSet& p = fx.model.params;
    std::vector<CheckResult> out;
    out.push_back(run_grad_check(
        "grad: global triplet loss through encoder",
        [&fx](const ParamSet& q) { return fx.eval_global(q); }, p, 1e-4));
    out.push_back(run_grad_check(
        "grad: relevant-AU patch loss through decoder",
        [&fx](const ParamSet& q) { return fx.eval_local(q, true, false, 2.0); }, p, 1e-4));
    // The hinge on the irrelevant-AU term is only active when the negative
    // patch pair happens to transport less than the positive one; scan image
    // draws deterministically until the loss is alive at the base point.
    std::uint64_t seed_b = 98;
    for (std::uint64_t s = 98; s < 130; ++s) {
        ToyFixture probe(s);
        if (probe.eval_local(probe.model.params, false, true, 0.05).value > 1e-3) {
            seed_b = s;
            break;
        }
    }
    const ToyFixture fxb(seed_b);
    out.push_back(run_grad_check(
        "grad: irrelevant-AU patch loss through decoder",
        [&fxb](const ParamSet& q) { return fxb.eval_local(q, false, true, 0.05); },
        fxb.model.params, 1e-4));
    out.push_back(run_grad_check(
        "grad: smooth-L1 + center loss through head",
        [&fx](const ParamSet& q) { return fx.eval_regression(q); }, p, 1e-4));
    out.push_back(run_grad_check(
        "grad: combined objective",
        [&fx](const ParamSet& q) { return fx.eval_combined(q); }, p, 1e-4));
    return out;
}

namespace {

// Exact minimum-cost transport between 3-bin histograms with masses in units
// of 0.1, ground distance |i-j|/(B-1); exhaustive over integer flows.
double transport_3bin(const int s[3], const int d[3]) {
    int best = 1 << 30;
    for (int f00 = 0; f00 <= std::min(s[0], d[0]); ++f00) {
        for (int f01 = 0; f01 <= std::min(s[0] - f00, d[1]); ++f01) {
            const int f02 = s[0] - f00 - f01;
            if (f02 > d[2]) continue;
            for (int f10 = 0; f10 <= std::min(s[1], d[0] - f00); ++f10) {
                for (int f11 = 0; f11 <= std::min(s[1] - f10, d[1] - f01); ++f11) {
                    const int f12 = s[1] - f10 - f11;
                    if (f12 < 0 || f12 > d[2] - f02) continue;
                    const int f20 = d[0] - f00 - f10;
                    const int f21 = d[1] - f01 - f11;
                    const int f22 = d[2] - f02 - f12;
                    if (f20 < 0 || f21 < 0 || f22 < 0) continue;
                    const int cost = f01 + 2 * f02 + f10 + f12 + 2 * f20 + f21;
                    best = std::min(best, cost);
                }
            }
        }
    }
    return best * 0.1 / 2.0;
}

// Ten patch pixels sitting exactly on the three bin centers reproduce the
// integer histogram masses without soft-assignment spill.
Tensor patch_for(const int h[3]) {
    std::vector<double> vals;
    for (int i = 0; i < h[0]; ++i) vals.push_back(0.0);
    for (int i = 0; i < h[1]; ++i) vals.push_back(0.5);
    for (int i = 0; i < h[2]; ++i) vals.push_back(1.0);
    return Tensor::from_data({10}, std::move(vals));
}

CheckResult emd_oracle() {
    CheckResult r;
    r.name = "oracle: EMD vs exhaustive min-cost transport";
    r.tolerance = 1e-9;
    const double t0 = now_seconds();
    std::vector<std::array<int, 3>> hists;
    for (int a = 0; a <= 10; ++a)
        for (int b = 0; b + a <= 10; ++b) hists.push_back({a, b, 10 - a - b});
    double worst = 0.0;
    for (const auto& h1 : hists) {
        const Tensor p1 = patch_for(h1.data());
        for (const auto& h2 : hists) {
            const double fast = patch_emd(p1, patch_for(h2.data()), 3);
            const double slow = transport_3bin(h1.data(), h2.data());
            worst = std::max(worst, std::fabs(fast - slow));
        }
    }
    r.measure = worst;
    r.seconds = now_seconds() - t0;
    r.passed = worst < r.tolerance;
    return r;
}

CheckResult mining_oracle() {
    CheckResult r;
    r.name = "oracle: batch-hard mining vs exhaustive search";
    r.tolerance = 0.0;
    const double t0 = now_seconds();
    Rng rng(20240817);
    int mismatches = 0;
    for (int batch = 0; batch < 200; ++batch) {
        const int n = 3 + rng.uniform_int(30);
        std::vector<Tensor> feats;
        std::vector<int> levels;
        for (int i = 0; i < n; ++i) {
            if (i > 0 && rng.uniform() < 0.3) {
                feats.push_back(feats[rng.uniform_int(i)]);  // force exact ties
            } else {
                Tensor f({8});
                for (int d = 0; d < 8; ++d) f[d] = rng.gaussian();
                feats.push_back(l2_normalize(f).unit);
            }
            levels.push_back(rng.uniform_int(6));
        }
        std::vector<int> ds_indices(n);
        for (int i = 0; i < n; ++i) ds_indices[i] = 2 * i + 5;
        for (int i = n - 1; i > 0; --i)
            std::swap(ds_indices[i], ds_indices[rng.uniform_int(i + 1)]);

        const std::vector<Triplet> fast = mine_hard_triplets(feats, levels, ds_indices);

        // Independent reference: candidate lists ranked by sort.
        std::vector<Triplet> slow;
        for (int a = 0; a < n; ++a) {
            struct Cand {
                double dist;
                int ds;
                int pos;
            };
            std::vector<Cand> pos_c, neg_c;
            for (int j = 0; j < n; ++j) {
                if (j == a) continue;
                const Cand c{euclidean_distance(feats[a], feats[j]), ds_indices[j], j};
                (levels[j] == levels[a] ? pos_c : neg_c).push_back(c);
            }
            if (pos_c.empty() || neg_c.empty()) continue;
            std::sort(pos_c.begin(), pos_c.end(), [](const Cand& x, const Cand& y) {
                return x.dist != y.dist ? x.dist > y.dist : x.ds < y.ds;
            });
            std::sort(neg_c.begin(), neg_c.end(), [](const Cand& x, const Cand& y) {
                return x.dist != y.dist ? x.dist < y.dist : x.ds < y.ds;
            });
            Triplet t;
            t.anchor = a;
            t.positive = pos_c[0].pos;
            t.negative = neg_c[0].pos;
            t.gap = std::abs(levels[a] - levels[t.negative]);
            slow.push_back(t);
        }
        bool equal = fast.size() == slow.size();
        for (std::size_t i = 0; equal && i < fast.size(); ++i)
            equal = fast[i].anchor == slow[i].anchor && fast[i].positive == slow[i].positive &&
                    fast[i].negative == slow[i].negative && fast[i].gap == slow[i].gap;
        if (!equal) ++mismatches;
    }
    r.measure = mismatches;
    r.seconds = now_seconds() - t0;
    r.passed = mismatches == 0;
    return r;
}

}  // namespace

std::vector<CheckResult> oracle_suite() { return {emd_oracle(), mining_oracle()}; }

bool all_passed(const std::vector<CheckResult>& results) {
    for (const CheckResult& r : results)
        if (!r.passed) return false;
    return true;
}

std::string format_results(const std::vector<CheckResult>& results) {
    std::string out;
    char line[256];
    for (const CheckResult& r : results) {
        std::snprintf(line, sizeof line, "%-48s %s  (measure %.3e, tol %.0e, %.2fs)%s%s\n",
                      r.name.c_str(), r.passed ? "PASS" : "FAIL", r.measure, r.tolerance,
                      r.seconds, r.note.empty() ? "" : "  -- ", r.note.c_str());
        out += line;
    }
    return out;
}

}  // namespace sspain
