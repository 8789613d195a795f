// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 7 trains all three variants on the synthetic corpus with
// one held-out subject; criterion 8 repeats it and compares every artifact
// byte for byte.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sspain/attention.hpp"
#include "sspain/data.hpp"
#include "sspain/diagnostics.hpp"
#include "sspain/evaluation.hpp"
#include "sspain/network.hpp"
#include "sspain/rng.hpp"
#include "sspain/training.hpp"

using namespace sspain;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "<missing:" + path + ">";
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---- criteria 1-3: reuse the diagnostic suites -------------------------------

Outcome from_check(const std::vector<CheckResult>& results, const std::string& needle,
                   double time_budget) {
    for (const CheckResult& r : results) {
        if (r.name.find(needle) == std::string::npos) continue;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "measure %.3e (tol %.0e), %.2fs", r.measure, r.tolerance,
                      r.seconds);
        return {r.passed && r.seconds < time_budget, buf};
    }
    return {false, "check '" + needle + "' not found"};
}

Outcome criterion_gradients(const std::vector<CheckResult>& grads) {
    double total = 0.0, worst = 0.0;
    bool all = !grads.empty();
    for (const CheckResult& r : grads) {
        all = all && r.passed;
        total += r.seconds;
        worst = std::max(worst, r.measure);
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu checks, worst rel err %.3e, %.1fs total", grads.size(),
                  worst, total);
    return {all && total < 60.0, buf};
}

// ---- criterion 4: adjoint identity + weight tying ----------------------------

Outcome criterion_adjoint() {
    // dot-product identity for every conv geometry in the default model
    ModelConfig cfg;
    Geometry g = compute_geometry(cfg);
    Rng rng(404);
    double worst = 0.0;
    int ci = 1, hin = g.pad_h, win = g.pad_w;
    for (std::size_t layer = 0; layer < cfg.conv_channels.size(); ++layer) {
        const int co = cfg.conv_channels[layer];
        Tensor x({ci, hin, win});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
        Tensor k({co, ci, cfg.kernel, cfg.kernel});
        for (std::size_t i = 0; i < k.size(); ++i) k[i] = rng.uniform(-1, 1);
        Tensor y = conv2d(x, k, cfg.stride, g.conv_pad);
        Tensor u(y.shape());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1, 1);
        const double lhs = dot(y, u);
        const double rhs = dot(x, conv2d_adjoint(u, k, cfg.stride, g.conv_pad));
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
        ci = co;
        hin = g.hs[layer];
        win = g.ws[layer];
    }
    if (worst >= 1e-6) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "adjoint identity off by %.3e", worst);
        return {false, buf};
    }

    // weight tying under training: run 100 alternating steps, then show the
    // decoder output is a pure function of the shared parameter set
    SynthConfig sc;
    sc.image_size = 16;
    sc.n_subjects = 2;
    sc.frames_per_subject = 24;
    sc.seed = 21;
    Dataset ds = generate_synthetic(sc);
    ModelConfig mc;
    mc.conv_channels = {2, 4};
    mc.bottleneck_dim = 8;
    mc.image_h = 16;
    mc.image_w = 16;
    TrainConfig tc;
    tc.batch_size = 8;
    tc.emd_bins = 8;
    tc.patch_half = 2;
    Model m = init_model(mc, 17);
    Rng batch_rng(18);
    for (int step = 0; step < 100; ++step) {
        std::vector<int> batch = sample_batch(ds, tc, batch_rng);
        alternating_step(m, ds, batch, tc, step, true);
    }
    sync_decoder(m);

    EncodeTrace enc = encode(m, ds.frames[0].image);
    DecodeTrace dec = decode_saliency(m, enc.feature);

    Model mirror = m;  // deep copy of the shared parameters
    DecodeTrace dec2 = decode_saliency(mirror, enc.feature);
    for (std::size_t i = 0; i < dec.raw.size(); ++i)
        if (dec.raw[i] != dec2.raw[i]) return {false, "decode diverged from shared parameters"};

    mirror.params.at("conv0.k")[0] += 0.25;  // decoder must see encoder weight edits
    DecodeTrace dec3 = decode_saliency(mirror, enc.feature);
    bool moved = false;
    for (std::size_t i = 0; i < dec.raw.size() && !moved; ++i) moved = dec.raw[i] != dec3.raw[i];
    if (!moved) return {false, "decoder ignored a kernel edit: weights are not shared"};

    char buf[120];
    std::snprintf(buf, sizeof(buf),
                  "identity err %.3e; tied after 100 alternating steps (bit-equal maps)", worst);
    return {true, buf};
}

// ---- criterion 5: partition rule vs brute force -------------------------------

Outcome criterion_partition() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(0.5 * i);
    long checked = 0;
    for (double alpha : {0.5, 1.0, 2.0})
        for (double a0 : grid)
            for (double p0 : grid)
                for (double n0 : grid)
                    for (double a1 : grid)
                        for (double p1 : grid)
                            for (double n1 : grid) {
                                AUPartition part =
                                    partition_aus({a0, a1}, {p0, p1}, {n0, n1}, alpha);
                                double diff_sum = 0.0;
                                bool in_A[2];
                                const double va[2] = {a0, a1}, vp[2] = {p0, p1},
                                             vn[2] = {n0, n1};
                                for (int k = 0; k < 2; ++k) {
                                    in_A[k] = std::abs(va[k] - vp[k]) < alpha &&
                                              std::abs(va[k] - vn[k]) >= alpha;
                                    if (in_A[k]) diff_sum += std::abs(va[k] - vn[k]);
                                }
                                double wsum = 0.0;
                                for (int k = 0; k < 2; ++k) {
                                    const bool got =
                                        std::find(part.set_A.begin(), part.set_A.end(), k) !=
                                        part.set_A.end();
                                    if (got != in_A[k]) return {false, "membership mismatch"};
                                    if (in_A[k]) {
                                        const double want = std::abs(va[k] - vn[k]) / diff_sum;
                                        if (std::abs(part.weights.at(k) - want) > 1e-9)
                                            return {false, "weight mismatch"};
                                        wsum += part.weights.at(k);
                                    }
                                }
                                if (!part.set_A.empty() && std::abs(wsum - 1.0) > 1e-9)
                                    return {false, "weights do not sum to 1"};
                                if (part.n_B != static_cast<int>(part.set_B.size()))
                                    return {false, "n_B inconsistent"};
                                ++checked;
                            }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%ld grid points, exact membership, weight sum <= 1e-9",
                  checked);
    return {true, buf};
}

// ---- criterion 6: metrics arithmetic -------------------------------------------

Outcome criterion_metrics() {
    BasicMetrics rev = compute_metrics({SequenceResult{"a", {2, 1, 0}, {0, 1, 2}}});
    if (rev.mae != 4.0 / 3.0 || rev.mse != 8.0 / 3.0 || rev.pcc != -1.0)
        return {false, "3-frame hand values missed"};
    BasicMetrics shift = compute_metrics({SequenceResult{"a", {1, 2, 3}, {0, 1, 2}}});
    if (shift.mae != 1.0 || shift.mse != 1.0 || std::abs(shift.pcc - 1.0) > 1e-12)
        return {false, "shifted-sequence hand values missed"};

    WeightedMetrics two =
        weighted_metrics({SequenceResult{"a", {0, 0, 4, 4}, {0, 0, 5, 5}}});
    if (two.wmae != 0.5 || two.wmse != 0.5) return {false, "two-level weighted values missed"};

    Rng rng(606);
    std::vector<double> p, l;
    for (int lvl = 0; lvl <= 5; ++lvl)
        for (int i = 0; i < 7; ++i) {
            l.push_back(lvl);
            p.push_back(rng.uniform(0, 5));
        }
    WeightedMetrics w = weighted_metrics({SequenceResult{"a", p, l}});
    double mae = 0, mse = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        mae += std::abs(p[i] - l[i]);
        mse += (p[i] - l[i]) * (p[i] - l[i]);
    }
    mae /= p.size();
    mse /= p.size();
    if (std::abs(w.wmae - mae) > 1e-12 || std::abs(w.wmse - mse) > 1e-12)
        return {false, "weighted != pooled on balanced data"};
    return {true, "hand arithmetic exact; balanced weighted==pooled within 1e-12"};
}

// ---- criteria 7-8: desk-scale experiment ----------------------------------------

struct VariantResult {
    BasicMetrics metrics;
    double concentration = 0.0;
};

struct Experiment {
    VariantResult regression_only, method1, method2;
    double seconds = 0.0;
};

TrainConfig experiment_train_config() {
    TrainConfig tc;
    tc.lr_global = 0.001;
    tc.lr_local = 0.03;  // patch gradients are weak at 5x5 box scale
    tc.lr_finetune = 0.001;
    tc.batch_size = 24;
    tc.alt_steps = 2000;
    tc.finetune_steps = 2000;
    tc.seed = 7;
    tc.emd_bins = 32;
    tc.patch_half = 2;  // 5x5 patches, the 11x11 analog at quarter scale
    tc.lambda_center = 0.01;
    return tc;
}

VariantResult run_variant(const Dataset& train_ds, const Dataset& test_ds,
                          const std::vector<int>& relevant_pos, const std::string& variant,
                          const std::string& out_dir) {
    ModelConfig mc;
    mc.conv_channels = {4, 8};  // compact model: too little capacity to memorize clutter
    mc.bottleneck_dim = 12;
    TrainConfig tc = experiment_train_config();
    Model m = train(train_ds, mc, tc, variant);

    MetricsReport rep = evaluate_model(m, test_ds, tc, variant);
    VariantResult vr;
    vr.metrics = BasicMetrics{rep.mae, rep.mse, rep.pcc, rep.constant_sequences};
    vr.concentration = saliency_concentration(m, test_ds.frames, relevant_pos, tc.patch_half);

    fs::create_directories(out_dir);
    save_model(out_dir + "/model.ckpt", m);
    write_metrics(out_dir, rep);
    return vr;
}

Experiment run_experiment(const std::string& root) {
    const auto t0 = Clock::now();
    SynthConfig sc;  // desk-scale corpus: 32x32, 6 subjects x 200 frames, 4 relevant of 10 AUs
    sc.frames_per_subject = 200;
    sc.seed = 7;
    Dataset ds = generate_synthetic(sc);
    auto [train_ds, test_ds] = split_loso(ds, ds.subjects.front());

    std::vector<int> relevant_pos;
    for (std::size_t k = 0; k < ds.au_ids.size(); ++k)
        for (int id : sc.relevant_au_ids)
            if (ds.au_ids[k] == id) relevant_pos.push_back(static_cast<int>(k));

    Experiment ex;
    ex.regression_only =
        run_variant(train_ds, test_ds, relevant_pos, "regression_only", root + "/regression_only");
    ex.method1 = run_variant(train_ds, test_ds, relevant_pos, "method1", root + "/method1");
    ex.method2 = run_variant(train_ds, test_ds, relevant_pos, "method2", root + "/method2");
    ex.seconds = seconds_since(t0);
    return ex;
}

Outcome criterion_experiment(const Experiment& ex) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "m2 mae %.3f mse %.3f pcc %.3f conc %.2f | m1 mae %.3f conc %.2f | "
                  "reg mae %.3f conc %.2f | %.0fs",
                  ex.method2.metrics.mae, ex.method2.metrics.mse, ex.method2.metrics.pcc,
                  ex.method2.concentration, ex.method1.metrics.mae, ex.method1.concentration,
                  ex.regression_only.metrics.mae, ex.regression_only.concentration, ex.seconds);
    const bool pass = ex.method2.metrics.pcc >= 0.85 && ex.method2.metrics.mae <= 0.5 &&
                      ex.method2.metrics.mae < ex.method1.metrics.mae &&
                      ex.method1.metrics.mae < ex.regression_only.metrics.mae &&
                      ex.method2.concentration >= 2.0 &&
                      ex.regression_only.concentration < 1.5 && ex.seconds < 900.0;
    return {pass, buf};
}

Outcome criterion_determinism(const std::string& root1, const std::string& root2) {
    for (const char* variant : {"regression_only", "method1", "method2"}) {
        for (const char* file : {"model.ckpt", "metrics.json", "metrics.txt"}) {
            const std::string a = root1 + "/" + variant + "/" + file;
            const std::string b = root2 + "/" + variant + "/" + file;
            if (slurp(a) != slurp(b))
                return {false, std::string(variant) + "/" + file + " differs between runs"};
        }
    }
    return {true, "checkpoints and metrics byte-identical across reruns"};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int idx, const char* name, const Outcome& o) {
        std::printf("criterion %d %-28s %s  (%s)\n", idx, name, o.pass ? "PASS" : "FAIL",
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    };

    try {
        std::vector<CheckResult> oracles = oracle_suite();
        report(1, "emd-oracle", from_check(oracles, "transport", 10.0));
        report(2, "mining-oracle", from_check(oracles, "mining", 10.0));
        report(3, "gradient-suite", criterion_gradients(gradient_suite()));
        report(4, "adjoint-and-tying", criterion_adjoint());
        report(5, "partition-brute-force", criterion_partition());
        report(6, "metrics-arithmetic", criterion_metrics());

        const std::string base = (fs::temp_directory_path() / "sspain_acceptance").string();
        fs::remove_all(base);
        Experiment run1 = run_experiment(base + "/run1");
        report(7, "desk-scale-experiment", criterion_experiment(run1));
        Experiment run2 = run_experiment(base + "/run2");
        report(8, "determinism", criterion_determinism(base + "/run1", base + "/run2"));
        fs::remove_all(base);
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 1;
    }

    std::printf(failures == 0 ? "all criteria passed\n" : "%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
