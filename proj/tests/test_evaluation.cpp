#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sspain/evaluation.hpp"
#include "sspain/rng.hpp"

using namespace sspain;
namespace fs = std::filesystem;

namespace {

SequenceResult seq(const std::string& id, std::vector<double> preds, std::vector<double> labels) {
    return SequenceResult{id, std::move(preds), std::move(labels)};
}

}  // namespace

TEST_CASE("perfect and shifted predictions") {
    BasicMetrics perfect = compute_metrics({seq("a", {0, 1, 2}, {0, 1, 2})});
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.pcc == doctest::Approx(1.0));
    CHECK(perfect.constant_sequences == 0);

    BasicMetrics shifted = compute_metrics({seq("a", {1, 2, 3}, {0, 1, 2})});
    CHECK(shifted.mae == doctest::Approx(1.0));
    CHECK(shifted.mse == doctest::Approx(1.0));
    CHECK(shifted.pcc == doctest::Approx(1.0));
}

TEST_CASE("hand arithmetic on a reversed 3-frame sequence") {
    BasicMetrics m = compute_metrics({seq("a", {2, 1, 0}, {0, 1, 2})});
    CHECK(m.mae == doctest::Approx(4.0 / 3.0));
    CHECK(m.mse == doctest::Approx(8.0 / 3.0));
    CHECK(m.pcc == doctest::Approx(-1.0));
}

TEST_CASE("sequence averaging and the constant-sequence convention") {
    BasicMetrics m = compute_metrics({seq("a", {0, 1, 2}, {0, 1, 2}),    // pcc 1, mae 0
                                      seq("b", {2, 2, 2}, {0, 1, 2})});  // constant preds -> pcc 0
    CHECK(m.pcc == doctest::Approx(0.5));
    CHECK(m.mae == doctest::Approx((0.0 + (2 + 1 + 0) / 3.0) / 2.0));
    CHECK(m.constant_sequences == 1);

    CHECK_THROWS_AS(compute_metrics({}), RangeError);
    CHECK_THROWS_AS(compute_metrics({seq("a", {}, {})}), RangeError);
    CHECK_THROWS_AS(compute_metrics({seq("a", {1.0}, {1.0, 2.0})}), RangeError);
}

TEST_CASE("PCC is invariant under positive affine maps of the predictions") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> p, l;
        for (int i = 0; i < 20; ++i) {
            p.push_back(rng.uniform(0, 5));
            l.push_back(rng.uniform(0, 5));
        }
        const double base = compute_metrics({seq("a", p, l)}).pcc;
        const double a = rng.uniform(0.1, 3.0), b = rng.uniform(-2, 2);
        std::vector<double> q;
        for (double v : p) q.push_back(a * v + b);
        const double mapped = compute_metrics({seq("a", q, l)}).pcc;
        CHECK(mapped == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("weighted metrics average per-level errors uniformly") {
    // single level present: wmae equals pooled mae
    WeightedMetrics one = weighted_metrics({seq("a", {1, 2}, {3, 3})});
    CHECK(one.wmae == doctest::Approx((2 + 1) / 2.0));

    // levels {0,5} with per-class MAE {0,1}
    WeightedMetrics two = weighted_metrics({seq("a", {0, 0, 4, 4}, {0, 0, 5, 5})});
    CHECK(two.wmae == doctest::Approx(0.5));
    CHECK(two.wmse == doctest::Approx(0.5));

    // balanced data: weighted equals pooled within 1e-12
    Rng rng(6);
    std::vector<double> p, l;
    for (int lvl = 0; lvl <= 5; ++lvl)
        for (int i = 0; i < 4; ++i) {
            l.push_back(lvl);
            p.push_back(rng.uniform(0, 5));
        }
    WeightedMetrics w = weighted_metrics({seq("a", p, l)});
    double mae = 0, mse = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        mae += std::abs(p[i] - l[i]);
        mse += (p[i] - l[i]) * (p[i] - l[i]);
    }
    mae /= p.size();
    mse /= p.size();
    CHECK(std::abs(w.wmae - mae) < 1e-12);
    CHECK(std::abs(w.wmse - mse) < 1e-12);
}

TEST_CASE("cross-validation folds are per-subject and the report echoes its setup") {
    SynthConfig sc;
    sc.image_size = 16;
    sc.n_subjects = 2;
    sc.frames_per_subject = 12;
    sc.seed = 3;
    Dataset ds = generate_synthetic(sc);

    ModelConfig mc;
    mc.conv_channels = {2, 4};
    mc.bottleneck_dim = 8;
    mc.image_h = 16;
    mc.image_w = 16;

    TrainConfig tc;
    tc.batch_size = 8;
    tc.alt_steps = 2;
    tc.finetune_steps = 3;
    tc.emd_bins = 8;
    tc.patch_half = 2;
    tc.seed = 5;

    std::vector<std::string> observed;
    MetricsReport rep = cross_validate(ds, mc, tc, "method2", {},
                                       [&](int fold, const Model&, const SequenceResult& r) {
                                           observed.push_back(r.subject_id);
                                           CHECK(fold == static_cast<int>(observed.size()) - 1);
                                           CHECK(r.predictions.size() == 12u);
                                       });
    CHECK(observed == ds.subjects);
    CHECK(rep.fold_subjects == ds.subjects);
    REQUIRE(rep.per_fold.size() == 2u);
    CHECK(rep.variant == "method2");
    CHECK(rep.seed == 5u);
    CHECK(rep.alpha == 1.0);
    CHECK(rep.beta == doctest::Approx(0.2));
    CHECK(rep.verbatim_loss_signs == false);
    CHECK(rep.rescale_table == default_rescale_table());
    CHECK(rep.mae >= 0.0);
    CHECK(rep.pcc >= -1.0);
    CHECK(rep.pcc <= 1.0);

    Dataset solo;
    solo.subjects = {"only"};
    CHECK_THROWS_AS(cross_validate(solo, mc, tc, "method2"), RangeError);
}

TEST_CASE("saliency concentration ratio and its infinity sentinel") {
    // hand-made "model" is overkill; drive the pure ratio path via a trained
    // tiny model and check the sentinel with a crafted frame set instead
    SynthConfig sc;
    sc.image_size = 16;
    sc.n_subjects = 2;
    sc.frames_per_subject = 6;
    sc.seed = 9;
    Dataset ds = generate_synthetic(sc);
    ModelConfig mc;
    mc.conv_channels = {2, 4};
    mc.bottleneck_dim = 8;
    mc.image_h = 16;
    mc.image_w = 16;
    Model m = init_model(mc, 2);

    std::vector<int> relevant_pos;
    for (std::size_t k = 0; k < ds.au_ids.size(); ++k)
        if (ds.au_ids[k] == 1 || ds.au_ids[k] == 4 || ds.au_ids[k] == 7 || ds.au_ids[k] == 10)
            relevant_pos.push_back(static_cast<int>(k));

    const double ratio = saliency_concentration(m, ds.frames, relevant_pos, 2);
    CHECK(std::isfinite(ratio));
    CHECK(ratio > 0.0);

    CHECK_THROWS_AS(saliency_concentration(m, ds.frames, {}, 2), RangeError);
    CHECK_THROWS_AS(saliency_concentration(m, ds.frames, {0, 99}, 2), RangeError);
}

TEST_CASE("metrics reports serialize to JSON and a fixed-column table") {
    MetricsReport r;
    r.mae = 0.5;
    r.mse = 0.75;
    r.pcc = 0.9;
    r.wmae = 0.6;
    r.wmse = 1.1;
    r.constant_sequences = 1;
    r.fold_subjects = {"s000", "s001"};
    r.per_fold = {BasicMetrics{0.4, 0.7, 0.95, 0}, BasicMetrics{0.6, 0.8, 0.85, 1}};
    r.variant = "method2";
    r.seed = 7;
    r.alpha = 1.0;
    r.beta = 0.2;
    r.verbatim_loss_signs = false;
    r.rescale_table = default_rescale_table();

    const std::string js = metrics_json(r);
    CHECK(js.find("\"variant\": \"method2\"") != std::string::npos);
    CHECK(js.find("\"mae\": 0.5") != std::string::npos);
    CHECK(js.find("\"folds\"") != std::string::npos);

    const std::string txt = metrics_text(r);
    CHECK(txt.find("paper-reported method 1") != std::string::npos);
    CHECK(txt.find("paper-reported method 2") != std::string::npos);
    CHECK(txt.find("0.334") != std::string::npos);
    CHECK(txt.find("0.804") != std::string::npos);
    CHECK(txt.find("0.727") != std::string::npos);
    CHECK(txt.find("this run (method2)") != std::string::npos);
    CHECK(txt.find("s001") != std::string::npos);

    const std::string dir = (fs::temp_directory_path() / "sspain_test_metrics").string();
    write_metrics(dir, r);
    CHECK(fs::exists(dir + "/metrics.json"));
    CHECK(fs::exists(dir + "/metrics.txt"));
    std::ifstream in(dir + "/metrics.json");
    std::string all((std::istreambuf_iterator<char>(in)), {});
    CHECK(all == js);
    fs::remove_all(dir);
}
