#include "sspain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "sspain/error.hpp"

namespace sspain {

namespace {

BasicMetrics sequence_metrics(const SequenceResult& s) {
    if (s.predictions.empty() || s.predictions.size() != s.labels.size())
        throw RangeError("empty or mismatched sequence for subject " + s.subject_id);
    const std::size_t n = s.predictions.size();
    BasicMetrics m;
    double mp = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = s.predictions[i] - s.labels[i];
        m.mae += std::fabs(d);
        m.mse += d * d;
        mp += s.predictions[i];
        ml += s.labels[i];
    }
    m.mae /= n;
    m.mse /= n;
    mp /= n;
    ml /= n;
    double cov = 0.0, vp = 0.0, vl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dp = s.predictions[i] - mp, dl = s.labels[i] - ml;
        cov += dp * dl;
        vp += dp * dp;
        vl += dl * dl;
    }
    if (vp == 0.0 || vl == 0.0) {
        m.pcc = 0.0;  // correlation of a constant sequence is undefined
        m.constant_sequences = 1;
    } else {
        m.pcc = cov / std::sqrt(vp * vl);
    }
    return m;
}

}  // namespace

BasicMetrics compute_metrics(const std::vector<SequenceResult>& results) {
    if (results.empty()) throw RangeError("empty result set");
    BasicMetrics total;
    for (const SequenceResult& s : results) {
        const BasicMetrics m = sequence_metrics(s);
        total.mae += m.mae;
        total.mse += m.mse;
        total.pcc += m.pcc;
        total.constant_sequences += m.constant_sequences;
    }
    const double inv = 1.0 / results.size();
    total.mae *= inv;
    total.mse *= inv;
    total.pcc *= inv;
    return total;
}

WeightedMetrics weighted_metrics(const std::vector<SequenceResult>& results) {
    if (results.empty()) throw RangeError("empty result set");
    struct Acc {
        double abs = 0.0, sq = 0.0;
        int n = 0;
    };
    std::map<double, Acc> by_level;
    for (const SequenceResult& s : results) {
        if (s.predictions.empty() || s.predictions.size() != s.labels.size())
            throw RangeError("empty or mismatched sequence for subject " + s.subject_id);
        for (std::size_t i = 0; i < s.predictions.size(); ++i) {
            Acc& a = by_level[s.labels[i]];
            const double d = s.predictions[i] - s.labels[i];
            a.abs += std::fabs(d);
            a.sq += d * d;
            a.n += 1;
        }
    }
    WeightedMetrics w;
    for (const auto& [level, a] : by_level) {
        w.wmae += a.abs / a.n;
        w.wmse += a.sq / a.n;
    }
    w.wmae /= by_level.size();
    w.wmse /= by_level.size();
    return w;
}

namespace {

SequenceResult predict_sequence(const Model& m, const Dataset& ds, const std::string& subject) {
    SequenceResult seq;
    seq.subject_id = subject;
    for (const Frame& fr : ds.frames) {
        if (fr.subject_id != subject) continue;
        const EncodeTrace tr = encode(m, fr.image);
        seq.predictions.push_back(regress(m, tr.feature));
        seq.labels.push_back(fr.level);
    }
    return seq;
}

void fill_aggregate(MetricsReport& rep, const std::vector<SequenceResult>& seqs) {
    const BasicMetrics basic = compute_metrics(seqs);
    const WeightedMetrics weighted = weighted_metrics(seqs);
    rep.mae = basic.mae;
    rep.mse = basic.mse;
    rep.pcc = basic.pcc;
    rep.constant_sequences = basic.constant_sequences;
    rep.wmae = weighted.wmae;
    rep.wmse = weighted.wmse;
    for (const SequenceResult& s : seqs) {
        rep.fold_subjects.push_back(s.subject_id);
        rep.per_fold.push_back(sequence_metrics(s));
    }
}

void fill_echo(MetricsReport& rep, const TrainConfig& cfg, const std::string& variant) {
    rep.variant = variant;
    rep.seed = cfg.seed;
    rep.alpha = cfg.alpha;
    rep.beta = cfg.beta;
    rep.verbatim_loss_signs = cfg.verbatim_loss_signs;
    rep.rescale_table = default_rescale_table();
}

}  // namespace

MetricsReport cross_validate(const Dataset& ds, const ModelConfig& model_cfg,
                             const TrainConfig& train_cfg, const std::string& variant,
                             const LogSink& log, const FoldObserver& observer) {
    if (ds.subjects.size() < 2)
        throw RangeError("cross-validation needs at least 2 subjects, got " +
                         std::to_string(ds.subjects.size()));
    std::vector<SequenceResult> seqs;
    for (std::size_t f = 0; f < ds.subjects.size(); ++f) {
        const std::string& held = ds.subjects[f];
        const auto [train_ds, test_ds] = split_loso(ds, held);
        TrainConfig fold_cfg = train_cfg;
        fold_cfg.seed = mix_seed(train_cfg.seed, f);
        const Model model = train(train_ds, model_cfg, fold_cfg, variant, log);
        SequenceResult seq = predict_sequence(model, test_ds, held);
        if (observer) observer(static_cast<int>(f), model, seq);
        seqs.push_back(std::move(seq));
    }
    MetricsReport rep;
    fill_aggregate(rep, seqs);
    fill_echo(rep, train_cfg, variant);
    return rep;
}

MetricsReport evaluate_model(const Model& m, const Dataset& ds, const TrainConfig& train_cfg,
                             const std::string& variant) {
    std::vector<SequenceResult> seqs;
    for (const std::string& subject : ds.subjects) {
        SequenceResult seq = predict_sequence(m, ds, subject);
        if (!seq.predictions.empty()) seqs.push_back(std::move(seq));
    }
    MetricsReport rep;
    fill_aggregate(rep, seqs);
    fill_echo(rep, train_cfg, variant);
    return rep;
}

double saliency_concentration(const Model& m, const std::vector<Frame>& frames,
                              const std::vector<int>& relevant_au_positions, int patch_half) {
    if (frames.empty()) throw RangeError("saliency_concentration needs at least one frame");
    if (relevant_au_positions.empty()) throw RangeError("empty relevant set");
    double rel_mean = 0.0, irr_mean = 0.0;
    for (const Frame& fr : frames) {
        const int h = fr.image.extent(1), w = fr.image.extent(2);
        std::vector<bool> relevant(fr.landmarks.size(), false);
        for (int k : relevant_au_positions) {
            if (k < 0 || k >= static_cast<int>(fr.landmarks.size()))
                throw RangeError("relevant AU position " + std::to_string(k) + " out of range");
            relevant[k] = true;
        }
        const EncodeTrace etr = encode(m, fr.image);
        const DecodeTrace dtr = decode_saliency(m, etr.feature);
        const Tensor& map = dtr.norm.normalized;
        double rel_sum = 0.0, irr_sum = 0.0;
        long rel_n = 0, irr_n = 0;
        for (std::size_t k = 0; k < fr.landmarks.size(); ++k) {
            const PatchBox box =
                patch_box(fr.landmarks[k].first, fr.landmarks[k].second, h, w, patch_half);
            double acc = 0.0;
            for (int y = box.y0(); y < box.y0() + box.side(); ++y)
                for (int x = box.x0(); x < box.x0() + box.side(); ++x) acc += map.at3(0, y, x);
            if (relevant[k]) {
                rel_sum += acc;
                rel_n += box.side() * box.side();
            } else {
                irr_sum += acc;
                irr_n += box.side() * box.side();
            }
        }
        rel_mean += rel_n > 0 ? rel_sum / rel_n : 0.0;
        irr_mean += irr_n > 0 ? irr_sum / irr_n : 0.0;
    }
    rel_mean /= frames.size();
    irr_mean /= frames.size();
    if (irr_mean == 0.0) return std::numeric_limits<double>::infinity();
    return rel_mean / irr_mean;
}

std::string metrics_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["seed"] = r.seed;
    j["alpha"] = r.alpha;
    j["beta"] = r.beta;
    j["verbatim_loss_signs"] = r.verbatim_loss_signs;
    j["rescale_table"] = r.rescale_table;
    j["mae"] = r.mae;
    j["mse"] = r.mse;
    j["pcc"] = r.pcc;
    j["wmae"] = r.wmae;
    j["wmse"] = r.wmse;
    j["constant_sequences"] = r.constant_sequences;
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.per_fold.size(); ++i) {
        nlohmann::ordered_json f;
        f["subject"] = r.fold_subjects[i];
        f["mae"] = r.per_fold[i].mae;
        f["mse"] = r.per_fold[i].mse;
        f["pcc"] = r.per_fold[i].pcc;
        folds.push_back(std::move(f));
    }
    j["folds"] = std::move(folds);
    return j.dump(2) + "\n";
}

std::string metrics_text(const MetricsReport& r) {
    char line[160];
    std::string out;
    auto row3 = [&](const std::string& name, double a, double b, double c) {
        std::snprintf(line, sizeof line, "%-30s %8.3f %8.3f %8.3f\n", name.c_str(), a, b, c);
        out += line;
    };
    auto row2 = [&](const std::string& name, double a, double b) {
        std::snprintf(line, sizeof line, "%-30s %8.3f %8.3f\n", name.c_str(), a, b);
        out += line;
    };
    out += "pain intensity estimation, frame level\n";
    std::snprintf(line, sizeof line, "%-30s %8s %8s %8s\n", "method", "MAE", "MSE", "PCC");
    out += line;
    row3("paper-reported method 1", 0.401, 0.742, 0.643);
    row3("paper-reported method 2", 0.334, 0.626, 0.804);
    row3("this run (" + r.variant + ")", r.mae, r.mse, r.pcc);
    out += "\nuniform class weighting\n";
    std::snprintf(line, sizeof line, "%-30s %8s %8s\n", "method", "wMAE", "wMSE");
    out += line;
    row2("paper-reported method 1", 0.883, 1.697);
    row2("paper-reported method 2", 0.727, 1.566);
    row2("this run (" + r.variant + ")", r.wmae, r.wmse);
    out += "\nper-subject folds\n";
    std::snprintf(line, sizeof line, "%-30s %8s %8s %8s\n", "subject", "MAE", "MSE", "PCC");
    out += line;
    for (std::size_t i = 0; i < r.per_fold.size(); ++i)
        row3(r.fold_subjects[i], r.per_fold[i].mae, r.per_fold[i].mse, r.per_fold[i].pcc);
    std::snprintf(line, sizeof line,
                  "\nvariant=%s seed=%llu alpha=%g beta=%g verbatim_loss_signs=%s\n",
                  r.variant.c_str(), static_cast<unsigned long long>(r.seed), r.alpha, r.beta,
                  r.verbatim_loss_signs ? "true" : "false");
    out += line;
    out += "rescale_table=[";
    for (std::size_t i = 0; i < r.rescale_table.size(); ++i) {
        if (i) out += ",";
        std::snprintf(line, sizeof line, "%g", r.rescale_table[i]);
        out += line;
    }
    std::snprintf(line, sizeof line, "] constant_sequences=%d\n", r.constant_sequences);
    out += line;
    return out;
}

void write_metrics(const std::string& out_dir, const MetricsReport& r) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/metrics.json", std::ios::binary);
        if (!f) throw IoError("cannot open for writing: " + out_dir + "/metrics.json");
        f << metrics_json(r);
    }
    std::ofstream f(out_dir + "/metrics.txt", std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + out_dir + "/metrics.txt");
    f << metrics_text(r);
}

}  // namespace sspain
