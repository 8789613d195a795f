#include "sspain/losses.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace sspain {

namespace {

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_histogram_pair(const Tensor& h1, const Tensor& h2) {
    if (h1.rank() != 1 || h2.rank() != 1)
        throw DimensionError("emd expects rank-1 histograms");
    if (h1.extent(0) != h2.extent(0))
        throw DimensionError("emd histogram sizes differ: " + std::to_string(h1.extent(0)) +
                             " vs " + std::to_string(h2.extent(0)));
    if (h1.extent(0) < 2) throw DimensionError("emd needs at least 2 bins");
}

}  // namespace

std::string to_json_line(const LossReport& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss_A"] = r.loss_A;
    j["loss_B"] = r.loss_B;
    j["loss_L"] = r.loss_L;
    j["loss_G"] = r.loss_G;
    j["reg"] = r.reg;
    j["center"] = r.center;
    return j.dump();
}

double emd_from_histograms(const Tensor& h1, const Tensor& h2) {
    check_histogram_pair(h1, h2);
    const int n = h1.extent(0);
    // For equal-mass histograms the final cumulative term is zero; summing only
    // the first n-1 keeps the gradient clean of mass-roundoff sign flips.
    double acc = 0.0, prefix = 0.0;
    for (int i = 0; i < n - 1; ++i) {
        prefix += h1[i] - h2[i];
        acc += std::fabs(prefix);
    }
    return acc / (n - 1);
}

void emd_from_histograms_backward(const Tensor& h1, const Tensor& h2, double gout, Tensor& g1,
                                  Tensor& g2) {
    check_histogram_pair(h1, h2);
    if (!g1.same_shape(h1) || !g2.same_shape(h2))
        throw DimensionError("emd backward accumulator shape mismatch");
    const int n = h1.extent(0);
    std::vector<double> s(n - 1);
    double prefix = 0.0;
    for (int i = 0; i < n - 1; ++i) {
        prefix += h1[i] - h2[i];
        s[i] = sign0(prefix);
    }
    // d emd / d h1[j] = (1/(n-1)) * sum_{i >= j} sign(prefix_i); h2 mirrors it.
    double suffix = 0.0;
    const double scale = gout / (n - 1);
    for (int j = n - 2; j >= 0; --j) {
        suffix += s[j];
        g1[j] += scale * suffix;
        g2[j] -= scale * suffix;
    }
}

double patch_emd(const Tensor& p1, const Tensor& p2, int n_bins) {
    if (!p1.same_shape(p2)) throw DimensionError("patch_emd: patch shapes differ");
    Tensor h1 = soft_histogram(p1, n_bins, 0.0, 1.0);
    Tensor h2 = soft_histogram(p2, n_bins, 0.0, 1.0);
    return emd_from_histograms(h1, h2);
}

double loss_set_A(const std::vector<PatchTriplet>& triplets, const std::map<int, double>& weights,
                  double gap, int n_bins, bool verbatim) {
    if (triplets.empty()) throw RangeError("empty relevant set");
    double total = 0.0;
    for (const PatchTriplet& t : triplets) {
        auto it = weights.find(t.au);
        if (it == weights.end())
            throw RangeError("loss_set_A: no weight for au " + std::to_string(t.au));
        double g_ap = patch_emd(t.pa, t.pp, n_bins);
        double g_an = patch_emd(t.pa, t.pn, n_bins);
        double term = verbatim ? g_an - g_ap + gap * it->second : g_ap - g_an + gap * it->second;
        if (term > 0.0) total += term;
    }
    return total;
}

double loss_set_B(const std::vector<PatchTriplet>& triplets, double gap, int n_set_B, int n_bins,
                  bool verbatim) {
    if (n_set_B <= 0 || triplets.empty()) return 0.0;
    const double margin = gap / n_set_B;
    double total = 0.0;
    for (const PatchTriplet& t : triplets) {
        double g_ap = patch_emd(t.pa, t.pp, n_bins);
        double g_an = patch_emd(t.pa, t.pn, n_bins);
        double term = verbatim ? g_ap - g_an - margin : g_an - g_ap - margin;
        if (term > 0.0) total += term;
    }
    return total;
}

double local_loss(double loss_a, double loss_b) { return loss_a + loss_b; }

namespace {

void check_unit(const Tensor& f, const char* which) {
    double n = std::sqrt(dot(f, f));
    if (std::fabs(n - 1.0) > 1e-4)
        throw RangeError(std::string("global triplet loss: ") + which +
                         " feature is not unit-norm (|f| = " + std::to_string(n) + ")");
}

}  // namespace

double global_triplet_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn, double gap,
                           double beta, bool verbatim) {
    check_unit(fa, "anchor");
    check_unit(fp, "positive");
    check_unit(fn, "negative");
    double d_ap = euclidean_distance(fa, fp);
    double d_an = euclidean_distance(fa, fn);
    double term = verbatim ? d_an - d_ap + gap * beta : d_ap - d_an + gap * beta;
    return term > 0.0 ? term : 0.0;
}

double global_triplet_loss_grad(const Tensor& fa, const Tensor& fp, const Tensor& fn, double gap,
                                double beta, bool verbatim, double gout, Tensor& ga, Tensor& gp,
                                Tensor& gn) {
    check_unit(fa, "anchor");
    check_unit(fp, "positive");
    check_unit(fn, "negative");
    double d_ap = euclidean_distance(fa, fp);
    double d_an = euclidean_distance(fa, fn);
    double term = verbatim ? d_an - d_ap + gap * beta : d_ap - d_an + gap * beta;
    if (term <= 0.0) return 0.0;
    double s_ap = verbatim ? -gout : gout;  // d term / d d_ap
    double s_an = verbatim ? gout : -gout;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        if (d_ap > 0.0) {
            double u = (fa[i] - fp[i]) / d_ap;
            ga[i] += s_ap * u;
            gp[i] -= s_ap * u;
        }
        if (d_an > 0.0) {
            double v = (fa[i] - fn[i]) / d_an;
            ga[i] += s_an * v;
            gn[i] -= s_an * v;
        }
    }
    return term;
}

double smooth_l1(double pred, double target) {
    double d = pred - target;
    double a = std::fabs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double pred, double target) {
    double d = pred - target;
    return std::fabs(d) < 1.0 ? d : sign0(d);
}

double center_loss_l1(const Tensor& feature, int level, const Tensor& centers) {
    if (centers.rank() != 2 || feature.rank() != 1 ||
        centers.extent(1) != feature.extent(0))
        throw DimensionError("center loss: feature/centers shape mismatch");
    if (level < 0 || level >= centers.extent(0))
        throw RangeError("center loss: level " + std::to_string(level) + " out of range");
    const int dim = feature.extent(0);
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) acc += std::fabs(feature[j] - centers.at2(level, j));
    return acc / dim;
}

void center_loss_l1_backward(const Tensor& feature, int level, const Tensor& centers, double gout,
                             Tensor& grad_feature, Tensor* grad_centers) {
    const int dim = feature.extent(0);
    const double scale = gout / dim;
    for (int j = 0; j < dim; ++j) {
        double s = sign0(feature[j] - centers.at2(level, j));
        grad_feature[j] += scale * s;
        if (grad_centers) grad_centers->at2(level, j) -= scale * s;
    }
}

namespace {

const PatchBox& box_for(const std::map<int, PatchBox>& boxes, int au) {
    auto it = boxes.find(au);
    if (it == boxes.end()) throw RangeError("missing patch box for au " + std::to_string(au));
    return it->second;
}

}  // namespace

LocalLossResult local_loss_on_maps(const Tensor& map_a, const Tensor& map_p, const Tensor& map_n,
                                   const AUPartition& partition,
                                   const std::map<int, PatchBox>& boxes_a,
                                   const std::map<int, PatchBox>& boxes_p,
                                   const std::map<int, PatchBox>& boxes_n, double gap,
                                   const LocalLossConfig& cfg) {
    if (partition.set_A.empty()) throw RangeError("empty relevant set");
    LocalLossResult res;
    res.grad_a = Tensor::zeros(map_a.shape());
    res.grad_p = Tensor::zeros(map_p.shape());
    res.grad_n = Tensor::zeros(map_n.shape());

    auto run_au = [&](int au, bool relevant) {
        const PatchBox& ba = box_for(boxes_a, au);
        const PatchBox& bp = box_for(boxes_p, au);
        const PatchBox& bn = box_for(boxes_n, au);
        Tensor pa = extract_patch(map_a, ba);
        Tensor pp = extract_patch(map_p, bp);
        Tensor pn = extract_patch(map_n, bn);
        Tensor ha = soft_histogram(pa, cfg.emd_bins, 0.0, 1.0);
        Tensor hp = soft_histogram(pp, cfg.emd_bins, 0.0, 1.0);
        Tensor hn = soft_histogram(pn, cfg.emd_bins, 0.0, 1.0);
        double g_ap = emd_from_histograms(ha, hp);
        double g_an = emd_from_histograms(ha, hn);

        double term, d_ap, d_an;  // hinge argument; d term / d g_ap, g_an
        if (relevant) {
            double w = partition.weights.at(au);
            term = cfg.verbatim ? g_an - g_ap + gap * w : g_ap - g_an + gap * w;
            d_ap = cfg.verbatim ? -1.0 : 1.0;
        } else {
            double margin = gap / partition.n_B;
            term = cfg.verbatim ? g_ap - g_an - margin : g_an - g_ap - margin;
            d_ap = cfg.verbatim ? 1.0 : -1.0;
        }
        d_an = -d_ap;
        if (term <= 0.0) return;
        (relevant ? res.loss_A : res.loss_B) += term;

        Tensor gha = Tensor::zeros(ha.shape());
        Tensor ghp = Tensor::zeros(hp.shape());
        Tensor ghn = Tensor::zeros(hn.shape());
        emd_from_histograms_backward(ha, hp, d_ap, gha, ghp);
        emd_from_histograms_backward(ha, hn, d_an, gha, ghn);
        scatter_patch_grad(res.grad_a, ba, soft_histogram_backward(pa, cfg.emd_bins, 0.0, 1.0, gha));
        scatter_patch_grad(res.grad_p, bp, soft_histogram_backward(pp, cfg.emd_bins, 0.0, 1.0, ghp));
        scatter_patch_grad(res.grad_n, bn, soft_histogram_backward(pn, cfg.emd_bins, 0.0, 1.0, ghn));
    };

    if (cfg.include_A)
        for (int au : partition.set_A) run_au(au, true);
    if (cfg.include_B)
        for (int au : partition.set_B) run_au(au, false);
    return res;
}

}  // namespace sspain
