#pragma once

#include <map>
#include <string>
#include <vector>

#include "sspain/attention.hpp"
#include "sspain/tensor.hpp"

namespace sspain {

// Saliency patches of one AU across a triplet.
struct PatchTriplet {
    int au = -1;
    Tensor pa, pp, pn;
};

// Per-step loss breakdown; loss_L == loss_A + loss_B.
struct LossReport {
    int step = 0;
    double loss_A = 0.0;
    double loss_B = 0.0;
    double loss_L = 0.0;
    double loss_G = 0.0;
    double reg = 0.0;
    double center = 0.0;
};

std::string to_json_line(const LossReport& r);

// Normalized 1-D earth mover's distance between two histograms of equal mass:
// (1/(B-1)) * sum_i |cumsum(h1-h2)_i|, in [0,1].
double emd_from_histograms(const Tensor& h1, const Tensor& h2);
// Accumulates d(emd)/dh1 * gout into g1 and likewise into g2 (sign(0) = 0).
void emd_from_histograms_backward(const Tensor& h1, const Tensor& h2, double gout, Tensor& g1,
                                  Tensor& g2);

// The patch metric g(m,n): EMD between the soft histograms of two patches.
double patch_emd(const Tensor& p1, const Tensor& p2, int n_bins);

// Relevant-AU loss: sum_k [ g(Pa,Pp) - g(Pa,Pn) + O*W_k ]_+ .
// verbatim=true keeps the printed operand order [ g(Pa,Pn) - g(Pa,Pp) + O*W_k ]_+ .
double loss_set_A(const std::vector<PatchTriplet>& triplets, const std::map<int, double>& weights,
                  double gap, int n_bins, bool verbatim = false);

// Irrelevant-AU loss: sum_k [ g(Pa,Pn) - g(Pa,Pp) - O/N ]_+ ; zero when N == 0.
// verbatim=true flips the operand order inside the hinge.
double loss_set_B(const std::vector<PatchTriplet>& triplets, double gap, int n_set_B, int n_bins,
                  bool verbatim = false);

double local_loss(double loss_a, double loss_b);

// [ ||Fa-Fp|| - ||Fa-Fn|| + O*beta ]_+ on unit-norm features
// (printed operand order under verbatim=true).
double global_triplet_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn, double gap,
                           double beta, bool verbatim = false);
// Same hinge, also accumulating gradients w.r.t. the three unit features.
double global_triplet_loss_grad(const Tensor& fa, const Tensor& fp, const Tensor& fn, double gap,
                                double beta, bool verbatim, double gout, Tensor& ga, Tensor& gp,
                                Tensor& gn);

double smooth_l1(double pred, double target);
double smooth_l1_grad(double pred, double target);  // d/d pred

// L1 distance to the class center, normalized by feature dimension.
double center_loss_l1(const Tensor& feature, int level, const Tensor& centers);
// d/d feature (+= gout * sign/dim); optionally also d/d centers row.
void center_loss_l1_backward(const Tensor& feature, int level, const Tensor& centers, double gout,
                             Tensor& grad_feature, Tensor* grad_centers);

// ---- whole-triplet local loss on normalized saliency maps ----------------------

struct LocalLossConfig {
    int emd_bins = 32;
    bool verbatim = false;
    // Term selection; diagnostics check the two hinge families separately.
    bool include_A = true;
    bool include_B = true;
};

struct LocalLossResult {
    double loss_A = 0.0;
    double loss_B = 0.0;
    double total() const { return loss_A + loss_B; }
    Tensor grad_a, grad_p, grad_n;  // d total / d normalized map, same shape as maps
};

// Evaluates the set-A + set-B losses of one triplet directly on the three
// normalized saliency maps, with patch extraction at the given boxes (indexed
// au -> box, one per map), and returns gradients w.r.t. the maps.
LocalLossResult local_loss_on_maps(const Tensor& map_a, const Tensor& map_p, const Tensor& map_n,
                                   const AUPartition& partition,
                                   const std::map<int, PatchBox>& boxes_a,
                                   const std::map<int, PatchBox>& boxes_p,
                                   const std::map<int, PatchBox>& boxes_n, double gap,
                                   const LocalLossConfig& cfg);

}  // namespace sspain
