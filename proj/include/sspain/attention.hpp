#pragma once

#include <map>
#include <vector>

#include "sspain/tensor.hpp"

namespace sspain {

// Anchor/positive share a pain level, the negative differs; gap is the
// absolute level difference between anchor and negative.
struct Triplet {
    int anchor = -1;
    int positive = -1;
    int negative = -1;
    double gap = 0.0;
};

// Per-triplet split of AU indices into the relevant set A (with normalized
// contribution weights) and the irrelevant set B.
struct AUPartition {
    std::vector<int> set_A;
    std::vector<int> set_B;
    std::map<int, double> weights;  // au index -> weight, keys == set_A
    int n_B = 0;
};

// An AU's square patch window; always full (2*half+1)^2 pixels, shifted away
// from image edges when needed.
struct PatchBox {
    int au = -1;
    int cx = 0, cy = 0;  // center column / row
    int half = 5;
    int x0() const { return cx - half; }
    int y0() const { return cy - half; }
    int side() const { return 2 * half + 1; }
};

// An AU index lands in set A iff |Va-Vp| < alpha and |Va-Vn| >= alpha.
// Weights are |Va-Vn| normalized to sum 1 over set A.
AUPartition partition_aus(const std::vector<double>& va, const std::vector<double>& vp,
                          const std::vector<double>& vn, double alpha);

// Normalize anchor-negative gaps into contribution weights (sum 1).
std::map<int, double> relevance_weights(const std::map<int, double>& diffs);

PatchBox patch_box(int landmark_x, int landmark_y, int image_h, int image_w, int half);

// Zero map with each set-A box filled with its weight; overlaps keep the max.
Tensor render_attention_map(const AUPartition& partition, const std::vector<PatchBox>& boxes,
                            int image_h, int image_w);

// View of a patch copied out of a [1,H,W] map.
Tensor extract_patch(const Tensor& map, const PatchBox& box);
// Accumulate a patch-shaped gradient back into a [1,H,W] map gradient.
void scatter_patch_grad(Tensor& map_grad, const PatchBox& box, const Tensor& patch_grad);

}  // namespace sspain
