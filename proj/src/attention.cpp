#include "sspain/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sspain {

AUPartition partition_aus(const std::vector<double>& va, const std::vector<double>& vp,
                          const std::vector<double>& vn, double alpha) {
    if (va.size() != vp.size() || va.size() != vn.size()) {
        throw DimensionError("partition_aus: AU vector lengths differ (" +
                             std::to_string(va.size()) + "," + std::to_string(vp.size()) + "," +
                             std::to_string(vn.size()) + ")");
    }
    if (!(alpha > 0.0)) throw RangeError("partition_aus: alpha must be > 0");
    AUPartition p;
    std::map<int, double> diffs;
    for (std::size_t k = 0; k < va.size(); ++k) {
        const double dp = std::abs(va[k] - vp[k]);
        const double dn = std::abs(va[k] - vn[k]);
        if (dp < alpha && dn >= alpha) {
            p.set_A.push_back(static_cast<int>(k));
            diffs[static_cast<int>(k)] = dn;
        } else {
            p.set_B.push_back(static_cast<int>(k));
        }
    }
    p.n_B = static_cast<int>(p.set_B.size());
    if (!p.set_A.empty()) p.weights = relevance_weights(diffs);
    return p;
}

std::map<int, double> relevance_weights(const std::map<int, double>& diffs) {
    if (diffs.empty()) throw RangeError("empty relevant set");
    double total = 0.0;
    for (const auto& [k, d] : diffs) total += d;
    if (!(total > 0.0)) throw RangeError("relevance_weights: gaps must be positive");
    std::map<int, double> w;
    for (const auto& [k, d] : diffs) w[k] = d / total;
    return w;
}

PatchBox patch_box(int landmark_x, int landmark_y, int image_h, int image_w, int half) {
    const int side = 2 * half + 1;
    if (image_h < side || image_w < side) {
        throw DimensionError("patch_box: image " + std::to_string(image_h) + "x" +
                             std::to_string(image_w) + " smaller than patch side " +
                             std::to_string(side));
    }
    if (landmark_x < 0 || landmark_x >= image_w || landmark_y < 0 || landmark_y >= image_h) {
        throw RangeError("patch_box: landmark (" + std::to_string(landmark_x) + "," +
                         std::to_string(landmark_y) + ") outside image");
    }
    PatchBox b;
    b.half = half;
    b.cx = std::clamp(landmark_x, half, image_w - 1 - half);
    b.cy = std::clamp(landmark_y, half, image_h - 1 - half);
    return b;
}

Tensor render_attention_map(const AUPartition& partition, const std::vector<PatchBox>& boxes,
                            int image_h, int image_w) {
    Tensor map({1, image_h, image_w});
    for (int k : partition.set_A) {
        const auto it =
            std::find_if(boxes.begin(), boxes.end(), [k](const PatchBox& b) { return b.au == k; });
        if (it == boxes.end()) throw Error("render_attention_map: no box for AU " + std::to_string(k));
        const double w = partition.weights.at(k);
        for (int y = it->y0(); y < it->y0() + it->side(); ++y) {
            for (int x = it->x0(); x < it->x0() + it->side(); ++x) {
                map.at3(0, y, x) = std::max(map.at3(0, y, x), w);
            }
        }
    }
    return map;
}

Tensor extract_patch(const Tensor& map, const PatchBox& box) {
    if (map.rank() != 3 || map.extent(0) != 1) {
        throw DimensionError("extract_patch expects a [1,H,W] map");
    }
    const int side = box.side();
    Tensor patch({side, side});
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) patch.at2(y, x) = map.at3(0, box.y0() + y, box.x0() + x);
    return patch;
}

void scatter_patch_grad(Tensor& map_grad, const PatchBox& box, const Tensor& patch_grad) {
    const int side = box.side();
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            map_grad.at3(0, box.y0() + y, box.x0() + x) += patch_grad.at2(y, x);
}

}  // namespace sspain
