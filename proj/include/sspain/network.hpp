#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sspain/tensor.hpp"

namespace sspain {

struct ModelConfig {
    std::vector<int> conv_channels = {8, 16, 32};
    int kernel = 3;
    int stride = 2;
    int bottleneck_dim = 64;
    int image_h = 32;
    int image_w = 32;
};

// Resolved activation geometry. Strided 3x3 convs cannot halve every size
// exactly, so the input is zero-padded (right/bottom) to the nearest canvas
// the whole chain divides; the decoder crops the same margin back off. Both
// steps are linear with exact adjoints, so weight tying is unaffected.
struct Geometry {
    int pad_h = 0, pad_w = 0;          // canvas the encoder actually sees
    std::vector<int> hs, ws;           // per-layer output sizes
    int flat_dim = 0;                  // channels.back() * hs.back() * ws.back()
    int conv_pad = 1;                  // (kernel-1)/2, same padding every layer
};

Geometry compute_geometry(const ModelConfig& cfg);

// All learnable state lives in `params`; the decoder reads the same kernel
// tensors the encoder writes (a view, never a copy), which is what keeps the
// two in lockstep ("frozen" mirror).
// Names: conv<i>.k [Co,Ci,k,k], conv<i>.b [Co], fc.w [D,flat], fc.b [D],
//        head.w [1,D], head.b [1], centers [6,D].
struct Model {
    ModelConfig cfg;
    Geometry geom;
    ParamSet params;
};

// He fan-in Gaussian kernels, zero biases, zero centers; one RNG stream.
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// Sanity checkpoint before saliency work: the decoder has no storage of its
// own, so this only asserts the shared parameters are present and finite.
void sync_decoder(const Model& m);

struct EncodeTrace {
    Tensor padded;             // [1,ph,pw] zero-extended input
    std::vector<Tensor> pre;   // conv outputs + bias, per layer
    std::vector<Tensor> act;   // rectified (or pass-through in linear mode)
    Tensor flat;               // flattened last activation [flat_dim]
    Tensor feature;            // raw bottleneck [D]
    bool linear = false;
};

// linear=true disables every rectification (adjoint-identity test mode).
EncodeTrace encode(const Model& m, const Tensor& image, bool linear = false);

struct DecodeTrace {
    Tensor flat_pre, flat_act;  // transposed-bottleneck signal [flat_dim]
    std::vector<Tensor> pre;    // adjoint-conv outputs, deepest stage first
    std::vector<Tensor> act;    // rectified except the final image-domain map
    Tensor raw;                 // [1,H,W] signed map after cropping
    MinMaxNorm norm;            // norm.normalized is the saliency map in [0,1]
    bool linear = false;
};

// Mirror of encode with the same kernels: bottleneck transpose, then one
// adjoint conv per encoder layer in reverse. Interior stages are rectified
// (deconvnet convention); the final map stays signed and is min-max
// normalized, constant maps collapsing to all 0.5.
DecodeTrace decode_saliency(const Model& m, const Tensor& feature, bool linear = false);

// Scalar pain estimate in (0,5): scaled sigmoid over the linear head.
double regress(const Model& m, const Tensor& feature);

// d(loss)/d(raw feature) -> parameter gradients along the encode path.
// Returns d(loss)/d(image) implicitly discarded; accumulates into grads.
void encode_backward(const Model& m, const EncodeTrace& tr, const Tensor& grad_feature,
                     ParamSet& grads);

// d(loss)/d(normalized map) -> d(loss)/d(feature). The decoder is a frozen
// view of the encoder weights, so no parameter gradient accumulates here;
// callers chain the returned feature gradient into encode_backward.
Tensor decode_backward(const Model& m, const DecodeTrace& dtr, const Tensor& grad_map);

// d(loss)/d(prediction) -> head gradients; returns d(loss)/d(raw feature).
Tensor regress_backward(const Model& m, const Tensor& feature, double prediction,
                        double grad_pred, ParamSet& grads);

// Checkpoint: "SSUP", u32 version, length-prefixed ModelConfig JSON, then
// named tensors. Reloading and saving again reproduces the file byte-for-byte.
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

}  // namespace sspain
