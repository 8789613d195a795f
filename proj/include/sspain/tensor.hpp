#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sspain/error.hpp"

namespace sspain {

// Dense row-major tensor of doubles. Immutable shape; data freely mutable by
// the owner. All numeric kernels below are pure functions of their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor from_data(std::vector<int> shape, std::vector<double> data);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int extent(int axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 3-D [C,H,W] accessors, the workhorse layout for feature maps.
    double& at3(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    // 4-D [Co,Ci,Kh,Kw] accessors for kernel stacks.
    double& at4(int a, int b, int c, int d) {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at4(int a, int b, int c, int d) const {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double& at2(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at2(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double v);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Named parameter collection. std::map keeps iteration order deterministic.
class ParamSet {
public:
    using Map = std::map<std::string, Tensor>;

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void insert(const std::string& name, Tensor t);

    Map::iterator begin() { return params_.begin(); }
    Map::iterator end() { return params_.end(); }
    Map::const_iterator begin() const { return params_.begin(); }
    Map::const_iterator end() const { return params_.end(); }
    std::size_t count() const { return params_.size(); }

    // Zero tensors with identical names/shapes; gradient accumulator.
    ParamSet zeros_like() const;
    // this += scale * other, matched by name. Missing names are skipped so a
    // partial gradient (frozen layers) applies cleanly.
    void add_scaled(const ParamSet& other, double scale);

private:
    Map params_;
};

// ---- convolution primitives ------------------------------------------------

// Cross-correlation of input [Ci,H,W] with kernels [Co,Ci,k,k]; zero padding.
// Requires (H + 2*pad - k) exactly divisible by stride.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad);

// Exact linear adjoint of conv2d with the same kernels: maps a code tensor
// [Co,H',W'] back to input geometry [Ci,H,W].
Tensor conv2d_adjoint(const Tensor& code, const Tensor& kernels, int stride, int pad);

// Bilinear kernel gradient shared by conv2d and conv2d_adjoint:
//   G[co,ci,ky,kx] = sum_{oy,ox} code[co,oy,ox] * image[ci, oy*s-p+ky, ox*s-p+kx]
// For y = conv2d(x,K): dK = conv_kernel_grad(x, dy).
// For y = conv2d_adjoint(x,K): dK = conv_kernel_grad(dy, x).
Tensor conv_kernel_grad(const Tensor& image_side, const Tensor& code_side, int k, int stride,
                        int pad);

// ---- elementwise / small ops -------------------------------------------------

Tensor relu(const Tensor& t);
// grad of relu at pre-activation `pre`; derivative at 0 is 0.
Tensor relu_backward(const Tensor& pre, const Tensor& grad_out);

void add_channel_bias(Tensor& maps, const Tensor& bias);  // maps [C,H,W] += bias[C]

// y = W x + b with W [out,in], x [in], b [out].
Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x);

double scaled_sigmoid(double x);           // 5 / (1 + e^{-x})
double scaled_sigmoid_grad(double y);      // derivative expressed via the output y

// Triangular-kernel histogram over [lo,hi]; n_bins centers evenly spaced with
// kernel width equal to the spacing. Output sums to 1 (values clamped first).
Tensor soft_histogram(const Tensor& values, int n_bins, double lo, double hi);
// Gradient of the histogram w.r.t. the input values. Kernel derivative at
// knots is taken from the left; clamped values get zero gradient.
Tensor soft_histogram_backward(const Tensor& values, int n_bins, double lo, double hi,
                               const Tensor& grad_hist);

struct MinMaxNorm {
    Tensor normalized;
    double lo = 0.0, hi = 0.0;
    std::size_t argmin = 0, argmax = 0;
    bool constant = false;  // degenerate map, normalized to all 0.5
};
MinMaxNorm minmax_normalize(const Tensor& raw);
Tensor minmax_normalize_backward(const Tensor& raw, const MinMaxNorm& mm, const Tensor& grad_norm);

struct L2Norm {
    Tensor unit;
    double norm = 0.0;
};
L2Norm l2_normalize(const Tensor& v);
Tensor l2_normalize_backward(const L2Norm& n, const Tensor& grad_unit);

double dot(const Tensor& a, const Tensor& b);
double euclidean_distance(const Tensor& a, const Tensor& b);

// ---- gradient checking -------------------------------------------------------

struct LossEval {
    double value = 0.0;
    ParamSet grads;
};
using LossFn = std::function<LossEval(const ParamSet&)>;

// Central finite differences per parameter element against the analytic
// gradient; returns max over elements of |analytic-numeric| / max(1,|numeric|).
double grad_check(const LossFn& loss_fn, const ParamSet& params, double eps);

// ---- SALT tensor dump format --------------------------------------------------
// 16-byte header: "SALT", u32 version=1, u32 rank, u32 reserved=0; then
// rank * u32 extents and a little-endian f32 row-major payload.

void save_tensor(std::ostream& out, const Tensor& t);
Tensor load_tensor(std::istream& in);
void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace sspain
