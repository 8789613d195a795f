#include "sspain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace sspain {

namespace {

std::size_t checked_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] <= 0) {
            throw DimensionError("tensor axis " + std::to_string(i) + " has non-positive extent " +
                                 std::to_string(shape[i]));
        }
        n *= static_cast<std::size_t>(shape[i]);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), 0.0);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
    Tensor t;
    const std::size_t n = checked_size(shape);
    if (n != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape product " + std::to_string(n));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& ParamSet::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

void ParamSet::insert(const std::string& name, Tensor t) {
    if (params_.count(name)) throw Error("duplicate parameter: " + name);
    params_.emplace(name, std::move(t));
}

ParamSet ParamSet::zeros_like() const {
    ParamSet z;
    for (const auto& [name, t] : params_) z.insert(name, Tensor(t.shape()));
    return z;
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
    for (const auto& [name, src] : other) {
        auto it = params_.find(name);
        if (it == params_.end()) continue;
        Tensor& dst = it->second;
        if (!dst.same_shape(src)) throw DimensionError("parameter shape mismatch for " + name);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    }
}

// ---- convolution ------------------------------------------------------------

namespace {

void check_conv_geometry(const Tensor& input, const Tensor& kernels, int stride, int pad,
                         int* out_h, int* out_w) {
    if (input.rank() != 3) throw DimensionError("conv2d input must have rank 3 [C,H,W]");
    if (kernels.rank() != 4) throw DimensionError("conv2d kernels must have rank 4 [Co,Ci,k,k]");
    const int ci = input.extent(0), h = input.extent(1), w = input.extent(2);
    const int kc = kernels.extent(1), kh = kernels.extent(2), kw = kernels.extent(3);
    if (kh != kw) throw DimensionError("conv2d kernel must be square, got axes 2,3 = " +
                                       std::to_string(kh) + "," + std::to_string(kw));
    if (kh % 2 == 0) throw DimensionError("conv2d kernel size must be odd on axis 2");
    if (kc != ci) {
        throw DimensionError("conv2d channel mismatch on kernel axis 1: kernels expect " +
                             std::to_string(kc) + ", input has " + std::to_string(ci));
    }
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
    if (pad < 0) throw DimensionError("conv2d pad must be >= 0");
    const int num_h = h + 2 * pad - kh;
    const int num_w = w + 2 * pad - kw;
    if (num_h < 0 || num_h % stride != 0) {
        throw DimensionError("conv2d geometry not integral on axis H: (" + std::to_string(h) +
                             "+2*" + std::to_string(pad) + "-" + std::to_string(kh) + ") % " +
                             std::to_string(stride) + " != 0");
    }
    if (num_w < 0 || num_w % stride != 0) {
        throw DimensionError("conv2d geometry not integral on axis W: (" + std::to_string(w) +
                             "+2*" + std::to_string(pad) + "-" + std::to_string(kw) + ") % " +
                             std::to_string(stride) + " != 0");
    }
    *out_h = num_h / stride + 1;
    *out_w = num_w / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int pad) {
    int oh = 0, ow = 0;
    check_conv_geometry(input, kernels, stride, pad, &oh, &ow);
    const int co = kernels.extent(0), ci = kernels.extent(1), k = kernels.extent(2);
    const int h = input.extent(1), w = input.extent(2);
    Tensor out({co, oh, ow});
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                double acc = 0.0;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += input.at3(c, iy, ix) * kernels.at4(o, c, ky, kx);
                        }
                    }
                }
                out.at3(o, oy, ox) = acc;
            }
        }
    }
    return out;
}

Tensor conv2d_adjoint(const Tensor& code, const Tensor& kernels, int stride, int pad) {
    if (code.rank() != 3) throw DimensionError("conv2d_adjoint code must have rank 3 [Co,H',W']");
    if (kernels.rank() != 4) throw DimensionError("conv2d_adjoint kernels must have rank 4");
    const int co = kernels.extent(0), ci = kernels.extent(1), k = kernels.extent(2);
    if (code.extent(0) != co) {
        throw DimensionError("conv2d_adjoint channel mismatch on code axis 0: expected " +
                             std::to_string(co) + ", got " + std::to_string(code.extent(0)));
    }
    const int oh = code.extent(1), ow = code.extent(2);
    const int h = (oh - 1) * stride + k - 2 * pad;
    const int w = (ow - 1) * stride + k - 2 * pad;
    if (h <= 0 || w <= 0) throw DimensionError("conv2d_adjoint implied input size non-positive");
    Tensor out({ci, h, w});
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                const double v = code.at3(o, oy, ox);
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            out.at3(c, iy, ix) += v * kernels.at4(o, c, ky, kx);
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv_kernel_grad(const Tensor& image_side, const Tensor& code_side, int k, int stride,
                        int pad) {
    if (image_side.rank() != 3 || code_side.rank() != 3) {
        throw DimensionError("conv_kernel_grad operands must have rank 3");
    }
    const int ci = image_side.extent(0), h = image_side.extent(1), w = image_side.extent(2);
    const int co = code_side.extent(0), oh = code_side.extent(1), ow = code_side.extent(2);
    Tensor grad({co, ci, k, k});
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                const double v = code_side.at3(o, oy, ox);
                if (v == 0.0) continue;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            grad.at4(o, c, ky, kx) += v * image_side.at3(c, iy, ix);
                        }
                    }
                }
            }
        }
    }
    return grad;
}

// ---- elementwise ------------------------------------------------------------

Tensor relu(const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0.0 ? t[i] : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& pre, const Tensor& grad_out) {
    if (!pre.same_shape(grad_out)) throw DimensionError("relu_backward shape mismatch");
    Tensor g(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) g[i] = pre[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

void add_channel_bias(Tensor& maps, const Tensor& bias) {
    if (maps.rank() != 3 || bias.rank() != 1 || bias.extent(0) != maps.extent(0)) {
        throw DimensionError("add_channel_bias: bias length must equal channel axis 0");
    }
    const int c = maps.extent(0), h = maps.extent(1), w = maps.extent(2);
    for (int ch = 0; ch < c; ++ch) {
        const double b = bias[ch];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) maps.at3(ch, y, x) += b;
    }
}

Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x) {
    if (w.rank() != 2) throw DimensionError("linear weight must have rank 2");
    const int out_dim = w.extent(0), in_dim = w.extent(1);
    if (static_cast<int>(x.size()) != in_dim) {
        throw DimensionError("linear input length " + std::to_string(x.size()) +
                             " != weight axis 1 extent " + std::to_string(in_dim));
    }
    if (static_cast<int>(b.size()) != out_dim) {
        throw DimensionError("linear bias length != weight axis 0 extent");
    }
    Tensor y({out_dim});
    for (int o = 0; o < out_dim; ++o) {
        double acc = b[o];
        const double* row = w.data() + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
    return y;
}

double scaled_sigmoid(double x) { return 5.0 / (1.0 + std::exp(-x)); }

double scaled_sigmoid_grad(double y) { return y * (1.0 - y / 5.0); }

// ---- soft histogram -----------------------------------------------------------

Tensor soft_histogram(const Tensor& values, int n_bins, double lo, double hi) {
    if (values.size() == 0) throw RangeError("empty histogram source");
    if (n_bins < 2) throw RangeError("soft_histogram needs n_bins >= 2");
    if (!(hi > lo)) throw RangeError("soft_histogram needs hi > lo");
    const double width = (hi - lo) / (n_bins - 1);
    Tensor h({n_bins});
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::clamp(values[i], lo, hi);
        const double t = (v - lo) / width;  // continuous bin coordinate
        const int b0 = std::min(static_cast<int>(t), n_bins - 2);
        const double frac = t - b0;
        h[b0] += 1.0 - frac;
        h[b0 + 1] += frac;
    }
    const double inv = 1.0 / static_cast<double>(values.size());
    for (int b = 0; b < n_bins; ++b) h[b] *= inv;
    return h;
}

Tensor soft_histogram_backward(const Tensor& values, int n_bins, double lo, double hi,
                               const Tensor& grad_hist) {
    if (values.size() == 0) throw RangeError("empty histogram source");
    if (static_cast<int>(grad_hist.size()) != n_bins) {
        throw DimensionError("soft_histogram_backward grad length != n_bins");
    }
    const double width = (hi - lo) / (n_bins - 1);
    const double inv = 1.0 / static_cast<double>(values.size());
    Tensor g(values.shape());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double raw = values[i];
        // clamp derivative from the left: zero at and below lo, one up to hi
        if (raw <= lo || raw > hi) {
            g[i] = 0.0;
            continue;
        }
        const double t = (raw - lo) / width;
        int b0 = std::min(static_cast<int>(t), n_bins - 2);
        // knot derivative from the left: a value sitting exactly on an
        // interior center differentiates against the segment below it
        if (t == static_cast<double>(b0) && b0 > 0) b0 -= 1;
        // mass moves from bin b0 to b0+1 as the value grows
        g[i] = (grad_hist[b0 + 1] - grad_hist[b0]) / width * inv;
    }
    return g;
}

// ---- normalizations -----------------------------------------------------------

MinMaxNorm minmax_normalize(const Tensor& raw) {
    MinMaxNorm r;
    r.normalized = Tensor(raw.shape());
    r.lo = raw[0];
    r.hi = raw[0];
    for (std::size_t i = 1; i < raw.size(); ++i) {
        if (raw[i] < r.lo) {
            r.lo = raw[i];
            r.argmin = i;
        }
        if (raw[i] > r.hi) {
            r.hi = raw[i];
            r.argmax = i;
        }
    }
    const double denom = r.hi - r.lo;
    if (denom < 1e-12) {
        r.constant = true;
        r.normalized.fill(0.5);
        return r;
    }
    for (std::size_t i = 0; i < raw.size(); ++i) r.normalized[i] = (raw[i] - r.lo) / denom;
    return r;
}

Tensor minmax_normalize_backward(const Tensor& raw, const MinMaxNorm& mm, const Tensor& grad_norm) {
    Tensor g(raw.shape());
    if (mm.constant) return g;  // locally constant output
    const double denom = mm.hi - mm.lo;
    double sum_g = 0.0, sum_g_raw = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        g[i] = grad_norm[i] / denom;
        sum_g += grad_norm[i];
        sum_g_raw += grad_norm[i] * raw[i];
    }
    const double d2 = denom * denom;
    // d normalized_i / d max = -(raw_i - lo)/denom^2 ; d/d min = (raw_i - hi)/denom^2
    g[mm.argmax] += -(sum_g_raw - mm.lo * sum_g) / d2;
    g[mm.argmin] += (sum_g_raw - mm.hi * sum_g) / d2;
    return g;
}

L2Norm l2_normalize(const Tensor& v) {
    L2Norm out;
    out.norm = std::sqrt(dot(v, v));
    out.unit = Tensor(v.shape());
    if (out.norm < 1e-12) return out;  // degenerate: unit stays zero
    for (std::size_t i = 0; i < v.size(); ++i) out.unit[i] = v[i] / out.norm;
    return out;
}

Tensor l2_normalize_backward(const L2Norm& n, const Tensor& grad_unit) {
    Tensor g(grad_unit.shape());
    if (n.norm < 1e-12) return g;
    const double proj = dot(n.unit, grad_unit);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (grad_unit[i] - n.unit[i] * proj) / n.norm;
    return g;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("dot: operand sizes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double euclidean_distance(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("euclidean_distance: operand sizes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// ---- gradient check -------------------------------------------------------------

double grad_check(const LossFn& loss_fn, const ParamSet& params, double eps) {
    if (eps < 1e-6 || eps > 1e-2) throw RangeError("grad_check eps must lie in [1e-6, 1e-2]");
    const LossEval base = loss_fn(params);
    if (!std::isfinite(base.value)) throw Error("grad_check: non-finite loss at base point");
    double worst = 0.0;
    ParamSet work = params;
    for (auto& [name, tensor] : work) {
        const Tensor& analytic = base.grads.at(name);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + eps;
            const double up = loss_fn(work).value;
            tensor[i] = saved - eps;
            const double down = loss_fn(work).value;
            tensor[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw Error("grad_check: non-finite loss when perturbing " + name + "[" +
                            std::to_string(i) + "]");
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// ---- SALT io ---------------------------------------------------------------------

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("tensor stream truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(out, bits);
}

float read_f32(std::istream& in) {
    const std::uint32_t bits = read_u32(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void save_tensor(std::ostream& out, const Tensor& t) {
    out.write("SALT", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    write_u32(out, 0);  // reserved, pads the header to 16 bytes
    for (int a = 0; a < t.rank(); ++a) write_u32(out, static_cast<std::uint32_t>(t.extent(a)));
    for (std::size_t i = 0; i < t.size(); ++i) write_f32(out, static_cast<float>(t[i]));
}

Tensor load_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SALT", 4) != 0) throw IoError("bad tensor magic");
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw IoError("unsupported tensor version " + std::to_string(version));
    const std::uint32_t rank = read_u32(in);
    read_u32(in);  // reserved
    if (rank == 0 || rank > 8) throw IoError("unreasonable tensor rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(read_u32(in));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(read_f32(in));
    return t;
}

void save_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    save_tensor(f, t);
    if (!f) throw IoError("write failed: " + path);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return load_tensor(f);
}

}  // namespace sspain
