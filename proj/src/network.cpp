#include "sspain/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "sspain/error.hpp"
#include "sspain/rng.hpp"

namespace sspain {

namespace {

void validate_config(const ModelConfig& cfg) {
    if (cfg.conv_channels.empty()) throw ConfigError("conv_channels must not be empty");
    for (int c : cfg.conv_channels)
        if (c < 1) throw ConfigError("conv_channels entries must be positive");
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
        throw ConfigError("kernel must be odd and positive, got " + std::to_string(cfg.kernel));
    if (cfg.stride < 1) throw ConfigError("stride must be positive");
    if (cfg.bottleneck_dim < 8)
        throw ConfigError("bottleneck_dim must be at least 8, got " +
                          std::to_string(cfg.bottleneck_dim));
    if (cfg.image_h < cfg.kernel || cfg.image_w < cfg.kernel)
        throw ConfigError("image smaller than the kernel");
}

// Smallest canvas >= dim that every strided conv in the chain divides exactly.
int next_valid_side(int dim, int layers, int k, int s, int p) {
    for (int n = dim; n <= dim + 4 * (1 << layers) + k; ++n) {
        int cur = n;
        bool ok = true;
        for (int l = 0; l < layers; ++l) {
            const int t = cur + 2 * p - k;
            if (t < 0 || t % s != 0) {
                ok = false;
                break;
            }
            cur = t / s + 1;
        }
        if (ok) return n;
    }
    throw ConfigError("no conv-compatible canvas near size " + std::to_string(dim));
}

std::string conv_name(int i, const char* part) {
    return "conv" + std::to_string(i) + "." + part;
}

Tensor reshaped(const Tensor& t, std::vector<int> shape) {
    std::vector<double> data(t.data(), t.data() + t.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor pad_canvas(const Tensor& img, int ph, int pw) {
    Tensor out = Tensor::zeros({1, ph, pw});
    for (int y = 0; y < img.extent(1); ++y)
        for (int x = 0; x < img.extent(2); ++x) out.at3(0, y, x) = img.at3(0, y, x);
    return out;
}

Tensor crop_canvas(const Tensor& t, int h, int w) {
    Tensor out = Tensor::zeros({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at3(0, y, x) = t.at3(0, y, x);
    return out;
}

}  // namespace

Geometry compute_geometry(const ModelConfig& cfg) {
    validate_config(cfg);
    Geometry g;
    g.conv_pad = (cfg.kernel - 1) / 2;
    const int layers = static_cast<int>(cfg.conv_channels.size());
    g.pad_h = next_valid_side(cfg.image_h, layers, cfg.kernel, cfg.stride, g.conv_pad);
    g.pad_w = next_valid_side(cfg.image_w, layers, cfg.kernel, cfg.stride, g.conv_pad);
    int h = g.pad_h, w = g.pad_w;
    for (int l = 0; l < layers; ++l) {
        h = (h + 2 * g.conv_pad - cfg.kernel) / cfg.stride + 1;
        w = (w + 2 * g.conv_pad - cfg.kernel) / cfg.stride + 1;
        g.hs.push_back(h);
        g.ws.push_back(w);
    }
    g.flat_dim = cfg.conv_channels.back() * h * w;
    return g;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    Model m;
    m.cfg = cfg;
    m.geom = compute_geometry(cfg);
    Rng rng(seed);
    auto he_fill = [&rng](Tensor& t, int fan_in) {
        const double sigma = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian(0.0, sigma);
    };
    const int k = cfg.kernel;
    int ci = 1;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
        const int co = cfg.conv_channels[i];
        Tensor kern({co, ci, k, k});
        he_fill(kern, ci * k * k);
        m.params.insert(conv_name(static_cast<int>(i), "k"), std::move(kern));
        m.params.insert(conv_name(static_cast<int>(i), "b"), Tensor::zeros({co}));
        ci = co;
    }
    Tensor fcw({cfg.bottleneck_dim, m.geom.flat_dim});
    he_fill(fcw, m.geom.flat_dim);
    m.params.insert("fc.w", std::move(fcw));
    m.params.insert("fc.b", Tensor::zeros({cfg.bottleneck_dim}));
    Tensor hw({1, cfg.bottleneck_dim});
    he_fill(hw, cfg.bottleneck_dim);
    m.params.insert("head.w", std::move(hw));
    m.params.insert("head.b", Tensor::zeros({1}));
    m.params.insert("centers", Tensor::zeros({6, cfg.bottleneck_dim}));
    return m;
}

void sync_decoder(const Model& m) {
    for (std::size_t i = 0; i < m.cfg.conv_channels.size(); ++i) {
        const Tensor& kern = m.params.at(conv_name(static_cast<int>(i), "k"));
        if (!kern.all_finite())
            throw Error("sync_decoder: non-finite shared kernel in layer " + std::to_string(i));
    }
    if (!m.params.at("fc.w").all_finite())
        throw Error("sync_decoder: non-finite shared bottleneck weights");
}

EncodeTrace encode(const Model& m, const Tensor& image, bool linear) {
    if (image.rank() != 3 || image.extent(0) != 1)
        throw DimensionError("encode expects a [1,H,W] image");
    if (image.extent(1) != m.cfg.image_h || image.extent(2) != m.cfg.image_w)
        throw DimensionError("encode input size mismatch: expected " +
                             std::to_string(m.cfg.image_h) + "x" + std::to_string(m.cfg.image_w) +
                             ", got " + std::to_string(image.extent(1)) + "x" +
                             std::to_string(image.extent(2)));
    EncodeTrace tr;
    tr.linear = linear;
    tr.padded = pad_canvas(image, m.geom.pad_h, m.geom.pad_w);
    const Tensor* x = &tr.padded;
    for (std::size_t i = 0; i < m.cfg.conv_channels.size(); ++i) {
        Tensor pre = conv2d(*x, m.params.at(conv_name(static_cast<int>(i), "k")), m.cfg.stride,
                            m.geom.conv_pad);
        add_channel_bias(pre, m.params.at(conv_name(static_cast<int>(i), "b")));
        tr.act.push_back(linear ? pre : relu(pre));
        tr.pre.push_back(std::move(pre));
        x = &tr.act.back();
    }
    tr.flat = reshaped(tr.act.back(), {m.geom.flat_dim});
    tr.feature = sspain::linear(m.params.at("fc.w"), m.params.at("fc.b"), tr.flat);
    return tr;
}

void encode_backward(const Model& m, const EncodeTrace& tr, const Tensor& grad_feature,
                     ParamSet& grads) {
    const Tensor& fcw = m.params.at("fc.w");
    const int dim = fcw.extent(0), flat = fcw.extent(1);
    Tensor g_flat({flat});
    {
        Tensor& dw = grads.at("fc.w");
        Tensor& db = grads.at("fc.b");
        for (int d = 0; d < dim; ++d) {
            const double gd = grad_feature[d];
            db[d] += gd;
            for (int j = 0; j < flat; ++j) {
                dw.at2(d, j) += gd * tr.flat[j];
                g_flat[j] += fcw.at2(d, j) * gd;
            }
        }
    }
    const int layers = static_cast<int>(m.cfg.conv_channels.size());
    Tensor g = reshaped(g_flat, tr.act.back().shape());
    for (int i = layers - 1; i >= 0; --i) {
        Tensor g_pre = tr.linear ? g : relu_backward(tr.pre[i], g);
        Tensor& db = grads.at(conv_name(i, "b"));
        for (int c = 0; c < g_pre.extent(0); ++c) {
            double acc = 0.0;
            for (int y = 0; y < g_pre.extent(1); ++y)
                for (int x = 0; x < g_pre.extent(2); ++x) acc += g_pre.at3(c, y, x);
            db[c] += acc;
        }
        const Tensor& input = (i == 0) ? tr.padded : tr.act[i - 1];
        add_into(grads.at(conv_name(i, "k")),
                 conv_kernel_grad(input, g_pre, m.cfg.kernel, m.cfg.stride, m.geom.conv_pad));
        if (i > 0)
            g = conv2d_adjoint(g_pre, m.params.at(conv_name(i, "k")), m.cfg.stride,
                               m.geom.conv_pad);
    }
}

DecodeTrace decode_saliency(const Model& m, const Tensor& feature, bool linear) {
    if (feature.rank() != 1 || feature.extent(0) != m.cfg.bottleneck_dim)
        throw DimensionError("decode_saliency feature dimension mismatch");
    DecodeTrace tr;
    tr.linear = linear;
    const Tensor& fcw = m.params.at("fc.w");
    const int dim = fcw.extent(0), flat = fcw.extent(1);
    tr.flat_pre = Tensor::zeros({flat});
    for (int d = 0; d < dim; ++d) {
        const double fd = feature[d];
        for (int j = 0; j < flat; ++j) tr.flat_pre[j] += fcw.at2(d, j) * fd;
    }
    tr.flat_act = linear ? tr.flat_pre : relu(tr.flat_pre);

    const int layers = static_cast<int>(m.cfg.conv_channels.size());
    Tensor code = reshaped(tr.flat_act, {m.cfg.conv_channels.back(), m.geom.hs.back(),
                                         m.geom.ws.back()});
    for (int j = 0; j < layers; ++j) {
        const int layer = layers - 1 - j;
        Tensor pre = conv2d_adjoint(code, m.params.at(conv_name(layer, "k")), m.cfg.stride,
                                    m.geom.conv_pad);
        // Every decoder stage is rectified, including the image-domain map:
        // backprojection that lands negative carries no saliency.
        Tensor act = linear ? pre : relu(pre);
        tr.pre.push_back(std::move(pre));
        tr.act.push_back(std::move(act));
        code = tr.act.back();
    }
    tr.raw = crop_canvas(tr.act.back(), m.cfg.image_h, m.cfg.image_w);
    tr.norm = minmax_normalize(tr.raw);
    return tr;
}

Tensor decode_backward(const Model& m, const DecodeTrace& dtr, const Tensor& grad_map) {
    Tensor g_raw = minmax_normalize_backward(dtr.raw, dtr.norm, grad_map);
    Tensor g = pad_canvas(g_raw, m.geom.pad_h, m.geom.pad_w);
    const int layers = static_cast<int>(m.cfg.conv_channels.size());
    for (int j = layers - 1; j >= 0; --j) {
        const int layer = layers - 1 - j;
        Tensor g_pre = dtr.linear ? g : relu_backward(dtr.pre[j], g);
        g = conv2d(g_pre, m.params.at(conv_name(layer, "k")), m.cfg.stride, m.geom.conv_pad);
    }
    Tensor g_flat_act = reshaped(g, {m.geom.flat_dim});
    Tensor g_flat_pre = dtr.linear ? g_flat_act : relu_backward(dtr.flat_pre, g_flat_act);

    const Tensor& fcw = m.params.at("fc.w");
    const int dim = fcw.extent(0), flat = fcw.extent(1);
    Tensor g_feature({dim});
    for (int d = 0; d < dim; ++d) {
        double acc = 0.0;
        for (int j = 0; j < flat; ++j) acc += fcw.at2(d, j) * g_flat_pre[j];
        g_feature[d] = acc;
    }
    return g_feature;
}

double regress(const Model& m, const Tensor& feature) {
    const Tensor& w = m.params.at("head.w");
    double pre = m.params.at("head.b")[0];
    for (int d = 0; d < w.extent(1); ++d) pre += w.at2(0, d) * feature[d];
    return scaled_sigmoid(pre);
}

Tensor regress_backward(const Model& m, const Tensor& feature, double prediction,
                        double grad_pred, ParamSet& grads) {
    const Tensor& w = m.params.at("head.w");
    const int dim = w.extent(1);
    const double dpre = grad_pred * scaled_sigmoid_grad(prediction);
    Tensor g_feature({dim});
    Tensor& dw = grads.at("head.w");
    grads.at("head.b")[0] += dpre;
    for (int d = 0; d < dim; ++d) {
        dw.at2(0, d) += dpre * feature[d];
        g_feature[d] = dpre * w.at2(0, d);
    }
    return g_feature;
}

// ---- checkpoint io -----------------------------------------------------------

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

nlohmann::ordered_json config_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["conv_channels"] = cfg.conv_channels;
    j["kernel"] = cfg.kernel;
    j["stride"] = cfg.stride;
    j["bottleneck_dim"] = cfg.bottleneck_dim;
    j["image_h"] = cfg.image_h;
    j["image_w"] = cfg.image_w;
    return j;
}

}  // namespace

void save_model(const std::string& path, const Model& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write("SSUP", 4);
    write_u32(out, 1);
    const std::string cfg = config_json(m.cfg).dump();
    write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_u32(out, static_cast<std::uint32_t>(m.params.count()));
    for (const auto& [name, tensor] : m.params) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        save_tensor(out, tensor);
    }
    if (!out) throw IoError("write failed: " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SSUP", 4) != 0) throw IoError("bad checkpoint magic: " + path);
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = read_u32(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    if (!in) throw IoError("truncated checkpoint");
    ModelConfig cfg;
    try {
        const auto j = nlohmann::json::parse(cfg_text);
        cfg.conv_channels = j.at("conv_channels").get<std::vector<int>>();
        cfg.kernel = j.at("kernel").get<int>();
        cfg.stride = j.at("stride").get<int>();
        cfg.bottleneck_dim = j.at("bottleneck_dim").get<int>();
        cfg.image_h = j.at("image_h").get<int>();
        cfg.image_w = j.at("image_w").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad checkpoint config block: ") + e.what());
    }
    Model m = init_model(cfg, 0);  // shapes only; every tensor is re-read below
    const std::uint32_t count = read_u32(in);
    if (count != m.params.count())
        throw IoError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                      std::to_string(m.params.count()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = read_u32(in);
        if (len == 0 || len > 256) throw IoError("unreasonable parameter name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw IoError("truncated checkpoint");
        if (!m.params.contains(name)) throw IoError("unknown parameter in checkpoint: " + name);
        Tensor t = load_tensor(in);
        if (!t.same_shape(m.params.at(name)))
            throw IoError("shape mismatch for checkpoint parameter " + name);
        m.params.at(name) = std::move(t);
    }
    return m;
}

}  // namespace sspain
