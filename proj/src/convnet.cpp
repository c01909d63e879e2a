#include "dash/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dash/error.hpp"
#include "dash/rng.hpp"

using nlohmann::json;

namespace dash {

namespace {

int conv_out_size(int in, int kernel, int stride) {
    const int pad = kernel / 2;
    return (in + 2 * pad - kernel) / stride + 1;
}

void conv_forward(const FeatureMap& in, const Tensor& weight, const Tensor& bias, int stride, FeatureMap& out) {
    const int cout = weight.shape[0];
    const int cin = weight.shape[1];
    const int k = weight.shape[2];
    const int pad = k / 2;
    out.channels = cout;
    out.height = conv_out_size(in.height, k, stride);
    out.width = conv_out_size(in.width, k, stride);
    out.values.assign(static_cast<std::size_t>(cout) * out.height * out.width, 0.0);
    for (int o = 0; o < cout; ++o) {
        double* dst = &out.at(o, 0, 0);
        std::fill(dst, dst + static_cast<std::size_t>(out.height) * out.width, bias[o]);
        for (int i = 0; i < cin; ++i) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = weight[((static_cast<std::size_t>(o) * cin + i) * k + ky) * k + kx];
                    for (int y = 0; y < out.height; ++y) {
                        const int iy = y * stride + ky - pad;
                        if (iy < 0 || iy >= in.height) continue;
                        const double* src = &in.values[(static_cast<std::size_t>(i) * in.height + iy) * in.width];
                        double* row = dst + static_cast<std::size_t>(y) * out.width;
                        for (int x = 0; x < out.width; ++x) {
                            const int ix = x * stride + kx - pad;
                            if (ix < 0 || ix >= in.width) continue;
                            row[x] += wv * src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// dout: gradient w.r.t. conv output. Writes din when requested.
void conv_backward(const FeatureMap& in, const FeatureMap& dout, Tensor& weight, Tensor& bias, int stride,
                   bool grad_weight, bool grad_bias, FeatureMap* din) {
    const int cout = weight.shape[0];
    const int cin = weight.shape[1];
    const int k = weight.shape[2];
    const int pad = k / 2;
    if (din) {
        din->channels = in.channels;
        din->height = in.height;
        din->width = in.width;
        din->values.assign(in.values.size(), 0.0);
    }
    for (int o = 0; o < cout; ++o) {
        const double* g = &dout.values[static_cast<std::size_t>(o) * dout.height * dout.width];
        if (grad_bias) {
            double s = 0.0;
            for (int j = 0; j < dout.height * dout.width; ++j) s += g[j];
            bias.grad[o] += s;
        }
        for (int i = 0; i < cin; ++i) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const std::size_t widx = ((static_cast<std::size_t>(o) * cin + i) * k + ky) * k + kx;
                    const double wv = weight[widx];
                    double acc = 0.0;
                    for (int y = 0; y < dout.height; ++y) {
                        const int iy = y * stride + ky - pad;
                        if (iy < 0 || iy >= in.height) continue;
                        const std::size_t in_row = (static_cast<std::size_t>(i) * in.height + iy) * in.width;
                        const double* grow = g + static_cast<std::size_t>(y) * dout.width;
                        for (int x = 0; x < dout.width; ++x) {
                            const int ix = x * stride + kx - pad;
                            if (ix < 0 || ix >= in.width) continue;
                            acc += grow[x] * in.values[in_row + ix];
                            if (din) din->values[in_row + ix] += wv * grow[x];
                        }
                    }
                    if (grad_weight) weight.grad[widx] += acc;
                }
            }
        }
    }
}

}  // namespace

void ConvNetConfig::validate() const {
    auto fail = [](const std::string& what) { throw validation_error("invalid model config: " + what); };
    if (blocks.empty()) fail("at least one conv block is required");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (input_channels < 1) fail("input_channels must be >= 1");
    if (hidden < 0) fail("hidden width must be >= 0");
    int size = image_size;
    for (const auto& b : blocks) {
        if (b.channels < 1) fail("block channels must be >= 1");
        if (b.kernel < 1 || b.kernel % 2 == 0) fail("block kernel must be odd and >= 1");
        if (b.stride < 1) fail("block stride must be >= 1");
        size = conv_out_size(size, b.kernel, b.stride);
        if (pooling == Pooling::Max) size /= 2;
        if (size < 1) fail("image_size " + std::to_string(image_size) + " too small for the block stack");
    }
}

void to_json(json& j, const ConvNetConfig& c) {
    json blocks = json::array();
    for (const auto& b : c.blocks) blocks.push_back({{"channels", b.channels}, {"kernel", b.kernel}, {"stride", b.stride}});
    j = json{{"blocks", blocks},
             {"pooling", c.pooling == Pooling::Max ? "max" : "none"},
             {"hidden", c.hidden},
             {"num_classes", c.num_classes},
             {"input_channels", c.input_channels},
             {"image_size", c.image_size},
             {"seed", c.seed}};
}

void from_json(const json& j, ConvNetConfig& c) {
    ConvNetConfig d;
    if (j.contains("blocks")) {
        c.blocks.clear();
        for (const auto& b : j.at("blocks")) {
            c.blocks.push_back({b.value("channels", 8), b.value("kernel", 3), b.value("stride", 1)});
        }
    } else {
        c.blocks = d.blocks;
    }
    const auto pooling = j.value("pooling", std::string("max"));
    if (pooling == "max") {
        c.pooling = Pooling::Max;
    } else if (pooling == "none") {
        c.pooling = Pooling::None;
    } else {
        throw validation_error("unknown pooling '" + pooling + "'");
    }
    c.hidden = j.value("hidden", d.hidden);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.input_channels = j.value("input_channels", d.input_channels);
    c.image_size = j.value("image_size", d.image_size);
    c.seed = j.value("seed", d.seed);
}

ConvNet::ConvNet(ConvNetConfig config) : config_(std::move(config)) {
    config_.validate();
    int cin = config_.input_channels;
    for (const auto& b : config_.blocks) {
        params_.emplace_back(std::vector<int>{b.channels, cin, b.kernel, b.kernel});
        params_.emplace_back(std::vector<int>{b.channels});
        cin = b.channels;
    }
    int feat = cin;
    if (config_.hidden > 0) {
        params_.emplace_back(std::vector<int>{config_.hidden, feat});
        params_.emplace_back(std::vector<int>{config_.hidden});
        feat = config_.hidden;
    }
    params_.emplace_back(std::vector<int>{config_.num_classes, feat});
    params_.emplace_back(std::vector<int>{config_.num_classes});
    frozen_.assign(params_.size(), false);
}

ConvNet ConvNet::initialized(const ConvNetConfig& config) {
    ConvNet net(config);
    Rng rng(derive_seed(config.seed, 0x1417));
    const std::size_t n = net.params_.size();
    for (std::size_t p = 0; p < n; p += 2) {
        auto& w = net.params_[p];
        const std::size_t fan_in = w.size() / static_cast<std::size_t>(w.shape[0]);
        const bool output_layer = p + 2 == n;
        const double stddev = std::sqrt((output_layer ? 1.0 : 2.0) / static_cast<double>(fan_in));
        for (auto& v : w.values) v = rng.normal(0.0, stddev);
    }
    return net;
}

std::size_t ConvNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

std::vector<float> ConvNet::flat_weights() const {
    std::vector<float> out;
    out.reserve(parameter_count());
    for (const auto& p : params_) {
        for (double v : p.values) out.push_back(static_cast<float>(v));
    }
    return out;
}

void ConvNet::set_flat_weights(std::span<const float> weights) {
    if (weights.size() != parameter_count()) {
        throw compute_error("weight count mismatch: expected " + std::to_string(parameter_count()) + ", got " +
                            std::to_string(weights.size()));
    }
    std::size_t k = 0;
    for (auto& p : params_) {
        for (auto& v : p.values) v = weights[k++];
    }
}

void ConvNet::set_frozen(std::size_t param_index, bool frozen) { frozen_.at(param_index) = frozen; }

std::size_t ConvNet::fc_hidden_index() const { return config_.blocks.size() * 2; }
std::size_t ConvNet::fc_out_index() const { return params_.size() - 2; }

void ConvNet::enable_grad() {
    for (auto& p : params_) p.enable_grad();
}

void ConvNet::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

ForwardTrace ConvNet::forward(const Image& image) const {
    if (image.height != config_.image_size || image.width != config_.image_size ||
        config_.input_channels != 3) {
        throw compute_error("shape mismatch: model expects " + std::to_string(config_.image_size) + "x" +
                            std::to_string(config_.image_size) + "x" + std::to_string(config_.input_channels) +
                            ", image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x3");
    }
    ForwardTrace t;
    FeatureMap x;
    x.channels = 3;
    x.height = image.height;
    x.width = image.width;
    x.values.resize(image.pixels.size());
    for (int y = 0; y < image.height; ++y) {
        for (int xx = 0; xx < image.width; ++xx) {
            for (int c = 0; c < 3; ++c) x.at(c, y, xx) = image.at(y, xx, c);
        }
    }

    for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
        t.block_inputs.push_back(x);
        FeatureMap z;
        conv_forward(x, params_[2 * b], params_[2 * b + 1], config_.blocks[b].stride, z);
        t.block_preact.push_back(z);
        FeatureMap a = z;
        for (auto& v : a.values) v = v > 0.0 ? v : 0.0;
        std::vector<int> argmax;
        if (config_.pooling == Pooling::Max) {
            FeatureMap p;
            p.channels = a.channels;
            p.height = a.height / 2;
            p.width = a.width / 2;
            p.values.assign(static_cast<std::size_t>(p.channels) * p.height * p.width, 0.0);
            argmax.resize(p.values.size());
            for (int c = 0; c < a.channels; ++c) {
                for (int y = 0; y < p.height; ++y) {
                    for (int xx = 0; xx < p.width; ++xx) {
                        double best = -std::numeric_limits<double>::infinity();
                        int best_idx = 0;
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                const int idx = (c * a.height + 2 * y + dy) * a.width + 2 * xx + dx;
                                if (a.values[idx] > best) {
                                    best = a.values[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        const std::size_t out = (static_cast<std::size_t>(c) * p.height + y) * p.width + xx;
                        p.values[out] = best;
                        argmax[out] = best_idx;
                    }
                }
            }
            x = std::move(p);
        } else {
            x = std::move(a);
        }
        t.pool_argmax.push_back(std::move(argmax));
    }
    t.features = x;

    const int area = x.height * x.width;
    t.pooled.assign(x.channels, 0.0);
    for (int c = 0; c < x.channels; ++c) {
        double s = 0.0;
        for (int j = 0; j < area; ++j) s += x.values[static_cast<std::size_t>(c) * area + j];
        t.pooled[c] = s / area;
    }

    std::vector<double> feat = t.pooled;
    if (config_.hidden > 0) {
        const auto& w = params_[fc_hidden_index()];
        const auto& bias = params_[fc_hidden_index() + 1];
        const int in = static_cast<int>(feat.size());
        t.hidden_preact.assign(config_.hidden, 0.0);
        std::vector<double> h(config_.hidden);
        for (int o = 0; o < config_.hidden; ++o) {
            double s = bias[o];
            for (int i = 0; i < in; ++i) s += w[static_cast<std::size_t>(o) * in + i] * feat[i];
            t.hidden_preact[o] = s;
            h[o] = s > 0.0 ? s : 0.0;
        }
        feat = std::move(h);
    }
    const auto& w = params_[fc_out_index()];
    const auto& bias = params_[fc_out_index() + 1];
    const int in = static_cast<int>(feat.size());
    t.logits.assign(config_.num_classes, 0.0);
    for (int o = 0; o < config_.num_classes; ++o) {
        double s = bias[o];
        for (int i = 0; i < in; ++i) s += w[static_cast<std::size_t>(o) * in + i] * feat[i];
        t.logits[o] = s;
    }
    return t;
}

FeatureMap ConvNet::backward(const ForwardTrace& t, std::span<const double> dlogits, bool accumulate_params) {
    auto wants = [&](std::size_t idx) { return accumulate_params && !frozen_[idx] && params_[idx].has_grad(); };

    std::vector<double> feat = t.pooled;
    if (config_.hidden > 0) {
        for (auto& v : feat) v = 0.0;
        feat.resize(config_.hidden);
        for (int o = 0; o < config_.hidden; ++o) feat[o] = t.hidden_preact[o] > 0.0 ? t.hidden_preact[o] : 0.0;
    }

    // output layer
    const std::size_t oi = fc_out_index();
    auto& w_out = params_[oi];
    const int in_out = static_cast<int>(feat.size());
    std::vector<double> dfeat(in_out, 0.0);
    for (int o = 0; o < config_.num_classes; ++o) {
        const double g = dlogits[o];
        if (wants(oi + 1)) params_[oi + 1].grad[o] += g;
        for (int i = 0; i < in_out; ++i) {
            const std::size_t idx = static_cast<std::size_t>(o) * in_out + i;
            if (wants(oi)) w_out.grad[idx] += g * feat[i];
            dfeat[i] += w_out[idx] * g;
        }
    }

    std::vector<double> dpooled;
    if (config_.hidden > 0) {
        const std::size_t hi = fc_hidden_index();
        auto& w_h = params_[hi];
        const int in = static_cast<int>(t.pooled.size());
        dpooled.assign(in, 0.0);
        for (int o = 0; o < config_.hidden; ++o) {
            const double g = t.hidden_preact[o] > 0.0 ? dfeat[o] : 0.0;
            if (wants(hi + 1)) params_[hi + 1].grad[o] += g;
            for (int i = 0; i < in; ++i) {
                const std::size_t idx = static_cast<std::size_t>(o) * in + i;
                if (wants(hi)) w_h.grad[idx] += g * t.pooled[i];
                dpooled[i] += w_h[idx] * g;
            }
        }
    } else {
        dpooled = std::move(dfeat);
    }

    FeatureMap dfeatures;
    dfeatures.channels = t.features.channels;
    dfeatures.height = t.features.height;
    dfeatures.width = t.features.width;
    const int area = dfeatures.height * dfeatures.width;
    dfeatures.values.resize(t.features.values.size());
    for (int c = 0; c < dfeatures.channels; ++c) {
        const double g = dpooled[c] / area;
        for (int j = 0; j < area; ++j) dfeatures.values[static_cast<std::size_t>(c) * area + j] = g;
    }
    if (!accumulate_params) return dfeatures;

    FeatureMap dout = dfeatures;
    for (std::size_t bi = config_.blocks.size(); bi-- > 0;) {
        const FeatureMap& z = t.block_preact[bi];
        FeatureMap dz;
        dz.channels = z.channels;
        dz.height = z.height;
        dz.width = z.width;
        dz.values.assign(z.values.size(), 0.0);
        if (config_.pooling == Pooling::Max) {
            const auto& argmax = t.pool_argmax[bi];
            for (std::size_t j = 0; j < argmax.size(); ++j) dz.values[argmax[j]] += dout.values[j];
        } else {
            dz.values = dout.values;
        }
        for (std::size_t j = 0; j < dz.values.size(); ++j) {
            if (!(z.values[j] > 0.0)) dz.values[j] = 0.0;
        }
        const std::size_t wi = 2 * bi;
        FeatureMap din;
        conv_backward(t.block_inputs[bi], dz, params_[wi], params_[wi + 1], config_.blocks[bi].stride, wants(wi),
                      wants(wi + 1), bi > 0 ? &din : nullptr);
        dout = std::move(din);
    }
    return dfeatures;
}

std::uint64_t ConvNet::activation_signature(const ForwardTrace& t) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    for (const auto& z : t.block_preact) {
        for (double v : z.values) mix(v > 0.0 ? 1u : 0u);
    }
    for (const auto& am : t.pool_argmax) {
        for (int v : am) mix(static_cast<std::uint64_t>(v));
    }
    for (double v : t.hidden_preact) mix(v > 0.0 ? 3u : 2u);
    return h;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

double cross_entropy(std::span<const double> logits, int label) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    return std::log(s) + m - logits[label];
}

}  // namespace dash
