#include "dash/explainers.hpp"

#include <algorithm>
#include <cmath>

#include "dash/error.hpp"

using nlohmann::json;

namespace dash {

void to_json(json& j, const Heatmap& h) {
    j = json{{"method", h.method},
             {"image_id", h.image_id},
             {"target_class", h.target_class},
             {"height", h.height},
             {"width", h.width},
             {"values", h.values},
             {"raw_max", h.raw_max},
             {"degenerate", h.degenerate},
             {"low_res", {{"height", h.low_height}, {"width", h.low_width}, {"values", h.low_res}}}};
}

std::vector<double> bilinear_upsample(const std::vector<double>& src, int src_h, int src_w, int dst_h, int dst_w) {
    std::vector<double> out(static_cast<std::size_t>(dst_h) * dst_w);
    const double sy = static_cast<double>(src_h) / dst_h;
    const double sx = static_cast<double>(src_w) / dst_w;
    for (int y = 0; y < dst_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src_h - 1);
        const double ty = fy - y0;
        for (int x = 0; x < dst_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src_w - 1);
            const double tx = fx - x0;
            const double top = (1 - tx) * src[y0 * src_w + x0] + tx * src[y0 * src_w + x1];
            const double bot = (1 - tx) * src[y1 * src_w + x0] + tx * src[y1 * src_w + x1];
            out[static_cast<std::size_t>(y) * dst_w + x] = (1 - ty) * top + ty * bot;
        }
    }
    return out;
}

Heatmap grad_cam(const ConvNet& net_in, const Image& image, std::optional<int> target_class,
                 const std::string& image_id) {
    const int classes = net_in.config().num_classes;
    if (target_class && (*target_class < 0 || *target_class >= classes)) {
        throw validation_error("invalid class index " + std::to_string(*target_class),
                               "model has " + std::to_string(classes) + " classes");
    }
    ConvNet net = net_in;
    const auto trace = net.forward(image);
    const int target = target_class.value_or(
        static_cast<int>(std::max_element(trace.logits.begin(), trace.logits.end()) - trace.logits.begin()));

    std::vector<double> onehot(classes, 0.0);
    onehot[target] = 1.0;
    const FeatureMap grad = net.backward(trace, onehot, false);
    const FeatureMap& act = trace.features;
    const int area = act.height * act.width;

    std::vector<double> cam(area, 0.0);
    for (int c = 0; c < act.channels; ++c) {
        double w = 0.0;
        for (int j = 0; j < area; ++j) w += grad.values[static_cast<std::size_t>(c) * area + j];
        w /= area;
        for (int j = 0; j < area; ++j) cam[j] += w * act.values[static_cast<std::size_t>(c) * area + j];
    }
    for (auto& v : cam) v = std::max(v, 0.0);

    Heatmap h;
    h.image_id = image_id;
    h.target_class = target;
    h.height = image.height;
    h.width = image.width;
    h.low_height = act.height;
    h.low_width = act.width;
    h.low_res = cam;
    h.raw_max = *std::max_element(cam.begin(), cam.end());

    h.values = bilinear_upsample(cam, act.height, act.width, image.height, image.width);
    const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
    const double mn = *lo;
    const double range = *hi - mn;
    if (range < 1e-12) {
        h.degenerate = true;
        std::fill(h.values.begin(), h.values.end(), 0.0);
    } else {
        for (auto& v : h.values) v = std::clamp((v - mn) / range, 0.0, 1.0);
    }
    return h;
}

Heatmap grad_cam(const Checkpoint& checkpoint, const Image& image, std::optional<int> target_class,
                 const std::string& image_id) {
    return grad_cam(checkpoint.network(), image, target_class, image_id);
}

Rgb heat_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    static constexpr Rgb stops[] = {{0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}};
    const double pos = v * 4.0;
    const int i = std::min(static_cast<int>(pos), 3);
    const double t = pos - i;
    const Rgb& a = stops[i];
    const Rgb& b = stops[i + 1];
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

OverlayTriple overlay(const Image& image, const Heatmap& heatmap, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw validation_error("alpha must lie in [0,1]");
    if (image.height != heatmap.height || image.width != heatmap.width) {
        throw validation_error("dimension mismatch between image and heatmap");
    }
    OverlayTriple out{image, Image(image.height, image.width), Image(image.height, image.width)};
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const Rgb c = heat_color(heatmap.at(y, x));
            const double rgb[3] = {c.r, c.g, c.b};
            for (int ch = 0; ch < 3; ++ch) {
                out.colorized.at(y, x, ch) = rgb[ch];
                out.blend.at(y, x, ch) = (1.0 - alpha) * image.at(y, x, ch) + alpha * rgb[ch];
            }
        }
    }
    return out;
}

}  // namespace dash
