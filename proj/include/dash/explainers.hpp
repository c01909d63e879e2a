#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dash/convnet.hpp"
#include "dash/engine.hpp"
#include "dash/image.hpp"

namespace dash {

struct Heatmap {
    std::string method = "gradcam";
    std::string image_id;
    int target_class = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, normalized to [0,1]
    double raw_max = 0.0;        // max of the rectified low-res map before normalization
    bool degenerate = false;     // flat map; values are all zero

    // Rectified class-activation map at feature resolution.
    int low_height = 0;
    int low_width = 0;
    std::vector<double> low_res;

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

void to_json(nlohmann::json& j, const Heatmap& h);

/// Grad-CAM on the final conv block. Channel weights are the spatial mean of
/// d(logit[target]) / d(activation); the weighted channel sum is rectified,
/// bilinearly upsampled to the image size, then min-max normalized. When no
/// target is given the predicted class is used.
Heatmap grad_cam(const ConvNet& net, const Image& image, std::optional<int> target_class = std::nullopt,
                 const std::string& image_id = {});
Heatmap grad_cam(const Checkpoint& checkpoint, const Image& image, std::optional<int> target_class = std::nullopt,
                 const std::string& image_id = {});

/// Bilinear resize of a single-channel map (half-pixel centers, edge clamp).
std::vector<double> bilinear_upsample(const std::vector<double>& src, int src_h, int src_w, int dst_h, int dst_w);

/// Blue-to-red ramp: 0 blue, 0.25 cyan, 0.5 green, 0.75 yellow, 1 red.
Rgb heat_color(double v);

struct OverlayTriple {
    Image original;
    Image colorized;
    Image blend;
};

/// blend = (1 - alpha) * original + alpha * colorized, per channel.
OverlayTriple overlay(const Image& image, const Heatmap& heatmap, double alpha = 0.5);

}  // namespace dash
