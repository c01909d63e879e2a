#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dash/image.hpp"
#include "dash/tensor.hpp"

namespace dash {

enum class Pooling { Max, None };

struct ConvBlockConfig {
    int channels = 8;
    int kernel = 3;
    int stride = 1;
    bool operator==(const ConvBlockConfig&) const = default;
};

struct ConvNetConfig {
    std::vector<ConvBlockConfig> blocks{{8, 3, 1}, {16, 3, 1}, {32, 3, 1}};
    Pooling pooling = Pooling::Max;
    int hidden = 0;  // 0: GAP feeds the classifier directly
    int num_classes = 3;
    int input_channels = 3;
    int image_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ConvNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const ConvNetConfig& c);
void from_json(const nlohmann::json& j, ConvNetConfig& c);

/// Activation map in CHW layout.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

/// Everything the backward pass needs from one forward pass of one image.
struct ForwardTrace {
    std::vector<FeatureMap> block_inputs;    // input to each conv
    std::vector<FeatureMap> block_preact;    // conv output before ReLU
    std::vector<std::vector<int>> pool_argmax;  // per block, flat index into post-ReLU map
    FeatureMap features;                     // final block output (latent / Grad-CAM layer)
    std::vector<double> pooled;              // GAP of features
    std::vector<double> hidden_preact;       // empty when no hidden layer
    std::vector<double> logits;
};

/// Small convolutional classifier with hand-written reverse-mode gradients.
///
/// Parameters are laid out in declaration order: per conv block (weight
/// [out,in,k,k], bias [out]), then optional hidden FC (weight [hidden,feat],
/// bias), then the output FC (weight [C, in], bias [C]).
class ConvNet {
public:
    explicit ConvNet(ConvNetConfig config);

    /// Seeded He-normal weights, zero biases.
    static ConvNet initialized(const ConvNetConfig& config);

    const ConvNetConfig& config() const { return config_; }
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    std::size_t parameter_count() const;

    std::vector<float> flat_weights() const;
    void set_flat_weights(std::span<const float> weights);

    /// Frozen parameters never receive gradient and are never updated.
    void set_frozen(std::size_t param_index, bool frozen);
    bool frozen(std::size_t param_index) const { return frozen_[param_index]; }

    ForwardTrace forward(const Image& image) const;

    /// Accumulates d(loss)/d(params) into each tensor's grad buffer given
    /// d(loss)/d(logits). Returns d(loss)/d(features) for attribution.
    FeatureMap backward(const ForwardTrace& trace, std::span<const double> dlogits, bool accumulate_params);

    /// Fingerprint of every ReLU on/off decision and max-pool winner in a trace.
    static std::uint64_t activation_signature(const ForwardTrace& trace);

    void enable_grad();
    void zero_grad();

private:
    std::size_t fc_hidden_index() const;
    std::size_t fc_out_index() const;

    ConvNetConfig config_;
    std::vector<Tensor> params_;
    std::vector<bool> frozen_;
};

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// -log softmax(logits)[label].
double cross_entropy(std::span<const double> logits, int label);

}  // namespace dash
