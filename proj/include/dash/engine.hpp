#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dash/convnet.hpp"
#include "dash/dataset.hpp"

namespace dash {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 16;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;  // minibatch shuffling

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLoss {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    bool operator==(const EpochLoss&) const = default;
};

/// One trained (or freshly initialized) model instance. Weights are float32,
/// which is also the on-disk precision, so file round trips are exact.
struct Checkpoint {
    std::string id;
    std::optional<std::string> parent_id;
    ConvNetConfig config;
    std::vector<float> weights;
    std::optional<TrainConfig> train_config;
    bool warm_start = true;
    std::vector<EpochLoss> epoch_losses;
    std::string dataset_hash;
    std::string created_at;

    ConvNet network() const;
};

void to_json(nlohmann::json& j, const Checkpoint& c);  // header only, no weights

struct PredictionRecord {
    std::string image_id;
    int label = 0;
    int predicted = 0;
    double loss = 0.0;
    bool correct = false;
    bool operator==(const PredictionRecord&) const = default;
};

struct PredictionSet {
    std::string checkpoint_id;
    Split split = Split::Train;
    std::vector<PredictionRecord> records;

    double accuracy() const;
    double mean_loss() const;
    const PredictionRecord* find(const std::string& image_id) const;
    bool operator==(const PredictionSet&) const = default;
};

void to_json(nlohmann::json& j, const PredictionSet& p);
void from_json(const nlohmann::json& j, PredictionSet& p);

struct EpochEvent {
    std::string checkpoint_parent;
    int epoch = 0;  // 1-based
    int epochs = 0;
    EpochLoss loss;
};

using ProgressSink = std::function<void(const EpochEvent&)>;

std::string hex64(std::uint64_t v);

Checkpoint init_model(const ConvNetConfig& config);

/// Minibatch SGD with momentum on the train split. Returns a child checkpoint;
/// the input is never modified. With warm_start=false the child starts from
/// fresh seeded weights but still records the input as its parent.
Checkpoint train(const Checkpoint& checkpoint, const Dataset& dataset, const TrainConfig& config,
                 const ProgressSink& progress = {}, bool warm_start = true);

PredictionSet predict(const Checkpoint& checkpoint, const Dataset& dataset, Split split);

std::vector<double> extract_latent(const ConvNet& net, const Image& image);
std::vector<double> extract_latent(const Checkpoint& checkpoint, const Image& image);

struct GradientCheckReport {
    double max_relative_error = 0.0;
    int checked = 0;
    int skipped_at_kinks = 0;
};

/// Compares analytic gradients of the mean batch cross-entropy with central
/// differences (step 1e-4) on a seeded sample of parameters. Parameters whose
/// perturbation flips a ReLU or max-pool decision are non-differentiable
/// within the step; those are redrawn and counted.
GradientCheckReport backward_check(const ConvNet& net, const std::vector<const ImageSample*>& batch,
                                   int sample_size = 100, std::uint64_t seed = 0, double step = 1e-4);
GradientCheckReport backward_check(const Checkpoint& checkpoint, const std::vector<const ImageSample*>& batch,
                                   int sample_size = 100, std::uint64_t seed = 0, double step = 1e-4);

/// Mean cross-entropy over a batch and its gradient accumulated into net params.
double batch_loss_and_grad(ConvNet& net, const std::vector<const ImageSample*>& batch, double loss_scale = 1.0);

/// Binary checkpoint file: "DSHCKPT1", u64 LE header length, JSON header,
/// then little-endian float32 weights in parameter declaration order.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dash
