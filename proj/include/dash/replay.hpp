#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dash/cluster.hpp"
#include "dash/dataset.hpp"
#include "dash/engine.hpp"

namespace dash {

/// Declarative image filter; survives dataset regeneration because it never
/// names raw ids.
struct Selector {
    Split split = Split::Train;
    std::vector<int> classes;                 // empty: all classes
    std::string provenance = "original";      // original | augmented | any
    bool misclassified_by_active = false;
    int per_class = 0;                        // 0: no per-class cap
    int limit = 0;                            // 0: no overall cap
    std::uint64_t seed = 0;
};

void from_json(const nlohmann::json& j, Selector& s);
void to_json(nlohmann::json& j, const Selector& s);

/// Samples matching the selector, seeded-shuffled within each class, capped,
/// then returned in ascending id order.
std::vector<const ImageSample*> select_samples(const Dataset& dataset, const Selector& selector,
                                               const PredictionSet* active_predictions = nullptr);

/// Majority ground-truth label of each cluster's members (ties: lowest label).
std::vector<int> cluster_majority_labels(const ClusterResult& clusters, const Dataset& dataset);

struct TrainStep {
    TrainConfig config;
    bool warm_start = true;
};
struct ClusterStep {
    int k = 3;
    std::uint64_t seed = 0;
    Split split = Split::Train;
};
struct TranslateStep {
    Selector selector;
    std::optional<int> cluster;  // empty: every cluster whose majority label differs from the source's
    int count = 1;
};
struct AugmentStep {
    std::optional<int> label;  // empty: keep each source's label
};
struct ReplayStep;
struct LoopStep {
    int max_iterations = 4;
    std::optional<double> until_test_accuracy;
    std::vector<ReplayStep> steps;
};
struct ReplayStep {
    std::variant<TrainStep, ClusterStep, TranslateStep, AugmentStep, LoopStep> op;
};

struct ReplayScript {
    std::optional<BiasedDatasetSpec> dataset_spec;
    std::optional<std::filesystem::path> dataset_dir;
    ConvNetConfig model;
    std::vector<ReplayStep> steps;

    /// At least one train step, every loop non-empty.
    void validate() const;
};

ReplayScript parse_replay_script(const nlohmann::json& j);
ReplayScript load_replay_script(const std::filesystem::path& path);

struct SplitMetrics {
    double train = 0.0;
    double val = 0.0;
    double test = 0.0;
};

struct ReplayTrainRecord {
    std::string checkpoint_id;
    std::optional<std::string> parent_id;
    int iteration = 0;  // 0: before any loop
    int dataset_version = 0;
    std::size_t train_size = 0;
    SplitMetrics accuracy;
};

struct ReplayReport {
    std::vector<ReplayTrainRecord> trainings;
    int retrain_iterations = 0;
    std::size_t augmented_total = 0;
    double initial_test_accuracy = 0.0;
    double final_test_accuracy = 0.0;
    double initial_train_accuracy = 0.0;
    std::string final_checkpoint;
    std::string final_dataset_hash;
};

void to_json(nlohmann::json& j, const ReplayReport& r);

using ReplayLog = std::function<void(const std::string&)>;

/// Runs the script in `workdir` (dataset, checkpoints, history.jsonl are
/// written there). With fixed seeds the report is bitwise reproducible.
ReplayReport run_replay(const ReplayScript& script, const std::filesystem::path& workdir,
                        const ReplayLog& log = {});

}  // namespace dash
