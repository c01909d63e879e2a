#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dash/dataset.hpp"

namespace dash {

inline constexpr int kMinClusters = 2;
inline constexpr int kMaxClusters = 20;

struct ClusterResult {
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> ids;              // input order
    std::vector<int> assignments;              // parallel to ids
    std::vector<std::vector<double>> centroids;  // k x dim
    double inertia = 0.0;
    std::vector<double> inertia_trace;         // after each centroid update, kept restart
    int restarts = 0;
    std::vector<std::vector<std::string>> representatives;  // per cluster, nearest first

    std::vector<std::string> members(int cluster) const;  // sorted by id
};

void to_json(nlohmann::json& j, const ClusterResult& r);
void from_json(const nlohmann::json& j, ClusterResult& r);

struct KMeansOptions {
    int restarts = 10;
    int max_iterations = 300;
    int representatives = 5;
};

/// k-means++ seeding then Lloyd iterations to an assignment fixpoint, refined
/// by Hartigan single-point transfers; best of `restarts` seeded runs. Points are visited in ascending id order so the
/// result does not depend on input order.
ClusterResult kmeans(const std::vector<std::string>& ids, const std::vector<std::vector<double>>& latents, int k,
                     std::uint64_t seed, const KMeansOptions& options = {});

/// Per cluster, the min(n, size) member ids nearest the centroid (ties by id).
std::vector<std::vector<std::string>> representatives(const ClusterResult& result,
                                                      const std::vector<std::vector<double>>& latents, int n);

struct StyleStats {
    int cluster = 0;
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
    std::size_t pixel_count = 0;
};

void to_json(nlohmann::json& j, const StyleStats& s);

struct ChannelStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
};

/// Population mean/std per channel over every pixel of the images.
ChannelStats channel_stats(const std::vector<const Image*>& images);

StyleStats compute_style_stats(const Dataset& dataset, const ClusterResult& clusters, int cluster_index);

/// Rewrites an image's style toward a cluster. Implementations must keep the
/// image geometry; `method()` is recorded in the augmentation history.
class Translator {
public:
    virtual ~Translator() = default;
    virtual std::string method() const = 0;
    virtual Image apply(const Image& source, const StyleStats& style, std::size_t* clamped = nullptr) const = 0;
};

/// Per-channel moment matching: standardize with the source's own stats,
/// rescale to the style's mean/std, clamp to [0,1]. Channels with zero source
/// spread are passed through unchanged.
class MomentMatchTranslator final : public Translator {
public:
    std::string method() const override { return "moment_match"; }
    Image apply(const Image& source, const StyleStats& style, std::size_t* clamped = nullptr) const override;
};

std::string augmented_id(const std::string& source_id, int cluster, int index);

ImageSample translate(const ImageSample& source, const StyleStats& style, const Translator& translator,
                      int index = 0, std::size_t* clamped = nullptr);
ImageSample translate(const ImageSample& source, const StyleStats& style);

/// count_per_source outputs per source, indexed first_index, first_index+1, ...
std::vector<ImageSample> batch_translate(const std::vector<const ImageSample*>& sources, const StyleStats& style,
                                         int count_per_source, const Translator& translator, int first_index = 0);
std::vector<ImageSample> batch_translate(const std::vector<const ImageSample*>& sources, const StyleStats& style,
                                         int count_per_source);

}  // namespace dash
