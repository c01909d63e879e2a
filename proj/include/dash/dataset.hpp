#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dash/image.hpp"

namespace dash {

enum class Split { Train, Val, Test };
enum class Provenance { Original, Augmented };

const char* to_string(Split split);
Split parse_split(const std::string& text);

/// Glyph shapes the synthetic generator can draw, one per class.
enum class Glyph { Circle, Square, Triangle, Diamond, Cross, Ring };

const char* to_string(Glyph glyph);
Glyph parse_glyph(const std::string& text);

/// Where a generated image's dominant color lives.
enum class BiasAxis { Background, Fill };

/// Placement of the glyph inside a generated image; enough to rebuild its mask.
struct GlyphPlacement {
    Glyph glyph = Glyph::Circle;
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;

    bool contains(double x, double y) const;
    bool operator==(const GlyphPlacement&) const = default;
};

/// Binary mask (row-major, 1 = glyph) for a placement at the given image size.
std::vector<std::uint8_t> glyph_mask(const GlyphPlacement& placement, int height, int width);

struct ImageSample {
    std::string id;
    Image image;
    int label = 0;
    Split split = Split::Train;
    Provenance provenance = Provenance::Original;
    std::optional<std::string> source_id;
    std::optional<int> style_cluster;
    // Generator metadata; absent for augmented or externally loaded images.
    std::optional<GlyphPlacement> glyph;
    std::optional<int> color_index;

    bool operator==(const ImageSample&) const = default;
};

struct Rgb {
    double r = 0.0, g = 0.0, b = 0.0;
    bool operator==(const Rgb&) const = default;
};

struct BiasedDatasetSpec {
    int num_classes = 3;
    std::vector<Glyph> shapes{Glyph::Circle, Glyph::Square, Glyph::Triangle};
    std::vector<Rgb> palette{{0.85, 0.20, 0.20}, {0.20, 0.75, 0.25}, {0.20, 0.30, 0.85}};
    std::vector<std::string> class_names;  // defaults to glyph names
    double bias_strength = 0.95;
    int train_count = 300;
    int val_count = 60;
    int test_count = 90;
    int image_size = 32;
    std::uint64_t seed = 0;
    BiasAxis axis = BiasAxis::Background;
    double noise = 0.04;  // amplitude of uniform per-pixel noise

    /// Throws a validation error naming the first violated bound.
    void validate() const;

    bool operator==(const BiasedDatasetSpec&) const = default;
};

void to_json(nlohmann::json& j, const BiasedDatasetSpec& spec);
void from_json(const nlohmann::json& j, BiasedDatasetSpec& spec);

class Dataset {
public:
    std::vector<ImageSample> samples;
    std::vector<std::string> class_names;
    int image_size = 32;
    std::optional<BiasedDatasetSpec> spec;
    // Bumped by every registration; version 0 is the generated/loaded base.
    int version = 0;

    int num_classes() const { return static_cast<int>(class_names.size()); }

    const ImageSample* find(const std::string& id) const;
    const ImageSample& at(const std::string& id) const;

    /// Samples of one split in dataset order.
    std::vector<const ImageSample*> split(Split s) const;
    std::size_t count(Split s) const;

    /// FNV-1a over ids, labels, splits and 8-bit pixels. Identifies dataset content.
    std::uint64_t content_hash() const;

    /// Checks the type invariants (unique ids, labels < C, pixel range, sizes).
    void validate() const;

    bool operator==(const Dataset&) const = default;
};

Dataset generate_biased_dataset(const BiasedDatasetSpec& spec);

/// Writes manifest.json plus images/<id>.png. Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& directory);
Dataset load_dataset(const std::filesystem::path& directory);

struct HistoryRecord {
    std::string ts;
    std::string checkpoint_id;
    std::string method;
    std::vector<int> style_clusters;  // distinct, ascending; serialized as int when single
    int target_label = 0;
    std::vector<std::string> source_ids;
    std::vector<std::string> new_ids;

    bool operator==(const HistoryRecord&) const = default;
};

void to_json(nlohmann::json& j, const HistoryRecord& rec);
void from_json(const nlohmann::json& j, HistoryRecord& rec);

/// Append-only JSON-lines log of augmentation events.
class HistoryLog {
public:
    explicit HistoryLog(std::filesystem::path path) : path_(std::move(path)) {}

    void append(const HistoryRecord& record) const;
    std::vector<HistoryRecord> read_all() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

std::string utc_timestamp();

/// Appends augmented samples to the train split under target_label and logs
/// one history record. Validation happens before anything is written, so a
/// failure leaves both the dataset and the log untouched.
Dataset register_augmented(const Dataset& dataset, std::vector<ImageSample> samples, int target_label,
                           const HistoryLog& log, const std::string& checkpoint_id,
                           const std::string& method = "moment_match");

}  // namespace dash
