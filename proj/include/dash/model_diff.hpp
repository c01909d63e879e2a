#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "dash/dataset.hpp"
#include "dash/engine.hpp"

namespace dash {

/// counts[true][predicted].
struct ConfusionMatrix {
    std::string checkpoint_id;
    Split split = Split::Test;
    int num_classes = 0;
    std::vector<std::vector<long>> counts;

    long total() const;
    long diagonal() const;
    long row_total(int row) const;
};

void to_json(nlohmann::json& j, const ConfusionMatrix& m);

ConfusionMatrix confusion(const PredictionSet& predictions, const Dataset& dataset, Split split);

struct MosaicCell {
    int row = 0;  // 1-based true class
    int col = 0;  // 1-based predicted class
    long count = 0;
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
    bool floored = false;
};

struct MosaicLayout {
    std::string checkpoint_id;
    double min_cell = 0.01;
    double gutter = 0.005;
    std::vector<MosaicCell> cells;  // row-major
    std::vector<std::vector<long>> counts;

    const MosaicCell& cell(int row, int col) const;  // 1-based
};

void to_json(nlohmann::json& j, const MosaicLayout& m);

/// Splits `length` among weights proportionally, giving at least `floor` to
/// every slot; slots pushed to the floor drop out and the rest renormalize.
std::vector<double> allocate_with_floor(const std::vector<double>& weights, double length, double floor);

/// Rows are horizontal bands with height proportional to row totals; cells in
/// a row have width proportional to their counts. Gutters separate bands and
/// cells; everything stays inside the unit square.
MosaicLayout mosaic_layout(const ConfusionMatrix& cm, double min_cell = 0.01, double gutter = 0.005);

struct TraceRecord {
    std::string image_id;
    bool prev_correct = false;
    bool curr_correct = false;
};

struct TraceDiff {
    std::string prev_checkpoint;
    std::string curr_checkpoint;
    Split split = Split::Test;
    std::vector<TraceRecord> records;  // sorted by image id
    long cc = 0, ci = 0, ic = 0, ii = 0;
};

/// Line color of a transition: previously-incorrect items draw red,
/// previously-correct items draw blue, unchanged items draw none.
std::string trace_line_color(const TraceRecord& r);

void to_json(nlohmann::json& j, const TraceDiff& t);

TraceDiff trace_diff(const PredictionSet& prev, const PredictionSet& curr, const Dataset& dataset, Split split);

struct FrequentMiss {
    std::string image_id;
    int misclassified = 0;
    int checkpoints = 0;
    double rate = 0.0;
};

void to_json(nlohmann::json& j, const FrequentMiss& f);

/// Ids misclassified in at least `threshold` of the prediction sets, by rate
/// descending then id.
std::vector<FrequentMiss> frequent_misclassified(const std::vector<PredictionSet>& prediction_sets,
                                                 double threshold);

}  // namespace dash
