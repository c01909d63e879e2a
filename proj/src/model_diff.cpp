#include "dash/model_diff.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

#include "dash/error.hpp"

using nlohmann::json;

namespace dash {

long ConfusionMatrix::total() const {
    long s = 0;
    for (const auto& row : counts) s += std::accumulate(row.begin(), row.end(), 0L);
    return s;
}

long ConfusionMatrix::diagonal() const {
    long s = 0;
    for (int i = 0; i < num_classes; ++i) s += counts[i][i];
    return s;
}

long ConfusionMatrix::row_total(int row) const {
    return std::accumulate(counts[row].begin(), counts[row].end(), 0L);
}

void to_json(json& j, const ConfusionMatrix& m) {
    j = json{{"checkpoint_id", m.checkpoint_id},
             {"split", to_string(m.split)},
             {"num_classes", m.num_classes},
             {"counts", m.counts},
             {"total", m.total()}};
}

ConfusionMatrix confusion(const PredictionSet& predictions, const Dataset& dataset, Split split) {
    ConfusionMatrix m;
    m.checkpoint_id = predictions.checkpoint_id;
    m.split = split;
    m.num_classes = dataset.num_classes();
    m.counts.assign(m.num_classes, std::vector<long>(m.num_classes, 0));
    std::unordered_map<std::string, const PredictionRecord*> by_id;
    for (const auto& r : predictions.records) by_id[r.image_id] = &r;
    for (const auto* s : dataset.split(split)) {
        const auto it = by_id.find(s->id);
        if (it == by_id.end()) throw data_error("missing prediction for in-split image '" + s->id + "'");
        const int pred = it->second->predicted;
        if (pred < 0 || pred >= m.num_classes) throw data_error("predicted label out of range for '" + s->id + "'");
        ++m.counts[s->label][pred];
    }
    return m;
}

const MosaicCell& MosaicLayout::cell(int row, int col) const {
    for (const auto& c : cells) {
        if (c.row == row && c.col == col) return c;
    }
    throw not_found_error("no mosaic cell (" + std::to_string(row) + "," + std::to_string(col) + ")");
}

void to_json(json& j, const MosaicLayout& m) {
    json cells = json::array();
    for (const auto& c : m.cells) {
        cells.push_back({{"row", c.row},
                         {"col", c.col},
                         {"count", c.count},
                         {"x", c.x},
                         {"y", c.y},
                         {"w", c.w},
                         {"h", c.h},
                         {"floored", c.floored}});
    }
    j = json{{"checkpoint_id", m.checkpoint_id},
             {"min_cell", m.min_cell},
             {"gutter", m.gutter},
             {"counts", m.counts},
             {"cells", cells}};
}

std::vector<double> allocate_with_floor(const std::vector<double>& weights, double length, double floor) {
    const std::size_t n = weights.size();
    std::vector<double> out(n, 0.0);
    std::vector<bool> floored(n, false);
    while (true) {
        double free_len = length;
        double free_weight = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (floored[i]) {
                free_len -= floor;
            } else {
                free_weight += weights[i];
            }
        }
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (floored[i]) {
                out[i] = floor;
                continue;
            }
            out[i] = free_weight > 0.0 ? free_len * weights[i] / free_weight : 0.0;
            if (out[i] < floor) {
                floored[i] = true;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return out;
}

MosaicLayout mosaic_layout(const ConfusionMatrix& cm, double min_cell, double gutter) {
    if (cm.num_classes < 1 || cm.total() <= 0) throw validation_error("mosaic needs a non-empty confusion matrix");
    if (min_cell < 0.0 || gutter < 0.0) throw validation_error("min_cell and gutter must be >= 0");
    const int n = cm.num_classes;
    const double usable = 1.0 - gutter * (n - 1);
    if (usable <= 0.0 || min_cell * n > usable) throw validation_error("gutter/min_cell too large for the matrix");

    MosaicLayout out;
    out.checkpoint_id = cm.checkpoint_id;
    out.min_cell = min_cell;
    out.gutter = gutter;
    out.counts = cm.counts;

    std::vector<double> row_weights(n);
    for (int r = 0; r < n; ++r) row_weights[r] = static_cast<double>(cm.row_total(r));
    const auto heights = allocate_with_floor(row_weights, usable, min_cell);

    double y = 0.0;
    for (int r = 0; r < n; ++r) {
        std::vector<double> w(n);
        for (int c = 0; c < n; ++c) w[c] = static_cast<double>(cm.counts[r][c]);
        const auto widths = allocate_with_floor(w, usable, min_cell);
        double x = 0.0;
        for (int c = 0; c < n; ++c) {
            MosaicCell cell;
            cell.row = r + 1;
            cell.col = c + 1;
            cell.count = cm.counts[r][c];
            cell.x = x;
            cell.y = y;
            cell.w = widths[c];
            cell.h = heights[r];
            cell.floored = (min_cell > 0.0 && widths[c] == min_cell) || (min_cell > 0.0 && heights[r] == min_cell);
            out.cells.push_back(cell);
            x += widths[c] + gutter;
        }
        y += heights[r] + gutter;
    }
    return out;
}

std::string trace_line_color(const TraceRecord& r) {
    if (r.prev_correct == r.curr_correct) return "";
    return r.prev_correct ? "blue" : "red";
}

void to_json(json& j, const TraceDiff& t) {
    json recs = json::array();
    for (const auto& r : t.records) {
        const auto color = trace_line_color(r);
        recs.push_back({{"id", r.image_id},
                        {"prev_correct", r.prev_correct},
                        {"curr_correct", r.curr_correct},
                        {"row", r.curr_correct ? "upper" : "lower"},
                        {"line", color.empty() ? json(nullptr) : json(color)}});
    }
    j = json{{"prev_checkpoint", t.prev_checkpoint},
             {"curr_checkpoint", t.curr_checkpoint},
             {"split", to_string(t.split)},
             {"counts", {{"CC", t.cc}, {"CI", t.ci}, {"IC", t.ic}, {"II", t.ii}}},
             {"records", recs}};
}

TraceDiff trace_diff(const PredictionSet& prev, const PredictionSet& curr, const Dataset& dataset, Split split) {
    std::unordered_map<std::string, bool> prev_ok, curr_ok;
    for (const auto& r : prev.records) prev_ok[r.image_id] = r.correct;
    for (const auto& r : curr.records) curr_ok[r.image_id] = r.correct;

    TraceDiff t;
    t.prev_checkpoint = prev.checkpoint_id;
    t.curr_checkpoint = curr.checkpoint_id;
    t.split = split;
    for (const auto* s : dataset.split(split)) {
        const auto p = prev_ok.find(s->id);
        const auto c = curr_ok.find(s->id);
        if (p == prev_ok.end() || c == curr_ok.end()) {
            throw data_error("id mismatch between prediction sets", s->id);
        }
        t.records.push_back({s->id, p->second, c->second});
    }
    std::sort(t.records.begin(), t.records.end(),
              [](const TraceRecord& a, const TraceRecord& b) { return a.image_id < b.image_id; });
    for (const auto& r : t.records) {
        if (r.prev_correct && r.curr_correct) ++t.cc;
        else if (r.prev_correct) ++t.ci;
        else if (r.curr_correct) ++t.ic;
        else ++t.ii;
    }
    return t;
}

void to_json(json& j, const FrequentMiss& f) {
    j = json{{"id", f.image_id}, {"misclassified", f.misclassified}, {"checkpoints", f.checkpoints}, {"rate", f.rate}};
}

std::vector<FrequentMiss> frequent_misclassified(const std::vector<PredictionSet>& prediction_sets,
                                                 double threshold) {
    if (prediction_sets.empty()) throw validation_error("frequent_misclassified needs at least one prediction set");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw validation_error("threshold must lie in (0, 1]");
    std::map<std::string, std::pair<int, int>> tally;  // id -> (misses, seen)
    for (const auto& set : prediction_sets) {
        for (const auto& r : set.records) {
            auto& t = tally[r.image_id];
            t.second += 1;
            if (!r.correct) t.first += 1;
        }
    }
    std::vector<FrequentMiss> out;
    for (const auto& [id, t] : tally) {
        // seen counts per image can differ when sets cover different splits;
        // the rate is over the checkpoints that evaluated the image
        const double rate = static_cast<double>(t.first) / static_cast<double>(t.second);
        if (t.first > 0 && rate >= threshold - 1e-12) out.push_back({id, t.first, t.second, rate});
    }
    std::sort(out.begin(), out.end(), [](const FrequentMiss& a, const FrequentMiss& b) {
        if (a.rate != b.rate) return a.rate > b.rate;
        return a.image_id < b.image_id;
    });
    return out;
}

}  // namespace dash
