#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "dash/model_diff.hpp"
#include "dash/rng.hpp"

using namespace dash;
using testing::kind_of;

namespace {

Dataset labeled(const std::vector<int>& labels, int classes, Split split = Split::Test) {
    Dataset d;
    for (int c = 0; c < classes; ++c) d.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ImageSample s;
        char buf[32];
        std::snprintf(buf, sizeof buf, "img-%03zu", i);
        s.id = buf;
        s.label = labels[i];
        s.split = split;
        d.samples.push_back(s);
    }
    return d;
}

PredictionSet preds(const Dataset& d, const std::vector<int>& predicted, const std::string& ck = "ck") {
    PredictionSet p;
    p.checkpoint_id = ck;
    p.split = Split::Test;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const auto& s = d.samples[i];
        p.records.push_back({s.id, s.label, predicted[i], 0.0, s.label == predicted[i]});
    }
    return p;
}

ConfusionMatrix matrix(std::vector<std::vector<long>> counts) {
    ConfusionMatrix m;
    m.num_classes = static_cast<int>(counts.size());
    m.counts = std::move(counts);
    return m;
}

bool overlaps(const MosaicCell& a, const MosaicCell& b) {
    const double eps = 1e-12;
    return a.x + eps < b.x + b.w && b.x + eps < a.x + a.w && a.y + eps < b.y + b.h && b.y + eps < a.y + a.h;
}

}  // namespace

TEST_CASE("confusion matrix of a hand-tallied 9-prediction fixture") {
    const auto d = labeled({0, 0, 0, 1, 1, 1, 2, 2, 2}, 3);
    const auto cm = confusion(preds(d, {0, 1, 0, 1, 1, 2, 2, 0, 2}), d, Split::Test);
    CHECK(cm.counts == std::vector<std::vector<long>>{{2, 1, 0}, {0, 2, 1}, {1, 0, 2}});
    CHECK(cm.total() == 9);
    CHECK(cm.diagonal() == 6);
    CHECK(cm.row_total(1) == 3);
}

TEST_CASE("perfect and constant predictors") {
    const auto d = labeled({0, 1, 2, 2, 1, 0, 0}, 3);
    const auto perfect = confusion(preds(d, {0, 1, 2, 2, 1, 0, 0}), d, Split::Test);
    CHECK(perfect.counts == std::vector<std::vector<long>>{{3, 0, 0}, {0, 2, 0}, {0, 0, 2}});
    const auto constant = confusion(preds(d, {0, 0, 0, 0, 0, 0, 0}), d, Split::Test);
    for (int r = 0; r < 3; ++r) {
        CHECK(constant.counts[r][0] == constant.row_total(r));
        CHECK(constant.counts[r][1] == 0);
        CHECK(constant.counts[r][2] == 0);
    }
    auto partial = preds(d, {0, 1, 2, 2, 1, 0, 0});
    partial.records.pop_back();
    CHECK(kind_of([&] { confusion(partial, d, Split::Test); }) == ErrorKind::Data);
}

TEST_CASE("accuracy from the diagonal equals the correct-flag mean") {
    Rng rng(3);
    std::vector<int> labels, predicted;
    for (int i = 0; i < 57; ++i) {
        labels.push_back(static_cast<int>(rng.below(4)));
        predicted.push_back(static_cast<int>(rng.below(4)));
    }
    const auto d = labeled(labels, 4);
    const auto p = preds(d, predicted);
    const auto cm = confusion(p, d, Split::Test);
    CHECK(cm.total() == 57);
    CHECK(static_cast<double>(cm.diagonal()) / cm.total() == p.accuracy());
}

TEST_CASE("mosaic areas for [[8,2],[1,9]] without floors or gutters") {
    const auto m = mosaic_layout(matrix({{8, 2}, {1, 9}}), 0.0, 0.0);
    CHECK(m.cell(1, 1).w * m.cell(1, 1).h == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(m.cell(1, 2).w * m.cell(1, 2).h == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m.cell(2, 1).w * m.cell(2, 1).h == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(m.cell(2, 2).w * m.cell(2, 2).h == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(m.cell(2, 1).y == doctest::Approx(0.5));
    CHECK(m.cell(1, 2).x == doctest::Approx(0.8));
}

TEST_CASE("uniform matrix gives equal rectangles; diagonal matrix floors the off-diagonal") {
    const auto u = mosaic_layout(matrix({{4, 4, 4}, {4, 4, 4}, {4, 4, 4}}));
    for (const auto& c : u.cells) {
        CHECK(c.w == doctest::Approx(u.cells[0].w));
        CHECK(c.h == doctest::Approx(u.cells[0].h));
    }
    const auto d = mosaic_layout(matrix({{5, 0, 0}, {0, 7, 0}, {0, 0, 3}}), 0.01, 0.005);
    const double usable = 1.0 - 2 * 0.005;
    for (int r = 1; r <= 3; ++r) {
        for (int c = 1; c <= 3; ++c) {
            const auto& cell = d.cell(r, c);
            if (r == c) {
                CHECK(cell.w == doctest::Approx(usable - 2 * 0.01));
                CHECK_FALSE(cell.floored);
            } else {
                CHECK(cell.w == doctest::Approx(0.01));
                CHECK(cell.floored);
            }
        }
    }
    CHECK(kind_of([&] { mosaic_layout(matrix({{0, 0}, {0, 0}})); }) == ErrorKind::Validation);
}

TEST_CASE("mosaic property: inside the unit square, no overlaps, proportional before flooring") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(5));
        std::vector<std::vector<long>> counts(n, std::vector<long>(n));
        for (auto& row : counts) {
            for (auto& v : row) v = rng.uniform() < 0.3 ? 0 : static_cast<long>(rng.below(50));
        }
        counts[0][0] += 1;
        const auto cm = matrix(counts);
        const auto m = mosaic_layout(cm, 0.01, 0.005);
        for (const auto& c : m.cells) {
            CHECK(c.x >= -1e-12);
            CHECK(c.y >= -1e-12);
            CHECK(c.x + c.w <= 1.0 + 1e-9);
            CHECK(c.y + c.h <= 1.0 + 1e-9);
        }
        for (std::size_t i = 0; i < m.cells.size(); ++i) {
            for (std::size_t j = i + 1; j < m.cells.size(); ++j) CHECK_FALSE(overlaps(m.cells[i], m.cells[j]));
        }
        // without floors and gutters the area of every cell is its share of the total
        const auto exact = mosaic_layout(cm, 0.0, 0.0);
        for (const auto& c : exact.cells) {
            CHECK(std::abs(c.w * c.h - static_cast<double>(c.count) / cm.total()) < 1e-9);
        }
    }
}

TEST_CASE("allocate_with_floor keeps proportions among unfloored slots") {
    const auto out = allocate_with_floor({0, 1, 3, 6}, 1.0, 0.05);
    CHECK(out[0] == doctest::Approx(0.05));
    CHECK(out[2] / out[1] == doctest::Approx(3.0));
    CHECK(out[3] / out[1] == doctest::Approx(6.0));
    CHECK(out[0] + out[1] + out[2] + out[3] == doctest::Approx(1.0));
}

TEST_CASE("trace diff on a hand-tallied 10-image fixture") {
    const auto d = labeled({0, 1, 2, 0, 1, 2, 0, 1, 2, 0}, 3);
    const auto prev = preds(d, {0, 1, 0, 1, 1, 2, 2, 0, 2, 0}, "a");
    const auto curr = preds(d, {0, 0, 2, 0, 1, 1, 2, 1, 2, 1}, "b");
    // per image (prev, curr): CC CI IC IC CC CI II IC CC CI
    const auto t = trace_diff(prev, curr, d, Split::Test);
    CHECK(t.cc == 3);
    CHECK(t.ci == 3);
    CHECK(t.ic == 3);
    CHECK(t.ii == 1);
    CHECK(t.records.size() == 10);
    CHECK(t.prev_checkpoint == "a");
    CHECK(t.curr_checkpoint == "b");
    CHECK(trace_line_color(t.records[2]) == "red");
    CHECK(trace_line_color(t.records[1]) == "blue");
    CHECK(trace_line_color(t.records[0]).empty());
    const auto ca = confusion(prev, d, Split::Test);
    const auto cb = confusion(curr, d, Split::Test);
    CHECK(t.cc + t.ic == cb.diagonal());
    CHECK(t.cc + t.ci == ca.diagonal());
    const auto j = nlohmann::json(t);
    CHECK(j["records"][2]["line"] == "red");
    CHECK(j["records"][6]["line"].is_null());
    CHECK(j["records"][0]["row"] == "upper");
}

TEST_CASE("trace edge cases") {
    const auto d = labeled({0, 1, 1}, 2);
    const auto p = preds(d, {1, 1, 0});
    const auto same = trace_diff(p, p, d, Split::Test);
    CHECK(same.ci == 0);
    CHECK(same.ic == 0);
    const auto all_right = trace_diff(preds(d, {1, 0, 0}), preds(d, {0, 1, 1}), d, Split::Test);
    CHECK(all_right.ic == 3);
    CHECK(all_right.cc + all_right.ci + all_right.ii == 0);
    auto other = p;
    other.records[1].image_id = "zzz";
    CHECK(kind_of([&] { trace_diff(p, other, d, Split::Test); }) == ErrorKind::Data);
}

TEST_CASE("trace counts reconcile with both confusion diagonals on 1000 random fixtures") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + static_cast<int>(rng.below(5));
        const int n = 1 + static_cast<int>(rng.below(60));
        std::vector<int> labels(n), a(n), b(n);
        for (int i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng.below(classes));
            a[i] = static_cast<int>(rng.below(classes));
            b[i] = static_cast<int>(rng.below(classes));
        }
        const auto d = labeled(labels, classes);
        const auto pa = preds(d, a);
        const auto pb = preds(d, b);
        const auto t = trace_diff(pa, pb, d, Split::Test);
        const auto ca = confusion(pa, d, Split::Test);
        const auto cb = confusion(pb, d, Split::Test);
        REQUIRE(t.cc + t.ci + t.ic + t.ii == n);
        REQUIRE(t.cc + t.ic == cb.diagonal());
        REQUIRE(t.cc + t.ci == ca.diagonal());
    }
}

TEST_CASE("frequently misclassified images") {
    const auto d = labeled({0, 1, 0, 1, 0}, 2);
    const auto p1 = preds(d, {1, 1, 1, 0, 0});  // wrong: 0, 2, 3
    const auto p2 = preds(d, {1, 1, 0, 0, 1});  // wrong: 0, 3, 4
    const auto p3 = preds(d, {1, 0, 0, 1, 0});  // wrong: 0, 1
    auto ids = [](const std::vector<FrequentMiss>& v) {
        std::vector<std::string> out;
        for (const auto& f : v) out.push_back(f.image_id);
        return out;
    };
    CHECK(ids(frequent_misclassified({p1}, 1.0)) == std::vector<std::string>{"img-000", "img-002", "img-003"});
    // rates: 000 3/3, 003 2/3, 001 002 004 1/3
    CHECK(ids(frequent_misclassified({p1, p2, p3}, 2.0 / 3.0)) == std::vector<std::string>{"img-000", "img-003"});
    CHECK(ids(frequent_misclassified({p1, p2, p3}, 1e-9)) ==
          std::vector<std::string>{"img-000", "img-003", "img-001", "img-002", "img-004"});
    const auto top = frequent_misclassified({p1, p2, p3}, 1.0);
    REQUIRE(top.size() == 1);
    CHECK(top[0].misclassified == 3);
    CHECK(top[0].rate == 1.0);
    CHECK(kind_of([&] { frequent_misclassified({}, 0.5); }) == ErrorKind::Validation);
    CHECK(kind_of([&] { frequent_misclassified({p1}, 0.0); }) == ErrorKind::Validation);
}
