// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "dash/cluster.hpp"
#include "dash/convnet.hpp"
#include "dash/dataset.hpp"
#include "dash/engine.hpp"
#include "dash/explainers.hpp"
#include "dash/model_diff.hpp"
#include "dash/projection.hpp"
#include "dash/replay.hpp"
#include "dash/rng.hpp"
#include "dash/server.hpp"
#include "dash/session.hpp"

using namespace dash;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path source_dir = DASH_SOURCE_DIR;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

class ScratchDir {
public:
    ScratchDir() {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("dash-accept-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw data_error("cannot read", p.string());
    return json::parse(in);
}

// ---------------------------------------------------------------------------
// 1 + 2: biased training and the scripted debias loop

struct BiasRun {
    double train = 0.0;
    double test = 0.0;
};
BiasRun bias_run;

Outcome bias_reproduction() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const auto spec = read_json(source_dir / "data/specs/colored_shapes_biased.json").get<BiasedDatasetSpec>();
    const json script = read_json(source_dir / "data/scripts/debias_replay.json");
    const Dataset data = generate_biased_dataset(spec);
    ConvNetConfig cfg = script.at("model").get<ConvNetConfig>();
    cfg.num_classes = data.num_classes();
    cfg.image_size = data.image_size;
    const TrainConfig tc = script.at("steps").at(0).at("config").get<TrainConfig>();
    const auto model = train(init_model(cfg), data, tc);
    bias_run.train = predict(model, data, Split::Train).accuracy();
    bias_run.test = predict(model, data, Split::Test).accuracy();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(spec.bias_strength == 0.95, "bias strength 0.95");
    o.require(data.count(Split::Train) == 300 && data.count(Split::Val) == 60 && data.count(Split::Test) == 90,
              "300/60/90 splits");
    o.require(bias_run.train > 0.90, "train accuracy > 0.90");
    o.require(bias_run.test < 0.60, "test accuracy < 0.60");
    o.require(secs < 180.0, "under 3 minutes");
    o.note(fmt("train %.3f", bias_run.train) + fmt(", test %.3f", bias_run.test) + fmt(", %.1fs", secs));
    return o;
}

Outcome debias_loop() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    ScratchDir dir;
    const auto script = load_replay_script(source_dir / "data/scripts/debias_replay.json");
    const auto report = run_replay(script, dir.path());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double lift = report.final_test_accuracy - report.initial_test_accuracy;
    o.require(report.final_test_accuracy >= 0.85, "final test accuracy >= 0.85");
    o.require(report.retrain_iterations >= 1 && report.retrain_iterations <= 4, "1..4 retrain iterations");
    o.require(lift >= 0.25, "lift >= 25 points");
    o.require(report.initial_test_accuracy == bias_run.test, "initial model equals the standalone biased model");
    o.require(secs < 600.0, "under 10 minutes");
    o.note(fmt("test %.3f", report.initial_test_accuracy) + fmt(" -> %.3f", report.final_test_accuracy) +
           " after " + std::to_string(report.retrain_iterations) + " iteration(s), " +
           std::to_string(report.augmented_total) + " augmented" + fmt(", %.1fs", secs));
    return o;
}

// ---------------------------------------------------------------------------
// 3: gradients

Outcome gradient_oracle() {
    Outcome o;
    BiasedDatasetSpec spec;
    spec.image_size = 16;
    spec.train_count = 12;
    spec.val_count = 3;
    spec.test_count = 3;
    spec.seed = 21;
    const Dataset data = generate_biased_dataset(spec);
    auto batch = data.split(Split::Train);
    batch.resize(4);

    ConvNetConfig base;
    base.image_size = 16;
    base.seed = 5;
    std::vector<std::pair<std::string, ConvNetConfig>> archs;
    archs.emplace_back("default", base);
    {
        auto c = base;
        c.blocks = {{4, 3, 1}};
        c.pooling = Pooling::None;
        archs.emplace_back("single-block", c);
    }
    {
        auto c = base;
        c.blocks = {{6, 3, 1}, {8, 3, 1}};
        c.hidden = 12;
        archs.emplace_back("hidden-layer", c);
    }
    {
        auto c = base;
        c.blocks = {{6, 5, 2}, {8, 3, 1}};
        c.pooling = Pooling::None;
        archs.emplace_back("strided-5x5", c);
    }
    double worst = 0.0;
    for (const auto& [name, cfg] : archs) {
        const auto r = backward_check(ConvNet::initialized(cfg), batch, 100, 3);
        worst = std::max(worst, r.max_relative_error);
        o.require(r.checked == 100, name + " checked 100 parameters");
        o.require(r.max_relative_error < 1e-4, name + " max relative error < 1e-4");
    }
    o.note(std::to_string(archs.size()) + " architectures" + fmt(", max relative error %.2e", worst));
    return o;
}

// ---------------------------------------------------------------------------
// 4: Grad-CAM on the unbiased control

Outcome gradcam_localization() {
    Outcome o;
    const auto spec = read_json(source_dir / "data/specs/colored_shapes_control.json").get<BiasedDatasetSpec>();
    const Dataset data = generate_biased_dataset(spec);
    ConvNetConfig cfg;
    cfg.seed = 1;
    cfg.num_classes = data.num_classes();
    cfg.image_size = data.image_size;
    TrainConfig tc;
    tc.epochs = 30;
    tc.seed = 3;
    const auto model = train(init_model(cfg), data, tc);
    const auto preds = predict(model, data, Split::Test);
    int correct = 0, localized = 0;
    for (const auto* s : data.split(Split::Test)) {
        if (!preds.find(s->id)->correct) continue;
        ++correct;
        const auto heat = grad_cam(model, s->image, std::nullopt, s->id);
        const auto mask = glyph_mask(*s->glyph, s->image.height, s->image.width);
        double in = 0.0, out = 0.0;
        int n_in = 0, n_out = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) {
                in += heat.values[i];
                ++n_in;
            } else {
                out += heat.values[i];
                ++n_out;
            }
        }
        localized += n_in > 0 && n_out > 0 && in / n_in > out / n_out;
    }
    const double frac = correct ? static_cast<double>(localized) / correct : 0.0;
    o.require(correct > 0, "some test images classified correctly");
    o.require(frac >= 0.80, ">= 80% localized inside the glyph");
    o.note(std::to_string(localized) + "/" + std::to_string(correct) + fmt(" localized (%.1f%%)", 100 * frac) +
           fmt(", control test accuracy %.3f", preds.accuracy()));
    return o;
}

// ---------------------------------------------------------------------------
// 5: t-SNE

std::vector<std::vector<double>> gaussian_cloud(Rng& rng, int n, int dim, double center, double sd) {
    std::vector<std::vector<double>> out(n, std::vector<double>(dim));
    for (auto& p : out)
        for (auto& v : p) v = center + sd * rng.normal();
    return out;
}

double silhouette(const std::vector<Point2>& pts, const std::vector<int>& labels) {
    const std::size_t n = pts.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double same = 0.0, other = 0.0;
        int ns = 0, no = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
            if (labels[i] == labels[j]) {
                same += d;
                ++ns;
            } else {
                other += d;
                ++no;
            }
        }
        const double a = same / ns, b = other / no;
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

Outcome tsne_properties() {
    Outcome o;
    Rng rng(77);
    struct Fixture {
        std::string name;
        std::vector<std::vector<double>> x;
        std::vector<int> labels;
        double perplexity;
    };
    std::vector<Fixture> fixtures;
    {
        Fixture f{"two-gaussians", {}, {}, 16.0};
        for (int c = 0; c < 2; ++c) {
            for (auto& p : gaussian_cloud(rng, 25, 8, c * 10.0, 1.0)) {
                f.x.push_back(p);
                f.labels.push_back(c);
            }
        }
        fixtures.push_back(std::move(f));
    }
    {
        Fixture f{"three-blobs", {}, {}, 10.0};
        for (int c = 0; c < 3; ++c) {
            for (auto& p : gaussian_cloud(rng, 15, 5, c * 6.0, 1.5)) {
                f.x.push_back(p);
                f.labels.push_back(c);
            }
        }
        fixtures.push_back(std::move(f));
    }
    {
        Fixture f{"uniform-cube", {}, {}, 8.0};
        for (int i = 0; i < 40; ++i) {
            std::vector<double> p(10);
            for (auto& v : p) v = rng.uniform();
            f.x.push_back(p);
            f.labels.push_back(0);
        }
        fixtures.push_back(std::move(f));
    }

    double worst_calibration = 0.0, sil = 0.0;
    for (const auto& f : fixtures) {
        // perplexity of each conditional row, measured directly from its entropy
        const auto aff = compute_affinities(f.x, f.perplexity);
        const std::size_t n = f.x.size();
        for (std::size_t i = 0; i < n; ++i) {
            double h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p = aff.conditional[i * n + j];
                if (p > 0.0) h -= p * std::log2(p);
            }
            worst_calibration = std::max(worst_calibration, std::abs(h - std::log2(f.perplexity)));
        }
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) ids.push_back("p" + std::to_string(1000 + i));
        TsneOptions opt;
        opt.perplexity = f.perplexity;
        opt.seed = 5;
        opt.iterations = 500;
        const auto r = tsne(ids, f.x, opt);
        o.require(r.final_kl < r.initial_kl, f.name + " final KL < initial KL");
        if (f.name == "two-gaussians") sil = silhouette(r.points, f.labels);
    }
    o.require(worst_calibration < 1e-4, "per-point perplexity calibration error < 1e-4 bits");
    o.require(sil > 0.5, "two-gaussian silhouette > 0.5");
    o.note(std::to_string(fixtures.size()) + " fixtures" + fmt(", max calibration error %.1e bits", worst_calibration) +
           fmt(", silhouette %.3f", sil));
    return o;
}

// ---------------------------------------------------------------------------
// 6: k-means

double sse(const std::vector<std::vector<double>>& x, const std::vector<int>& assign, int k) {
    const std::size_t dim = x[0].size();
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
        std::vector<double> mean(dim, 0.0);
        int n = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (assign[i] != c) continue;
            for (std::size_t d = 0; d < dim; ++d) mean[d] += x[i][d];
            ++n;
        }
        if (n == 0) return INFINITY;
        for (auto& m : mean) m /= n;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (assign[i] != c) continue;
            for (std::size_t d = 0; d < dim; ++d) total += (x[i][d] - mean[d]) * (x[i][d] - mean[d]);
        }
    }
    return total;
}

Outcome kmeans_oracles() {
    Outcome o;
    Rng rng(99);
    int brute = 0, traces = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 5 + trial % 4;
        std::vector<std::vector<double>> x(n, std::vector<double>(2));
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) {
            for (auto& v : x[i]) v = rng.uniform() * 10.0;
            ids.push_back("q" + std::to_string(10 + i));
        }
        double best = INFINITY;
        for (int mask = 1; mask < (1 << (n - 1)); ++mask) {
            std::vector<int> assign(n);
            for (int i = 0; i < n; ++i) assign[i] = (mask >> i) & 1;
            best = std::min(best, sse(x, assign, 2));
        }
        const auto r = kmeans(ids, x, 2, static_cast<std::uint64_t>(trial));
        o.require(std::abs(r.inertia - best) <= 1e-9 * std::max(1.0, best), "brute-force optimum on n=" + std::to_string(n));
        brute += std::abs(r.inertia - best) <= 1e-9 * std::max(1.0, best);
    }
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 60, k = 2 + trial % 6;
        std::vector<std::vector<double>> x(n, std::vector<double>(4));
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) {
            for (auto& v : x[i]) v = rng.normal() + (i % k) * 2.0;
            ids.push_back("r" + std::to_string(100 + i));
        }
        const auto r = kmeans(ids, x, k, static_cast<std::uint64_t>(trial));
        bool monotone = true;
        for (std::size_t i = 1; i < r.inertia_trace.size(); ++i) {
            monotone = monotone && r.inertia_trace[i] <= r.inertia_trace[i - 1] * (1 + 1e-12);
        }
        o.require(monotone, "monotone inertia trace");
        traces += monotone;
    }
    std::vector<std::vector<double>> x(30, std::vector<double>(2, 0.0));
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) {
        x[i][0] = i;
        ids.push_back("s" + std::to_string(10 + i));
    }
    int rejected = 0;
    for (int k : {0, 1, 21, 25}) {
        try {
            kmeans(ids, x, k, 0);
        } catch (const Error& e) {
            rejected += e.kind() == ErrorKind::Validation;
        }
    }
    o.require(rejected == 4, "K outside [2,20] rejected");
    o.require(kmeans(ids, x, 2, 0).k == 2 && kmeans(ids, x, 20, 0).k == 20, "K = 2 and K = 20 accepted");
    o.note(std::to_string(brute) + "/40 brute-force optima, " + std::to_string(traces) + "/20 monotone traces, " +
           std::to_string(rejected) + "/4 out-of-range K rejected");
    return o;
}

// ---------------------------------------------------------------------------
// 7: moment-matching translation

Outcome translation_oracle() {
    Outcome o;
    Rng rng(123);
    const MomentMatchTranslator mm;
    double worst_moment = 0.0, worst_identity = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Image src(12, 12);
        for (auto& v : src.pixels) v = 0.3 + 0.4 * rng.uniform();
        StyleStats style;
        for (int c = 0; c < 3; ++c) {
            style.mean[c] = 0.35 + 0.3 * rng.uniform();
            style.stddev[c] = 0.02 + 0.05 * rng.uniform();
        }
        std::size_t clamped = 0;
        const Image out = mm.apply(src, style, &clamped);
        o.require(clamped == 0, "fixture stays unclipped");
        const auto got = channel_stats({&out});
        for (int c = 0; c < 3; ++c) {
            worst_moment = std::max(worst_moment, std::abs(got.mean[c] - style.mean[c]));
            worst_moment = std::max(worst_moment, std::abs(got.stddev[c] - style.stddev[c]));
        }
        const auto own = channel_stats({&src});
        StyleStats self;
        self.mean = own.mean;
        self.stddev = own.stddev;
        const Image same = mm.apply(src, self);
        for (std::size_t i = 0; i < src.pixels.size(); ++i) {
            worst_identity = std::max(worst_identity, std::abs(same.pixels[i] - src.pixels[i]));
        }
    }
    o.require(worst_moment < 1e-6, "target mean/std within 1e-6");
    o.require(worst_identity < 1e-9, "self-translation identity within 1e-9");
    o.note(fmt("max moment error %.1e", worst_moment) + fmt(", max identity error %.1e", worst_identity));
    return o;
}

// ---------------------------------------------------------------------------
// 8: mosaic and trace

Dataset label_fixture(const std::vector<int>& labels, int classes) {
    Dataset d;
    d.image_size = 1;
    for (int c = 0; c < classes; ++c) d.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ImageSample s;
        char id[32];
        std::snprintf(id, sizeof id, "img-%04zu", i);
        s.id = id;
        s.label = labels[i];
        s.split = Split::Test;
        s.image = Image(1, 1, 0.5);
        d.samples.push_back(std::move(s));
    }
    return d;
}

PredictionSet prediction_fixture(const std::string& cid, const Dataset& d, const std::vector<int>& predicted) {
    PredictionSet p;
    p.checkpoint_id = cid;
    p.split = Split::Test;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        PredictionRecord r;
        r.image_id = d.samples[i].id;
        r.label = d.samples[i].label;
        r.predicted = predicted[i];
        r.correct = r.predicted == r.label;
        p.records.push_back(std::move(r));
    }
    return p;
}

Outcome mosaic_trace() {
    Outcome o;
    ConfusionMatrix cm;
    cm.num_classes = 2;
    cm.counts = {{8, 2}, {1, 9}};
    const auto m = mosaic_layout(cm, 0.0, 0.0);
    const double expected[2][2] = {{0.4, 0.1}, {0.05, 0.45}};
    double worst = 0.0;
    for (int r = 1; r <= 2; ++r)
        for (int c = 1; c <= 2; ++c) {
            const auto& cell = m.cell(r, c);
            worst = std::max(worst, std::abs(cell.w * cell.h - expected[r - 1][c - 1]));
        }
    o.require(worst < 1e-12, "[[8,2],[1,9]] areas {0.4,0.1,0.05,0.45}");

    Rng rng(2024);
    int reconciled = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + static_cast<int>(rng.below(5));
        const int n = 1 + static_cast<int>(rng.below(60));
        std::vector<int> labels(n), a(n), b(n);
        for (int i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng.below(classes));
            a[i] = static_cast<int>(rng.below(classes));
            b[i] = static_cast<int>(rng.below(classes));
        }
        const Dataset d = label_fixture(labels, classes);
        const auto pa = prediction_fixture("ck-a", d, a);
        const auto pb = prediction_fixture("ck-b", d, b);
        const auto t = trace_diff(pa, pb, d, Split::Test);
        const long da = confusion(pa, d, Split::Test).diagonal();
        const long db = confusion(pb, d, Split::Test).diagonal();
        reconciled += t.cc + t.ci == da && t.cc + t.ic == db && t.cc + t.ci + t.ic + t.ii == n;
    }
    o.require(reconciled == 1000, "trace counts reconcile with both diagonals");
    o.note(fmt("max area error %.1e", worst) + ", " + std::to_string(reconciled) + "/1000 randomized traces reconciled");
    return o;
}

// ---------------------------------------------------------------------------
// 9: HTTP session round trip and restart

json service_spec() {
    BiasedDatasetSpec s;
    s.image_size = 16;
    s.train_count = 36;
    s.val_count = 9;
    s.test_count = 18;
    s.seed = 5;
    return json(s);
}

Outcome service_round_trip() {
    Outcome o;
    ScratchDir root;
    std::string sid, child, grandchild, root_ck;
    json committed;
    {
        SessionService service(root.path());
        ApiServer api(service);
        const int port = api.bind_any_port("127.0.0.1");
        std::thread serving([&] { api.serve(); });
        api.wait_until_ready();
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(300, 0);
        const char* js = "application/json";

        auto call = [&](const httplib::Result& r, int want, const std::string& what) -> json {
            if (!r) {
                o.require(false, what + " (no response)");
                return json::object();
            }
            o.require(r->status == want, what + " -> " + std::to_string(r->status));
            return json::parse(r->body, nullptr, false);
        };
        auto wait_job = [&](const std::string& id) {
            for (int i = 0; i < 30000; ++i) {
                const auto j = call(c.Get("/api/v1/jobs/" + id), 200, "poll job");
                if (j.value("state", "") == "done" || j.value("state", "") == "failed") return j;
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            return json::object();
        };

        const auto s = call(c.Post("/api/v1/sessions", json{{"dataset_spec", service_spec()}, {"model", {{"seed", 1}}}}.dump(), js),
                            201, "create session");
        sid = s.value("id", "");
        root_ck = s.value("active", "");
        const std::string base = "/api/v1/sessions/" + sid;

        const auto j1 = wait_job(call(c.Post(base + "/train", R"({"config":{"epochs":4,"batch_size":12,"seed":1}})", js),
                                      202, "train")
                                     .value("id", ""));
        o.require(j1.value("state", "") == "done", "first training finishes");
        child = j1.value("checkpoint_id", "");
        call(c.Post(base + "/clusters", R"({"k":3,"seed":2})", js), 200, "cluster");
        const auto tr = call(c.Post(base + "/translate", R"({"source_ids":["train-00000","train-00004"],"cluster":1,"count":1})", js),
                             200, "translate");
        json ids = json::array();
        for (const auto& it : tr.value("items", json::array())) ids.push_back(it["id"]);
        o.require(ids.size() == 2, "two translations pending");
        const auto au = call(c.Post(base + "/augment", json{{"ids", ids}}.dump(), js), 200, "augment");
        o.require(au.value("train_size", 0) == 38, "train split grows by 2");
        const auto j2 = wait_job(call(c.Post(base + "/train", R"({"config":{"epochs":2,"batch_size":12,"seed":2}})", js),
                                      202, "retrain")
                                     .value("id", ""));
        grandchild = j2.value("checkpoint_id", "");
        o.require(j2.value("state", "") == "done", "retraining finishes");
        const auto mosaic = call(c.Get(base + "/mosaic"), 200, "mosaic");
        o.require(mosaic["a"].value("checkpoint_id", "") == child && mosaic["b"].value("checkpoint_id", "") == grandchild,
                  "mosaic compares parent and active");
        const auto trace = call(c.Get(base + "/trace"), 200, "trace");
        o.require(trace.value("records", json::array()).size() == 18, "trace covers the test split");
        call(c.Post(base + "/checkpoints/" + child + "/activate", "", js), 200, "switch to parent");
        call(c.Delete(base + "/checkpoints/" + child), 409, "discarding the active checkpoint is refused");
        call(c.Post(base + "/checkpoints/" + grandchild + "/activate", "", js), 200, "switch back");
        call(c.Delete(base + "/checkpoints/" + root_ck), 200, "discard root");
        call(c.Post(base + "/clusters", R"({"k":25})", js), 422, "K=25 rejected");
        committed = call(c.Get(base), 200, "session summary");
        o.require(committed.value("jobs", json::array()).size() == 2, "switching never retrained");

        // a job in flight when the service goes down
        call(c.Post(base + "/train", R"({"config":{"epochs":400,"batch_size":12}})", js), 202, "long training");
        api.stop();
        serving.join();
    }
    SessionService again(root.path());
    const auto restored = again.get_session(sid);
    o.require(restored["active"] == committed["active"], "active checkpoint restored");
    o.require(restored["checkpoints"] == committed["checkpoints"], "checkpoint DAG restored");
    o.require(restored["dataset"] == committed["dataset"], "dataset version and content restored");
    const auto jobs = restored["jobs"];
    o.require(jobs.size() == 3 && jobs[2].value("state", "") == "failed", "in-flight job marked failed");
    o.note("scripted HTTP session ok, restart restored " + std::to_string(restored["checkpoints"].size()) +
           " checkpoints at dataset version " + std::to_string(restored["dataset"].value("version", -1)));
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) source_dir = argv[1];
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"bias-reproduction", bias_reproduction},   {"debias-loop", debias_loop},
        {"gradient-oracle", gradient_oracle},       {"gradcam-localization", gradcam_localization},
        {"tsne-properties", tsne_properties},       {"kmeans-oracles", kmeans_oracles},
        {"translation-oracle", translation_oracle}, {"mosaic-trace", mosaic_trace},
        {"service-round-trip", service_round_trip},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
