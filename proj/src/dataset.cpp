#include "dash/dataset.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dash/error.hpp"
#include "dash/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dash {

const char* to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    throw validation_error("unknown split '" + text + "'", "expected train, val or test");
}

namespace {

constexpr Glyph kAllGlyphs[] = {Glyph::Circle, Glyph::Square, Glyph::Triangle,
                                Glyph::Diamond, Glyph::Cross, Glyph::Ring};

const char* to_string(Provenance p) { return p == Provenance::Original ? "original" : "augmented"; }

Provenance parse_provenance(const std::string& text) {
    if (text == "original") return Provenance::Original;
    if (text == "augmented") return Provenance::Augmented;
    throw data_error("unknown provenance '" + text + "'");
}

const char* to_string(BiasAxis axis) { return axis == BiasAxis::Background ? "background" : "fill"; }

BiasAxis parse_axis(const std::string& text) {
    if (text == "background") return BiasAxis::Background;
    if (text == "fill") return BiasAxis::Fill;
    throw validation_error("unknown bias axis '" + text + "'", "expected background or fill");
}

constexpr Rgb kGlyphInk{0.10, 0.10, 0.10};
constexpr Rgb kNeutralBackground{0.55, 0.55, 0.55};

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
    void str(const std::string& s) {
        bytes(s.data(), s.size());
        const char sep = 0;
        bytes(&sep, 1);
    }
    template <typename T>
    void pod(T v) {
        bytes(&v, sizeof v);
    }
};

}  // namespace

const char* to_string(Glyph glyph) {
    switch (glyph) {
        case Glyph::Circle: return "circle";
        case Glyph::Square: return "square";
        case Glyph::Triangle: return "triangle";
        case Glyph::Diamond: return "diamond";
        case Glyph::Cross: return "cross";
        case Glyph::Ring: return "ring";
    }
    return "circle";
}

Glyph parse_glyph(const std::string& text) {
    for (auto g : kAllGlyphs) {
        if (text == to_string(g)) return g;
    }
    throw validation_error("unknown glyph '" + text + "'");
}

bool GlyphPlacement::contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double r = radius;
    switch (glyph) {
        case Glyph::Circle: return dx * dx + dy * dy <= r * r;
        case Glyph::Square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
        case Glyph::Triangle: {
            // apex up, base at +0.8r; half-width grows linearly from apex to base
            const double top = -1.1 * r;
            const double bottom = 0.8 * r;
            if (dy < top || dy > bottom) return false;
            const double half = 1.15 * r * (dy - top) / (bottom - top);
            return std::abs(dx) <= half;
        }
        case Glyph::Diamond: return std::abs(dx) + std::abs(dy) <= 1.15 * r;
        case Glyph::Cross:
            return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
                   (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
        case Glyph::Ring: {
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.3 * r * r;
        }
    }
    return false;
}

std::vector<std::uint8_t> glyph_mask(const GlyphPlacement& placement, int height, int width) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            mask[static_cast<std::size_t>(y) * width + x] = placement.contains(x + 0.5, y + 0.5) ? 1 : 0;
        }
    }
    return mask;
}

void BiasedDatasetSpec::validate() const {
    auto fail = [](const std::string& what) { throw validation_error("invalid dataset spec: " + what); };
    if (num_classes < 2) fail("num_classes must be >= 2 (got " + std::to_string(num_classes) + ")");
    if (static_cast<int>(shapes.size()) != num_classes) {
        fail("shapes must list one glyph per class (" + std::to_string(shapes.size()) + " for " +
             std::to_string(num_classes) + " classes)");
    }
    if (std::set<Glyph>(shapes.begin(), shapes.end()).size() != shapes.size()) fail("shapes must be distinct");
    const int kc = static_cast<int>(palette.size());
    if (kc < num_classes) {
        fail("palette size K_c must be >= num_classes (K_c=" + std::to_string(kc) + ", C=" +
             std::to_string(num_classes) + ")");
    }
    for (const auto& c : palette) {
        for (double v : {c.r, c.g, c.b}) {
            if (!(v >= 0.0 && v <= 1.0)) fail("palette components must lie in [0,1]");
        }
    }
    const double floor = 1.0 / kc;
    if (!(bias_strength >= floor - 1e-12 && bias_strength <= 1.0)) {
        fail("bias_strength must lie in [1/K_c, 1] = [" + std::to_string(floor) + ", 1] (got " +
             std::to_string(bias_strength) + ")");
    }
    if (train_count <= 0 || val_count <= 0 || test_count <= 0) fail("split counts must be > 0");
    if (image_size < 8) fail("image_size must be >= 8");
    if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes) {
        fail("class_names must have num_classes entries");
    }
    if (!(noise >= 0.0 && noise <= 0.5)) fail("noise must lie in [0, 0.5]");
}

void to_json(json& j, const BiasedDatasetSpec& spec) {
    json shapes = json::array();
    for (auto g : spec.shapes) shapes.push_back(to_string(g));
    json palette = json::array();
    for (const auto& c : spec.palette) palette.push_back({c.r, c.g, c.b});
    j = json{{"num_classes", spec.num_classes},
             {"shapes", shapes},
             {"palette", palette},
             {"class_names", spec.class_names},
             {"bias_strength", spec.bias_strength},
             {"counts", {{"train", spec.train_count}, {"val", spec.val_count}, {"test", spec.test_count}}},
             {"image_size", spec.image_size},
             {"seed", spec.seed},
             {"axis", to_string(spec.axis)},
             {"noise", spec.noise}};
}

void from_json(const json& j, BiasedDatasetSpec& spec) {
    BiasedDatasetSpec d;
    spec.num_classes = j.value("num_classes", d.num_classes);
    if (j.contains("shapes")) {
        spec.shapes.clear();
        for (const auto& s : j.at("shapes")) spec.shapes.push_back(parse_glyph(s.get<std::string>()));
    } else {
        spec.shapes.assign(std::begin(kAllGlyphs),
                           std::begin(kAllGlyphs) + std::clamp(spec.num_classes, 0, 6));
    }
    if (j.contains("palette")) {
        spec.palette.clear();
        for (const auto& c : j.at("palette")) {
            if (!c.is_array() || c.size() != 3) throw validation_error("palette entries must be [r, g, b]");
            spec.palette.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
        }
    }
    spec.class_names = j.value("class_names", std::vector<std::string>{});
    spec.bias_strength = j.value("bias_strength", d.bias_strength);
    if (j.contains("counts")) {
        const auto& c = j.at("counts");
        spec.train_count = c.value("train", d.train_count);
        spec.val_count = c.value("val", d.val_count);
        spec.test_count = c.value("test", d.test_count);
    }
    spec.image_size = j.value("image_size", d.image_size);
    spec.seed = j.value("seed", d.seed);
    spec.axis = parse_axis(j.value("axis", std::string("background")));
    spec.noise = j.value("noise", d.noise);
}

const ImageSample* Dataset::find(const std::string& id) const {
    for (const auto& s : samples) {
        if (s.id == id) return &s;
    }
    return nullptr;
}

const ImageSample& Dataset::at(const std::string& id) const {
    const auto* s = find(id);
    if (!s) throw not_found_error("unknown image id '" + id + "'");
    return *s;
}

std::vector<const ImageSample*> Dataset::split(Split s) const {
    std::vector<const ImageSample*> out;
    for (const auto& sample : samples) {
        if (sample.split == s) out.push_back(&sample);
    }
    return out;
}

std::size_t Dataset::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [s](const auto& x) { return x.split == s; }));
}

std::uint64_t Dataset::content_hash() const {
    Fnv1a h;
    h.pod(image_size);
    for (const auto& name : class_names) h.str(name);
    for (const auto& s : samples) {
        h.str(s.id);
        h.pod(s.label);
        h.pod(static_cast<int>(s.split));
        h.pod(static_cast<int>(s.provenance));
        for (double v : s.image.pixels) {
            const auto b = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            h.pod(b);
        }
    }
    return h.h;
}

void Dataset::validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.id).second) throw data_error("id collision", s.id);
        if (s.label < 0 || s.label >= num_classes()) {
            throw data_error("label out of range for '" + s.id + "'", std::to_string(s.label));
        }
        if (s.image.height != image_size || s.image.width != image_size) {
            throw data_error("image size mismatch for '" + s.id + "'");
        }
        for (double v : s.image.pixels) {
            if (!(v >= 0.0 && v <= 1.0)) throw data_error("pixel outside [0,1] in '" + s.id + "'");
        }
        if (s.provenance == Provenance::Augmented &&
            (!s.source_id || s.source_id->empty() || !s.style_cluster)) {
            throw data_error("augmented sample '" + s.id + "' lacks source_id/style_cluster");
        }
    }
}

Dataset generate_biased_dataset(const BiasedDatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int n = spec.image_size;
    const int kc = static_cast<int>(spec.palette.size());

    Dataset ds;
    ds.image_size = n;
    ds.spec = spec;
    if (spec.class_names.empty()) {
        for (auto g : spec.shapes) ds.class_names.emplace_back(to_string(g));
    } else {
        ds.class_names = spec.class_names;
    }

    auto make = [&](Split split, int index, int label) {
        int color;
        if (split == Split::Test) {
            color = static_cast<int>(rng.below(kc));
        } else if (rng.uniform() < spec.bias_strength) {
            color = label;
        } else {
            // uniform over the remaining palette entries
            color = static_cast<int>(rng.below(kc - 1));
            if (color >= label) ++color;
        }

        GlyphPlacement place;
        place.glyph = spec.shapes[label];
        place.radius = n * rng.uniform(0.27, 0.34);
        place.cx = n / 2.0 + n * rng.uniform(-0.09, 0.09);
        place.cy = n / 2.0 + n * rng.uniform(-0.09, 0.09);

        Rgb tint = spec.palette[color];
        const double jitter = 0.04;
        tint.r = std::clamp(tint.r + rng.uniform(-jitter, jitter), 0.0, 1.0);
        tint.g = std::clamp(tint.g + rng.uniform(-jitter, jitter), 0.0, 1.0);
        tint.b = std::clamp(tint.b + rng.uniform(-jitter, jitter), 0.0, 1.0);
        const Rgb bg = spec.axis == BiasAxis::Background ? tint : kNeutralBackground;
        const Rgb fg = spec.axis == BiasAxis::Background ? kGlyphInk : tint;

        ImageSample s;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s-%05d", to_string(split), index);
        s.id = buf;
        s.label = label;
        s.split = split;
        s.glyph = place;
        s.color_index = color;
        s.image = Image(n, n);
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const Rgb& c = place.contains(x + 0.5, y + 0.5) ? fg : bg;
                const double rgb[3] = {c.r, c.g, c.b};
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = rgb[ch] + rng.uniform(-spec.noise, spec.noise);
                    s.image.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        // stored at 8-bit precision so save/load round trips are exact
        s.image = quantize_8bit(s.image);
        ds.samples.push_back(std::move(s));
    };

    const std::pair<Split, int> plan[] = {
        {Split::Train, spec.train_count}, {Split::Val, spec.val_count}, {Split::Test, spec.test_count}};
    for (const auto& [split, count] : plan) {
        for (int i = 0; i < count; ++i) make(split, i, i % spec.num_classes);
    }
    return ds;
}

namespace {

json sample_record(const ImageSample& s) {
    json r{{"id", s.id},
           {"label", s.label},
           {"split", to_string(s.split)},
           {"provenance", to_string(s.provenance)},
           {"file", "images/" + s.id + ".png"}};
    if (s.source_id) r["source_id"] = *s.source_id;
    if (s.style_cluster) r["style_cluster"] = *s.style_cluster;
    if (s.glyph) {
        r["glyph"] = {{"shape", to_string(s.glyph->glyph)},
                      {"cx", s.glyph->cx},
                      {"cy", s.glyph->cy},
                      {"radius", s.glyph->radius}};
    }
    if (s.color_index) r["color_index"] = *s.color_index;
    return r;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot write file", tmp.string());
        out << text;
        if (!out) throw data_error("cannot write file", tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

fs::path save_dataset(const Dataset& dataset, const fs::path& directory) {
    dataset.validate();
    std::error_code ec;
    fs::create_directories(directory / "images", ec);
    if (ec) throw data_error("cannot create dataset directory", directory.string() + ": " + ec.message());

    json samples = json::array();
    for (const auto& s : dataset.samples) {
        const fs::path img = directory / "images" / (s.id + ".png");
        write_png(s.image, img.string());
        samples.push_back(sample_record(s));
    }
    json manifest{{"format", "dash-dataset"},
                  {"format_version", 1},
                  {"image_size", dataset.image_size},
                  {"class_names", dataset.class_names},
                  {"version", dataset.version},
                  {"spec", dataset.spec ? json(*dataset.spec) : json(nullptr)},
                  {"samples", samples}};
    const fs::path path = directory / "manifest.json";
    write_text_atomic(path, manifest.dump(1));
    return path;
}

Dataset load_dataset(const fs::path& directory) {
    const fs::path path = directory / "manifest.json";
    std::ifstream in(path);
    if (!in) throw data_error("missing manifest", path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw data_error("corrupt manifest", e.what());
    }

    Dataset ds;
    try {
        ds.image_size = manifest.at("image_size").get<int>();
        ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
        ds.version = manifest.value("version", 0);
        if (manifest.contains("spec") && !manifest["spec"].is_null()) {
            ds.spec = manifest["spec"].get<BiasedDatasetSpec>();
        }
        std::unordered_set<std::string> seen;
        for (const auto& r : manifest.at("samples")) {
            ImageSample s;
            s.id = r.at("id").get<std::string>();
            if (!seen.insert(s.id).second) throw data_error("id collision", s.id);
            s.label = r.at("label").get<int>();
            s.split = parse_split(r.at("split").get<std::string>());
            s.provenance = parse_provenance(r.value("provenance", std::string("original")));
            if (r.contains("source_id")) s.source_id = r["source_id"].get<std::string>();
            if (r.contains("style_cluster")) s.style_cluster = r["style_cluster"].get<int>();
            if (r.contains("glyph")) {
                const auto& g = r["glyph"];
                s.glyph = GlyphPlacement{parse_glyph(g.at("shape").get<std::string>()), g.at("cx").get<double>(),
                                         g.at("cy").get<double>(), g.at("radius").get<double>()};
            }
            if (r.contains("color_index")) s.color_index = r["color_index"].get<int>();
            const auto file = r.value("file", "images/" + s.id + ".png");
            s.image = read_png((directory / file).string());
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw data_error("corrupt manifest", e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Data) throw;
        throw data_error(e.what(), e.detail());
    }
    ds.validate();
    return ds;
}

void to_json(json& j, const HistoryRecord& rec) {
    j = json{{"ts", rec.ts},
             {"checkpoint_id", rec.checkpoint_id},
             {"method", rec.method},
             {"target_label", rec.target_label},
             {"count", rec.new_ids.size()},
             {"source_ids", rec.source_ids},
             {"new_ids", rec.new_ids}};
    if (rec.style_clusters.size() == 1) {
        j["style_cluster"] = rec.style_clusters.front();
    } else {
        j["style_cluster"] = rec.style_clusters;
    }
}

void from_json(const json& j, HistoryRecord& rec) {
    rec.ts = j.at("ts").get<std::string>();
    rec.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    rec.method = j.at("method").get<std::string>();
    rec.target_label = j.at("target_label").get<int>();
    rec.source_ids = j.at("source_ids").get<std::vector<std::string>>();
    rec.new_ids = j.at("new_ids").get<std::vector<std::string>>();
    const auto& sc = j.at("style_cluster");
    rec.style_clusters = sc.is_array() ? sc.get<std::vector<int>>() : std::vector<int>{sc.get<int>()};
}

void HistoryLog::append(const HistoryRecord& record) const {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw data_error("cannot open history log", path_.string());
    out << json(record).dump() << '\n';
    out.flush();
    if (!out) throw data_error("cannot append to history log", path_.string());
}

std::vector<HistoryRecord> HistoryLog::read_all() const {
    std::vector<HistoryRecord> out;
    std::ifstream in(path_);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<HistoryRecord>());
        } catch (const json::exception& e) {
            throw data_error("corrupt history log", path_.string() + ":" + std::to_string(lineno));
        }
    }
    return out;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

Dataset register_augmented(const Dataset& dataset, std::vector<ImageSample> samples, int target_label,
                           const HistoryLog& log, const std::string& checkpoint_id, const std::string& method) {
    if (target_label < 0 || target_label >= dataset.num_classes()) {
        throw validation_error("target label out of range", std::to_string(target_label));
    }
    std::unordered_set<std::string> ids;
    for (const auto& s : dataset.samples) ids.insert(s.id);
    std::set<int> clusters;
    HistoryRecord rec;
    for (auto& s : samples) {
        if (s.provenance != Provenance::Augmented) {
            throw validation_error("sample '" + s.id + "' is not marked augmented");
        }
        if (!s.source_id || s.source_id->empty() || !s.style_cluster) {
            throw validation_error("augmented sample '" + s.id + "' lacks source_id/style_cluster");
        }
        if (!dataset.find(*s.source_id)) {
            throw data_error("unknown source_id '" + *s.source_id + "'", s.id);
        }
        if (s.image.height != dataset.image_size || s.image.width != dataset.image_size) {
            throw validation_error("augmented sample '" + s.id + "' has wrong image size");
        }
        if (!ids.insert(s.id).second) throw data_error("duplicate id", s.id);
        clusters.insert(*s.style_cluster);
        rec.source_ids.push_back(*s.source_id);
        rec.new_ids.push_back(s.id);
    }

    Dataset next = dataset;
    for (auto& s : samples) {
        s.label = target_label;
        s.split = Split::Train;
        s.image = quantize_8bit(s.image);
        next.samples.push_back(std::move(s));
    }
    next.version = dataset.version + 1;

    rec.ts = utc_timestamp();
    rec.checkpoint_id = checkpoint_id;
    rec.method = method;
    rec.style_clusters.assign(clusters.begin(), clusters.end());
    rec.target_label = target_label;
    log.append(rec);
    return next;
}

}  // namespace dash
