#include "dash/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "dash/error.hpp"
#include "dash/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dash {

void TrainConfig::validate() const {
    if (epochs < 0) throw validation_error("invalid train config: epochs must be >= 0");
    if (batch_size < 1) throw validation_error("invalid train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw validation_error("invalid train config: learning_rate must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw validation_error("invalid train config: momentum must be in [0,1)");
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"momentum", c.momentum},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.momentum = j.value("momentum", d.momentum);
    c.seed = j.value("seed", d.seed);
}

ConvNet Checkpoint::network() const {
    ConvNet net(config);
    net.set_flat_weights(weights);
    return net;
}

namespace {

json epoch_json(const EpochLoss& e) {
    return json{{"train_loss", e.train_loss},
                {"val_loss", e.val_loss},
                {"train_accuracy", e.train_accuracy},
                {"val_accuracy", e.val_accuracy}};
}

EpochLoss epoch_from_json(const json& j) {
    return {j.at("train_loss").get<double>(), j.at("val_loss").get<double>(), j.value("train_accuracy", 0.0),
            j.value("val_accuracy", 0.0)};
}

std::uint64_t fnv(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string make_checkpoint_id(const Checkpoint& c) {
    std::uint64_t h = fnv(c.weights.data(), c.weights.size() * sizeof(float));
    const std::string meta = json(c.config).dump() + "|" + c.parent_id.value_or("") + "|" +
                             (c.train_config ? json(*c.train_config).dump() : "") + "|" + c.dataset_hash + "|" +
                             (c.warm_start ? "w" : "s");
    h = fnv(meta.data(), meta.size(), h);
    return "ck-" + hex64(h).substr(0, 12);
}

void check_compatible(const ConvNetConfig& cfg, const Dataset& ds) {
    if (cfg.image_size != ds.image_size) {
        throw compute_error("shape mismatch: model image size " + std::to_string(cfg.image_size) +
                            " vs dataset image size " + std::to_string(ds.image_size));
    }
    if (cfg.num_classes != ds.num_classes()) {
        throw compute_error("shape mismatch: model has " + std::to_string(cfg.num_classes) +
                            " classes, dataset has " + std::to_string(ds.num_classes()));
    }
}

struct EvalSummary {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalSummary evaluate(const ConvNet& net, const std::vector<const ImageSample*>& samples) {
    EvalSummary s;
    if (samples.empty()) return s;
    int correct = 0;
    for (const auto* x : samples) {
        const auto t = net.forward(x->image);
        s.loss += cross_entropy(t.logits, x->label);
        const int pred = static_cast<int>(std::max_element(t.logits.begin(), t.logits.end()) - t.logits.begin());
        correct += pred == x->label;
    }
    s.loss /= static_cast<double>(samples.size());
    s.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    return s;
}

double batch_loss(const ConvNet& net, const std::vector<const ImageSample*>& batch) {
    double loss = 0.0;
    for (const auto* x : batch) loss += cross_entropy(net.forward(x->image).logits, x->label);
    return loss / static_cast<double>(batch.size());
}

}  // namespace

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void to_json(json& j, const Checkpoint& c) {
    json losses = json::array();
    for (const auto& e : c.epoch_losses) losses.push_back(epoch_json(e));
    j = json{{"id", c.id},
             {"parent_id", c.parent_id ? json(*c.parent_id) : json(nullptr)},
             {"config", c.config},
             {"train_config", c.train_config ? json(*c.train_config) : json(nullptr)},
             {"warm_start", c.warm_start},
             {"epoch_losses", losses},
             {"dataset_hash", c.dataset_hash},
             {"created_at", c.created_at},
             {"weight_count", c.weights.size()}};
}

double PredictionSet::accuracy() const {
    if (records.empty()) return 0.0;
    const auto n = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.correct; });
    return static_cast<double>(n) / static_cast<double>(records.size());
}

double PredictionSet::mean_loss() const {
    if (records.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : records) s += r.loss;
    return s / static_cast<double>(records.size());
}

const PredictionRecord* PredictionSet::find(const std::string& image_id) const {
    for (const auto& r : records) {
        if (r.image_id == image_id) return &r;
    }
    return nullptr;
}

void to_json(json& j, const PredictionSet& p) {
    json recs = json::array();
    for (const auto& r : p.records) {
        recs.push_back({{"id", r.image_id},
                        {"label", r.label},
                        {"predicted", r.predicted},
                        {"loss", r.loss},
                        {"correct", r.correct}});
    }
    j = json{{"checkpoint_id", p.checkpoint_id},
             {"split", to_string(p.split)},
             {"accuracy", p.accuracy()},
             {"mean_loss", p.mean_loss()},
             {"records", recs}};
}

void from_json(const json& j, PredictionSet& p) {
    p.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    p.split = parse_split(j.at("split").get<std::string>());
    p.records.clear();
    for (const auto& r : j.at("records")) {
        p.records.push_back({r.at("id").get<std::string>(), r.at("label").get<int>(), r.at("predicted").get<int>(),
                             r.at("loss").get<double>(), r.at("correct").get<bool>()});
    }
}

Checkpoint init_model(const ConvNetConfig& config) {
    config.validate();
    Checkpoint c;
    c.config = config;
    c.weights = ConvNet::initialized(config).flat_weights();
    c.created_at = utc_timestamp();
    c.id = make_checkpoint_id(c);
    return c;
}

double batch_loss_and_grad(ConvNet& net, const std::vector<const ImageSample*>& batch, double loss_scale) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto* x : batch) {
        const auto t = net.forward(x->image);
        loss += cross_entropy(t.logits, x->label);
        auto d = softmax(t.logits);
        d[x->label] -= 1.0;
        for (auto& v : d) v *= inv * loss_scale;
        net.backward(t, d, true);
    }
    return loss * inv * loss_scale;
}

Checkpoint train(const Checkpoint& checkpoint, const Dataset& dataset, const TrainConfig& config,
                 const ProgressSink& progress, bool warm_start) {
    config.validate();
    check_compatible(checkpoint.config, dataset);
    const auto train_set = dataset.split(Split::Train);
    const auto val_set = dataset.split(Split::Val);
    if (train_set.empty() || val_set.empty()) {
        throw validation_error("training needs non-empty train and val splits");
    }

    ConvNet net = warm_start ? checkpoint.network() : ConvNet::initialized(checkpoint.config);
    net.enable_grad();
    std::vector<std::vector<double>> velocity;
    for (const auto& p : net.params()) velocity.emplace_back(p.size(), 0.0);

    Checkpoint child;
    child.parent_id = checkpoint.id;
    child.config = checkpoint.config;
    child.train_config = config;
    child.warm_start = warm_start;
    child.dataset_hash = hex64(dataset.content_hash());

    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        int correct = 0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<const ImageSample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);

            net.zero_grad();
            const double inv = 1.0 / static_cast<double>(batch.size());
            double loss = 0.0;
            for (const auto* x : batch) {
                const auto t = net.forward(x->image);
                loss += cross_entropy(t.logits, x->label);
                const int pred =
                    static_cast<int>(std::max_element(t.logits.begin(), t.logits.end()) - t.logits.begin());
                correct += pred == x->label;
                auto d = softmax(t.logits);
                d[x->label] -= 1.0;
                for (auto& v : d) v *= inv;
                net.backward(t, d, true);
            }
            if (!std::isfinite(loss)) {
                throw compute_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(batch_index),
                                    "learning_rate=" + std::to_string(config.learning_rate));
            }
            loss_sum += loss;

            auto& params = net.params();
            for (std::size_t p = 0; p < params.size(); ++p) {
                if (net.frozen(p)) continue;
                auto& v = velocity[p];
                auto& w = params[p].values;
                const auto& g = params[p].grad;
                for (std::size_t k = 0; k < w.size(); ++k) {
                    v[k] = config.momentum * v[k] + g[k];
                    w[k] -= config.learning_rate * v[k];
                }
            }
        }

        EpochLoss e;
        e.train_loss = loss_sum / static_cast<double>(order.size());
        e.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        const auto val = evaluate(net, val_set);
        e.val_loss = val.loss;
        e.val_accuracy = val.accuracy;
        if (!std::isfinite(e.val_loss)) {
            throw compute_error("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        child.epoch_losses.push_back(e);
        if (progress) progress({checkpoint.id, epoch, config.epochs, e});
    }

    child.weights = config.epochs == 0 && warm_start ? checkpoint.weights : net.flat_weights();
    child.created_at = utc_timestamp();
    child.id = make_checkpoint_id(child);
    return child;
}

PredictionSet predict(const Checkpoint& checkpoint, const Dataset& dataset, Split split) {
    check_compatible(checkpoint.config, dataset);
    const ConvNet net = checkpoint.network();
    PredictionSet out;
    out.checkpoint_id = checkpoint.id;
    out.split = split;
    for (const auto* x : dataset.split(split)) {
        const auto t = net.forward(x->image);
        PredictionRecord r;
        r.image_id = x->id;
        r.label = x->label;
        r.predicted = static_cast<int>(std::max_element(t.logits.begin(), t.logits.end()) - t.logits.begin());
        r.loss = cross_entropy(t.logits, x->label);
        r.correct = r.predicted == r.label;
        out.records.push_back(std::move(r));
    }
    return out;
}

std::vector<double> extract_latent(const ConvNet& net, const Image& image) { return net.forward(image).pooled; }

std::vector<double> extract_latent(const Checkpoint& checkpoint, const Image& image) {
    return extract_latent(checkpoint.network(), image);
}

GradientCheckReport backward_check(const ConvNet& net_in, const std::vector<const ImageSample*>& batch,
                                   int sample_size, std::uint64_t seed, double step) {
    GradientCheckReport report;
    if (batch.empty()) return report;
    ConvNet net = net_in;
    net.enable_grad();
    net.zero_grad();
    batch_loss_and_grad(net, batch);

    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t p = 0; p < net.params().size(); ++p) {
        if (net.frozen(p)) continue;
        for (std::size_t k = 0; k < net.params()[p].size(); ++k) candidates.emplace_back(p, k);
    }
    Rng rng(seed);
    rng.shuffle(candidates.begin(), candidates.end());

    auto signatures = [&](const ConvNet& n) {
        std::vector<std::uint64_t> s;
        for (const auto* x : batch) s.push_back(ConvNet::activation_signature(n.forward(x->image)));
        return s;
    };
    const auto base_sig = signatures(net);

    for (const auto& [p, k] : candidates) {
        if (report.checked >= sample_size) break;
        auto& value = net.params()[p].values[k];
        const double saved = value;
        value = saved + step;
        const double plus = batch_loss(net, batch);
        const auto sig_plus = signatures(net);
        value = saved - step;
        const double minus = batch_loss(net, batch);
        const auto sig_minus = signatures(net);
        value = saved;
        if (sig_plus != base_sig || sig_minus != base_sig) {
            ++report.skipped_at_kinks;
            continue;
        }
        const double numeric = (plus - minus) / (2.0 * step);
        const double analytic = net.params()[p].grad[k];
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const double err = scale < 1e-10 ? std::abs(analytic - numeric) : std::abs(analytic - numeric) / scale;
        report.max_relative_error = std::max(report.max_relative_error, err);
        ++report.checked;
    }
    return report;
}

GradientCheckReport backward_check(const Checkpoint& checkpoint, const std::vector<const ImageSample*>& batch,
                                   int sample_size, std::uint64_t seed, double step) {
    return backward_check(checkpoint.network(), batch, sample_size, seed, step);
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::string header = json(checkpoint).dump();
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot write checkpoint", tmp.string());
        out.write("DSHCKPT1", 8);
        std::uint64_t len = header.size();
        unsigned char lenbuf[8];
        for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
        out.write(reinterpret_cast<const char*>(lenbuf), 8);
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (float w : checkpoint.weights) {
            const auto bits = std::bit_cast<std::uint32_t>(w);
            unsigned char b[4];
            for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
            out.write(reinterpret_cast<const char*>(b), 4);
        }
        if (!out) throw data_error("cannot write checkpoint", tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("missing checkpoint file", path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "DSHCKPT1", 8) != 0) throw data_error("bad checkpoint magic", path.string());
    unsigned char lenbuf[8];
    in.read(reinterpret_cast<char*>(lenbuf), 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
    if (!in || len > (1u << 26)) throw data_error("corrupt checkpoint header", path.string());
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw data_error("truncated checkpoint header", path.string());

    Checkpoint c;
    std::size_t count = 0;
    try {
        const auto j = json::parse(header);
        c.id = j.at("id").get<std::string>();
        if (!j.at("parent_id").is_null()) c.parent_id = j["parent_id"].get<std::string>();
        c.config = j.at("config").get<ConvNetConfig>();
        if (!j.at("train_config").is_null()) c.train_config = j["train_config"].get<TrainConfig>();
        c.warm_start = j.value("warm_start", true);
        for (const auto& e : j.at("epoch_losses")) c.epoch_losses.push_back(epoch_from_json(e));
        c.dataset_hash = j.value("dataset_hash", std::string());
        c.created_at = j.value("created_at", std::string());
        count = j.at("weight_count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw data_error("corrupt checkpoint header", e.what());
    }
    c.weights.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) throw data_error("truncated checkpoint weights", path.string());
        const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        c.weights[i] = std::bit_cast<float>(bits);
    }
    if (ConvNet(c.config).parameter_count() != count) {
        throw data_error("checkpoint weight count does not match its config", path.string());
    }
    return c;
}

}  // namespace dash
