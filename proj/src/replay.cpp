#include "dash/replay.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "dash/error.hpp"
#include "dash/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dash {

void from_json(const json& j, Selector& s) {
    s.split = parse_split(j.value("split", std::string("train")));
    s.classes = j.value("classes", std::vector<int>{});
    s.provenance = j.value("provenance", std::string("original"));
    if (s.provenance != "original" && s.provenance != "augmented" && s.provenance != "any") {
        throw validation_error("selector provenance must be original, augmented or any");
    }
    s.misclassified_by_active = j.value("misclassified_by_active", false);
    s.per_class = j.value("per_class", 0);
    s.limit = j.value("limit", 0);
    s.seed = j.value("seed", std::uint64_t{0});
}

void to_json(json& j, const Selector& s) {
    j = json{{"split", to_string(s.split)},
             {"classes", s.classes},
             {"provenance", s.provenance},
             {"misclassified_by_active", s.misclassified_by_active},
             {"per_class", s.per_class},
             {"limit", s.limit},
             {"seed", s.seed}};
}

std::vector<const ImageSample*> select_samples(const Dataset& dataset, const Selector& sel,
                                               const PredictionSet* active) {
    if (sel.misclassified_by_active && !active) {
        throw validation_error("selector needs predictions of the active checkpoint");
    }
    std::map<int, std::vector<const ImageSample*>> by_class;
    for (const auto* s : dataset.split(sel.split)) {
        if (!sel.classes.empty() && std::find(sel.classes.begin(), sel.classes.end(), s->label) == sel.classes.end()) {
            continue;
        }
        if (sel.provenance == "original" && s->provenance != Provenance::Original) continue;
        if (sel.provenance == "augmented" && s->provenance != Provenance::Augmented) continue;
        if (sel.misclassified_by_active) {
            const auto* r = active->find(s->id);
            if (!r || r->correct) continue;
        }
        by_class[s->label].push_back(s);
    }
    std::vector<const ImageSample*> picked;
    for (auto& [label, items] : by_class) {
        std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->id < b->id; });
        Rng rng(derive_seed(sel.seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(items.begin(), items.end());
        const std::size_t take = sel.per_class > 0 ? std::min<std::size_t>(items.size(), sel.per_class) : items.size();
        picked.insert(picked.end(), items.begin(), items.begin() + static_cast<std::ptrdiff_t>(take));
    }
    if (sel.limit > 0 && picked.size() > static_cast<std::size_t>(sel.limit)) {
        Rng rng(derive_seed(sel.seed, 0xfeed));
        rng.shuffle(picked.begin(), picked.end());
        picked.resize(sel.limit);
    }
    std::sort(picked.begin(), picked.end(), [](auto* a, auto* b) { return a->id < b->id; });
    return picked;
}

std::vector<int> cluster_majority_labels(const ClusterResult& clusters, const Dataset& dataset) {
    std::vector<int> out(clusters.k, -1);
    for (int c = 0; c < clusters.k; ++c) {
        std::vector<int> tally(dataset.num_classes(), 0);
        for (const auto& id : clusters.members(c)) ++tally[dataset.at(id).label];
        if (std::any_of(tally.begin(), tally.end(), [](int v) { return v > 0; })) {
            out[c] = static_cast<int>(std::max_element(tally.begin(), tally.end()) - tally.begin());
        }
    }
    return out;
}

namespace {

ReplayStep parse_step(const json& j) {
    const auto op = j.at("op").get<std::string>();
    if (op == "train") {
        TrainStep t;
        t.config = j.value("config", json::object()).get<TrainConfig>();
        t.warm_start = j.value("warm_start", true);
        return {t};
    }
    if (op == "cluster") {
        ClusterStep c;
        c.k = j.value("k", 3);
        c.seed = j.value("seed", std::uint64_t{0});
        c.split = parse_split(j.value("split", std::string("train")));
        return {c};
    }
    if (op == "translate") {
        TranslateStep t;
        t.selector = j.value("selector", json::object()).get<Selector>();
        const auto& cl = j.value("cluster", json("off-class"));
        if (cl.is_number_integer()) {
            t.cluster = cl.get<int>();
        } else if (!(cl.is_string() && cl.get<std::string>() == "off-class")) {
            throw validation_error("translate cluster must be an index or \"off-class\"");
        }
        t.count = j.value("count", 1);
        return {t};
    }
    if (op == "augment") {
        AugmentStep a;
        const auto& lab = j.value("label", json("source"));
        if (lab.is_number_integer()) {
            a.label = lab.get<int>();
        } else if (!(lab.is_string() && lab.get<std::string>() == "source")) {
            throw validation_error("augment label must be a class index or \"source\"");
        }
        return {a};
    }
    if (op == "loop") {
        LoopStep l;
        l.max_iterations = j.value("max_iterations", 4);
        if (j.contains("until") && j["until"].contains("test_accuracy")) {
            l.until_test_accuracy = j["until"]["test_accuracy"].get<double>();
        }
        for (const auto& s : j.at("steps")) l.steps.push_back(parse_step(s));
        return {l};
    }
    throw validation_error("unknown replay op '" + op + "'");
}

bool contains_train(const std::vector<ReplayStep>& steps) {
    for (const auto& s : steps) {
        if (std::holds_alternative<TrainStep>(s.op)) return true;
        if (const auto* l = std::get_if<LoopStep>(&s.op); l && contains_train(l->steps)) return true;
    }
    return false;
}

void validate_steps(const std::vector<ReplayStep>& steps) {
    for (const auto& s : steps) {
        if (const auto* l = std::get_if<LoopStep>(&s.op)) {
            if (l->steps.empty()) throw validation_error("replay loop has no steps");
            if (l->max_iterations < 1) throw validation_error("replay loop max_iterations must be >= 1");
            validate_steps(l->steps);
        } else if (const auto* c = std::get_if<ClusterStep>(&s.op)) {
            if (c->k < kMinClusters || c->k > kMaxClusters) {
                throw validation_error("K=" + std::to_string(c->k) + " is outside the allowed range 2-20");
            }
        } else if (const auto* t = std::get_if<TrainStep>(&s.op)) {
            t->config.validate();
        }
    }
}

class ReplayRunner {
public:
    ReplayRunner(const ReplayScript& script, fs::path workdir, const ReplayLog& log)
        : script_(script), workdir_(std::move(workdir)), log_(log), history_(workdir_ / "history.jsonl") {}

    ReplayReport run() {
        fs::create_directories(workdir_ / "checkpoints");
        if (fs::exists(history_.path())) fs::remove(history_.path());
        dataset_ = script_.dataset_spec ? generate_biased_dataset(*script_.dataset_spec)
                                        : load_dataset(*script_.dataset_dir);
        ConvNetConfig cfg = script_.model;
        cfg.num_classes = dataset_.num_classes();
        cfg.image_size = dataset_.image_size;
        active_ = init_model(cfg);
        save_checkpoint(active_, workdir_ / "checkpoints" / (active_.id + ".ckpt"));
        say("initialized " + active_.id);

        run_steps(script_.steps, 0);

        report_.final_checkpoint = active_.id;
        report_.final_dataset_hash = hex64(dataset_.content_hash());
        if (!report_.trainings.empty()) {
            report_.initial_test_accuracy = report_.trainings.front().accuracy.test;
            report_.initial_train_accuracy = report_.trainings.front().accuracy.train;
            report_.final_test_accuracy = report_.trainings.back().accuracy.test;
        }
        save_dataset(dataset_, workdir_ / "dataset");
        std::ofstream(workdir_ / "report.json") << json(report_).dump(2) << '\n';
        return report_;
    }

private:
    void say(const std::string& s) const {
        if (log_) log_(s);
    }

    void run_steps(const std::vector<ReplayStep>& steps, int iteration) {
        for (const auto& step : steps) {
            std::visit([&](const auto& op) { apply(op, iteration); }, step.op);
        }
    }

    void apply(const TrainStep& t, int iteration) {
        Checkpoint child = train(active_, dataset_, t.config, {}, t.warm_start);
        save_checkpoint(child, workdir_ / "checkpoints" / (child.id + ".ckpt"));
        active_ = std::move(child);
        active_test_.reset();
        ReplayTrainRecord rec;
        rec.checkpoint_id = active_.id;
        rec.parent_id = active_.parent_id;
        rec.iteration = iteration;
        rec.dataset_version = dataset_.version;
        rec.train_size = dataset_.count(Split::Train);
        rec.accuracy.train = predict(active_, dataset_, Split::Train).accuracy();
        rec.accuracy.val = predict(active_, dataset_, Split::Val).accuracy();
        rec.accuracy.test = test_predictions().accuracy();
        say("trained " + active_.id + " (iteration " + std::to_string(iteration) + "): train " +
            std::to_string(rec.accuracy.train) + " test " + std::to_string(rec.accuracy.test));
        report_.trainings.push_back(rec);
    }

    void apply(const ClusterStep& c, int iteration) {
        std::vector<std::string> ids;
        std::vector<std::vector<double>> latents;
        const ConvNet net = active_.network();
        for (const auto* s : dataset_.split(c.split)) {
            ids.push_back(s->id);
            latents.push_back(extract_latent(net, s->image));
        }
        clusters_ = kmeans(ids, latents, c.k, derive_seed(c.seed, static_cast<std::uint64_t>(iteration)));
        say("clustered " + std::to_string(ids.size()) + " images into K=" + std::to_string(c.k) +
            " (inertia " + std::to_string(clusters_->inertia) + ")");
    }

    void apply(const TranslateStep& t, int iteration) {
        if (!clusters_) throw validation_error("translate step needs a preceding cluster step");
        Selector sel = t.selector;
        sel.seed = derive_seed(sel.seed, static_cast<std::uint64_t>(iteration));
        std::optional<PredictionSet> preds;
        if (sel.misclassified_by_active) preds = predict(active_, dataset_, sel.split);
        const auto sources = select_samples(dataset_, sel, preds ? &*preds : nullptr);
        const auto majority = cluster_majority_labels(*clusters_, dataset_);

        std::map<int, StyleStats> styles;
        auto style_of = [&](int cluster) -> const StyleStats& {
            auto it = styles.find(cluster);
            if (it == styles.end()) it = styles.emplace(cluster, compute_style_stats(dataset_, *clusters_, cluster)).first;
            return it->second;
        };

                const MomentMatchTranslator translator;
        for (const auto* src : sources) {
            std::vector<int> targets;
            if (t.cluster) {
                targets.push_back(*t.cluster);
            } else {
                for (int c = 0; c < clusters_->k; ++c) {
                    if (majority[c] >= 0 && majority[c] != src->label) targets.push_back(c);
                }
            }
            for (int cluster : targets) {
                const int first = next_index(src->id, cluster);
                auto out = batch_translate({src}, style_of(cluster), t.count, translator, first);
                for (auto& s : out) pending_.push_back(std::move(s));
            }
        }
        say("translated " + std::to_string(sources.size()) + " sources into " + std::to_string(pending_.size()) +
            " pending images");
    }

    void apply(const AugmentStep& a, int) {
        // one history record per (target label, style cluster) group
        std::map<std::pair<int, int>, std::vector<ImageSample>> groups;
        for (auto& s : pending_) {
            const int label = a.label.value_or(s.label);
            groups[{label, *s.style_cluster}].push_back(std::move(s));
        }
        pending_.clear();
        const int version = dataset_.version + 1;
        for (auto& [key, samples] : groups) {
            report_.augmented_total += samples.size();
            dataset_ = register_augmented(dataset_, std::move(samples), key.first, history_, active_.id);
        }
        dataset_.version = version;
        active_test_.reset();
        say("dataset version " + std::to_string(dataset_.version) + ", train size " +
            std::to_string(dataset_.count(Split::Train)));
    }

    void apply(const LoopStep& l, int) {
        for (int it = 1; it <= l.max_iterations; ++it) {
            if (l.until_test_accuracy && test_predictions().accuracy() >= *l.until_test_accuracy) break;
            run_steps(l.steps, it);
            report_.retrain_iterations = it;
        }
    }

    int next_index(const std::string& source_id, int cluster) const {
        int n = 0;
        for (const auto& s : dataset_.samples) {
            if (s.source_id == source_id && s.style_cluster == cluster) ++n;
        }
        for (const auto& s : pending_) {
            if (s.source_id == source_id && s.style_cluster == cluster) ++n;
        }
        return n;
    }

    const PredictionSet& test_predictions() {
        if (!active_test_) active_test_ = predict(active_, dataset_, Split::Test);
        return *active_test_;
    }

    const ReplayScript& script_;
    fs::path workdir_;
    const ReplayLog& log_;
    HistoryLog history_;
    Dataset dataset_;
    Checkpoint active_;
    std::optional<ClusterResult> clusters_;
    std::vector<ImageSample> pending_;
    std::optional<PredictionSet> active_test_;
    ReplayReport report_;
};

}  // namespace

void ReplayScript::validate() const {
    if (!dataset_spec && !dataset_dir) throw validation_error("replay script needs a dataset spec or directory");
    if (!contains_train(steps)) throw validation_error("replay script needs at least one train step");
    validate_steps(steps);
}

ReplayScript parse_replay_script(const json& j) {
    ReplayScript s;
    try {
        if (j.contains("dataset")) s.dataset_spec = j["dataset"].get<BiasedDatasetSpec>();
        if (j.contains("dataset_dir")) s.dataset_dir = j["dataset_dir"].get<std::string>();
        s.model = j.value("model", json::object()).get<ConvNetConfig>();
        for (const auto& step : j.at("steps")) s.steps.push_back(parse_step(step));
    } catch (const json::exception& e) {
        throw validation_error("malformed replay script", e.what());
    }
    s.validate();
    return s;
}

ReplayScript load_replay_script(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot read replay script", path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw validation_error("malformed replay script", e.what());
    }
    auto script = parse_replay_script(j);
    if (script.dataset_dir && script.dataset_dir->is_relative()) {
        script.dataset_dir = path.parent_path() / *script.dataset_dir;
    }
    return script;
}

void to_json(json& j, const ReplayReport& r) {
    json trainings = json::array();
    for (const auto& t : r.trainings) {
        trainings.push_back({{"checkpoint_id", t.checkpoint_id},
                             {"parent_id", t.parent_id ? json(*t.parent_id) : json(nullptr)},
                             {"iteration", t.iteration},
                             {"dataset_version", t.dataset_version},
                             {"train_size", t.train_size},
                             {"accuracy", {{"train", t.accuracy.train}, {"val", t.accuracy.val}, {"test", t.accuracy.test}}}});
    }
    j = json{{"trainings", trainings},
             {"retrain_iterations", r.retrain_iterations},
             {"augmented_total", r.augmented_total},
             {"initial_train_accuracy", r.initial_train_accuracy},
             {"initial_test_accuracy", r.initial_test_accuracy},
             {"final_test_accuracy", r.final_test_accuracy},
             {"test_accuracy_lift", r.final_test_accuracy - r.initial_test_accuracy},
             {"final_checkpoint", r.final_checkpoint},
             {"final_dataset_hash", r.final_dataset_hash}};
}

ReplayReport run_replay(const ReplayScript& script, const fs::path& workdir, const ReplayLog& log) {
    script.validate();
    return ReplayRunner(script, workdir, log).run();
}

}  // namespace dash
