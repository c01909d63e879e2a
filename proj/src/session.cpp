#include "dash/session.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>

#include "dash/error.hpp"
#include "dash/explainers.hpp"
#include "dash/model_diff.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dash {

fs::path default_data_root() {
    if (const char* env = std::getenv("DASH_DATA_DIR"); env && *env) return env;
    return fs::current_path() / "dash-data";
}

const char* to_string(JobState s) {
    switch (s) {
        case JobState::Queued: return "queued";
        case JobState::Running: return "running";
        case JobState::Done: return "done";
        case JobState::Failed: return "failed";
    }
    return "?";
}

namespace {

JobState parse_job_state(const std::string& s) {
    if (s == "queued") return JobState::Queued;
    if (s == "running") return JobState::Running;
    if (s == "done") return JobState::Done;
    return JobState::Failed;
}

json epoch_json(const EpochLoss& e) {
    return {{"train_loss", e.train_loss},
            {"val_loss", e.val_loss},
            {"train_accuracy", e.train_accuracy},
            {"val_accuracy", e.val_accuracy}};
}

EpochLoss epoch_from_json(const json& j) {
    return {j.at("train_loss").get<double>(), j.at("val_loss").get<double>(), j.at("train_accuracy").get<double>(),
            j.at("val_accuracy").get<double>()};
}

JobSnapshot job_from_json(const json& j) {
    JobSnapshot s;
    s.id = j.at("id").get<std::string>();
    s.session_id = j.at("session_id").get<std::string>();
    s.state = parse_job_state(j.at("state").get<std::string>());
    s.parent_id = j.at("parent_id").get<std::string>();
    s.config = j.at("config").get<TrainConfig>();
    s.warm_start = j.value("warm_start", true);
    for (const auto& e : j.value("losses", json::array())) s.losses.push_back(epoch_from_json(e));
    if (j.contains("checkpoint_id") && !j["checkpoint_id"].is_null()) s.checkpoint_id = j["checkpoint_id"].get<std::string>();
    s.error = j.value("error", std::string());
    return s;
}

std::string random_token() {
    std::random_device rd;
    const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    return hex64(v).substr(0, 10);
}

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot write file", tmp.string());
        out << text;
        if (!out) throw data_error("short write", tmp.string());
    }
    fs::rename(tmp, path);
}

std::string png_base64(const Image& img) { return base64_encode(encode_png(img)); }

std::string split_list_key(const std::vector<Split>& splits) {
    std::string s;
    for (auto sp : splits) {
        if (!s.empty()) s += ",";
        s += to_string(sp);
    }
    return s;
}

struct Cancelled {};

}  // namespace

void to_json(json& j, const JobSnapshot& s) {
    json losses = json::array();
    for (const auto& e : s.losses) losses.push_back(epoch_json(e));
    j = json{{"id", s.id},
             {"session_id", s.session_id},
             {"state", to_string(s.state)},
             {"epoch", s.losses.size()},
             {"epochs", s.config.epochs},
             {"parent_id", s.parent_id},
             {"config", s.config},
             {"warm_start", s.warm_start},
             {"losses", losses},
             {"checkpoint_id", s.checkpoint_id ? json(*s.checkpoint_id) : json(nullptr)},
             {"error", s.error}};
}

CreateSessionRequest parse_create_session(const json& body) {
    CreateSessionRequest r;
    try {
        if (body.contains("dataset_dir")) r.dataset_dir = body["dataset_dir"].get<std::string>();
        if (body.contains("dataset_spec")) r.dataset_spec = body["dataset_spec"].get<BiasedDatasetSpec>();
        if (body.contains("checkpoint")) r.checkpoint = body["checkpoint"].get<std::string>();
        r.model = body.value("model", json::object()).get<ConvNetConfig>();
        if (body.contains("train") && !body["train"].is_null()) r.train = body["train"].get<TrainConfig>();
    } catch (const json::exception& e) {
        throw validation_error("malformed session request", e.what());
    }
    if (r.dataset_dir.has_value() == r.dataset_spec.has_value()) {
        throw validation_error("give exactly one of dataset_dir or dataset_spec");
    }
    return r;
}

struct LatentTable {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> latents;
};

struct ClusterState {
    std::string checkpoint_id;
    int dataset_version = 0;
    Split split = Split::Train;
    ClusterResult result;
    std::shared_ptr<const LatentTable> latents;
};

struct SessionService::Job {
    mutable std::mutex m;
    mutable std::condition_variable cv;
    JobSnapshot snap;
    std::thread thread;
};

struct SessionService::Session {
    std::string id;
    fs::path dir;
    std::string created_at;

    mutable std::mutex m;
    std::shared_ptr<const Dataset> dataset;
    std::map<std::string, std::shared_ptr<const Checkpoint>> checkpoints;
    std::vector<CheckpointNode> nodes;  // creation order
    std::string active;
    std::vector<std::shared_ptr<Job>> jobs;
    std::shared_ptr<Job> running;

    std::map<std::string, std::string> cache;
    std::map<std::string, std::shared_ptr<const PredictionSet>> predictions;
    std::map<std::string, std::shared_ptr<const LatentTable>> latents;
    std::map<std::string, std::shared_ptr<const ProjectionResult>> projections;
    std::map<int, ClusterState> clusters;  // latest clustering per K
    std::optional<int> last_k;
    std::vector<ImageSample> pending;

    HistoryLog history{fs::path()};

    CheckpointNode* node(const std::string& cid) {
        for (auto& n : nodes) {
            if (n.id == cid) return &n;
        }
        return nullptr;
    }

    // Caller holds m.
    void persist() const {
        json nodes_j = json::array();
        for (const auto& n : nodes) {
            nodes_j.push_back({{"id", n.id},
                               {"parent_id", n.parent_id ? json(*n.parent_id) : json(nullptr)},
                               {"tombstoned", n.tombstoned}});
        }
        json jobs_j = json::array();
        for (const auto& j : jobs) {
            std::lock_guard lk(j->m);
            jobs_j.push_back(j->snap);
        }
        const json doc{{"id", id},
                       {"created_at", created_at},
                       {"active", active},
                       {"dataset_version", dataset->version},
                       {"checkpoints", nodes_j},
                       {"jobs", jobs_j}};
        write_atomic(dir / "session.json", doc.dump(2) + "\n");
    }

    // Caller holds m. Resolves a checkpoint reference (default: active).
    std::shared_ptr<const Checkpoint> resolve(const std::optional<std::string>& cid) {
        const std::string& want = cid ? *cid : active;
        const auto* n = node(want);
        if (!n) throw not_found_error("unknown checkpoint '" + want + "'");
        if (n->tombstoned) throw conflict_error("checkpoint '" + want + "' was discarded");
        return checkpoints.at(want);
    }

    json summary() const {
        json cks = json::array();
        for (const auto& n : nodes) {
            json c = *checkpoints.at(n.id);
            c["tombstoned"] = n.tombstoned;
            c["active"] = n.id == active;
            cks.push_back(std::move(c));
        }
        json jobs_j = json::array();
        for (const auto& j : jobs) {
            std::lock_guard lk(j->m);
            jobs_j.push_back(j->snap);
        }
        std::size_t augmented = 0;
        for (const auto& s : dataset->samples) augmented += s.provenance == Provenance::Augmented;
        return {{"id", id},
                {"created_at", created_at},
                {"active", active},
                {"dataset",
                 {{"version", dataset->version},
                  {"hash", hex64(dataset->content_hash())},
                  {"class_names", dataset->class_names},
                  {"image_size", dataset->image_size},
                  {"counts",
                   {{"train", dataset->count(Split::Train)},
                    {"val", dataset->count(Split::Val)},
                    {"test", dataset->count(Split::Test)}}},
                  {"augmented", augmented}}},
                {"checkpoints", cks},
                {"jobs", jobs_j},
                {"pending", pending.size()}};
    }
};

SessionService::SessionService(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    load_existing();
}

SessionService::~SessionService() {
    stopping_ = true;
    std::vector<std::shared_ptr<Job>> all;
    {
        std::lock_guard lk(mutex_);
        for (auto& [id, j] : jobs_) all.push_back(j);
    }
    for (auto& j : all) {
        if (j->thread.joinable()) j->thread.join();
    }
}

void SessionService::load_existing() {
    for (const auto& entry : fs::directory_iterator(root_)) {
        const fs::path manifest = entry.path() / "session.json";
        if (!entry.is_directory() || !fs::exists(manifest)) continue;
        json doc;
        try {
            std::ifstream in(manifest);
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw data_error("corrupt session manifest", manifest.string() + ": " + e.what());
        }
        auto s = std::make_shared<Session>();
        s->id = doc.at("id").get<std::string>();
        s->dir = entry.path();
        s->created_at = doc.value("created_at", std::string());
        s->active = doc.at("active").get<std::string>();
        s->history = HistoryLog(s->dir / "history.jsonl");
        s->dataset = std::make_shared<const Dataset>(load_dataset(s->dir / "dataset"));
        for (const auto& n : doc.at("checkpoints")) {
            CheckpointNode node;
            node.id = n.at("id").get<std::string>();
            if (!n.at("parent_id").is_null()) node.parent_id = n["parent_id"].get<std::string>();
            node.tombstoned = n.value("tombstoned", false);
            s->checkpoints[node.id] =
                std::make_shared<const Checkpoint>(load_checkpoint(s->dir / "checkpoints" / (node.id + ".ckpt")));
            s->nodes.push_back(std::move(node));
        }
        bool changed = false;
        for (const auto& jj : doc.value("jobs", json::array())) {
            auto job = std::make_shared<Job>();
            job->snap = job_from_json(jj);
            if (!job->snap.terminal()) {
                job->snap.state = JobState::Failed;
                job->snap.error = "interrupted by service restart";
                changed = true;
            }
            s->jobs.push_back(job);
            jobs_[job->snap.id] = job;
        }
        if (changed) s->persist();
        sessions_[s->id] = s;
    }
}

std::shared_ptr<SessionService::Session> SessionService::session(const std::string& sid) const {
    std::lock_guard lk(mutex_);
    auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw not_found_error("unknown session '" + sid + "'");
    return it->second;
}

std::shared_ptr<SessionService::Job> SessionService::job(const std::string& job_id) const {
    std::lock_guard lk(mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw not_found_error("unknown job '" + job_id + "'");
    return it->second;
}

std::vector<std::string> SessionService::session_ids() const {
    std::lock_guard lk(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
}

json SessionService::create_session(const CreateSessionRequest& req) {
    Dataset data = req.dataset_spec ? generate_biased_dataset(*req.dataset_spec) : load_dataset(*req.dataset_dir);
    data.validate();

    Checkpoint root;
    if (req.checkpoint) {
        root = load_checkpoint(*req.checkpoint);
        if (root.config.num_classes != data.num_classes() || root.config.image_size != data.image_size) {
            throw validation_error("checkpoint does not match the dataset's classes or image size");
        }
    } else {
        ConvNetConfig cfg = req.model;
        cfg.num_classes = data.num_classes();
        cfg.image_size = data.image_size;
        cfg.validate();
        root = init_model(cfg);
    }

    auto s = std::make_shared<Session>();
    s->id = "s-" + random_token();
    s->dir = root_ / s->id;
    s->created_at = utc_timestamp();
    fs::create_directories(s->dir / "checkpoints");
    save_dataset(data, s->dir / "dataset");
    s->history = HistoryLog(s->dir / "history.jsonl");
    std::ofstream(s->history.path(), std::ios::app);
    save_checkpoint(root, s->dir / "checkpoints" / (root.id + ".ckpt"));
    s->dataset = std::make_shared<const Dataset>(std::move(data));
    s->nodes.push_back({root.id, root.parent_id, false});
    s->active = root.id;
    const std::string root_id = root.id;
    s->checkpoints[root_id] = std::make_shared<const Checkpoint>(std::move(root));
    {
        std::lock_guard lk(s->m);
        s->persist();
    }
    {
        std::lock_guard lk(mutex_);
        sessions_[s->id] = s;
    }
    json out = get_session(s->id);
    if (req.train) out["job"] = start_training(s->id, *req.train, true);
    return out;
}

json SessionService::get_session(const std::string& sid) const {
    auto s = session(sid);
    std::lock_guard lk(s->m);
    return s->summary();
}

JobSnapshot SessionService::start_training(const std::string& sid, const TrainConfig& config, bool warm_start) {
    config.validate();
    auto s = session(sid);
    std::shared_ptr<Job> j;
    std::shared_ptr<const Checkpoint> parent;
    std::shared_ptr<const Dataset> data;
    {
        std::lock_guard lk(s->m);
        if (s->running) {
            std::lock_guard jl(s->running->m);
            if (!s->running->snap.terminal()) {
                throw conflict_error("training already running", "job " + s->running->snap.id);
            }
        }
        parent = s->resolve(std::nullopt);
        data = s->dataset;
        j = std::make_shared<Job>();
        j->snap.id = "job-" + s->id.substr(2) + "-" + std::to_string(s->jobs.size() + 1);
        j->snap.session_id = s->id;
        j->snap.parent_id = parent->id;
        j->snap.config = config;
        j->snap.warm_start = warm_start;
        s->jobs.push_back(j);
        s->running = j;
        s->persist();
        std::lock_guard gl(mutex_);
        jobs_[j->snap.id] = j;
    }
    j->thread = std::thread([this, s, j, parent, data] { run_job(s, j, parent, data); });
    std::lock_guard jl(j->m);
    return j->snap;
}

void SessionService::run_job(std::shared_ptr<Session> s, std::shared_ptr<Job> j,
                             std::shared_ptr<const Checkpoint> parent, std::shared_ptr<const Dataset> data) {
    TrainConfig config;
    bool warm = true;
    {
        std::lock_guard lk(j->m);
        j->snap.state = JobState::Running;
        config = j->snap.config;
        warm = j->snap.warm_start;
    }
    j->cv.notify_all();
    try {
        auto sink = [&](const EpochEvent& e) {
            if (stopping_) throw Cancelled{};
            {
                std::lock_guard lk(j->m);
                j->snap.losses.push_back(e.loss);
            }
            j->cv.notify_all();
        };
        Checkpoint child = train(*parent, *data, config, sink, warm);
        if (stopping_) throw Cancelled{};
        save_checkpoint(child, s->dir / "checkpoints" / (child.id + ".ckpt"));
        std::lock_guard lk(s->m);
        const std::string cid = child.id;
        auto* existing = s->node(cid);
        if (!existing) {
            s->nodes.push_back({cid, child.parent_id, false});
            s->checkpoints[cid] = std::make_shared<const Checkpoint>(std::move(child));
        }
        if (!s->node(cid)->tombstoned) s->active = cid;
        {
            std::lock_guard jl(j->m);
            j->snap.state = JobState::Done;
            j->snap.checkpoint_id = cid;
        }
        s->persist();
    } catch (const Cancelled&) {
        // shutdown: leave the persisted record as in-flight so a restart reports it failed
        std::lock_guard jl(j->m);
        j->snap.state = JobState::Failed;
        j->snap.error = "cancelled by shutdown";
    } catch (const std::exception& e) {
        std::lock_guard lk(s->m);
        {
            std::lock_guard jl(j->m);
            j->snap.state = JobState::Failed;
            j->snap.error = e.what();
        }
        try {
            s->persist();
        } catch (...) {
        }
    }
    j->cv.notify_all();
}

JobSnapshot SessionService::get_job(const std::string& job_id) const {
    auto j = job(job_id);
    std::lock_guard lk(j->m);
    return j->snap;
}

JobSnapshot SessionService::wait_job(const std::string& job_id, std::size_t seen_epochs,
                                     std::chrono::milliseconds timeout) const {
    auto j = job(job_id);
    std::unique_lock lk(j->m);
    j->cv.wait_for(lk, timeout, [&] { return j->snap.terminal() || j->snap.losses.size() > seen_epochs; });
    return j->snap;
}

JobSnapshot SessionService::wait_job_done(const std::string& job_id, std::chrono::milliseconds timeout) const {
    auto j = job(job_id);
    std::unique_lock lk(j->m);
    j->cv.wait_for(lk, timeout, [&] { return j->snap.terminal(); });
    return j->snap;
}

json SessionService::activate(const std::string& sid, const std::string& cid) {
    auto s = session(sid);
    std::lock_guard lk(s->m);
    s->resolve(cid);
    s->active = cid;
    s->clusters.clear();
    s->last_k.reset();
    s->persist();
    return s->summary();
}

json SessionService::discard(const std::string& sid, const std::string& cid) {
    auto s = session(sid);
    std::lock_guard lk(s->m);
    auto* n = s->node(cid);
    if (!n) throw not_found_error("unknown checkpoint '" + cid + "'");
    if (n->tombstoned) throw conflict_error("checkpoint '" + cid + "' was already discarded");
    if (cid == s->active) throw conflict_error("cannot discard the active checkpoint; activate another one first");
    n->tombstoned = true;
    s->persist();
    return s->summary();
}

template <typename F>
std::string SessionService::cached(Session& s, const std::string& key, F&& compute) {
    if (cache_enabled_) {
        std::lock_guard lk(s.m);
        if (auto it = s.cache.find(key); it != s.cache.end()) {
            ++cache_hits_;
            return it->second;
        }
    }
    std::string text = compute();
    if (cache_enabled_) {
        std::lock_guard lk(s.m);
        s.cache.emplace(key, text);
    }
    return text;
}

namespace {

struct ViewSnapshot {
    std::shared_ptr<const Dataset> data;
    std::shared_ptr<const Checkpoint> ck;
};

std::string cache_key(const std::string& op, const ViewSnapshot& v, const std::string& params) {
    return op + "|" + v.ck->id + "|" + std::to_string(v.data->version) + "|" + params;
}

}  // namespace

namespace {

ViewSnapshot snapshot_of(SessionService::Session& s, const std::optional<std::string>& cid) {
    std::lock_guard lk(s.m);
    return {s.dataset, s.resolve(cid)};
}

}  // namespace

namespace {

template <typename T, typename F>
std::shared_ptr<const T> typed_cached(std::mutex& m, std::map<std::string, std::shared_ptr<const T>>& store,
                                      const std::string& key, bool enabled, F&& compute) {
    if (enabled) {
        std::lock_guard lk(m);
        if (auto it = store.find(key); it != store.end()) return it->second;
    }
    auto value = std::make_shared<const T>(compute());
    if (enabled) {
        std::lock_guard lk(m);
        store.emplace(key, value);
    }
    return value;
}

std::shared_ptr<const PredictionSet> predictions_for(SessionService::Session& s, const ViewSnapshot& v, Split split,
                                                     bool enabled);
std::shared_ptr<const LatentTable> latents_for(SessionService::Session& s, const ViewSnapshot& v,
                                               const std::vector<Split>& splits, bool enabled);

}  // namespace

// Helpers need the full Session definition, so they live after it.
namespace {

std::shared_ptr<const PredictionSet> predictions_for(SessionService::Session& s, const ViewSnapshot& v, Split split,
                                                     bool enabled) {
    return typed_cached<PredictionSet>(s.m, s.predictions, cache_key("predictions", v, to_string(split)), enabled,
                                       [&] { return predict(*v.ck, *v.data, split); });
}

std::shared_ptr<const LatentTable> latents_for(SessionService::Session& s, const ViewSnapshot& v,
                                               const std::vector<Split>& splits, bool enabled) {
    return typed_cached<LatentTable>(s.m, s.latents, cache_key("latents", v, split_list_key(splits)), enabled, [&] {
        LatentTable t;
        const ConvNet net = v.ck->network();
        for (const auto& sample : v.data->samples) {
            if (std::find(splits.begin(), splits.end(), sample.split) == splits.end()) continue;
            t.ids.push_back(sample.id);
            t.latents.push_back(extract_latent(net, sample.image));
        }
        return t;
    });
}

std::string projection_params(const ProjectionQuery& q) {
    return json{{"splits", split_list_key(q.splits)},
                {"perplexity", q.perplexity ? json(*q.perplexity) : json(nullptr)},
                {"seed", q.seed},
                {"iterations", q.iterations}}
        .dump();
}

}  // namespace

std::string SessionService::predictions(const std::string& sid, Split split, const std::optional<std::string>& cid) {
    auto s = session(sid);
    const auto view = snapshot_of(*s, cid);
    return cached(*s, cache_key("predictions", view, to_string(split)),
                  [&] { return json(*predictions_for(*s, view, split, cache_enabled_)).dump(); });
}

namespace {

std::shared_ptr<const ProjectionResult> projection_for(SessionService::Session& s, const ViewSnapshot& v,
                                                       const ProjectionQuery& q, bool enabled) {
    if (q.splits.empty()) throw validation_error("projection needs at least one split");
    if (q.iterations < 1 || q.iterations > 5000) throw validation_error("iterations must be in [1, 5000]");
    return typed_cached<ProjectionResult>(s.m, s.projections, cache_key("projection", v, projection_params(q)),
                                          enabled, [&] {
                                              auto lat = latents_for(s, v, q.splits, enabled);
                                              TsneOptions opt;
                                              opt.perplexity = q.perplexity;
                                              opt.seed = q.seed;
                                              opt.iterations = q.iterations;
                                              return tsne(lat->ids, lat->latents, opt);
                                          });
}

}  // namespace

std::string SessionService::projection(const std::string& sid, const ProjectionQuery& q) {
    auto s = session(sid);
    const auto view = snapshot_of(*s, q.checkpoint);
    return cached(*s, cache_key("projection", view, projection_params(q)), [&] {
        json j = *projection_for(*s, view, q, cache_enabled_);
        j["checkpoint_id"] = view.ck->id;
        j["dataset_version"] = view.data->version;
        return j.dump();
    });
}

std::string SessionService::density(const std::string& sid, const ProjectionQuery& q, int resolution) {
    if (resolution < 4 || resolution > 512) throw validation_error("resolution must be in [4, 512]");
    auto s = session(sid);
    const auto view = snapshot_of(*s, q.checkpoint);
    return cached(*s, cache_key("density", view, projection_params(q) + "|" + std::to_string(resolution)), [&] {
        auto proj = projection_for(*s, view, q, cache_enabled_);
        const auto field = density_grid(proj->points, std::nullopt, resolution);
        json contours = json::array();
        for (const auto& c : density_contours(field)) contours.push_back(c);
        return json{{"checkpoint_id", view.ck->id},
                    {"field", field},
                    {"integral", field.integral()},
                    {"peak", field.peak()},
                    {"contours", contours}}
            .dump();
    });
}

std::string SessionService::lasso(const std::string& sid, const ProjectionQuery& q, const std::vector<Point2>& polygon) {
    if (polygon.size() < 3) throw validation_error("lasso polygon needs at least 3 vertices");
    auto s = session(sid);
    const auto view = snapshot_of(*s, q.checkpoint);
    auto proj = projection_for(*s, view, q, cache_enabled_);
    const auto ids = lasso_select(proj->ids, proj->points, polygon);
    return json{{"checkpoint_id", view.ck->id}, {"ids", ids}, {"count", ids.size()}}.dump();
}

std::string SessionService::gradcam(const std::string& sid, const std::string& image_id,
                                    std::optional<int> target_class, const std::optional<std::string>& cid,
                                    double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw validation_error("alpha must be in [0, 1]");
    auto s = session(sid);
    const auto view = snapshot_of(*s, cid);
    const auto* sample = view.data->find(image_id);
    if (!sample) throw not_found_error("unknown image '" + image_id + "'");
    if (target_class && (*target_class < 0 || *target_class >= view.data->num_classes())) {
        throw validation_error("class out of range", std::to_string(*target_class));
    }
    const std::string params = image_id + "|" + (target_class ? std::to_string(*target_class) : "pred") + "|" +
                               json(alpha).dump();
    return cached(*s, cache_key("gradcam", view, params), [&] {
        const auto heat = grad_cam(*view.ck, sample->image, target_class, image_id);
        const auto triple = overlay(sample->image, heat, alpha);
        json j{{"checkpoint_id", view.ck->id},
               {"heatmap", heat},
               {"label", sample->label},
               {"images",
                {{"original", png_base64(triple.original)},
                 {"heatmap", png_base64(triple.colorized)},
                 {"blend", png_base64(triple.blend)}}}};
        return j.dump();
    });
}

namespace {

json cluster_payload(const Dataset& data, const ClusterResult& r) {
    std::vector<int> majority(r.k, -1);
    json styles = json::array();
    for (int c = 0; c < r.k; ++c) {
        std::vector<int> tally(data.num_classes(), 0);
        for (const auto& id : r.members(c)) ++tally[data.at(id).label];
        if (std::any_of(tally.begin(), tally.end(), [](int v) { return v > 0; })) {
            majority[c] = static_cast<int>(std::max_element(tally.begin(), tally.end()) - tally.begin());
        }
        styles.push_back(compute_style_stats(data, r, c));
    }
    return {{"clusters", r}, {"majority_label", majority}, {"style", styles}};
}

}  // namespace

std::string SessionService::clusters(const std::string& sid, int k, std::uint64_t seed, Split split) {
    if (k < kMinClusters || k > kMaxClusters) {
        throw validation_error("K=" + std::to_string(k) + " is outside the allowed range 2-20");
    }
    auto s = session(sid);
    const auto view = snapshot_of(*s, std::nullopt);
    auto lat = latents_for(*s, view, {split}, cache_enabled_);
    if (lat->ids.size() < static_cast<std::size_t>(k)) {
        throw validation_error("fewer images than clusters", std::to_string(lat->ids.size()));
    }
    ClusterState st;
    st.checkpoint_id = view.ck->id;
    st.dataset_version = view.data->version;
    st.split = split;
    st.latents = lat;
    const std::string key = cache_key("clusters", view, std::to_string(k) + "|" + std::to_string(seed) + "|" + to_string(split));
    std::string text = cached(*s, key, [&] {
        return cluster_payload(*view.data, kmeans(lat->ids, lat->latents, k, seed)).dump();
    });
    st.result = json::parse(text).at("clusters").get<ClusterResult>();
    std::lock_guard lk(s->m);
    s->clusters[k] = std::move(st);
    s->last_k = k;
    return text;
}

namespace {

// Caller holds s.m.
const ClusterState& current_clusters(SessionService::Session& s, std::optional<int> k) {
    const std::optional<int> want = k ? k : s.last_k;
    if (!want) throw not_found_error("no clustering yet; POST clusters first");
    auto it = s.clusters.find(*want);
    if (it == s.clusters.end()) throw not_found_error("no clustering for K=" + std::to_string(*want));
    if (it->second.checkpoint_id != s.active || it->second.dataset_version != s.dataset->version) {
        throw not_found_error("clustering for K=" + std::to_string(*want) + " is stale; recompute it");
    }
    return it->second;
}

}  // namespace

std::string SessionService::representatives(const std::string& sid, int k, int n) {
    if (n < 1 || n > 100) throw validation_error("n must be in [1, 100]");
    auto s = session(sid);
    ClusterState st;
    {
        std::lock_guard lk(s->m);
        st = current_clusters(*s, k);
    }
    const auto reps = dash::representatives(st.result, st.latents->latents, n);
    return json{{"k", k}, {"n", n}, {"checkpoint_id", st.checkpoint_id}, {"representatives", reps}}.dump();
}

std::string SessionService::translate(const std::string& sid, const std::vector<std::string>& source_ids, int cluster,
                                      int count, std::optional<int> k) {
    if (source_ids.empty()) throw validation_error("no source images given");
    if (count < 1 || count > 100) throw validation_error("count must be in [1, 100]");
    auto s = session(sid);
    ClusterState st;
    std::shared_ptr<const Dataset> data;
    {
        std::lock_guard lk(s->m);
        st = current_clusters(*s, k);
        data = s->dataset;
    }
    if (cluster < 0 || cluster >= st.result.k) {
        throw validation_error("cluster index out of range", std::to_string(cluster));
    }
    std::vector<const ImageSample*> sources;
    for (const auto& id : source_ids) {
        const auto* src = data->find(id);
        if (!src) throw not_found_error("unknown image '" + id + "'");
        sources.push_back(src);
    }
    const auto style = compute_style_stats(*data, st.result, cluster);
    const MomentMatchTranslator translator;

    std::lock_guard lk(s->m);
    json items = json::array();
    for (const auto* src : sources) {
        int first = 0;
        for (const auto& x : data->samples) first += x.source_id == src->id && x.style_cluster == cluster;
        for (const auto& x : s->pending) first += x.source_id == src->id && x.style_cluster == cluster;
        for (auto& out : batch_translate({src}, style, count, translator, first)) {
            items.push_back({{"id", out.id},
                             {"source_id", src->id},
                             {"label", out.label},
                             {"style_cluster", cluster},
                             {"image", png_base64(out.image)}});
            s->pending.push_back(std::move(out));
        }
    }
    return json{{"method", translator.method()},
                {"k", st.result.k},
                {"cluster", cluster},
                {"style", style},
                {"items", items},
                {"pending", s->pending.size()}}
        .dump();
}

std::string SessionService::pending(const std::string& sid) const {
    auto s = session(sid);
    std::lock_guard lk(s->m);
    json items = json::array();
    for (const auto& p : s->pending) {
        items.push_back({{"id", p.id}, {"source_id", *p.source_id}, {"label", p.label}, {"style_cluster", *p.style_cluster}});
    }
    return json{{"items", items}}.dump();
}

std::string SessionService::augment(const std::string& sid, const std::vector<std::string>& ids,
                                    std::optional<int> label) {
    if (ids.empty()) throw validation_error("no pending images given");
    auto s = session(sid);
    std::lock_guard lk(s->m);
    if (label && (*label < 0 || *label >= s->dataset->num_classes())) {
        throw validation_error("label out of range", std::to_string(*label));
    }
    std::set<std::string> wanted(ids.begin(), ids.end());
    if (wanted.size() != ids.size()) throw validation_error("duplicate ids in augment request");
    std::map<int, std::vector<ImageSample>> groups;
    for (const auto& p : s->pending) {
        if (wanted.count(p.id)) groups[label.value_or(p.label)].push_back(p);
    }
    std::size_t found = 0;
    for (const auto& [l, g] : groups) found += g.size();
    if (found != wanted.size()) {
        for (const auto& id : ids) {
            const bool present = std::any_of(s->pending.begin(), s->pending.end(), [&](auto& p) { return p.id == id; });
            if (!present) throw not_found_error("'" + id + "' is not in the pending basket");
        }
    }
    Dataset next = *s->dataset;
    for (auto& [l, g] : groups) next = register_augmented(next, std::move(g), l, s->history, s->active);
    next.version = s->dataset->version + 1;  // one request, one version, one record per target label
    save_dataset(next, s->dir / "dataset");
    s->dataset = std::make_shared<const Dataset>(std::move(next));
    std::erase_if(s->pending, [&](const ImageSample& p) { return wanted.count(p.id) > 0; });
    s->clusters.clear();
    s->last_k.reset();
    s->persist();
    const auto all = s->history.read_all();
    json records = json::array();
    for (std::size_t i = all.size() - groups.size(); i < all.size(); ++i) records.push_back(all[i]);
    return json{{"dataset_version", s->dataset->version},
                {"train_size", s->dataset->count(Split::Train)},
                {"records", records},
                {"pending", s->pending.size()}}
        .dump();
}

std::string SessionService::confusion(const std::string& sid, Split split, const std::optional<std::string>& cid) {
    auto s = session(sid);
    const auto view = snapshot_of(*s, cid);
    return cached(*s, cache_key("confusion", view, to_string(split)), [&] {
        return json(dash::confusion(*predictions_for(*s, view, split, cache_enabled_), *view.data, split)).dump();
    });
}

namespace {

struct PairSnapshot {
    std::shared_ptr<const Dataset> data;
    std::shared_ptr<const Checkpoint> prev;  // may be null when b has no parent
    std::shared_ptr<const Checkpoint> curr;
};

PairSnapshot resolve_pair(SessionService::Session& s, const PairQuery& q) {
    std::lock_guard lk(s.m);
    PairSnapshot p;
    p.data = s.dataset;
    p.curr = s.resolve(q.cid_b);
    if (q.cid_a) {
        p.prev = s.resolve(q.cid_a);
    } else if (p.curr->parent_id && s.node(*p.curr->parent_id)) {
        p.prev = s.resolve(p.curr->parent_id);
    }
    return p;
}

}  // namespace

std::string SessionService::mosaic(const std::string& sid, const PairQuery& q, double min_cell, double gutter) {
    if (!(min_cell >= 0.0 && min_cell < 0.5) || !(gutter >= 0.0 && gutter < 0.1)) {
        throw validation_error("min_cell must be in [0, 0.5) and gutter in [0, 0.1)");
    }
    auto s = session(sid);
    const auto pair = resolve_pair(*s, q);
    const std::string params = (pair.prev ? pair.prev->id : "-") + "|" + to_string(q.split) + "|" +
                               json(min_cell).dump() + "|" + json(gutter).dump();
    return cached(*s, cache_key("mosaic", {pair.data, pair.curr}, params), [&] {
        auto one = [&](const std::shared_ptr<const Checkpoint>& ck) -> json {
            if (!ck) return nullptr;
            const auto preds = predictions_for(*s, {pair.data, ck}, q.split, cache_enabled_);
            const auto cm = dash::confusion(*preds, *pair.data, q.split);
            return {{"checkpoint_id", ck->id}, {"confusion", cm}, {"layout", mosaic_layout(cm, min_cell, gutter)}};
        };
        return json{{"split", to_string(q.split)}, {"a", one(pair.prev)}, {"b", one(pair.curr)}}.dump();
    });
}

std::string SessionService::trace(const std::string& sid, const PairQuery& q) {
    auto s = session(sid);
    const auto pair = resolve_pair(*s, q);
    if (!pair.prev) throw validation_error("checkpoint has no parent to compare with; pass cid_a");
    return cached(*s, cache_key("trace", {pair.data, pair.curr}, pair.prev->id + "|" + to_string(q.split)), [&] {
        const auto a = predictions_for(*s, {pair.data, pair.prev}, q.split, cache_enabled_);
        const auto b = predictions_for(*s, {pair.data, pair.curr}, q.split, cache_enabled_);
        return json(trace_diff(*a, *b, *pair.data, q.split)).dump();
    });
}

std::string SessionService::frequent(const std::string& sid, double threshold, Split split) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw validation_error("threshold must be in (0, 1]");
    auto s = session(sid);
    std::shared_ptr<const Dataset> data;
    std::vector<std::shared_ptr<const Checkpoint>> trained;
    {
        std::lock_guard lk(s->m);
        data = s->dataset;
        for (const auto& n : s->nodes) {
            if (!n.tombstoned && n.parent_id) trained.push_back(s->checkpoints.at(n.id));
        }
    }
    if (trained.empty()) throw validation_error("no trained checkpoints to compare");
    std::vector<PredictionSet> sets;
    json ids = json::array();
    for (const auto& ck : trained) {
        sets.push_back(*predictions_for(*s, {data, ck}, split, cache_enabled_));
        ids.push_back(ck->id);
    }
    json items = json::array();
    for (const auto& f : frequent_misclassified(sets, threshold)) items.push_back(f);
    return json{{"threshold", threshold}, {"split", to_string(split)}, {"checkpoints", ids}, {"items", items}}.dump();
}

std::string SessionService::history(const std::string& sid) const {
    auto s = session(sid);
    std::lock_guard lk(s->m);
    json recs = json::array();
    for (const auto& r : s->history.read_all()) recs.push_back(r);
    return json{{"records", recs}}.dump();
}

}  // namespace dash
