#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dash/cluster.hpp"
#include "dash/dataset.hpp"
#include "dash/engine.hpp"
#include "dash/projection.hpp"

namespace dash {

/// Session root: DASH_DATA_DIR if set, else ./dash-data.
std::filesystem::path default_data_root();

enum class JobState { Queued, Running, Done, Failed };
const char* to_string(JobState s);

struct JobSnapshot {
    std::string id;
    std::string session_id;
    JobState state = JobState::Queued;
    std::string parent_id;
    TrainConfig config;
    bool warm_start = true;
    std::vector<EpochLoss> losses;  // per finished epoch
    std::optional<std::string> checkpoint_id;
    std::string error;

    bool terminal() const { return state == JobState::Done || state == JobState::Failed; }
};

void to_json(nlohmann::json& j, const JobSnapshot& s);

struct CheckpointNode {
    std::string id;
    std::optional<std::string> parent_id;
    bool tombstoned = false;
};

struct CreateSessionRequest {
    std::optional<std::filesystem::path> dataset_dir;
    std::optional<BiasedDatasetSpec> dataset_spec;
    std::optional<std::filesystem::path> checkpoint;  // start from an existing checkpoint file
    ConvNetConfig model;
    std::optional<TrainConfig> train;  // start a training job right away
};

CreateSessionRequest parse_create_session(const nlohmann::json& body);

struct ProjectionQuery {
    std::optional<std::string> checkpoint;
    std::vector<Split> splits{Split::Train, Split::Val};
    std::optional<double> perplexity;
    std::uint64_t seed = 0;
    int iterations = 500;
};

struct PairQuery {
    std::optional<std::string> cid_a;  // previous; defaults to the active checkpoint's parent
    std::optional<std::string> cid_b;  // current; defaults to the active checkpoint
    Split split = Split::Test;
};

/// Owns every session under a root directory. Methods are thread-safe; each
/// session serializes its mutations behind its own lock while analytics run
/// unlocked on immutable snapshots. Analytics responses are returned as JSON
/// text and cached by (op, checkpoint, dataset version, params).
class SessionService {
public:
    explicit SessionService(std::filesystem::path root);
    ~SessionService();

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    const std::filesystem::path& root() const { return root_; }

    nlohmann::json create_session(const CreateSessionRequest& request);
    nlohmann::json get_session(const std::string& sid) const;
    std::vector<std::string> session_ids() const;

    JobSnapshot start_training(const std::string& sid, const TrainConfig& config, bool warm_start = true);
    JobSnapshot get_job(const std::string& job_id) const;
    /// Blocks until the job has more than `seen_epochs` losses or is terminal.
    JobSnapshot wait_job(const std::string& job_id, std::size_t seen_epochs,
                         std::chrono::milliseconds timeout) const;
    JobSnapshot wait_job_done(const std::string& job_id,
                              std::chrono::milliseconds timeout = std::chrono::minutes(10)) const;

    nlohmann::json activate(const std::string& sid, const std::string& cid);
    nlohmann::json discard(const std::string& sid, const std::string& cid);

    std::string predictions(const std::string& sid, Split split, const std::optional<std::string>& cid = {});
    std::string projection(const std::string& sid, const ProjectionQuery& q);
    std::string density(const std::string& sid, const ProjectionQuery& q, int resolution = 64);
    std::string lasso(const std::string& sid, const ProjectionQuery& q, const std::vector<Point2>& polygon);
    std::string gradcam(const std::string& sid, const std::string& image_id, std::optional<int> target_class,
                        const std::optional<std::string>& cid = {}, double alpha = 0.5);
    std::string clusters(const std::string& sid, int k, std::uint64_t seed, Split split = Split::Train);
    std::string representatives(const std::string& sid, int k, int n);
    std::string translate(const std::string& sid, const std::vector<std::string>& source_ids, int cluster,
                          int count, std::optional<int> k = std::nullopt);
    std::string pending(const std::string& sid) const;
    std::string augment(const std::string& sid, const std::vector<std::string>& ids, std::optional<int> label);
    std::string confusion(const std::string& sid, Split split, const std::optional<std::string>& cid = {});
    std::string mosaic(const std::string& sid, const PairQuery& q, double min_cell = 0.01, double gutter = 0.005);
    std::string trace(const std::string& sid, const PairQuery& q);
    std::string frequent(const std::string& sid, double threshold, Split split = Split::Test);
    std::string history(const std::string& sid) const;

    void set_cache_enabled(bool enabled) { cache_enabled_ = enabled; }
    std::size_t cache_hits() const { return cache_hits_; }

    struct Session;
    struct Job;

private:
    std::shared_ptr<Session> session(const std::string& sid) const;
    std::shared_ptr<Job> job(const std::string& job_id) const;
    void load_existing();
    void run_job(std::shared_ptr<Session> s, std::shared_ptr<Job> j, std::shared_ptr<const Checkpoint> parent,
                 std::shared_ptr<const Dataset> data);

    template <typename F>
    std::string cached(Session& s, const std::string& key, F&& compute);

    std::filesystem::path root_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::atomic<bool> stopping_{false};
    std::atomic<bool> cache_enabled_{true};
    std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace dash
