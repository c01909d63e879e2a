#include <thread>

#include "doctest.h"
#include "helpers.hpp"

#include "dash/engine.hpp"
#include "dash/session.hpp"

using namespace dash;
using nlohmann::json;
using testing::kind_of;
using testing::TempDir;

namespace {

CreateSessionRequest tiny_request() {
    CreateSessionRequest r;
    r.dataset_spec = testing::tiny_spec();
    r.model.seed = 1;
    return r;
}

TrainConfig quick(int epochs = 2, std::uint64_t seed = 0) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 12;
    t.seed = seed;
    return t;
}

std::string trained_child(SessionService& svc, const std::string& sid, int epochs = 2) {
    const auto job = svc.start_training(sid, quick(epochs));
    const auto done = svc.wait_job_done(job.id);
    REQUIRE(done.state == JobState::Done);
    return *done.checkpoint_id;
}

}  // namespace

TEST_CASE("create session, train a child, poll the job") {
    TempDir root;
    SessionService svc(root.path());
    const auto s = svc.create_session(tiny_request());
    const std::string sid = s["id"];
    const std::string root_ck = s["active"];
    CHECK(s["checkpoints"].size() == 1);
    CHECK(s["dataset"]["counts"]["train"] == 36);
    CHECK(std::filesystem::exists(root / sid / "session.json"));
    CHECK(std::filesystem::exists(root / sid / "dataset" / "manifest.json"));

    const auto job = svc.start_training(sid, quick(3));
    CHECK(job.parent_id == root_ck);
    const auto done = svc.wait_job_done(job.id);
    CHECK(done.state == JobState::Done);
    CHECK(done.losses.size() == 3);
    const auto after = svc.get_session(sid);
    CHECK(after["active"] == *done.checkpoint_id);
    CHECK(after["checkpoints"].size() == 2);
    CHECK(after["checkpoints"][1]["parent_id"] == root_ck);
    CHECK(kind_of([&] { svc.get_job("job-nope"); }) == ErrorKind::NotFound);
    CHECK(kind_of([&] { svc.get_session("s-nope"); }) == ErrorKind::NotFound);
}

TEST_CASE("one training job at a time; a new job after completion extends the active checkpoint") {
    TempDir root;
    SessionService svc(root.path());
    const std::string sid = svc.create_session(tiny_request())["id"];
    const auto first = svc.start_training(sid, quick(60));
    CHECK(kind_of([&] { svc.start_training(sid, quick(1)); }) == ErrorKind::Conflict);
    const auto done = svc.wait_job_done(first.id);
    REQUIRE(done.state == JobState::Done);
    const auto second = svc.start_training(sid, quick(1));
    CHECK(second.parent_id == *done.checkpoint_id);
    const auto done2 = svc.wait_job_done(second.id);
    CHECK(load_checkpoint(root / sid / "checkpoints" / (*done2.checkpoint_id + ".ckpt")).parent_id ==
          *done.checkpoint_id);
}

TEST_CASE("switching and discarding checkpoints") {
    TempDir root;
    SessionService svc(root.path());
    const auto s = svc.create_session(tiny_request());
    const std::string sid = s["id"];
    const std::string parent = s["active"];
    const std::string child = trained_child(svc, sid);

    CHECK(svc.activate(sid, parent)["active"] == parent);
    CHECK(svc.activate(sid, child)["active"] == child);
    CHECK(svc.get_session(sid)["jobs"].size() == 1);  // navigation never retrains

    const auto before = svc.get_session(sid);
    CHECK(kind_of([&] { svc.discard(sid, child); }) == ErrorKind::Conflict);
    CHECK(svc.get_session(sid) == before);

    const auto after = svc.discard(sid, parent);
    CHECK(after["checkpoints"][0]["tombstoned"] == true);
    CHECK(kind_of([&] { svc.activate(sid, parent); }) == ErrorKind::Conflict);
    CHECK(kind_of([&] { svc.discard(sid, parent); }) == ErrorKind::Conflict);
    CHECK(kind_of([&] { svc.activate(sid, "ck-000000000000"); }) == ErrorKind::NotFound);
    CHECK(kind_of([&] { svc.predictions(sid, Split::Test, parent); }) == ErrorKind::Conflict);
    // tombstoned checkpoints stay on disk for inspection
    CHECK(std::filesystem::exists(root / sid / "checkpoints" / (parent + ".ckpt")));
}

TEST_CASE("cached analytics are byte-identical to fresh computations") {
    TempDir root;
    SessionService svc(root.path());
    const std::string sid = svc.create_session(tiny_request())["id"];
    trained_child(svc, sid);
    ProjectionQuery q;
    q.iterations = 150;
    q.seed = 2;
    PairQuery pair;

    std::vector<std::function<std::string()>> queries{
        [&] { return svc.predictions(sid, Split::Test); },
        [&] { return svc.projection(sid, q); },
        [&] { return svc.density(sid, q, 32); },
        [&] { return svc.gradcam(sid, "test-00003", std::nullopt); },
        [&] { return svc.confusion(sid, Split::Val); },
        [&] { return svc.mosaic(sid, pair); },
        [&] { return svc.trace(sid, pair); },
    };
    std::vector<std::string> first;
    for (auto& f : queries) first.push_back(f());
    const auto hits = svc.cache_hits();
    for (std::size_t i = 0; i < queries.size(); ++i) CHECK(queries[i]() == first[i]);
    CHECK(svc.cache_hits() >= hits + queries.size());

    svc.set_cache_enabled(false);
    for (std::size_t i = 0; i < queries.size(); ++i) CHECK(queries[i]() == first[i]);
}

TEST_CASE("cluster, translate, augment; registration bumps the dataset version") {
    TempDir root;
    SessionService svc(root.path());
    const std::string sid = svc.create_session(tiny_request())["id"];
    trained_child(svc, sid);

    CHECK(kind_of([&] { svc.clusters(sid, 25, 0); }) == ErrorKind::Validation);
    CHECK(kind_of([&] { svc.clusters(sid, 1, 0); }) == ErrorKind::Validation);
    CHECK(kind_of([&] { svc.translate(sid, {"train-00000"}, 0, 1); }) == ErrorKind::NotFound);

    const auto cl = json::parse(svc.clusters(sid, 3, 7));
    CHECK(cl["clusters"]["k"] == 3);
    CHECK(cl["style"].size() == 3);
    const auto reps = json::parse(svc.representatives(sid, 3, 2));
    CHECK(reps["representatives"].size() == 3);

    const std::string preds_before = svc.predictions(sid, Split::Train);
    const auto tr = json::parse(svc.translate(sid, {"train-00000", "train-00001"}, 1, 2));
    CHECK(tr["items"].size() == 4);
    CHECK(tr["items"][0]["id"] == "aug-train-00000-k1-0");
    CHECK(tr["items"][1]["id"] == "aug-train-00000-k1-1");
    CHECK(tr["method"] == "moment_match");
    CHECK(kind_of([&] { svc.translate(sid, {"nope"}, 1, 1); }) == ErrorKind::NotFound);
    CHECK(kind_of([&] { svc.translate(sid, {"train-00000"}, 3, 1); }) == ErrorKind::Validation);

    CHECK(kind_of([&] { svc.augment(sid, {"aug-unknown"}, std::nullopt); }) == ErrorKind::NotFound);
    const auto au = json::parse(svc.augment(sid, {"aug-train-00000-k1-0", "aug-train-00001-k1-0"}, 2));
    CHECK(au["dataset_version"] == 1);
    CHECK(au["train_size"] == 38);
    CHECK(au["pending"] == 2);
    CHECK(au["records"].size() == 1);
    CHECK(au["records"][0]["target_label"] == 2);

    // caches keyed on the old version are invisible: train predictions now cover 38 images
    const auto preds_after = json::parse(svc.predictions(sid, Split::Train));
    CHECK(preds_after["records"].size() == 38);
    CHECK(svc.predictions(sid, Split::Train) != preds_before);
    // clustering for the old version is stale
    CHECK(kind_of([&] { svc.translate(sid, {"train-00002"}, 0, 1); }) == ErrorKind::NotFound);
    // a second translation round continues the index
    svc.clusters(sid, 3, 7);
    const auto tr2 = json::parse(svc.translate(sid, {"train-00000"}, 1, 1));
    CHECK(tr2["items"][0]["id"] == "aug-train-00000-k1-2");
    const auto hist = json::parse(svc.history(sid));
    CHECK(hist["records"].size() == 1);
}

TEST_CASE("mosaic and trace default to (parent, active) on the test split") {
    TempDir root;
    SessionService svc(root.path());
    const auto s = svc.create_session(tiny_request());
    const std::string sid = s["id"];
    const std::string parent = s["active"];
    CHECK(kind_of([&] { svc.trace(sid, {}); }) == ErrorKind::Validation);
    const auto only = json::parse(svc.mosaic(sid, {}));
    CHECK(only["a"].is_null());
    const std::string child = trained_child(svc, sid);
    const auto m = json::parse(svc.mosaic(sid, {}));
    CHECK(m["a"]["checkpoint_id"] == parent);
    CHECK(m["b"]["checkpoint_id"] == child);
    CHECK(m["split"] == "test");
    const auto t = json::parse(svc.trace(sid, {}));
    CHECK(t["prev_checkpoint"] == parent);
    CHECK(t["curr_checkpoint"] == child);
    const long total = t["counts"]["CC"].get<long>() + t["counts"]["CI"].get<long>() + t["counts"]["IC"].get<long>() +
                       t["counts"]["II"].get<long>();
    CHECK(total == 18);
    const auto f = json::parse(svc.frequent(sid, 1.0));
    CHECK(f["checkpoints"].size() == 1);
    CHECK(kind_of([&] { svc.frequent(sid, 0.0); }) == ErrorKind::Validation);
}

TEST_CASE("restart restores committed state and fails in-flight jobs") {
    TempDir root;
    std::string sid, child, running_job;
    json committed;
    {
        SessionService svc(root.path());
        sid = svc.create_session(tiny_request())["id"];
        child = trained_child(svc, sid);
        svc.clusters(sid, 2, 1);
        const auto tr = json::parse(svc.translate(sid, {"train-00003"}, 0, 1));
        svc.augment(sid, {tr["items"][0]["id"].get<std::string>()}, std::nullopt);
        committed = svc.get_session(sid);
        running_job = svc.start_training(sid, quick(500)).id;
        while (svc.get_job(running_job).losses.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }  // shutdown mid-job, like a crash after the last commit
    SessionService again(root.path());
    const auto restored = again.get_session(sid);
    CHECK(restored["active"] == committed["active"]);
    CHECK(restored["checkpoints"] == committed["checkpoints"]);
    CHECK(restored["dataset"] == committed["dataset"]);
    const auto job = again.get_job(running_job);
    CHECK(job.state == JobState::Failed);
    CHECK(job.error.find("restart") != std::string::npos);
    // the service is usable again
    const auto next = again.start_training(sid, quick(1));
    CHECK(again.wait_job_done(next.id).state == JobState::Done);
}

TEST_CASE("checkpoint lineage plus history reproduce weights bitwise") {
    TempDir root;
    SessionService svc(root.path());
    const std::string sid = svc.create_session(tiny_request())["id"];
    trained_child(svc, sid);
    svc.clusters(sid, 2, 3);
    const auto tr = json::parse(svc.translate(sid, {"train-00004", "train-00005"}, 1, 1));
    std::vector<std::string> ids;
    for (const auto& it : tr["items"]) ids.push_back(it["id"]);
    svc.augment(sid, ids, std::nullopt);
    const std::string grandchild = trained_child(svc, sid, 2);

    const auto dir = root / sid;
    const auto ck = load_checkpoint(dir / "checkpoints" / (grandchild + ".ckpt"));
    const auto parent = load_checkpoint(dir / "checkpoints" / (*ck.parent_id + ".ckpt"));
    const auto data = load_dataset(dir / "dataset");
    CHECK(hex64(data.content_hash()) == ck.dataset_hash);
    const auto replayed = train(parent, data, *ck.train_config, {}, ck.warm_start);
    CHECK(replayed.weights == ck.weights);
    CHECK(replayed.id == ck.id);
}
