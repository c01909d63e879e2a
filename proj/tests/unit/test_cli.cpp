#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "dash/engine.hpp"

using namespace dash;
using nlohmann::json;
using testing::TempDir;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run dash_cli(const TempDir& dir, const std::string& args) {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + DASH_CLI_PATH + "\" -q " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

}  // namespace

TEST_CASE("command line loop: generate, train, evaluate, cluster, translate, augment, diff") {
    TempDir dir("dash-cli");
    const auto p = [&](const std::string& s) { return (dir / s).string(); };
    {
        std::ofstream spec(dir / "spec.json");
        spec << json(testing::tiny_spec()).dump();
    }

    auto gen = dash_cli(dir, "gen-data --spec " + p("spec.json") + " --out " + p("data"));
    REQUIRE(gen.code == 0);
    const Dataset lib = generate_biased_dataset(testing::tiny_spec());
    CHECK(json::parse(gen.out)["hash"] == hex64(lib.content_hash()));
    CHECK(load_dataset(dir / "data") == lib);

    auto tr = dash_cli(dir, "train --data " + p("data") + " --model-seed 1 --epochs 2 --batch-size 12 --out " + p("a.ckpt"));
    REQUIRE(tr.code == 0);
    auto tr2 = dash_cli(dir, "train --data " + p("data") + " --checkpoint " + p("a.ckpt") +
                                 " --epochs 2 --batch-size 12 --seed 3 --out " + p("b.ckpt"));
    REQUIRE(tr2.code == 0);
    const auto a = load_checkpoint(dir / "a.ckpt");
    const auto b = load_checkpoint(dir / "b.ckpt");
    CHECK(b.parent_id == a.id);

    auto ev = dash_cli(dir, "-o " + p("eval.json") + " evaluate --data " + p("data") + " --checkpoint " + p("b.ckpt") +
                                " --split test");
    REQUIRE(ev.code == 0);
    CHECK(json::parse(ev.out) == json(predict(b, lib, Split::Test)));
    CHECK(json::parse(slurp(dir / "eval.json")) == json::parse(ev.out));

    auto cl = dash_cli(dir, "-o " + p("clusters.json") + " cluster --data " + p("data") + " --checkpoint " +
                                p("b.ckpt") + " --k 3 --seed 4");
    REQUIRE(cl.code == 0);
    CHECK(json::parse(cl.out)["k"] == 3);

    auto tl = dash_cli(dir, "translate --data " + p("data") + " --clusters " + p("clusters.json") +
                                " --source train-00000 train-00001 --cluster 1 --count 1 --out " + p("pending"));
    REQUIRE(tl.code == 0);
    CHECK(json::parse(tl.out)["items"].size() == 2);

    auto au = dash_cli(dir, "augment --data " + p("data") + " --pending " + p("pending/pending.json") +
                                " --checkpoint-id " + b.id);
    REQUIRE(au.code == 0);
    CHECK(json::parse(au.out)["train_size"] == 38);
    CHECK(load_dataset(dir / "data").version == 1);

    auto df = dash_cli(dir, "diff --data " + p("data") + " --prev " + p("a.ckpt") + " --curr " + p("b.ckpt"));
    REQUIRE(df.code == 0);
    const auto d = json::parse(df.out);
    const auto& c = d["trace"]["counts"];
    CHECK(c["CC"].get<int>() + c["CI"].get<int>() + c["IC"].get<int>() + c["II"].get<int>() == 18);

    auto fq = dash_cli(dir, "frequent --data " + p("data") + " --checkpoints " + p("a.ckpt") + " " + p("b.ckpt") +
                                " --threshold 1");
    CHECK(fq.code == 0);
}

TEST_CASE("command line errors: exit codes and structured stderr") {
    TempDir dir("dash-cli");
    const auto p = [&](const std::string& s) { return (dir / s).string(); };
    {
        std::ofstream spec(dir / "spec.json");
        spec << json(testing::tiny_spec()).dump();
    }
    REQUIRE(dash_cli(dir, "gen-data --spec " + p("spec.json") + " --out " + p("data")).code == 0);
    REQUIRE(dash_cli(dir, "train --data " + p("data") + " --epochs 0 --out " + p("a.ckpt")).code == 0);

    auto bad_k = dash_cli(dir, "cluster --data " + p("data") + " --checkpoint " + p("a.ckpt") + " --k 25");
    CHECK(bad_k.code == 2);
    const auto e = json::parse(bad_k.err);
    CHECK(e["error"] == "validation");
    CHECK(std::string(e["message"]).find("2-20") != std::string::npos);

    CHECK(dash_cli(dir, "evaluate --data " + p("missing") + " --checkpoint " + p("a.ckpt")).code == 3);
    CHECK(dash_cli(dir, "evaluate --data " + p("data") + " --checkpoint " + p("a.ckpt") + " --split nope").code == 2);
    CHECK(dash_cli(dir, "train --data " + p("data")).code == 2);  // missing --out
    CHECK(dash_cli(dir, "no-such-command").code == 2);
    CHECK(dash_cli(dir, "train --data " + p("data") + " --lr 1e200 --epochs 2 --out " + p("x.ckpt")).code == 4);
}
