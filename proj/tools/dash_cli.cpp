// dash: headless driver for the debias workflow.
#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "dash/cluster.hpp"
#include "dash/dataset.hpp"
#include "dash/engine.hpp"
#include "dash/error.hpp"
#include "dash/explainers.hpp"
#include "dash/model_diff.hpp"
#include "dash/projection.hpp"
#include "dash/replay.hpp"
#include "dash/server.hpp"
#include "dash/session.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dash;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitCompute = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Validation:
        case ErrorKind::Conflict: return kExitUsage;
        case ErrorKind::Data:
        case ErrorKind::NotFound: return kExitData;
        case ErrorKind::Compute: return kExitCompute;
    }
    return 1;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot read file", path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw data_error("malformed JSON in " + path.string(), e.what());
    }
}

std::string output_path;
bool quiet = false;

void emit(const json& j) {
    const std::string text = j.dump(2);
    std::cout << text << '\n';
    if (!output_path.empty()) {
        std::ofstream out(output_path);
        if (!out) throw data_error("cannot write output", output_path);
        out << text << '\n';
    }
}

void note(const std::string& s) {
    if (!quiet) std::cerr << s << '\n';
}


}  // namespace

namespace {

dash::ApiServer* active_server = nullptr;

void on_signal(int) {
    if (active_server) active_server->stop();
}

Split split_arg(const std::string& s) { return parse_split(s); }

std::vector<Split> splits_arg(const std::string& text) {
    std::vector<Split> out;
    std::stringstream ss(text);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        if (!piece.empty()) out.push_back(parse_split(piece));
    }
    if (out.empty()) throw validation_error("no splits given");
    return out;
}

struct LatentTable {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> latents;
};

LatentTable latents_of(const Checkpoint& ck, const Dataset& data, const std::vector<Split>& splits) {
    LatentTable t;
    const ConvNet net = ck.network();
    for (const auto& s : data.samples) {
        if (std::find(splits.begin(), splits.end(), s.split) == splits.end()) continue;
        t.ids.push_back(s.id);
        t.latents.push_back(extract_latent(net, s.image));
    }
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dash: data-bias diagnosis and debias workflow"};
    app.require_subcommand(1);
    app.add_option("-o,--output", output_path, "Also write the JSON result to this file");
    app.add_flag("-q,--quiet", quiet, "Suppress progress on stderr");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic biased dataset from a spec file");
    std::string spec_file, out_dir;
    std::optional<std::uint64_t> seed_override;
    gen->add_option("--spec", spec_file, "Dataset spec JSON")->required();
    gen->add_option("--out", out_dir, "Output dataset directory")->required();
    gen->add_option("--seed", seed_override, "Override the spec seed");

    // train
    auto* tr = app.add_subcommand("train", "Train a model (fresh or from a checkpoint)");
    std::string data_dir, ckpt_in, ckpt_out, model_file;
    TrainConfig tcfg;
    bool cold = false;
    std::optional<std::uint64_t> model_seed;
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--checkpoint", ckpt_in, "Parent checkpoint (default: fresh model)");
    tr->add_option("--model", model_file, "Model config JSON for a fresh model");
    tr->add_option("--model-seed", model_seed, "Seed for fresh model weights");
    tr->add_option("--out", ckpt_out, "Output checkpoint file")->required();
    tr->add_option("--epochs", tcfg.epochs);
    tr->add_option("--batch-size", tcfg.batch_size);
    tr->add_option("--lr", tcfg.learning_rate);
    tr->add_option("--momentum", tcfg.momentum);
    tr->add_option("--seed", tcfg.seed, "Minibatch shuffle seed");
    tr->add_flag("--cold", cold, "Reinitialize weights instead of warm-starting from the parent");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Predict a split and report accuracy");
    std::string split_name = "test";
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--checkpoint", ckpt_in)->required();
    ev->add_option("--split", split_name);

    // project
    auto* pj = app.add_subcommand("project", "t-SNE projection of latent vectors");
    std::string splits_text = "train,val";
    std::optional<double> perplexity;
    int iterations = 500;
    std::uint64_t seed = 0;
    bool with_density = false;
    int resolution = 64;
    pj->add_option("--data", data_dir)->required();
    pj->add_option("--checkpoint", ckpt_in)->required();
    pj->add_option("--splits", splits_text, "Comma-separated splits to embed");
    pj->add_option("--perplexity", perplexity);
    pj->add_option("--iterations", iterations);
    pj->add_option("--seed", seed);
    pj->add_flag("--density", with_density, "Include density grid and contours");
    pj->add_option("--resolution", resolution, "Density grid cells per side");

    // gradcam
    auto* gc = app.add_subcommand("gradcam", "Grad-CAM heatmap for one image");
    std::string image_id, png_dir;
    std::optional<int> target_class;
    double alpha = 0.5;
    gc->add_option("--data", data_dir)->required();
    gc->add_option("--checkpoint", ckpt_in)->required();
    gc->add_option("--image", image_id)->required();
    gc->add_option("--class", target_class, "Target class (default: predicted)");
    gc->add_option("--alpha", alpha);
    gc->add_option("--png-dir", png_dir, "Write original/heatmap/blend PNGs here");

    // cluster
    auto* cl = app.add_subcommand("cluster", "k-means on latent vectors");
    int k = 3, reps = 5;
    std::string cluster_split = "train";
    cl->add_option("--data", data_dir)->required();
    cl->add_option("--checkpoint", ckpt_in)->required();
    cl->add_option("--k", k)->required();
    cl->add_option("--seed", seed);
    cl->add_option("--split", cluster_split);
    cl->add_option("--representatives", reps);

    // translate
    auto* tl = app.add_subcommand("translate", "Translate source images toward a cluster's style");
    std::string clusters_file, pending_file;
    std::vector<std::string> source_ids;
    int cluster_index = 0, count = 1;
    tl->add_option("--data", data_dir)->required();
    tl->add_option("--clusters", clusters_file, "Cluster result JSON from 'cluster'")->required();
    tl->add_option("--source", source_ids, "Source image ids")->required();
    tl->add_option("--cluster", cluster_index)->required();
    tl->add_option("--count", count);
    tl->add_option("--out", out_dir, "Directory for the pending images")->required();

    // augment
    auto* au = app.add_subcommand("augment", "Register pending translations into the train split");
    std::optional<int> label;
    std::vector<std::string> ids;
    std::string acting_ckpt;
    au->add_option("--data", data_dir)->required();
    au->add_option("--pending", pending_file, "pending.json written by 'translate'")->required();
    au->add_option("--ids", ids, "Subset of pending ids (default: all)");
    au->add_option("--label", label, "Target label (default: each source's label)");
    au->add_option("--checkpoint-id", acting_ckpt, "Checkpoint the user was inspecting");

    // diff
    auto* df = app.add_subcommand("diff", "Confusion matrices, mosaic layouts and trace between two checkpoints");
    std::string prev_ckpt, curr_ckpt;
    double min_cell = 0.01, gutter = 0.005;
    df->add_option("--data", data_dir)->required();
    df->add_option("--prev", prev_ckpt)->required();
    df->add_option("--curr", curr_ckpt)->required();
    df->add_option("--split", split_name);
    df->add_option("--min-cell", min_cell);
    df->add_option("--gutter", gutter);

    // frequent
    auto* fq = app.add_subcommand("frequent", "Images misclassified by many checkpoints");
    std::vector<std::string> ckpts;
    double threshold = 0.5;
    fq->add_option("--data", data_dir)->required();
    fq->add_option("--checkpoints", ckpts)->required();
    fq->add_option("--threshold", threshold);
    fq->add_option("--split", split_name);

    // serve
    auto* sv = app.add_subcommand("serve", "Run the HTTP session service");
    std::string host = "127.0.0.1", root_dir;
    int port = 8080;
    sv->add_option("--host", host);
    sv->add_option("--port", port);
    sv->add_option("--data-dir", root_dir, "Session root (default: $DASH_DATA_DIR or ./dash-data)");

    // replay
    auto* rp = app.add_subcommand("replay", "Run a scripted debias loop and report metrics");
    std::string script_file, workdir = "replay-out";
    rp->add_option("--script", script_file)->required();
    rp->add_option("--workdir", workdir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) {
            auto spec = read_json_file(spec_file).get<BiasedDatasetSpec>();
            if (seed_override) spec.seed = *seed_override;
            const Dataset data = generate_biased_dataset(spec);
            save_dataset(data, out_dir);
            emit({{"out", out_dir},
                  {"hash", hex64(data.content_hash())},
                  {"counts",
                   {{"train", data.count(Split::Train)}, {"val", data.count(Split::Val)}, {"test", data.count(Split::Test)}}},
                  {"class_names", data.class_names}});
        } else if (*tr) {
            const Dataset data = load_dataset(data_dir);
            Checkpoint parent;
            if (!ckpt_in.empty()) {
                parent = load_checkpoint(ckpt_in);
            } else {
                ConvNetConfig cfg = model_file.empty() ? ConvNetConfig{} : read_json_file(model_file).get<ConvNetConfig>();
                cfg.num_classes = data.num_classes();
                cfg.image_size = data.image_size;
                if (model_seed) cfg.seed = *model_seed;
                parent = init_model(cfg);
            }
            auto progress = [](const EpochEvent& e) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "epoch %d/%d  train %.4f (acc %.3f)  val %.4f (acc %.3f)", e.epoch,
                              e.epochs, e.loss.train_loss, e.loss.train_accuracy, e.loss.val_loss, e.loss.val_accuracy);
                note(buf);
            };
            const Checkpoint child = train(parent, data, tcfg, progress, !cold);
            save_checkpoint(child, ckpt_out);
            emit(child);
        } else if (*ev) {
            emit(predict(load_checkpoint(ckpt_in), load_dataset(data_dir), split_arg(split_name)));
        } else if (*pj) {
            const Dataset data = load_dataset(data_dir);
            const auto lat = latents_of(load_checkpoint(ckpt_in), data, splits_arg(splits_text));
            TsneOptions opt;
            opt.perplexity = perplexity;
            opt.iterations = iterations;
            opt.seed = seed;
            const auto proj = tsne(lat.ids, lat.latents, opt);
            json out = proj;
            if (with_density) {
                const auto field = density_grid(proj.points, std::nullopt, resolution);
                out["density"] = field;
                out["contours"] = density_contours(field);
            }
            emit(out);
        } else if (*gc) {
            const Dataset data = load_dataset(data_dir);
            const auto& sample = data.at(image_id);
            const auto heat = grad_cam(load_checkpoint(ckpt_in), sample.image, target_class, image_id);
            if (!png_dir.empty()) {
                fs::create_directories(png_dir);
                const auto t = overlay(sample.image, heat, alpha);
                write_png(t.original, (fs::path(png_dir) / (image_id + "-original.png")).string());
                write_png(t.colorized, (fs::path(png_dir) / (image_id + "-heatmap.png")).string());
                write_png(t.blend, (fs::path(png_dir) / (image_id + "-blend.png")).string());
            }
            emit(heat);
        } else if (*cl) {
            if (k < kMinClusters || k > kMaxClusters) {
                throw validation_error("K=" + std::to_string(k) + " is outside the allowed range 2-20");
            }
            const Dataset data = load_dataset(data_dir);
            const auto lat = latents_of(load_checkpoint(ckpt_in), data, {split_arg(cluster_split)});
            KMeansOptions opt;
            opt.representatives = reps;
            emit(kmeans(lat.ids, lat.latents, k, seed, opt));
        } else if (*tl) {
            const Dataset data = load_dataset(data_dir);
            const auto clusters = read_json_file(clusters_file).get<ClusterResult>();
            if (cluster_index < 0 || cluster_index >= clusters.k) {
                throw validation_error("cluster index out of range", std::to_string(cluster_index));
            }
            const auto style = compute_style_stats(data, clusters, cluster_index);
            std::vector<const ImageSample*> sources;
            for (const auto& id : source_ids) sources.push_back(&data.at(id));
            fs::create_directories(fs::path(out_dir) / "images");
            const fs::path pending_path = fs::path(out_dir) / "pending.json";
            json pending = fs::exists(pending_path) ? read_json_file(pending_path) : json{{"items", json::array()}};
            std::set<std::string> taken;
            for (const auto& it : pending["items"]) taken.insert(it["id"].get<std::string>());
            const MomentMatchTranslator translator;
            json items = json::array();
            for (const auto* src : sources) {
                int first = 0;
                for (const auto& s : data.samples) first += s.source_id == src->id && s.style_cluster == cluster_index;
                while (taken.count(augmented_id(src->id, cluster_index, first))) ++first;
                for (auto& out : batch_translate({src}, style, count, translator, first)) {
                    const std::string file = "images/" + out.id + ".png";
                    write_png(out.image, (fs::path(out_dir) / file).string());
                    json item{{"id", out.id},
                              {"source_id", src->id},
                              {"label", out.label},
                              {"style_cluster", cluster_index},
                              {"file", file}};
                    pending["items"].push_back(item);
                    items.push_back(item);
                }
            }
            pending["method"] = translator.method();
            std::ofstream(pending_path) << pending.dump(2) << '\n';
            emit({{"method", translator.method()}, {"style", style}, {"items", items}, {"pending", pending_path.string()}});
        } else if (*au) {
            Dataset data = load_dataset(data_dir);
            json pending = read_json_file(pending_file);
            const fs::path base = fs::path(pending_file).parent_path();
            const std::set<std::string> wanted(ids.begin(), ids.end());
            std::map<int, std::vector<ImageSample>> groups;
            std::set<std::string> seen;
            json remaining = json::array();
            for (const auto& it : pending.at("items")) {
                const auto id = it.at("id").get<std::string>();
                if (!wanted.empty() && !wanted.count(id)) {
                    remaining.push_back(it);
                    continue;
                }
                ImageSample s;
                s.id = id;
                s.image = read_png((base / it.at("file").get<std::string>()).string());
                s.label = it.at("label").get<int>();
                s.provenance = Provenance::Augmented;
                s.source_id = it.at("source_id").get<std::string>();
                s.style_cluster = it.at("style_cluster").get<int>();
                groups[label.value_or(s.label)].push_back(std::move(s));
                seen.insert(id);
            }
            for (const auto& id : wanted) {
                if (!seen.count(id)) throw data_error("'" + id + "' is not in the pending file");
            }
            if (groups.empty()) throw validation_error("nothing to register");
            const HistoryLog log(fs::path(data_dir) / "history.jsonl");
            json records = json::array();
            const int version = data.version + 1;
            for (auto& [l, g] : groups) {
                data = register_augmented(data, std::move(g), l, log, acting_ckpt, pending.value("method", "moment_match"));
            }
            data.version = version;
            save_dataset(data, data_dir);
            const auto all = log.read_all();
            for (std::size_t i = all.size() - groups.size(); i < all.size(); ++i) records.push_back(all[i]);
            pending["items"] = remaining;
            std::ofstream(pending_file) << pending.dump(2) << '\n';
            emit({{"dataset_version", data.version}, {"train_size", data.count(Split::Train)}, {"records", records}});
        } else if (*df) {
            const Dataset data = load_dataset(data_dir);
            const Split split = split_arg(split_name);
            const auto a = predict(load_checkpoint(prev_ckpt), data, split);
            const auto b = predict(load_checkpoint(curr_ckpt), data, split);
            const auto ca = confusion(a, data, split);
            const auto cb = confusion(b, data, split);
            emit({{"split", to_string(split)},
                  {"a", {{"checkpoint_id", a.checkpoint_id}, {"confusion", ca}, {"layout", mosaic_layout(ca, min_cell, gutter)}}},
                  {"b", {{"checkpoint_id", b.checkpoint_id}, {"confusion", cb}, {"layout", mosaic_layout(cb, min_cell, gutter)}}},
                  {"trace", trace_diff(a, b, data, split)}});
        } else if (*fq) {
            const Dataset data = load_dataset(data_dir);
            const Split split = split_arg(split_name);
            std::vector<PredictionSet> sets;
            for (const auto& p : ckpts) sets.push_back(predict(load_checkpoint(p), data, split));
            json items = json::array();
            for (const auto& f : frequent_misclassified(sets, threshold)) items.push_back(f);
            emit({{"threshold", threshold}, {"split", to_string(split)}, {"items", items}});
        } else if (*sv) {
            SessionService service(root_dir.empty() ? default_data_root() : fs::path(root_dir));
            ApiServer server(service);
            active_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            note("serving " + service.root().string() + " on http://" + host + ":" + std::to_string(port) + "/api/v1");
            if (!server.listen(host, port)) throw data_error("cannot bind " + host + ":" + std::to_string(port));
            active_server = nullptr;
        } else if (*rp) {
            const auto script = load_replay_script(script_file);
            emit(run_replay(script, workdir, [](const std::string& m) { note(m); }));
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}, {"detail", e.detail()}}.dump() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}
