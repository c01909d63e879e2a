#include "dash/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dash/error.hpp"
#include "dash/rng.hpp"

using nlohmann::json;

namespace dash {

namespace {

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

struct LloydRun {
    std::vector<int> assign;
    std::vector<std::vector<double>> centroids;
    std::vector<double> trace;
    double inertia = 0.0;
};

int nearest(const std::vector<double>& x, const std::vector<std::vector<double>>& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = sqdist(x, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

// Single-point transfers from a Lloyd fixpoint: move x from cluster a to b when
// n_b/(n_b+1)|x-c_b|^2 < n_a/(n_a-1)|x-c_a|^2. Every move lowers inertia.
void hartigan_refine(const std::vector<std::vector<double>>& x, LloydRun& run) {
    const std::size_t n = x.size();
    const int k = static_cast<int>(run.centroids.size());
    const std::size_t dim = x[0].size();
    std::vector<int> counts(k, 0);
    for (int a : run.assign) ++counts[a];
    auto recenter = [&](int c) {
        std::vector<double> sum(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (run.assign[i] != c) continue;
            for (std::size_t d = 0; d < dim; ++d) sum[d] += x[i][d];
        }
        for (std::size_t d = 0; d < dim; ++d) run.centroids[c][d] = sum[d] / counts[c];
    };
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = run.assign[i];
            if (counts[a] < 2) continue;
            const double cost_a = counts[a] / (counts[a] - 1.0) * sqdist(x[i], run.centroids[a]);
            int best = a;
            double best_gain = 0.0;
            for (int b = 0; b < k; ++b) {
                if (b == a) continue;
                const double gain = cost_a - counts[b] / (counts[b] + 1.0) * sqdist(x[i], run.centroids[b]);
                if (gain > best_gain * (1 + 1e-12) + 1e-12) {
                    best_gain = gain;
                    best = b;
                }
            }
            if (best == a) continue;
            run.assign[i] = best;
            --counts[a];
            ++counts[best];
            recenter(a);
            recenter(best);
            moved = true;
        }
        if (!moved) break;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += sqdist(x[i], run.centroids[run.assign[i]]);
        run.trace.push_back(inertia);
        run.inertia = inertia;
    }
}

LloydRun lloyd(const std::vector<std::vector<double>>& x, int k, Rng& rng, int max_iterations) {
    const std::size_t n = x.size();
    LloydRun run;

    // k-means++ seeding
    std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.below(n))};
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sqdist(x[i], x[chosen[0]]);
    while (static_cast<int>(chosen.size()) < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            while (d2[pick] == 0.0 && pick > 0) --pick;  // guard the rounding tail
        } else {
            // every remaining point coincides with a center; take unchosen ones in order
            for (std::size_t i = 0; i < n; ++i) {
                if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sqdist(x[i], x[pick]));
    }
    for (auto idx : chosen) run.centroids.push_back(x[idx]);

    run.assign.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) run.assign[i] = nearest(x[i], run.centroids);

    const std::size_t dim = x[0].size();
    for (int iter = 0; iter < max_iterations; ++iter) {
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[run.assign[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[run.assign[i]][d] += x[i][d];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t d = 0; d < dim; ++d) run.centroids[c][d] = sums[c][d] / counts[c];
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += sqdist(x[i], run.centroids[run.assign[i]]);
        run.trace.push_back(inertia);
        run.inertia = inertia;

        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = nearest(x[i], run.centroids);
            // keep the current cluster on exact distance ties
            if (a != run.assign[i] &&
                sqdist(x[i], run.centroids[a]) < sqdist(x[i], run.centroids[run.assign[i]])) {
                run.assign[i] = a;
                changed = true;
            }
        }
        if (!changed) break;
    }
    hartigan_refine(x, run);
    return run;
}

}  // namespace

std::vector<std::string> ClusterResult::members(int cluster) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (assignments[i] == cluster) out.push_back(ids[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void to_json(json& j, const ClusterResult& r) {
    json sizes = json::array();
    for (int c = 0; c < r.k; ++c) {
        sizes.push_back(std::count(r.assignments.begin(), r.assignments.end(), c));
    }
    j = json{{"k", r.k},
             {"seed", r.seed},
             {"ids", r.ids},
             {"assignments", r.assignments},
             {"sizes", sizes},
             {"centroids", r.centroids},
             {"inertia", r.inertia},
             {"inertia_trace", r.inertia_trace},
             {"restarts", r.restarts},
             {"representatives", r.representatives}};
}

void from_json(const json& j, ClusterResult& r) {
    r.k = j.at("k").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ids = j.at("ids").get<std::vector<std::string>>();
    r.assignments = j.at("assignments").get<std::vector<int>>();
    r.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    r.inertia = j.at("inertia").get<double>();
    r.inertia_trace = j.value("inertia_trace", std::vector<double>{});
    r.restarts = j.value("restarts", 0);
    r.representatives = j.value("representatives", std::vector<std::vector<std::string>>{});
}

ClusterResult kmeans(const std::vector<std::string>& ids, const std::vector<std::vector<double>>& latents, int k,
                     std::uint64_t seed, const KMeansOptions& options) {
    if (k < kMinClusters || k > kMaxClusters) {
        throw validation_error("K=" + std::to_string(k) + " is outside the allowed range 2-20");
    }
    const std::size_t n = ids.size();
    if (latents.size() != n) throw validation_error("kmeans: ids and latents differ in length");
    if (n < static_cast<std::size_t>(k)) {
        throw validation_error("kmeans needs at least K points (n=" + std::to_string(n) + ", K=" + std::to_string(k) +
                               ")");
    }
    if (options.restarts < 1 || options.max_iterations < 1) throw validation_error("kmeans options must be >= 1");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = latents[order[i]];
    for (std::size_t i = 1; i < n; ++i) {
        if (ids[order[i]] == ids[order[i - 1]]) throw validation_error("duplicate id '" + ids[order[i]] + "'");
        if (x[i].size() != x[0].size()) throw validation_error("kmeans: latent dimensions differ");
    }

    LloydRun best;
    bool have = false;
    for (int r = 0; r < options.restarts; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        LloydRun run = lloyd(x, k, rng, options.max_iterations);
        if (!have || run.inertia < best.inertia) {
            best = std::move(run);
            have = true;
        }
    }

    ClusterResult out;
    out.k = k;
    out.seed = seed;
    out.ids = ids;
    out.assignments.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) out.assignments[order[i]] = best.assign[i];
    out.centroids = best.centroids;
    out.inertia = best.inertia;
    out.inertia_trace = best.trace;
    out.restarts = options.restarts;
    out.representatives = representatives(out, latents, options.representatives);
    return out;
}

std::vector<std::vector<std::string>> representatives(const ClusterResult& result,
                                                      const std::vector<std::vector<double>>& latents, int n) {
    if (n < 1) throw validation_error("representative count must be >= 1");
    std::vector<std::vector<std::string>> out(result.k);
    for (int c = 0; c < result.k; ++c) {
        std::vector<std::pair<double, std::string>> members;
        for (std::size_t i = 0; i < result.ids.size(); ++i) {
            if (result.assignments[i] == c) {
                members.emplace_back(std::sqrt(sqdist(latents[i], result.centroids[c])), result.ids[i]);
            }
        }
        std::sort(members.begin(), members.end());
        const std::size_t take = std::min(members.size(), static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < take; ++i) out[c].push_back(members[i].second);
    }
    return out;
}

void to_json(json& j, const StyleStats& s) {
    j = json{{"cluster", s.cluster}, {"mean", s.mean}, {"std", s.stddev}, {"pixel_count", s.pixel_count}};
}

ChannelStats channel_stats(const std::vector<const Image*>& images) {
    ChannelStats s;
    std::size_t count = 0;
    for (const auto* img : images) {
        for (std::size_t p = 0; p < img->pixel_count(); ++p) {
            for (int c = 0; c < 3; ++c) s.mean[c] += img->pixels[p * 3 + c];
        }
        count += img->pixel_count();
    }
    if (count == 0) return s;
    for (auto& m : s.mean) m /= static_cast<double>(count);
    for (const auto* img : images) {
        for (std::size_t p = 0; p < img->pixel_count(); ++p) {
            for (int c = 0; c < 3; ++c) {
                const double d = img->pixels[p * 3 + c] - s.mean[c];
                s.stddev[c] += d * d;
            }
        }
    }
    for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(count));
    return s;
}

StyleStats compute_style_stats(const Dataset& dataset, const ClusterResult& clusters, int cluster_index) {
    if (cluster_index < 0 || cluster_index >= clusters.k) {
        throw validation_error("cluster index " + std::to_string(cluster_index) + " out of range [0," +
                               std::to_string(clusters.k) + ")");
    }
    std::vector<const Image*> images;
    for (const auto& id : clusters.members(cluster_index)) images.push_back(&dataset.at(id).image);
    if (images.empty()) throw validation_error("cluster " + std::to_string(cluster_index) + " is empty");
    const auto cs = channel_stats(images);
    StyleStats s;
    s.cluster = cluster_index;
    s.mean = cs.mean;
    s.stddev = cs.stddev;
    for (const auto* img : images) s.pixel_count += img->pixel_count();
    return s;
}

Image MomentMatchTranslator::apply(const Image& source, const StyleStats& style, std::size_t* clamped) const {
    if (source.pixels.size() != source.pixel_count() * 3) {
        throw validation_error("dimension mismatch: image buffer does not match its height x width x 3");
    }
    const auto src = channel_stats({&source});
    Image out = source;
    std::size_t clipped = 0;
    for (std::size_t p = 0; p < source.pixel_count(); ++p) {
        for (int c = 0; c < 3; ++c) {
            if (!(src.stddev[c] > 1e-9)) continue;  // flat channel: rounding noise, not spread
            const double z = (source.pixels[p * 3 + c] - src.mean[c]) / src.stddev[c];
            const double v = z * style.stddev[c] + style.mean[c];
            const double cv = std::clamp(v, 0.0, 1.0);
            if (cv != v) ++clipped;
            out.pixels[p * 3 + c] = cv;
        }
    }
    if (clamped) *clamped = clipped;
    return out;
}

std::string augmented_id(const std::string& source_id, int cluster, int index) {
    return "aug-" + source_id + "-k" + std::to_string(cluster) + "-" + std::to_string(index);
}

ImageSample translate(const ImageSample& source, const StyleStats& style, const Translator& translator, int index,
                      std::size_t* clamped) {
    ImageSample out;
    out.id = augmented_id(source.id, style.cluster, index);
    out.image = translator.apply(source.image, style, clamped);
    out.label = source.label;
    out.split = Split::Train;
    out.provenance = Provenance::Augmented;
    out.source_id = source.id;
    out.style_cluster = style.cluster;
    out.glyph = source.glyph;
    return out;
}

ImageSample translate(const ImageSample& source, const StyleStats& style) {
    return translate(source, style, MomentMatchTranslator{});
}

std::vector<ImageSample> batch_translate(const std::vector<const ImageSample*>& sources, const StyleStats& style,
                                         int count_per_source, const Translator& translator, int first_index) {
    if (count_per_source < 1) throw validation_error("count per source must be >= 1");
    std::vector<ImageSample> out;
    out.reserve(sources.size() * static_cast<std::size_t>(count_per_source));
    for (const auto* s : sources) {
        for (int i = 0; i < count_per_source; ++i) out.push_back(translate(*s, style, translator, first_index + i));
    }
    return out;
}

std::vector<ImageSample> batch_translate(const std::vector<const ImageSample*>& sources, const StyleStats& style,
                                         int count_per_source) {
    return batch_translate(sources, style, count_per_source, MomentMatchTranslator{});
}

}  // namespace dash
