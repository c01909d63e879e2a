#include "dash/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
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

/// Entropy (nats) of row i at precision beta; fills row with normalized p.
double row_entropy(const std::vector<double>& d, std::size_t i, double beta, double dmin, std::vector<double>& row) {
    const std::size_t n = d.size();
    double sum = 0.0;
    double weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            row[j] = 0.0;
            continue;
        }
        const double shifted = d[j] - dmin;
        row[j] = std::exp(-beta * shifted);
        sum += row[j];
        weighted += row[j] * shifted;
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    return std::log(sum) + beta * weighted / sum;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) kl += p[k] * std::log(std::max(p[k], 1e-300) / std::max(q[k], 1e-300));
    }
    return kl;
}

/// Student-t joint Q for the current embedding; also returns the unnormalized kernel.
double student_q(const std::vector<Point2>& y, std::vector<double>& num, std::vector<double>& q) {
    const std::size_t n = y.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num[i * n + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y[i].x - y[j].x;
            const double dy = y[i].y - y[j].y;
            const double v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    for (std::size_t k = 0; k < n * n; ++k) q[k] = num[k] / total;
    return total;
}

}  // namespace

double default_perplexity(std::size_t n) {
    const double p = std::min(30.0, std::floor((static_cast<double>(n) - 1.0) / 3.0));
    return std::max(1.0, p);
}

void to_json(json& j, const ProjectionResult& r) {
    json pts = json::array();
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
        pts.push_back({{"id", r.ids[i]}, {"x", r.points[i].x}, {"y", r.points[i].y}});
    }
    j = json{{"points", pts},
             {"perplexity", r.perplexity},
             {"iterations", r.iterations},
             {"initial_kl", r.initial_kl},
             {"final_kl", r.final_kl},
             {"seed", r.seed},
             {"max_perplexity_error", r.max_perplexity_error}};
}

Affinities compute_affinities(const std::vector<std::vector<double>>& latents, double perplexity) {
    const std::size_t n = latents.size();
    Affinities a;
    a.n = n;
    a.conditional.assign(n * n, 0.0);
    a.joint.assign(n * n, 0.0);
    a.log2_perplexity_error.assign(n, 0.0);
    const double target = std::log(perplexity);

    std::vector<double> d(n);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            d[j] = i == j ? 0.0 : sqdist(latents[i], latents[j]);
            if (j != i) dmin = std::min(dmin, d[j]);
        }
        double beta = 1.0;
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double h = row_entropy(d, i, beta, dmin, row);
        for (int iter = 0; iter < 200 && std::abs(h - target) > 1e-10; ++iter) {
            if (h > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = row_entropy(d, i, beta, dmin, row);
        }
        a.log2_perplexity_error[i] = std::abs(h - target) / std::log(2.0);
        std::copy(row.begin(), row.end(), a.conditional.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            a.joint[i * n + j] = (a.conditional[i * n + j] + a.conditional[j * n + i]) / (2.0 * n);
        }
    }
    return a;
}

ProjectionResult tsne(const std::vector<std::string>& ids_in, const std::vector<std::vector<double>>& latents_in,
                      const TsneOptions& options) {
    const std::size_t n = ids_in.size();
    if (latents_in.size() != n) throw validation_error("tsne: ids and latents differ in length");
    if (n < 2) throw validation_error("tsne needs at least 2 points (got " + std::to_string(n) + ")");
    const double perplexity = options.perplexity.value_or(default_perplexity(n));
    if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n)) {
        throw validation_error("perplexity must satisfy 0 < perplexity < n",
                               "perplexity=" + std::to_string(perplexity) + ", n=" + std::to_string(n));
    }
    if (options.iterations < 1) throw validation_error("tsne iterations must be >= 1");

    // canonical order
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids_in[a] < ids_in[b]; });
    for (std::size_t k = 1; k < n; ++k) {
        if (ids_in[order[k]] == ids_in[order[k - 1]]) throw validation_error("duplicate id '" + ids_in[order[k]] + "'");
    }
    std::vector<std::vector<double>> latents(n);
    for (std::size_t k = 0; k < n; ++k) latents[k] = latents_in[order[k]];

    const Affinities aff = compute_affinities(latents, perplexity);
    const std::vector<double>& p = aff.joint;

    Rng rng(options.seed);
    std::vector<Point2> y(n);
    for (auto& pt : y) {
        pt.x = rng.normal(0.0, 1e-4);
        pt.y = rng.normal(0.0, 1e-4);
    }

    std::vector<double> num(n * n), q(n * n);
    student_q(y, num, q);
    const double initial_kl = kl_divergence(p, q);

    std::vector<Point2> update(n), gains(n, {1.0, 1.0}), grad(n);
    for (int iter = 0; iter < options.iterations; ++iter) {
        const double exag = iter < options.exaggeration_iterations ? options.exaggeration : 1.0;
        const double momentum = iter < 250 ? 0.5 : 0.8;
        student_q(y, num, q);
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double m = (exag * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                gx += m * (y[i].x - y[j].x);
                gy += m * (y[i].y - y[j].y);
            }
            grad[i] = {4.0 * gx, 4.0 * gy};
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto step = [&](double g, double& gain, double& upd, double& coord) {
                gain = ((g > 0.0) != (upd > 0.0)) ? gain + 0.2 : gain * 0.8;
                gain = std::max(gain, 0.01);
                upd = momentum * upd - options.learning_rate * gain * g;
                coord += upd;
            };
            step(grad[i].x, gains[i].x, update[i].x, y[i].x);
            step(grad[i].y, gains[i].y, update[i].y, y[i].y);
        }
        double cx = 0.0, cy = 0.0;
        for (const auto& pt : y) {
            cx += pt.x;
            cy += pt.y;
        }
        cx /= n;
        cy /= n;
        for (auto& pt : y) {
            pt.x -= cx;
            pt.y -= cy;
        }
    }
    student_q(y, num, q);

    ProjectionResult r;
    r.ids = ids_in;
    r.points.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.points[order[k]] = y[k];
    r.perplexity = perplexity;
    r.iterations = options.iterations;
    r.initial_kl = initial_kl;
    r.final_kl = kl_divergence(p, q);
    r.seed = options.seed;
    r.max_perplexity_error = *std::max_element(aff.log2_perplexity_error.begin(), aff.log2_perplexity_error.end());
    for (const auto& pt : r.points) {
        if (!std::isfinite(pt.x) || !std::isfinite(pt.y)) throw compute_error("tsne produced non-finite coordinates");
    }
    return r;
}

double DensityField::integral() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * cell_width() * cell_height();
}

double DensityField::peak() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

void to_json(json& j, const DensityField& f) {
    j = json{{"extent", {{"x_min", f.x_min}, {"x_max", f.x_max}, {"y_min", f.y_min}, {"y_max", f.y_max}}},
             {"resolution", f.resolution},
             {"bandwidth", f.bandwidth},
             {"values", f.values}};
}

double scott_bandwidth(const std::vector<Point2>& points) {
    const double n = static_cast<double>(points.size());
    if (points.size() < 2) return 1.0;
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0;
    for (const auto& p : points) {
        vx += (p.x - mx) * (p.x - mx);
        vy += (p.y - my) * (p.y - my);
    }
    const double sigma = 0.5 * (std::sqrt(vx / (n - 1)) + std::sqrt(vy / (n - 1)));
    if (!(sigma > 0.0)) return 1.0;
    return std::pow(n, -1.0 / 6.0) * sigma;
}

DensityField density_grid(const std::vector<Point2>& points, std::optional<double> bandwidth, int resolution) {
    if (points.empty()) throw validation_error("density_grid needs at least one point");
    const double h = bandwidth.value_or(scott_bandwidth(points));
    if (!(h > 0.0) || !std::isfinite(h)) throw validation_error("bandwidth must be > 0");
    if (resolution < 2) throw validation_error("resolution must be >= 2");

    DensityField f;
    f.resolution = resolution;
    f.bandwidth = h;
    f.x_min = f.x_max = points[0].x;
    f.y_min = f.y_max = points[0].y;
    for (const auto& p : points) {
        f.x_min = std::min(f.x_min, p.x);
        f.x_max = std::max(f.x_max, p.x);
        f.y_min = std::min(f.y_min, p.y);
        f.y_max = std::max(f.y_max, p.y);
    }
    f.x_min -= 3 * h;
    f.x_max += 3 * h;
    f.y_min -= 3 * h;
    f.y_max += 3 * h;

    const double cw = f.cell_width();
    const double ch = f.cell_height();
    const double inv = 1.0 / (h * std::sqrt(2.0));
    // per-point, per-axis mass of each cell column/row; the 2D kernel is separable
    std::vector<double> mx(resolution), my(resolution);
    f.values.assign(static_cast<std::size_t>(resolution) * resolution, 0.0);
    const double weight = 1.0 / (static_cast<double>(points.size()) * cw * ch);
    for (const auto& p : points) {
        for (int k = 0; k < resolution; ++k) {
            const double x0 = f.x_min + k * cw;
            const double y0 = f.y_min + k * ch;
            mx[k] = 0.5 * (std::erf((x0 + cw - p.x) * inv) - std::erf((x0 - p.x) * inv));
            my[k] = 0.5 * (std::erf((y0 + ch - p.y) * inv) - std::erf((y0 - p.y) * inv));
        }
        for (int r = 0; r < resolution; ++r) {
            for (int c = 0; c < resolution; ++c) {
                f.values[static_cast<std::size_t>(r) * resolution + c] += weight * my[r] * mx[c];
            }
        }
    }
    return f;
}

void to_json(json& j, const ContourLevel& c) {
    json lines = json::array();
    for (const auto& line : c.polylines) {
        json pts = json::array();
        for (const auto& p : line) pts.push_back({p.x, p.y});
        lines.push_back(pts);
    }
    j = json{{"fraction", c.fraction}, {"threshold", c.threshold}, {"polylines", lines}};
}

std::vector<ContourLevel> density_contours(const DensityField& field, const std::vector<double>& fractions) {
    std::vector<ContourLevel> out;
    const int n = field.resolution;
    const double cw = field.cell_width();
    const double ch = field.cell_height();
    auto center = [&](int r, int c) { return Point2{field.x_min + (c + 0.5) * cw, field.y_min + (r + 0.5) * ch}; };

    for (double frac : fractions) {
        ContourLevel level;
        level.fraction = frac;
        level.threshold = frac * field.peak();
        const double t = level.threshold;

        using EdgeKey = int;  // unique id of a grid edge
        std::vector<std::pair<EdgeKey, EdgeKey>> segments;
        std::map<EdgeKey, Point2> edge_point;
        auto hedge = [&](int r, int c) { return r * (n + 1) + c; };                   // between (r,c)-(r,c+1)
        auto vedge = [&](int r, int c) { return (n + 1) * (n + 1) + r * (n + 1) + c; };  // between (r,c)-(r+1,c)
        auto interp = [&](Point2 a, Point2 b, double va, double vb) {
            const double s = (t - va) / (vb - va);
            return Point2{a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)};
        };

        for (int r = 0; r + 1 < n; ++r) {
            for (int c = 0; c + 1 < n; ++c) {
                const double v00 = field.at(r, c), v01 = field.at(r, c + 1);
                const double v10 = field.at(r + 1, c), v11 = field.at(r + 1, c + 1);
                const Point2 p00 = center(r, c), p01 = center(r, c + 1);
                const Point2 p10 = center(r + 1, c), p11 = center(r + 1, c + 1);
                const int code = (v00 >= t) | ((v01 >= t) << 1) | ((v11 >= t) << 2) | ((v10 >= t) << 3);
                if (code == 0 || code == 15) continue;

                // edges: bottom(0) p00-p01, right(1) p01-p11, top(2) p10-p11, left(3) p00-p10
                const EdgeKey keys[4] = {hedge(r, c), vedge(r, c + 1), hedge(r + 1, c), vedge(r, c)};
                auto point_on = [&](int e) {
                    switch (e) {
                        case 0: return interp(p00, p01, v00, v01);
                        case 1: return interp(p01, p11, v01, v11);
                        case 2: return interp(p10, p11, v10, v11);
                        default: return interp(p00, p10, v00, v10);
                    }
                };
                auto add = [&](int e1, int e2) {
                    edge_point[keys[e1]] = point_on(e1);
                    edge_point[keys[e2]] = point_on(e2);
                    segments.emplace_back(keys[e1], keys[e2]);
                };
                const double mid = 0.25 * (v00 + v01 + v10 + v11);
                switch (code) {
                    case 1: case 14: add(3, 0); break;
                    case 2: case 13: add(0, 1); break;
                    case 3: case 12: add(3, 1); break;
                    case 4: case 11: add(1, 2); break;
                    case 6: case 9: add(0, 2); break;
                    case 7: case 8: add(3, 2); break;
                    case 5:
                        if (mid >= t) { add(3, 2); add(0, 1); } else { add(3, 0); add(1, 2); }
                        break;
                    case 10:
                        if (mid >= t) { add(3, 0); add(1, 2); } else { add(0, 1); add(3, 2); }
                        break;
                    default: break;
                }
            }
        }

        // chain segments into polylines
        std::multimap<EdgeKey, std::size_t> by_edge;
        for (std::size_t s = 0; s < segments.size(); ++s) {
            by_edge.emplace(segments[s].first, s);
            by_edge.emplace(segments[s].second, s);
        }
        std::vector<bool> used(segments.size(), false);
        auto next_segment = [&](const EdgeKey& at) -> std::ptrdiff_t {
            auto [lo, hi] = by_edge.equal_range(at);
            for (auto it = lo; it != hi; ++it) {
                if (!used[it->second]) return static_cast<std::ptrdiff_t>(it->second);
            }
            return -1;
        };
        for (std::size_t s = 0; s < segments.size(); ++s) {
            if (used[s]) continue;
            used[s] = true;
            std::vector<EdgeKey> chain{segments[s].first, segments[s].second};
            for (int dir = 0; dir < 2; ++dir) {
                while (true) {
                    const EdgeKey end = chain.back();
                    const auto nxt = next_segment(end);
                    if (nxt < 0) break;
                    used[nxt] = true;
                    const auto& seg = segments[nxt];
                    chain.push_back(seg.first == end ? seg.second : seg.first);
                }
                std::reverse(chain.begin(), chain.end());
            }
            std::vector<Point2> line;
            for (const auto& k : chain) line.push_back(edge_point[k]);
            level.polylines.push_back(std::move(line));
        }
        out.push_back(std::move(level));
    }
    return out;
}

namespace {

bool on_segment(const Point2& p, const Point2& a, const Point2& b) {
    const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    const double scale = std::max({std::abs(b.x - a.x), std::abs(b.y - a.y), 1.0});
    if (std::abs(cross) > 1e-12 * scale * scale) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) && p.y >= std::min(a.y, b.y) &&
           p.y <= std::max(a.y, b.y);
}

}  // namespace

std::vector<std::string> lasso_select(const std::vector<std::string>& ids, const std::vector<Point2>& points,
                                      const std::vector<Point2>& polygon) {
    if (polygon.size() < 3) {
        throw validation_error("degenerate polygon: need at least 3 vertices (got " + std::to_string(polygon.size()) +
                               ")");
    }
    if (ids.size() != points.size()) throw validation_error("lasso_select: ids and points differ in length");
    std::vector<std::string> out;
    const std::size_t m = polygon.size();
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point2& p = points[i];
        bool inside = false;
        bool boundary = false;
        for (std::size_t a = 0, b = m - 1; a < m; b = a++) {
            const Point2& pa = polygon[a];
            const Point2& pb = polygon[b];
            if (on_segment(p, pa, pb)) {
                boundary = true;
                break;
            }
            if ((pa.y > p.y) != (pb.y > p.y)) {
                const double xcross = pa.x + (p.y - pa.y) * (pb.x - pa.x) / (pb.y - pa.y);
                if (p.x < xcross) inside = !inside;
            }
        }
        if (inside && !boundary) out.push_back(ids[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace dash
