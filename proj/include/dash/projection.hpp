#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dash {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point2&) const = default;
};

struct TsneOptions {
    std::optional<double> perplexity;  // default min(30, floor((n-1)/3)), at least 1
    int iterations = 500;
    std::uint64_t seed = 0;
    double learning_rate = 200.0;
    double exaggeration = 4.0;
    int exaggeration_iterations = 50;
};

double default_perplexity(std::size_t n);

struct ProjectionResult {
    std::vector<std::string> ids;
    std::vector<Point2> points;
    double perplexity = 0.0;
    int iterations = 0;
    double initial_kl = 0.0;
    double final_kl = 0.0;
    std::uint64_t seed = 0;
    double max_perplexity_error = 0.0;  // max |log2 perp_i - log2 target| over points
};

void to_json(nlohmann::json& j, const ProjectionResult& r);

/// Per-point Gaussian conditionals calibrated to a perplexity, plus the
/// symmetrized joint distribution.
struct Affinities {
    std::size_t n = 0;
    std::vector<double> conditional;  // row i: p(j | i), rows sum to 1
    std::vector<double> joint;        // (P + P^T) / 2n
    std::vector<double> log2_perplexity_error;
};

Affinities compute_affinities(const std::vector<std::vector<double>>& latents, double perplexity);

/// Exact t-SNE. Points are processed in ascending id order internally, so the
/// output is equivariant to input permutations.
ProjectionResult tsne(const std::vector<std::string>& ids, const std::vector<std::vector<double>>& latents,
                      const TsneOptions& options = {});

struct DensityField {
    double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
    int resolution = 0;  // cells per side
    double bandwidth = 0.0;
    std::vector<double> values;  // row-major, y-major; cell-averaged density

    double cell_width() const { return (x_max - x_min) / resolution; }
    double cell_height() const { return (y_max - y_min) / resolution; }
    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * resolution + col]; }
    double integral() const;
    double peak() const;
};

void to_json(nlohmann::json& j, const DensityField& f);

/// Scott's rule for 2D points: n^(-1/6) times the mean axis standard deviation.
double scott_bandwidth(const std::vector<Point2>& points);

/// Isotropic Gaussian KDE on a resolution x resolution grid spanning the
/// bounding box padded by 3 bandwidths. Each cell holds the kernel mass in
/// the cell divided by its area (exact via erf).
DensityField density_grid(const std::vector<Point2>& points, std::optional<double> bandwidth = std::nullopt,
                          int resolution = 64);

struct ContourLevel {
    double fraction = 0.0;   // of peak density
    double threshold = 0.0;
    std::vector<std::vector<Point2>> polylines;
};

void to_json(nlohmann::json& j, const ContourLevel& c);

/// Marching squares over cell centers.
std::vector<ContourLevel> density_contours(const DensityField& field,
                                           const std::vector<double>& fractions = {0.25, 0.5, 0.75});

/// Ids of points strictly inside the polygon (even-odd rule). Points on an
/// edge or vertex are excluded. Result is sorted ascending.
std::vector<std::string> lasso_select(const std::vector<std::string>& ids, const std::vector<Point2>& points,
                                      const std::vector<Point2>& polygon);

}  // namespace dash
