#pragma once

// Landmark-based accuracy: relative target registration error (rTRE) and
// per-pair summaries.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "histreg/image.hpp"

namespace histreg::eval {

struct LandmarkSet {
    std::vector<int> ids;
    std::vector<Point2> points;  // full-resolution pixels

    std::size_t size() const noexcept { return points.size(); }
};

struct PairEvaluation {
    std::vector<double> rtre_per_landmark;
    double median_rtre = 0.0;
    double mean_rtre = 0.0;
    double max_rtre = 0.0;
    double median_rtre_before = 0.0;
    double improved_fraction = 0.0;  // landmarks whose rTRE strictly decreased
    bool improved = false;           // median decreased
    double diagonal = 0.0;
};

// Header line, then `id,x,y` rows. An empty id column falls back to the row index.
LandmarkSet read_landmarks(std::istream& in);
LandmarkSet read_landmarks(const std::filesystem::path& path);
void write_landmarks(std::ostream& out, const LandmarkSet& set);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& set);

double image_diagonal(int width, int height) noexcept;

// Per-landmark |warped - reference| / diagonal.
std::vector<double> rtre(std::span<const Point2> warped, std::span<const Point2> reference, double diagonal);
// As above, additionally requiring matching ids.
std::vector<double> rtre(const LandmarkSet& warped, const LandmarkSet& reference, double diagonal);

// Even-length lists take the mean of the two central values. Throws on empty input.
double median(std::vector<double> values);

PairEvaluation pair_summary(std::span<const double> rtres_before, std::span<const double> rtres_after);

std::vector<Point2> scale_landmarks(std::span<const Point2> pts, double scale);

// Maps target landmarks (full resolution) through a working-resolution
// backward field into source space, back at full resolution.
std::vector<Point2> warp_landmarks(const DisplacementField& field, double scale_to_full,
                                   std::span<const Point2> target_full);

// Carries source landmarks into target space by solving q + d(q) = p with a
// damped Newton iteration on the backward field (the field is not inverted
// globally). Full-resolution coordinates in and out.
std::vector<Point2> map_source_landmarks(const DisplacementField& field, double scale_to_full,
                                         std::span<const Point2> source_full);

}  // namespace histreg::eval
