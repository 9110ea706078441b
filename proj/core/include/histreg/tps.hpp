#pragma once

// Thin plate spline interpolation of point correspondences.

#include <span>
#include <vector>

#include "histreg/image.hpp"

namespace histreg::nonrigid {

struct TpsModel {
    std::vector<Point2> control_points;
    std::vector<Point2> weights;  // nonlinear coefficients (x and y components)
    Affine2D affine_part;
    double lambda = 0.0;

    Point2 evaluate(Point2 p) const noexcept;
    // Frobenius norm of the nonlinear coefficients.
    double weight_norm() const noexcept;
};

// U(r) = r^2 log r, U(0) = 0.
double tps_kernel(double r) noexcept;

// Fits a spline mapping src_pts[i] onto tgt_pts[i]; lambda is added to the
// kernel diagonal. Throws Error(degenerate_input) for fewer than three,
// duplicate or collinear control points.
TpsModel tps_fit(std::span<const Point2> src_pts, std::span<const Point2> tgt_pts, double lambda);

// Evaluated exactly every `grid_step` pixels and bilinearly in between.
DisplacementField tps_to_field(const TpsModel& model, int width, int height, int grid_step = 1);

// Snaps points to a grid of `cell` pixels and keeps the first pair per cell.
void deduplicate_pairs(std::vector<Point2>& src, std::vector<Point2>& tgt, double cell);

}  // namespace histreg::nonrigid
