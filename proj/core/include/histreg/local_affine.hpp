#pragma once

// Hierarchical local affine registration with joint contrast/brightness
// correction and per-pixel missing-data weights. Operates directly on a
// dense field, so an initial transform is reproduced exactly.

#include <vector>

#include "histreg/image.hpp"

namespace histreg::nonrigid {

struct LocalAffineParams {
    // Window edge lengths in pixels, strictly decreasing. Empty means: whole
    // image, then halving down to min_window.
    std::vector<int> level_schedule;
    int min_window = 32;
    int iters_per_level = 5;
    bool intensity_correction = true;
    // Residual scale of the missing-data weights; <= 0 selects
    // 1.4826 * median |residual|, re-estimated every iteration.
    double missing_prob_sigma = 0.0;
    double min_residual_sigma = 0.01;
    double field_smoothing_sigma = 1.0;
    double max_step = 2.0;
    int min_window_pixels = 50;
};

struct LocalAffineResult {
    DisplacementField field;
    Image weights;     // final missing-data weights w(p) in [0,1]; low means missing
    Image contrast;    // accumulated per-pixel contrast correction
    Image brightness;  // accumulated per-pixel brightness correction
    struct Step {
        int level = 0;
        int window = 0;
        double energy_before = 0.0;  // weighted mean r^2 over valid samples, before the update
        double energy_after = 0.0;   // same weights, after the accepted update
        bool accepted = false;
    };
    std::vector<Step> steps;
};

// Window sizes implied by the params for a width x height image.
std::vector<int> window_schedule(const LocalAffineParams& params, int width, int height);

LocalAffineResult local_affine_register_detailed(const Image& fixed, const Image& moving,
                                                 const DisplacementField& init,
                                                 const LocalAffineParams& params);

DisplacementField local_affine_register(const Image& fixed, const Image& moving,
                                        const DisplacementField& init, const LocalAffineParams& params);

}  // namespace histreg::nonrigid
