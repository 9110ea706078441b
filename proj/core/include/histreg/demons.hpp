#pragma once

// Symmetric, compositive Demons on intensities and on MIND descriptors.
// Neither variant is diffeomorphic.

#include "histreg/image.hpp"
#include "histreg/mind.hpp"

namespace histreg::nonrigid {

struct DemonsParams {
    int levels = 4;
    int iters_per_level = 50;
    double sigma_fluid = 2.0;
    double sigma_diffusion = 1.0;
    double step_scale = 1.0;
    double normalization_floor = 1e-4;
    double alpha = 1.0;          // weight of the squared residual in the denominator
    double max_step = 2.0;       // pixels per iteration
    double tolerance = 1e-3;     // stop a level once the largest update falls below this
};

struct DemonsTrace {
    // Sums over pixels whose sample lands inside the moving image.
    double initial_ssd = 0.0;
    double final_ssd = 0.0;
    int iterations = 0;
};

DisplacementField demons_register(const Image& fixed, const Image& moving, const DisplacementField& init,
                                  const DemonsParams& params, DemonsTrace* trace = nullptr);

DisplacementField mind_demons_register(const Image& fixed, const Image& moving,
                                       const DisplacementField& init, const DemonsParams& params,
                                       DemonsTrace* trace = nullptr);

}  // namespace histreg::nonrigid
