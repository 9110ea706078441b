#pragma once

// Pipeline configuration: a flat `key = value` document with namespaced keys
// (e.g. `demons.sigma_fluid = 2`). `#` starts a comment.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "histreg/decision.hpp"
#include "histreg/demons.hpp"
#include "histreg/local_affine.hpp"
#include "histreg/preprocess.hpp"

namespace histreg {

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "histreg_out";
    int candidate_parallelism = 4;  // concurrent engines within one pair
    int jobs = 1;                   // concurrent pairs in a batch

    double extra_sigma = 1.0;
    preprocess::ResolutionPolicy initial_resolution = preprocess::ResolutionPolicy::max_side(2048);
    preprocess::ResolutionPolicy local_affine_resolution = preprocess::ResolutionPolicy::min_side(1024);
    preprocess::ResolutionPolicy demons_resolution = preprocess::ResolutionPolicy::min_side(4096);
    preprocess::ResolutionPolicy mind_demons_resolution = preprocess::ResolutionPolicy::min_side(3000);
    preprocess::ResolutionPolicy tps_resolution = preprocess::ResolutionPolicy::min_side(4096);
    preprocess::ResolutionPolicy decision_resolution = preprocess::ResolutionPolicy::min_side(1024);

    double dice_threshold = 0.85;
    int ransac_iterations = 2000;
    double ransac_tolerance = 5.0;
    int min_consensus = 6;
    double angle_step = 1.0;
    int affine_iterations = 100;
    double affine_step = 1.0;
    bool skip_nonrigid_on_fail = true;

    nonrigid::DemonsParams demons;
    nonrigid::DemonsParams mind_demons;
    nonrigid::LocalAffineParams local_affine;
    double tps_lambda = 10.0;
    double tps_dedup_cell = 2.0;
    int tps_max_points = 1000;
    int tps_grid_step = 4;

    std::vector<decision::Method> engines{decision::Method::local_affine, decision::Method::demons,
                                          decision::Method::mind_demons, decision::Method::tps};
    int checkerboard_tile = 32;
};

// Throws Error(parse) for unknown keys, malformed values or out-of-range settings.
PipelineConfig parse_config(std::istream& in, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
void validate(const PipelineConfig& cfg);

// Every key, in a stable order; parse_config(write_config(c)) reproduces c.
std::string write_config(const PipelineConfig& cfg);

// Same working resolution for every stage; handy for small images and tests.
PipelineConfig desk_scale_config(int working_size);

}  // namespace histreg
