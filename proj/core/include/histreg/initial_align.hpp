#pragma once

// Initial similarity alignment: a feature/RANSAC path scored by mask Dice, and
// a centroid + rotation search + global affine fallback. Transforms map target
// (fixed) coordinates into source (moving) coordinates.

#include <optional>
#include <vector>

#include "histreg/features.hpp"
#include "histreg/preprocess.hpp"

namespace histreg::align {

inline constexpr double kDiceAcceptance = 0.85;

enum class AlignMethod { feature, centroid_rotation, identity_fallback };
enum class AlignStatus { ok, fail_detected };

std::string_view to_string(AlignMethod method) noexcept;
std::string_view to_string(AlignStatus status) noexcept;

struct FeatureCandidate {
    DetectorKind kind = DetectorKind::blob_scale_space;
    MatchSet good_matches;                 // ratio-test survivors, before RANSAC
    std::optional<Affine2D> transform;     // empty when RANSAC found no consensus
    MatchSet inliers;
    double dice = 0.0;
};

struct InitialAlignmentResult {
    Affine2D transform;
    double dice_score = 0.0;
    AlignMethod method = AlignMethod::identity_fallback;
    std::optional<DetectorKind> detector_kind;
    MatchSet inlier_matches;
    AlignStatus status = AlignStatus::fail_detected;
    // Every detector's pre-RANSAC good matches; the TPS engine pools them.
    std::vector<MatchSet> good_matches;
    std::vector<FeatureCandidate> candidates;
    bool affine_diverged = false;
};

struct InitialAlignmentOptions {
    double dice_threshold = kDiceAcceptance;
    RansacOptions ransac;
    double angle_step_degrees = 1.0;
    int affine_iterations = 100;
    double affine_step = 1.0;
    bool parallel_detectors = true;
};

InitialAlignmentResult feature_alignment(const preprocess::PreprocessedPair& pair,
                                         const InitialAlignmentOptions& options = {});

// Dice of the target mask against the source mask pulled back through `a`.
double transform_dice(const BinaryMask& source_mask, const BinaryMask& target_mask,
                      const Affine2D& a);

struct RotationSearch {
    Affine2D transform;
    double best_angle_degrees = 0.0;
    double best_dice = 0.0;
    std::vector<double> dice_per_angle;  // index k <-> angle k * step
};

// Throws Error(empty_input) for an empty mask.
RotationSearch centroid_rotation_search(const BinaryMask& source_mask, const BinaryMask& target_mask,
                                        double angle_step_degrees = 1.0);
Affine2D centroid_rotation_alignment(const BinaryMask& source_mask, const BinaryMask& target_mask,
                                     double angle_step_degrees = 1.0);

struct GlobalAffineResult {
    Affine2D transform;
    double ssd = 0.0;
    bool diverged = false;
    int iterations = 0;
};

inline constexpr int kIntensityTile = 64;

// Minimises sum((c_t * source(A p) + b_t - target(p))^2) over the six affine
// parameters, with per-tile contrast/brightness (c_t, b_t) refit each iteration.
GlobalAffineResult global_affine_ssd(const Image& source, const Image& target, const Affine2D& init,
                                     int iterations = 100, double step_size = 1.0);

InitialAlignmentResult initial_alignment(const preprocess::PreprocessedPair& pair,
                                         const InitialAlignmentOptions& options = {});

}  // namespace histreg::align
