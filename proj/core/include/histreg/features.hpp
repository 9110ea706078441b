#pragma once

// Keypoint detection, descriptor matching and robust similarity estimation.

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "histreg/image.hpp"

namespace histreg::align {

// Three detector/descriptor families: a scale-space blob detector with a float
// descriptor, a fast corner detector with a binary descriptor, and a
// Hessian-determinant blob detector with a float descriptor.
enum class DetectorKind { blob_scale_space, fast_binary, hessian_blob };

inline constexpr std::array<DetectorKind, 3> kAllDetectors{
    DetectorKind::blob_scale_space, DetectorKind::fast_binary, DetectorKind::hessian_blob};

std::string_view to_string(DetectorKind kind) noexcept;

using FloatDescriptor = std::vector<float>;
using BinaryDescriptor = std::vector<std::uint8_t>;
using Descriptor = std::variant<FloatDescriptor, BinaryDescriptor>;

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double scale = 1.0;
    double orientation = 0.0;  // radians
    double response = 0.0;
    Descriptor descriptor;
};

struct Match {
    Keypoint source;
    Keypoint target;
    double distance = 0.0;
};

struct MatchSet {
    DetectorKind detector_kind = DetectorKind::blob_scale_space;
    std::vector<Match> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
};

struct PointPair {
    Point2 from;
    Point2 to;
};

inline constexpr std::size_t kMaxKeypoints = 5000;
inline constexpr double kRatioTest = 0.75;

// Deterministic for a given image. Throws Error(too_small) below 64x64.
std::vector<Keypoint> detect_features(const Image& img, DetectorKind kind,
                                      std::size_t max_keypoints = kMaxKeypoints);

// Euclidean distance for float descriptors, Hamming distance for binary ones.
double descriptor_distance(const Descriptor& a, const Descriptor& b);

// Mutual nearest neighbours passing best/second-best < ratio. Throws
// Error(empty_input) when either side is empty.
MatchSet match_features(std::span<const Keypoint> source, std::span<const Keypoint> target,
                        DetectorKind kind = DetectorKind::blob_scale_space,
                        double ratio = kRatioTest);

// Least-squares similarity mapping pair.from onto pair.to.
Affine2D estimate_similarity(std::span<const PointPair> pairs, bool allow_reflection = false);

struct RansacOptions {
    int iterations = 2000;
    double inlier_tolerance = 5.0;  // pixels
    std::size_t min_consensus = 6;
    std::uint64_t seed = 0;
};

struct RansacResult {
    Affine2D transform;
    MatchSet inliers;
    double inlier_rms = 0.0;
};

// Fits a similarity mapping target keypoints onto source keypoints (the
// backward convention used by displacement fields). Throws
// Error(no_consensus) when no hypothesis reaches min_consensus inliers.
RansacResult ransac_similarity(const MatchSet& matches, const RansacOptions& options);

std::vector<PointPair> target_to_source_pairs(const MatchSet& matches);

}  // namespace histreg::align
