#pragma once

// Grayscale conversion, smoothing, the per-stage resolution schedule,
// entropy-ordered histogram matching, padding, inversion, Li thresholding
// and Dice overlap.

#include <utility>

#include "histreg/image.hpp"

namespace histreg::preprocess {

struct ResolutionPolicy {
    enum class Mode { max_side, min_side };
    Mode mode = Mode::max_side;
    int size = 2048;

    static ResolutionPolicy max_side(int size) { return {Mode::max_side, size}; }
    static ResolutionPolicy min_side(int size) { return {Mode::min_side, size}; }
};

struct Resized {
    Image image;
    double scale = 1.0;  // full-resolution pixels per working pixel
};

struct LiThreshold {
    double threshold = 0.0;
    BinaryMask mask;  // intensity > threshold
};

struct EntropyMatched {
    Image first;
    Image second;
    bool first_was_matched = true;
};

// ITU-R 601 luminance.
Image to_grayscale(const RgbImage& rgb);

// Separable Gaussian, radius ceil(3 sigma), replicated border; sigma 0 is a no-op.
Image gaussian_smooth(const Image& img, double sigma);

// Downsampling factor the policy implies for a width x height canvas (>= 1).
double policy_scale(int width, int height, const ResolutionPolicy& policy);

// Anti-aliased (sigma = 0.5 * scale) bilinear decimation; never upsamples.
Image resize_by_scale(const Image& img, double scale);
Resized resize_to_policy(const Image& img, const ResolutionPolicy& policy);

// 256-bin Shannon entropy in bits.
double shannon_entropy(const Image& img);

Image match_histogram(const Image& subject, const Image& reference);

// Matches the lower-entropy image to the other; ties match `a` to `b`.
EntropyMatched entropy_ordered_match(const Image& a, const Image& b);

// Zero-pads both images on the right/bottom to the common bounding size.
std::pair<Image, Image> pad_to_common(const Image& a, const Image& b);
Image pad_to(const Image& img, int width, int height);

Image invert_intensity(const Image& img);

// Li minimum cross-entropy threshold. Throws Error(degenerate_input) for constant images.
LiThreshold li_threshold(const Image& img);

// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dice(const BinaryMask& a, const BinaryMask& b);

struct PreprocessOptions {
    ResolutionPolicy policy = ResolutionPolicy::max_side(2048);
    double extra_sigma = 0.0;   // smoothing applied at full resolution before decimation
    bool histogram_match = true;
};

struct PreprocessedPair {
    Image source;
    Image target;
    BinaryMask source_mask;
    BinaryMask target_mask;
    double scale_to_full = 1.0;
    bool histogram_matched = false;
    bool inverted = true;
    int canvas_width = 0;   // full-resolution common canvas
    int canvas_height = 0;
};

// Both images share one downsampling factor, computed on their common canvas,
// so a working pixel has the same physical size in source and target.
PreprocessedPair preprocess_pair(const Image& source_full, const Image& target_full,
                                 const PreprocessOptions& options);

}  // namespace histreg::preprocess
