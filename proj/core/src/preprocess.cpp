#include "histreg/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "filters.hpp"

namespace histreg::preprocess {

namespace {

constexpr int kBins = 256;

int bin_of(float v) noexcept {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<int>(std::lround(c * (kBins - 1)));
}

std::array<double, kBins> normalized_histogram(const Image& img) {
    std::array<double, kBins> h{};
    for (float v : img.pixels()) h[static_cast<std::size_t>(bin_of(v))] += 1.0;
    const double n = static_cast<double>(img.size());
    if (n > 0) {
        for (double& x : h) x /= n;
    }
    return h;
}

// Piecewise-linear CDF through the centres of the occupied bins, valued at the
// bin's mid-mass. `value` and `quantile` are strictly increasing.
struct CdfKnots {
    std::vector<double> value;
    std::vector<double> quantile;
};

CdfKnots midpoint_cdf(const std::array<double, kBins>& hist) {
    CdfKnots k;
    double cumulative = 0.0;
    for (int b = 0; b < kBins; ++b) {
        const double p = hist[static_cast<std::size_t>(b)];
        if (p <= 0.0) continue;
        k.value.push_back(static_cast<double>(b) / (kBins - 1));
        k.quantile.push_back(cumulative + 0.5 * p);
        cumulative += p;
    }
    return k;
}

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + t * (ys[hi] - ys[lo]);
}

float clamped_bilinear(const Image& img, double x, double y) noexcept {
    x = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
    return sample_bilinear(img, x, y);
}

}  // namespace

Image to_grayscale(const RgbImage& rgb) {
    if (rgb.data.size() != static_cast<std::size_t>(rgb.width) * static_cast<std::size_t>(rgb.height)) {
        throw Error(ErrorCode::dimension_mismatch, "to_grayscale: data length does not match dimensions");
    }
    std::vector<float> out(rgb.data.size());
    std::transform(rgb.data.begin(), rgb.data.end(), out.begin(), [](const std::array<float, 3>& c) {
        return static_cast<float>(0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]);
    });
    return Image(rgb.width, rgb.height, std::move(out));
}

Image gaussian_smooth(const Image& img, double sigma) {
    if (sigma < 0.0) throw Error(ErrorCode::degenerate_input, "gaussian_smooth: negative sigma");
    Image out = img;
    detail::gaussian_filter(out.pixels(), out.width(), out.height(), sigma);
    return out;
}

double policy_scale(int width, int height, const ResolutionPolicy& policy) {
    if (policy.size <= 0) throw Error(ErrorCode::degenerate_input, "resolution policy size must be > 0");
    const int side = policy.mode == ResolutionPolicy::Mode::max_side ? std::max(width, height)
                                                                      : std::min(width, height);
    return side > policy.size ? static_cast<double>(side) / policy.size : 1.0;
}

Image resize_by_scale(const Image& img, double scale) {
    if (!(scale > 1.0) || img.empty()) return img;
    const int w = std::max(1, static_cast<int>(std::lround(img.width() / scale)));
    const int h = std::max(1, static_cast<int>(std::lround(img.height() / scale)));
    const Image smooth = gaussian_smooth(img, 0.5 * scale);
    Image out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out(x, y) = clamped_bilinear(smooth, x * scale, y * scale);
    }
    return out;
}

Resized resize_to_policy(const Image& img, const ResolutionPolicy& policy) {
    const double scale = policy_scale(img.width(), img.height(), policy);
    return {resize_by_scale(img, scale), scale};
}

double shannon_entropy(const Image& img) {
    const auto h = normalized_histogram(img);
    double bits = 0.0;
    for (double p : h) {
        if (p > 0.0) bits -= p * std::log2(p);
    }
    return bits;
}

Image match_histogram(const Image& subject, const Image& reference) {
    if (subject.empty() || reference.empty()) {
        throw Error(ErrorCode::empty_input, "match_histogram: empty image");
    }
    const CdfKnots s = midpoint_cdf(normalized_histogram(subject));
    const CdfKnots r = midpoint_cdf(normalized_histogram(reference));

    // Pad the subject curve to [0,1] so values inside the outermost bins still
    // spread across the reference range.
    std::vector<double> sv, sq;
    const double half_bin = 0.5 / (kBins - 1);
    sv.push_back(s.value.front() - half_bin);
    sq.push_back(0.0);
    sv.insert(sv.end(), s.value.begin(), s.value.end());
    sq.insert(sq.end(), s.quantile.begin(), s.quantile.end());
    sv.push_back(s.value.back() + half_bin);
    sq.push_back(1.0);

    Image out(subject.width(), subject.height());
    auto dst = out.pixels();
    const auto src = subject.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double q = interpolate(sv, sq, static_cast<double>(src[i]));
        dst[i] = static_cast<float>(std::clamp(interpolate(r.quantile, r.value, q), 0.0, 1.0));
    }
    return out;
}

EntropyMatched entropy_ordered_match(const Image& a, const Image& b) {
    const double ea = shannon_entropy(a);
    const double eb = shannon_entropy(b);
    if (eb < ea) return {a, match_histogram(b, a), false};
    return {match_histogram(a, b), b, true};
}

Image pad_to(const Image& img, int width, int height) {
    if (img.width() == width && img.height() == height) return img;
    if (width < img.width() || height < img.height()) {
        throw Error(ErrorCode::dimension_mismatch, "pad_to: target smaller than image");
    }
    Image out(width, height, 0.0f);
    for (int y = 0; y < img.height(); ++y) {
        const auto row = img.pixels().subspan(static_cast<std::size_t>(y) * img.width(),
                                              static_cast<std::size_t>(img.width()));
        std::copy(row.begin(), row.end(),
                  out.pixels().begin() + static_cast<std::ptrdiff_t>(y) * width);
    }
    return out;
}

std::pair<Image, Image> pad_to_common(const Image& a, const Image& b) {
    const int w = std::max(a.width(), b.width());
    const int h = std::max(a.height(), b.height());
    return {pad_to(a, w, h), pad_to(b, w, h)};
}

Image invert_intensity(const Image& img) {
    Image out = img;
    for (float& v : out.pixels()) v = 1.0f - v;
    return out;
}

LiThreshold li_threshold(const Image& img) {
    const auto px = img.pixels();
    if (px.empty()) throw Error(ErrorCode::empty_input, "li_threshold: empty image");
    const auto [lo_it, hi_it] = std::minmax_element(px.begin(), px.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) throw Error(ErrorCode::degenerate_input, "li_threshold: constant image");

    // Iterate on the image shifted to a zero minimum.
    const double tolerance = 0.5 / 255.0;
    double mean = 0.0;
    for (float v : px) mean += v - lo;
    mean /= static_cast<double>(px.size());

    double t_next = mean;
    double t_curr = -2.0 * tolerance;
    for (int iter = 0; iter < 1000 && std::abs(t_next - t_curr) > tolerance; ++iter) {
        t_curr = t_next;
        double sum_fore = 0.0, sum_back = 0.0;
        std::size_t n_fore = 0, n_back = 0;
        for (float v : px) {
            const double s = v - lo;
            if (s > t_curr) {
                sum_fore += s;
                ++n_fore;
            } else {
                sum_back += s;
                ++n_back;
            }
        }
        if (n_fore == 0 || n_back == 0) break;
        const double mean_fore = sum_fore / static_cast<double>(n_fore);
        const double mean_back = sum_back / static_cast<double>(n_back);
        if (mean_back == 0.0) break;
        t_next = (mean_back - mean_fore) / (std::log(mean_back) - std::log(mean_fore));
    }

    LiThreshold result;
    result.threshold = t_next + lo;
    result.mask = BinaryMask(img.width(), img.height());
    auto bits = result.mask.bits();
    for (std::size_t i = 0; i < px.size(); ++i) bits[i] = px[i] > result.threshold ? 1 : 0;
    return result;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw Error(ErrorCode::dimension_mismatch, "dice: mask dimensions differ");
    }
    const auto ab = a.bits();
    const auto bb = b.bits();
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < ab.size(); ++i) {
        na += ab[i];
        nb += bb[i];
        both += ab[i] & bb[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace {

BinaryMask mask_or_empty(const Image& img) {
    try {
        return li_threshold(img).mask;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate_input) throw;
        return BinaryMask(img.width(), img.height(), false);
    }
}

}  // namespace

PreprocessedPair preprocess_pair(const Image& source_full, const Image& target_full,
                                 const PreprocessOptions& options) {
    PreprocessedPair out;
    out.canvas_width = std::max(source_full.width(), target_full.width());
    out.canvas_height = std::max(source_full.height(), target_full.height());
    out.scale_to_full = policy_scale(out.canvas_width, out.canvas_height, options.policy);

    const auto prepare = [&](const Image& img) {
        return resize_by_scale(gaussian_smooth(img, options.extra_sigma), out.scale_to_full);
    };
    Image source = prepare(source_full);
    Image target = prepare(target_full);
    const int w = std::max({source.width(), target.width(),
                            static_cast<int>(std::lround(out.canvas_width / out.scale_to_full))});
    const int h = std::max({source.height(), target.height(),
                            static_cast<int>(std::lround(out.canvas_height / out.scale_to_full))});
    // Inversion precedes padding so the padded border reads as background (0).
    const auto finish = [w, h](const Image& img) { return pad_to(invert_intensity(img), w, h); };

    // Masks come from each image's own intensities: matching can push the
    // tail of one image's background noise into the other's tissue range.
    out.source_mask = mask_or_empty(finish(source));
    out.target_mask = mask_or_empty(finish(target));

    if (options.histogram_match) {
        auto matched = entropy_ordered_match(source, target);
        source = std::move(matched.first);
        target = std::move(matched.second);
        out.histogram_matched = true;
    }
    out.source = finish(source);
    out.target = finish(target);
    out.inverted = true;
    return out;
}

}  // namespace histreg::preprocess
