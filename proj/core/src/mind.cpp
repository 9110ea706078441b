#include "histreg/mind.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "filters.hpp"

namespace histreg::nonrigid {

MindDescriptorField::MindDescriptorField(int width, int height)
    : width_(width), height_(height),
      values_(static_cast<std::size_t>(kMindChannels) * static_cast<std::size_t>(width) *
                  static_cast<std::size_t>(height),
              1.0f) {}

namespace {

std::vector<double> patch_kernel(int radius, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = sigma > 0.0 ? std::exp(-0.5 * i * i / (sigma * sigma)) : (i == 0 ? 1.0 : 0.0);
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

}  // namespace

MindDescriptorField mind_descriptor(const Image& img, const MindOptions& options) {
    const int w = img.width();
    const int h = img.height();
    if (w < 16 || h < 16) throw Error(ErrorCode::too_small, "mind_descriptor: image must be at least 16x16");
    const std::size_t n = img.size();
    const auto px = img.pixels();
    const auto uw = static_cast<std::size_t>(w);

    const std::vector<double> kernel = patch_kernel(options.patch_radius, options.patch_sigma);
    std::vector<double> distance(static_cast<std::size_t>(kMindChannels) * n);
    std::vector<double> scratch;
    for (int c = 0; c < kMindChannels; ++c) {
        const auto [ox, oy] = kMindOffsets[static_cast<std::size_t>(c)];
        const std::span<double> d(distance.data() + static_cast<std::size_t>(c) * n, n);
        for (int y = 0; y < h; ++y) {
            const float* row = px.data() + static_cast<std::size_t>(y) * uw;
            const float* other = px.data() + static_cast<std::size_t>(std::clamp(y + oy, 0, h - 1)) * uw;
            double* out_row = d.data() + static_cast<std::size_t>(y) * uw;
            // Interior columns need no clamping.
            const int lo = std::max(0, -ox);
            const int hi = std::min(w, w - ox);
            for (int x = lo; x < hi; ++x) {
                const double diff = static_cast<double>(row[x]) - other[x + ox];
                out_row[x] = diff * diff;
            }
            for (int x : {0, w - 1}) {
                const double diff = static_cast<double>(row[x]) - other[std::clamp(x + ox, 0, w - 1)];
                out_row[x] = diff * diff;
            }
        }
        detail::convolve_separable(d, w, h, kernel, scratch);
    }

    MindDescriptorField out(w, h);
    std::array<float*, kMindChannels> channels;
    std::array<const double*, kMindChannels> dist;
    for (int c = 0; c < kMindChannels; ++c) {
        channels[static_cast<std::size_t>(c)] = out.channel(c).data();
        dist[static_cast<std::size_t>(c)] = distance.data() + static_cast<std::size_t>(c) * n;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        double lowest = dist[0][i];
        for (int c = 0; c < kMindChannels; ++c) {
            const double d = dist[static_cast<std::size_t>(c)][i];
            mean += d;
            lowest = std::min(lowest, d);
        }
        const double inv_variance = 1.0 / std::max(mean / kMindChannels, options.variance_floor);
        // exp(-D/V) divided by its channel maximum exp(-min D/V).
        for (int c = 0; c < kMindChannels; ++c) {
            channels[static_cast<std::size_t>(c)][i] =
                std::exp(static_cast<float>(-(dist[static_cast<std::size_t>(c)][i] - lowest) * inv_variance));
        }
    }
    return out;
}

double descriptor_ssd_at(const MindDescriptorField& a, const MindDescriptorField& b, std::size_t i) noexcept {
    double s = 0.0;
    for (int c = 0; c < kMindChannels; ++c) {
        const double d = static_cast<double>(a.channel(c)[i]) - static_cast<double>(b.channel(c)[i]);
        s += d * d;
    }
    return s;
}

}  // namespace histreg::nonrigid
