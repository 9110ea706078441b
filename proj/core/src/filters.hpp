#pragma once

// Separable Gaussian filtering over raw row-major buffers (replicated border).

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace histreg::detail {

inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

// In-place separable convolution; scratch is resized as needed.
template <typename T>
void convolve_separable(std::span<T> data, int width, int height, const std::vector<double>& kernel,
                        std::vector<double>& scratch) {
    if (kernel.size() <= 1 || width == 0 || height == 0) return;
    const int radius = static_cast<int>(kernel.size() / 2);
    scratch.resize(data.size());
    std::vector<double> line(static_cast<std::size_t>(std::max(width, height) + 2 * radius));

    // Both passes accumulate whole shifted rows so the inner loops vectorise.
    const auto w = static_cast<std::size_t>(width);
    for (int y = 0; y < height; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int i = 0; i < width + 2 * radius; ++i) {
            const int x = std::clamp(i - radius, 0, width - 1);
            line[static_cast<std::size_t>(i)] = static_cast<double>(data[row + static_cast<std::size_t>(x)]);
        }
        double* dst = scratch.data() + row;
        std::fill(dst, dst + w, 0.0);
        for (std::size_t k = 0; k < kernel.size(); ++k) {
            const double kv = kernel[k];
            const double* src = line.data() + k;
            for (std::size_t x = 0; x < w; ++x) dst[x] += kv * src[x];
        }
    }
    std::vector<double> acc(w);
    for (int y = 0; y < height; ++y) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int k = 0; k < static_cast<int>(kernel.size()); ++k) {
            const int yy = std::clamp(y + k - radius, 0, height - 1);
            const double kv = kernel[static_cast<std::size_t>(k)];
            const double* src = scratch.data() + static_cast<std::size_t>(yy) * w;
            for (std::size_t x = 0; x < w; ++x) acc[x] += kv * src[x];
        }
        T* dst = data.data() + static_cast<std::size_t>(y) * w;
        for (std::size_t x = 0; x < w; ++x) dst[x] = static_cast<T>(acc[x]);
    }
}

template <typename T>
void gaussian_filter(std::span<T> data, int width, int height, double sigma) {
    if (!(sigma > 0.0)) return;
    std::vector<double> scratch;
    convolve_separable(data, width, height, gaussian_kernel(sigma), scratch);
}

// Central differences (one-sided at the border).
template <typename T>
void gradient(std::span<T> data, int width, int height, std::span<double> gx,
              std::span<double> gy) {
    const auto at = [&](int x, int y) {
        return static_cast<double>(data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                                        static_cast<std::size_t>(x)]);
    };
    std::size_t i = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x, ++i) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, width - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, height - 1);
            gx[i] = xp > xm ? (at(xp, y) - at(xm, y)) / (xp - xm) : 0.0;
            gy[i] = yp > ym ? (at(x, yp) - at(x, ym)) / (yp - ym) : 0.0;
        }
    }
}

}  // namespace histreg::detail
