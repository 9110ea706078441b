#pragma once

// Self-similarity (MIND) descriptors over a fixed six-offset neighbourhood.

#include <array>
#include <span>
#include <vector>

#include "histreg/image.hpp"

namespace histreg::nonrigid {

inline constexpr int kMindChannels = 6;
inline constexpr std::array<std::array<int, 2>, kMindChannels> kMindOffsets{
    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}}};

// Channel-planar storage: channel c of pixel i lives at c * width * height + i.
class MindDescriptorField {
public:
    MindDescriptorField() = default;
    MindDescriptorField(int width, int height);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }

    std::span<float> channel(int c) noexcept {
        return std::span<float>(values_).subspan(static_cast<std::size_t>(c) * pixel_count(), pixel_count());
    }
    std::span<const float> channel(int c) const noexcept {
        return std::span<const float>(values_).subspan(static_cast<std::size_t>(c) * pixel_count(),
                                                       pixel_count());
    }
    float at(int c, int x, int y) const noexcept {
        return values_[static_cast<std::size_t>(c) * pixel_count() +
                       static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                       static_cast<std::size_t>(x)];
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> values_;
};

struct MindOptions {
    int patch_radius = 1;
    double patch_sigma = 0.5;
    double variance_floor = 1e-6;
};

// Throws Error(too_small) below 16x16.
MindDescriptorField mind_descriptor(const Image& img, const MindOptions& options = {});

// Sum over channels of the squared descriptor difference at pixel i.
double descriptor_ssd_at(const MindDescriptorField& a, const MindDescriptorField& b, std::size_t i) noexcept;

}  // namespace histreg::nonrigid
