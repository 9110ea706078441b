#include "histreg/decision.hpp"

#include <algorithm>

#include "histreg/preprocess.hpp"

namespace histreg::decision {

std::string_view to_string(Method method) noexcept {
    switch (method) {
        case Method::local_affine: return "local_affine";
        case Method::demons: return "demons";
        case Method::mind_demons: return "mind_demons";
        case Method::tps: return "tps";
        case Method::initial_only: return "initial_only";
    }
    return "unknown";
}

std::optional<Method> method_from_string(std::string_view name) noexcept {
    for (Method m : kMethodPriority) {
        if (to_string(m) == name) return m;
    }
    return std::nullopt;
}

int priority_rank(Method method) noexcept {
    const auto it = std::find(kMethodPriority.begin(), kMethodPriority.end(), method);
    return static_cast<int>(it - kMethodPriority.begin());
}

double masked_mind_ssd(const nonrigid::MindDescriptorField& fixed, const Image& warped_moving,
                       const BinaryMask& mask) {
    if (fixed.width() != warped_moving.width() || fixed.height() != warped_moving.height() ||
        mask.width() != warped_moving.width() || mask.height() != warped_moving.height()) {
        throw Error(ErrorCode::dimension_mismatch, "masked_mind_ssd: dimensions differ");
    }
    const auto bits = mask.bits();
    const std::size_t count = mask.count();
    if (count == 0) throw Error(ErrorCode::empty_input, "masked_mind_ssd: empty mask");
    const nonrigid::MindDescriptorField moving = nonrigid::mind_descriptor(warped_moving);
    double sum = 0.0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) sum += nonrigid::descriptor_ssd_at(fixed, moving, i);
    }
    return sum / static_cast<double>(count);
}

double masked_mind_ssd(const Image& fixed, const Image& warped_moving, const BinaryMask& mask) {
    if (!fixed.same_shape(warped_moving)) {
        throw Error(ErrorCode::dimension_mismatch, "masked_mind_ssd: dimensions differ");
    }
    if (mask.count() == 0) throw Error(ErrorCode::empty_input, "masked_mind_ssd: empty mask");
    return masked_mind_ssd(nonrigid::mind_descriptor(fixed), warped_moving, mask);
}

RegistrationResult score_candidate(Method method, DisplacementField field,
                                   const nonrigid::MindDescriptorField& fixed_descriptor,
                                   const Image& moving, const BinaryMask& fixed_mask,
                                   const BinaryMask& moving_mask) {
    RegistrationResult r;
    r.method = method;
    const Image warped = warp_image(moving, field);
    r.mind_ssd = masked_mind_ssd(fixed_descriptor, warped, fixed_mask);
    r.dice_after = preprocess::dice(warp_mask(moving_mask, field), fixed_mask);
    r.field = std::move(field);
    return r;
}

std::size_t select_best(std::span<const RegistrationResult> candidates) {
    if (candidates.empty()) throw Error(ErrorCode::empty_input, "select_best: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const auto& b = candidates[best];
        if (c.mind_ssd < b.mind_ssd ||
            (c.mind_ssd == b.mind_ssd && priority_rank(c.method) < priority_rank(b.method))) {
            best = i;
        }
    }
    return best;
}

}  // namespace histreg::decision
