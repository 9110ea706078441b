#pragma once

// Picks the nonrigid candidate with the lowest masked MIND SSD against the
// fixed image.

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include "histreg/image.hpp"
#include "histreg/mind.hpp"

namespace histreg::decision {

enum class Method { local_affine, demons, mind_demons, tps, initial_only };

// Tie-break order, most preferred first.
inline constexpr std::array<Method, 5> kMethodPriority{Method::local_affine, Method::mind_demons,
                                                       Method::demons, Method::tps, Method::initial_only};

std::string_view to_string(Method method) noexcept;
std::optional<Method> method_from_string(std::string_view name) noexcept;
int priority_rank(Method method) noexcept;

struct RegistrationResult {
    Method method = Method::initial_only;
    DisplacementField field;
    double mind_ssd = 0.0;
    double dice_after = 0.0;
};

// Mean over masked pixels of the per-pixel descriptor SSD. Throws
// Error(empty_input) for an empty mask.
double masked_mind_ssd(const Image& fixed, const Image& warped_moving, const BinaryMask& mask);
double masked_mind_ssd(const nonrigid::MindDescriptorField& fixed, const Image& warped_moving,
                       const BinaryMask& mask);

// Warps `moving` by `field` and scores it; `fixed_mask` is the fixed image's
// Li mask, `moving_mask` the moving image's (for the reported Dice).
RegistrationResult score_candidate(Method method, DisplacementField field,
                                   const nonrigid::MindDescriptorField& fixed_descriptor,
                                   const Image& moving, const BinaryMask& fixed_mask,
                                   const BinaryMask& moving_mask);

// Index of the lowest mind_ssd, ties resolved by kMethodPriority then by
// position. Throws Error(empty_input) for an empty list.
std::size_t select_best(std::span<const RegistrationResult> candidates);

}  // namespace histreg::decision
