#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "histreg/error.hpp"
#include "histreg/preprocess.hpp"
#include "synth.hpp"

using namespace histreg;
using namespace histreg::preprocess;

namespace {

Image noise_image(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    Image img(w, h);
    for (float& v : img.pixels()) v = static_cast<float>(d(rng));
    return img;
}

// Fraction of pixels with bin <= k, for every 256-bin index k.
std::vector<double> cdf256(const Image& img) {
    std::vector<double> c(256, 0.0);
    for (float v : img.pixels()) c[static_cast<std::size_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0))] += 1;
    for (int k = 1; k < 256; ++k) c[k] += c[k - 1];
    for (double& x : c) x /= static_cast<double>(img.size());
    return c;
}

}  // namespace

TEST_CASE("to_grayscale uses 601 luminance") {
    RgbImage rgb{3, 1, {{1, 1, 1}, {0, 0, 0}, {1, 0, 0}}};
    const auto g = to_grayscale(rgb);
    CHECK(g(0, 0) == doctest::Approx(1.0));
    CHECK(g(1, 0) == 0.0f);
    CHECK(g(2, 0) == doctest::Approx(0.299));
}

TEST_CASE("gaussian_smooth") {
    const Image img = noise_image(12, 9, 1);
    CHECK(gaussian_smooth(img, 0.0) == img);

    const auto c = gaussian_smooth(Image(15, 11, 0.3f), 2.0);
    for (float v : c.pixels()) CHECK(v == doctest::Approx(0.3).epsilon(1e-6));

    Image impulse(21, 21, 0.0f);
    impulse(10, 10) = 1.0f;
    const auto s = gaussian_smooth(impulse, 1.0);
    double norm = 0.0;
    for (int i = -3; i <= 3; ++i) norm += std::exp(-0.5 * i * i);
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
            const double expected = std::exp(-0.5 * dx * dx) * std::exp(-0.5 * dy * dy) / (norm * norm);
            CHECK(std::abs(s(10 + dx, 10 + dy) - expected) < 1e-6);
        }
    CHECK(s(10 + 4, 10) == 0.0f);
}

TEST_CASE("resize_to_policy") {
    const auto big = resize_to_policy(Image(4000, 3000, 0.5f), ResolutionPolicy::max_side(2048));
    CHECK(big.image.width() == 2048);
    CHECK(big.image.height() == 1536);
    CHECK(big.scale == doctest::Approx(4000.0 / 2048.0));

    const auto small = resize_to_policy(Image(800, 600, 0.5f), ResolutionPolicy::max_side(2048));
    CHECK(small.image.width() == 800);
    CHECK(small.image.height() == 600);
    CHECK(small.scale == 1.0);

    CHECK(policy_scale(3000, 2000, ResolutionPolicy::min_side(1024)) == doctest::Approx(2000.0 / 1024.0));
    const auto ms = resize_to_policy(Image(3000, 2000, 0.1f), ResolutionPolicy::min_side(1024));
    CHECK(ms.image.width() == 1536);
    CHECK(ms.image.height() == 1024);
}

TEST_CASE("shannon_entropy") {
    CHECK(shannon_entropy(Image(8, 8, 0.4f)) == 0.0);

    Image two(10, 10, 0.0f);
    for (int i = 0; i < 50; ++i) two.pixels()[i] = 1.0f;
    CHECK(shannon_entropy(two) == doctest::Approx(1.0));

    Image all(256, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 256; ++x) all(x, y) = static_cast<float>(x / 255.0);
    CHECK(shannon_entropy(all) == doctest::Approx(8.0));

    // Pixel order does not matter.
    Image shuffled = noise_image(32, 32, 5);
    const double e = shannon_entropy(shuffled);
    std::mt19937 rng(2);
    std::shuffle(shuffled.pixels().begin(), shuffled.pixels().end(), rng);
    CHECK(shannon_entropy(shuffled) == e);
}

TEST_CASE("match_histogram") {
    const Image img = noise_image(40, 30, 7);
    const auto self = match_histogram(img, img);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(self.pixels()[i] - img.pixels()[i]) <= 1.0 / 255.0 + 1e-6);

    const auto flat = match_histogram(img, Image(5, 5, 0.6f));
    for (float v : flat.pixels()) CHECK(v == doctest::Approx(0.6).epsilon(1e-6));

    // Bimodal subject vs a shifted bimodal reference.
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 0.03);
    Image subj(100, 100), ref(100, 100);
    for (std::size_t i = 0; i < subj.size(); ++i) {
        subj.pixels()[i] = static_cast<float>(std::clamp((i % 3 ? 0.25 : 0.6) + n(rng), 0.0, 1.0));
        ref.pixels()[i] = static_cast<float>(std::clamp((i % 2 ? 0.45 : 0.8) + n(rng), 0.0, 1.0));
    }
    const auto a = cdf256(match_histogram(subj, ref));
    const auto b = cdf256(ref);
    double dmax = 0.0;
    for (int k = 0; k < 256; ++k) dmax = std::max(dmax, std::abs(a[k] - b[k]));
    CHECK(dmax < 2.0 / 255.0);
}

TEST_CASE("entropy_ordered_match") {
    const Image lo = Image(20, 20, 0.3f);
    const Image hi = noise_image(20, 20, 3);
    const auto m = entropy_ordered_match(lo, hi);
    CHECK(m.first_was_matched);
    CHECK(m.second == hi);
    const float level = m.first(0, 0);
    for (float v : m.first.pixels()) CHECK(v == level);

    const auto r = entropy_ordered_match(hi, lo);
    CHECK_FALSE(r.first_was_matched);
    CHECK(r.first == hi);

    const auto same = entropy_ordered_match(hi, hi);
    for (std::size_t i = 0; i < hi.size(); ++i) CHECK(std::abs(same.first.pixels()[i] - hi.pixels()[i]) <= 1.0 / 255.0 + 1e-6);
}

TEST_CASE("pad_to_common") {
    const Image a(10, 10, 0.5f), b(12, 8, 0.7f);
    const auto [pa, pb] = pad_to_common(a, b);
    CHECK(pa.width() == 12);
    CHECK(pa.height() == 10);
    CHECK(pb.width() == 12);
    CHECK(pb.height() == 10);
    CHECK(pa(11, 0) == 0.0f);
    CHECK(pb(0, 9) == 0.0f);
    CHECK(pa(9, 9) == 0.5f);
    const auto [qa, qb] = pad_to_common(a, a);
    CHECK(qa == a);
}

TEST_CASE("invert_intensity") {
    const Image img = noise_image(9, 9, 4);
    CHECK(invert_intensity(Image(2, 2, 0.0f))(1, 1) == 1.0f);
    CHECK(invert_intensity(Image(2, 2, 1.0f))(1, 1) == 0.0f);
    CHECK(invert_intensity(invert_intensity(Image(3, 3, 0.25f))) == Image(3, 3, 0.25f));
    const auto twice = invert_intensity(invert_intensity(img));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(twice.pixels()[i] == doctest::Approx(img.pixels()[i]).epsilon(1e-6));
}

TEST_CASE("li_threshold") {
    Image two(10, 10, 0.2f);
    for (int i = 0; i < 40; ++i) two.pixels()[i] = 0.8f;
    const auto t = li_threshold(two);
    CHECK(t.threshold > 0.2);
    CHECK(t.threshold < 0.8);
    for (std::size_t i = 0; i < two.size(); ++i) CHECK(t.mask.bits()[i] == (i < 40 ? 1 : 0));

    CHECK_THROWS_AS(li_threshold(Image(4, 4, 0.5f)), Error);

    // Inverting a two-level image swaps the masks.
    const auto inv = li_threshold(invert_intensity(two));
    for (std::size_t i = 0; i < two.size(); ++i) CHECK(inv.mask.bits()[i] != t.mask.bits()[i]);
}

TEST_CASE("dice") {
    BinaryMask a(20, 10), b(20, 10), c(20, 10);
    for (int x = 0; x < 10; ++x)
        for (int y = 0; y < 10; ++y) {
            a.set(x, y, true);
            if (y < 5) b.set(x, y, true);
            c.set(x + 10, y, true);
        }
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, c) == 0.0);
    CHECK(dice(a, b) == doctest::Approx(2.0 * 50 / 150));
    CHECK(dice(BinaryMask(3, 3), BinaryMask(3, 3)) == 1.0);
    CHECK_THROWS_AS(dice(a, BinaryMask(3, 3)), Error);
}

TEST_CASE("preprocess_pair") {
    const auto scene = synth::tissue_scene(128, 3);
    const Image s = synth::render(scene, 128, 100);
    const Image t = synth::render(scene, 110, 128);
    const auto p = preprocess_pair(s, t, {ResolutionPolicy::max_side(64), 1.0, true});
    CHECK(p.source.width() == p.target.width());
    CHECK(p.source.height() == p.target.height());
    CHECK(p.source.width() == 64);
    CHECK(p.scale_to_full == doctest::Approx(2.0));
    CHECK(p.inverted);
    CHECK(p.source_mask.width() == 64);
    // Tissue is bright after inversion, so the mask sits on the island.
    CHECK(p.source_mask(32, 25));
    CHECK_FALSE(p.source_mask(1, 1));
    // Padding reads as background.
    CHECK(p.source(10, 63) == 0.0f);
}
