#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "histreg/decision.hpp"
#include "histreg/demons.hpp"
#include "histreg/error.hpp"
#include "histreg/local_affine.hpp"
#include "histreg/mind.hpp"
#include "histreg/preprocess.hpp"
#include "histreg/tps.hpp"
#include "synth.hpp"

using namespace histreg;
using namespace histreg::nonrigid;

namespace {

// SSD away from the frame, where zero-filled samples would dominate.
double interior_ssd(const Image& a, const Image& b, int margin = 16) {
    double s = 0.0;
    for (int y = margin; y < a.height() - margin; ++y)
        for (int x = margin; x < a.width() - margin; ++x) s += (a(x, y) - b(x, y)) * (a(x, y) - b(x, y));
    return s;
}

// Mean displacement over the central half of the image.
Point2 central_mean(const DisplacementField& f) {
    double u = 0, v = 0;
    int n = 0;
    for (int y = f.height() / 4; y < 3 * f.height() / 4; ++y)
        for (int x = f.width() / 4; x < 3 * f.width() / 4; ++x) {
            u += f.u(x, y);
            v += f.v(x, y);
            ++n;
        }
    return {u / n, v / n};
}

synth::Map shift_map(double dx, double dy) {
    return [dx, dy](Point2 p) { return Point2{p.x + dx, p.y + dy}; };
}

synth::Map sine_map(double amp, double period) {
    return [amp, period](Point2 p) {
        const double k = 2 * std::numbers::pi / period;
        return Point2{p.x + amp * std::sin(k * p.y), p.y + amp * std::cos(k * p.x)};
    };
}

std::vector<Point2> random_points(int n, std::mt19937_64& rng, double extent = 100.0) {
    std::uniform_real_distribution<double> u(0, extent);
    std::vector<Point2> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng)};
    return pts;
}

BinaryMask full_mask(int w, int h) { return BinaryMask(w, h, true); }

}  // namespace

TEST_CASE("demons on identical images stays at zero") {
    const Image img = synth::render(synth::dense_scene(128, 1), 128, 128);
    const auto f = demons_register(img, img, DisplacementField(128, 128), DemonsParams{});
    CHECK(f.max_magnitude() < 0.05);
}

TEST_CASE("demons recovers a translation") {
    const auto scene = synth::dense_scene(128, 2);
    const Image fixed = preprocess::gaussian_smooth(synth::render(scene, 128, 128), 1.0);
    const Image moving = preprocess::gaussian_smooth(synth::render(scene, 128, 128, shift_map(-3, 0)), 1.0);
    DemonsTrace trace;
    const auto f = demons_register(fixed, moving, DisplacementField(128, 128), DemonsParams{}, &trace);
    const Point2 m = central_mean(f);
    CHECK(std::abs(m.x - 3.0) < 0.5);
    CHECK(std::abs(m.y) < 0.5);
    CHECK(trace.final_ssd <= 0.1 * trace.initial_ssd);
}

TEST_CASE("demons reduces SSD under a smooth sinusoidal warp") {
    const auto scene = synth::dense_scene(128, 3);
    const Image fixed = synth::render(scene, 128, 128, sine_map(5.0, 128.0));
    const Image moving = synth::render(scene, 128, 128);
    const auto f = demons_register(fixed, moving, DisplacementField(128, 128), DemonsParams{});
    CHECK(interior_ssd(fixed, warp_image(moving, f)) <= 0.2 * interior_ssd(fixed, moving));
}

TEST_CASE("demons rejects mismatched shapes") {
    CHECK_THROWS_AS(demons_register(Image(32, 32), Image(32, 30), DisplacementField(32, 32), DemonsParams{}), Error);
}

TEST_CASE("MIND descriptor") {
    const auto c = mind_descriptor(Image(32, 32, 0.4f));
    for (int ch = 0; ch < kMindChannels; ++ch)
        for (float v : c.channel(ch)) CHECK(v == doctest::Approx(1.0f));

    const Image img = synth::render(synth::dense_scene(64, 4), 64, 64);
    Image lin = img;
    for (float& v : lin.pixels()) v = 2.0f * v + 0.1f;
    const auto a = mind_descriptor(img);
    const auto b = mind_descriptor(lin);
    double worst = 0.0;
    for (int ch = 0; ch < kMindChannels; ++ch)
        for (std::size_t i = 0; i < a.pixel_count(); ++i) worst = std::max(worst, double(std::abs(a.channel(ch)[i] - b.channel(ch)[i])));
    CHECK(worst < 1e-5);

    for (std::size_t i = 0; i < a.pixel_count(); ++i) CHECK(descriptor_ssd_at(a, a, i) == 0.0);
    // Each pixel's channels peak at exactly one.
    for (std::size_t i = 0; i < a.pixel_count(); i += 97) {
        float mx = 0.0f;
        for (int ch = 0; ch < kMindChannels; ++ch) mx = std::max(mx, a.channel(ch)[i]);
        CHECK(mx == doctest::Approx(1.0f));
    }
    CHECK_THROWS_AS(mind_descriptor(Image(8, 8, 0.1f)), Error);
}

TEST_CASE("MIND demons") {
    const auto scene = synth::dense_scene(128, 5);
    const Image fixed = synth::render(scene, 128, 128);

    SUBCASE("identical images") {
        CHECK(mind_demons_register(fixed, fixed, DisplacementField(128, 128), DemonsParams{}).max_magnitude() < 0.05);
    }
    SUBCASE("inverted contrast and a translation") {
        const Image moving = synth::map_intensity(synth::render(scene, 128, 128, shift_map(-3, 0)), [](double v) { return 1.0 - v; });
        const auto f = mind_demons_register(fixed, moving, DisplacementField(128, 128), DemonsParams{});
        const Point2 m = central_mean(f);
        CHECK(std::abs(m.x - 3.0) < 1.0);
        CHECK(std::abs(m.y) < 1.0);
    }
    SUBCASE("gamma distortion under a smooth warp") {
        const Image warped = synth::render(scene, 128, 128, sine_map(4.0, 128.0));
        const Image moving = synth::map_intensity(synth::render(scene, 128, 128), [](double v) { return v * v; });
        const auto f = mind_demons_register(warped, moving, DisplacementField(128, 128), DemonsParams{});
        const auto mask = full_mask(128, 128);
        const double before = decision::masked_mind_ssd(warped, moving, mask);
        const double after = decision::masked_mind_ssd(warped, warp_image(moving, f), mask);
        CHECK(after <= 0.3 * before);
    }
}

TEST_CASE("local affine window schedule") {
    LocalAffineParams p;
    CHECK(window_schedule(p, 256, 200) == std::vector<int>{256, 128, 64, 32});
    p.level_schedule = {100, 50};
    CHECK(window_schedule(p, 256, 200) == std::vector<int>{100, 50});
}

TEST_CASE("local affine on identical images") {
    const Image img = synth::render(synth::dense_scene(128, 6), 128, 128);
    const auto r = local_affine_register_detailed(img, img, DisplacementField(128, 128), LocalAffineParams{});
    CHECK(r.field.max_magnitude() < 0.05);
    for (std::size_t i = 0; i < img.size(); ++i) {
        CHECK(std::abs(r.contrast.pixels()[i] - 1.0f) < 1e-3);
        CHECK(std::abs(r.brightness.pixels()[i]) < 1e-3);
    }
}

TEST_CASE("local affine recovers a shift under a linear intensity change") {
    const auto scene = synth::dense_scene(128, 7);
    const Image fixed = synth::render(scene, 128, 128);
    const Image moving = synth::map_intensity(synth::render(scene, 128, 128, shift_map(-5, 0)), [](double v) { return 0.7 * v + 0.15; });
    const auto r = local_affine_register_detailed(fixed, moving, DisplacementField(128, 128), LocalAffineParams{});
    const Point2 m = central_mean(r.field);
    CHECK(std::abs(m.x - 5.0) < 1.0);
    CHECK(std::abs(m.y) < 1.0);
    CHECK(r.contrast(64, 64) == doctest::Approx(1.0 / 0.7).epsilon(0.1));

    // Accepted steps never raise the weighted energy.
    for (const auto& s : r.steps)
        if (s.accepted) CHECK(s.energy_after <= s.energy_before);
}

TEST_CASE("local affine flags a blanked region as missing") {
    const int n = 256;
    const auto scene = synth::dense_scene(n, 8);
    const Image fixed = synth::render(scene, n, n);
    Image moving = synth::render(scene, n, n, shift_map(-4, 0));
    const double r = std::sqrt(0.2 * n * n / std::numbers::pi), cx = 0.45 * n, cy = 0.55 * n;
    BinaryMask blank(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            if (std::hypot(x - cx, y - cy) < r) moving(x, y) = 0.0f;
            if (std::hypot(x + 4 - cx, y - cy) < r) blank.set(x, y, true);
        }
    const auto res = local_affine_register_detailed(fixed, moving, DisplacementField(n, n), LocalAffineParams{});
    double err = 0, w = 0;
    std::size_t ne = 0, nw = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            if (blank(x, y)) {
                w += res.weights(x, y);
                ++nw;
            } else {
                err += std::hypot(res.field.u(x, y) - 4.0, res.field.v(x, y));
                ++ne;
            }
        }
    CHECK(err / ne < 1.0);
    CHECK(w / nw < 0.2);
}

TEST_CASE("TPS interpolation") {
    std::mt19937_64 rng(12);
    const auto src = random_points(10, rng);
    auto tgt = src;
    std::normal_distribution<double> n(0, 3);
    for (auto& p : tgt) p = {p.x + n(rng), p.y + n(rng)};

    const auto m = tps_fit(src, tgt, 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Point2 q = m.evaluate(src[i]);
        CHECK(std::hypot(q.x - tgt[i].x, q.y - tgt[i].y) < 1e-6);
    }
    // Side conditions on the nonlinear coefficients.
    Point2 s{0, 0}, sx{0, 0}, sy{0, 0};
    for (std::size_t i = 0; i < src.size(); ++i) {
        s = {s.x + m.weights[i].x, s.y + m.weights[i].y};
        sx = {sx.x + m.weights[i].x * src[i].x, sx.y + m.weights[i].y * src[i].x};
        sy = {sy.x + m.weights[i].x * src[i].y, sy.y + m.weights[i].y * src[i].y};
    }
    CHECK(std::abs(s.x) + std::abs(s.y) < 1e-8);
    CHECK(std::abs(sx.x) + std::abs(sx.y) + std::abs(sy.x) + std::abs(sy.y) < 1e-6);

    double prev = m.weight_norm();
    for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
        const double wn = tps_fit(src, tgt, lambda).weight_norm();
        CHECK(wn <= prev + 1e-12);
        prev = wn;
    }
    CHECK_THROWS_AS(tps_fit(std::vector<Point2>{{0, 0}, {1, 1}}, std::vector<Point2>{{0, 0}, {1, 1}}, 0.0), Error);
    CHECK_THROWS_AS(tps_fit(src, std::vector<Point2>(3), 0.0), Error);
    CHECK_THROWS_AS(tps_fit(src, tgt, -1.0), Error);
}

TEST_CASE("TPS reproduces affine maps with zero bending") {
    std::mt19937_64 rng(13);
    const auto src = random_points(10, rng);
    const Affine2D a(1.1, 0.2, 5.0, -0.1, 0.9, -2.0);
    const auto m = tps_fit(src, transform_points(a, src), 0.0);
    CHECK(m.weight_norm() < 1e-8);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) CHECK(m.affine_part(r, c) == doctest::Approx(a(r, c)).epsilon(1e-9));

    std::vector<Point2> moved;
    for (const auto& p : src) moved.push_back({p.x + 7, p.y - 3});
    const auto t = tps_fit(src, moved, 0.0);
    CHECK(t.weight_norm() < 1e-8);
    CHECK(t.affine_part.tx() == doctest::Approx(7.0));
    CHECK(t.affine_part.ty() == doctest::Approx(-3.0));
}

TEST_CASE("tps_to_field") {
    std::mt19937_64 rng(14);
    const auto src = random_points(4, rng, 30.0);
    CHECK(tps_to_field(tps_fit(src, src, 0.0), 20, 16).max_magnitude() < 1e-9);

    std::vector<Point2> moved;
    for (const auto& p : src) moved.push_back({p.x + 2, p.y + 1});
    const auto tf = tps_to_field(tps_fit(src, moved, 0.0), 20, 16);
    for (std::size_t i = 0; i < tf.size(); ++i) {
        CHECK(tf.u_data()[i] == doctest::Approx(2.0));
        CHECK(tf.v_data()[i] == doctest::Approx(1.0));
    }

    // Control points on integer pixels: the field there equals tgt - src.
    std::vector<Point2> grid_src, grid_tgt;
    std::uniform_int_distribution<int> ui(0, 63);
    std::normal_distribution<double> n(0, 2);
    for (int i = 0; i < 10; ++i) {
        const Point2 p{double(ui(rng)), double(ui(rng))};
        grid_src.push_back(p);
        grid_tgt.push_back({p.x + n(rng), p.y + n(rng)});
    }
    const auto model = tps_fit(grid_src, grid_tgt, 0.0);
    const auto f = tps_to_field(model, 64, 64);
    for (std::size_t i = 0; i < grid_src.size(); ++i) {
        const int x = int(grid_src[i].x), y = int(grid_src[i].y);
        CHECK(std::abs(f.u(x, y) - (grid_tgt[i].x - grid_src[i].x)) < 1e-5);
        CHECK(std::abs(f.v(x, y) - (grid_tgt[i].y - grid_src[i].y)) < 1e-5);
    }
    // Coarse evaluation agrees with the dense one on its grid nodes.
    const auto coarse = tps_to_field(model, 64, 64, 4);
    for (int y = 0; y < 64; y += 4)
        for (int x = 0; x < 64; x += 4) CHECK(coarse.u(x, y) == doctest::Approx(f.u(x, y)).epsilon(1e-12));
    CHECK(coarse.u(63, 63) == doctest::Approx(f.u(63, 63)).epsilon(1e-12));
}

TEST_CASE("deduplicate_pairs keeps one pair per cell") {
    std::vector<Point2> src{{0.2, 0.2}, {0.4, 0.3}, {5, 5}, {5.1, 5.1}, {9, 1}};
    std::vector<Point2> tgt = src;
    deduplicate_pairs(src, tgt, 2.0);
    CHECK(src.size() == 3);
    CHECK(src.size() == tgt.size());
    CHECK(src[0] == Point2{0.2, 0.2});
}
