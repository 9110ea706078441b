#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace histreg::synth {

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep_edge(double d, double softness) { return 1.0 / (1.0 + std::exp(-d / softness)); }

void add_waves(Scene& s, std::mt19937_64& rng, int count, double min_period, double max_period, double amp) {
    std::uniform_real_distribution<double> angle(0.0, 2 * kPi);
    std::uniform_real_distribution<double> period(min_period, max_period);
    for (int i = 0; i < count; ++i) {
        const double a = angle(rng);
        const double k = 2 * kPi / period(rng);
        s.waves.push_back({k * std::cos(a), k * std::sin(a), angle(rng), amp / count});
    }
}

void add_blobs(Scene& s, std::mt19937_64& rng, int count, double margin, double min_r, double max_r,
               double min_amp, double max_amp) {
    std::uniform_real_distribution<double> ux(-margin, s.width + margin);
    std::uniform_real_distribution<double> uy(-margin, s.height + margin);
    std::uniform_real_distribution<double> ur(min_r, max_r);
    std::uniform_real_distribution<double> ua(min_amp, max_amp);
    for (int i = 0; i < count; ++i) s.blobs.push_back({ux(rng), uy(rng), ur(rng), ua(rng)});
}

void build_grid(Scene& s) {
    double max_r = 1.0;
    for (const auto& b : s.blobs) max_r = std::max(max_r, b.radius);
    s.cell = std::max(8.0, 3.0 * max_r);
    const double pad = 4.0 * s.cell;
    s.grid_w = static_cast<int>(std::ceil((s.width + 2 * pad) / s.cell)) + 1;
    s.grid_h = static_cast<int>(std::ceil((s.height + 2 * pad) / s.cell)) + 1;
    s.grid.assign(static_cast<std::size_t>(s.grid_w * s.grid_h), {});
    for (int i = 0; i < static_cast<int>(s.blobs.size()); ++i) {
        const int gx = static_cast<int>(std::floor((s.blobs[i].x + pad) / s.cell));
        const int gy = static_cast<int>(std::floor((s.blobs[i].y + pad) / s.cell));
        if (gx < 0 || gy < 0 || gx >= s.grid_w || gy >= s.grid_h) continue;
        s.grid[static_cast<std::size_t>(gy * s.grid_w + gx)].push_back(i);
    }
}

void add_silhouette(Scene& s, std::mt19937_64& rng, double radius_fraction) {
    const double size = std::min(s.width, s.height);
    std::uniform_real_distribution<double> jitter(-0.04, 0.04);
    std::uniform_real_distribution<double> phase(0.0, 2 * kPi);
    s.cx = s.width * (0.5 + jitter(rng));
    s.cy = s.height * (0.5 + jitter(rng));
    s.radius = radius_fraction * size;
    // Low harmonics dominate; an asymmetric outline keeps the rotation search unambiguous.
    const double amps[] = {0.0, 0.10, 0.08, 0.05, 0.03, 0.02};
    std::uniform_real_distribution<double> scale(0.6, 1.0);
    for (double a : amps) {
        s.harmonic_amp.push_back(a * scale(rng));
        s.harmonic_phase.push_back(phase(rng));
    }
}

}  // namespace

double Scene::tissue_weight(double x, double y) const {
    if (!has_silhouette) return 1.0;
    const double dx = x - cx, dy = y - cy;
    const double t = std::atan2(dy, dx);
    double r = 1.0;
    for (std::size_t k = 1; k < harmonic_amp.size(); ++k) {
        r += harmonic_amp[k] * std::cos(static_cast<double>(k) * t + harmonic_phase[k]);
    }
    return smoothstep_edge(radius * r - std::hypot(dx, dy), 1.5);
}

double Scene::value(double x, double y) const {
    double tex = tissue_level;
    for (const auto& w : waves) tex += w.amplitude * std::cos(w.kx * x + w.ky * y + w.phase);
    const double pad = 4.0 * cell;
    const int gx = static_cast<int>(std::floor((x + pad) / cell));
    const int gy = static_cast<int>(std::floor((y + pad) / cell));
    for (int j = gy - 1; j <= gy + 1; ++j) {
        if (j < 0 || j >= grid_h) continue;
        for (int i = gx - 1; i <= gx + 1; ++i) {
            if (i < 0 || i >= grid_w) continue;
            for (int idx : grid[static_cast<std::size_t>(j * grid_w + i)]) {
                const Blob& b = blobs[static_cast<std::size_t>(idx)];
                const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
                tex -= b.amplitude * std::exp(-d2 / (2 * b.radius * b.radius));
            }
        }
    }
    tex = std::clamp(tex, 0.02, 0.98);
    const double w = tissue_weight(x, y);
    return w * tex + (1.0 - w) * background;
}

Scene tissue_scene(int size, std::uint64_t seed, double radius_fraction) {
    Scene s;
    s.width = s.height = size;
    std::mt19937_64 rng(seed);
    add_silhouette(s, rng, radius_fraction);
    std::uniform_real_distribution<double> level(0.45, 0.55);
    s.tissue_level = level(rng);
    add_waves(s, rng, 6, 0.12 * size, 0.5 * size, 0.12);
    add_waves(s, rng, 6, 10.0, 40.0, 0.08);
    const double scale = size / 512.0;
    add_blobs(s, rng, static_cast<int>(900 * scale * scale), 0.0, 1.8 * scale, 4.5 * scale, 0.15, 0.45);
    build_grid(s);
    return s;
}

Scene dense_scene(int size, std::uint64_t seed) {
    Scene s;
    s.width = s.height = size;
    s.has_silhouette = false;
    std::mt19937_64 rng(seed);
    s.tissue_level = 0.55;
    add_waves(s, rng, 6, 0.15 * size, 0.6 * size, 0.22);
    add_waves(s, rng, 8, 12.0, 48.0, 0.12);
    const double scale = size / 512.0;
    add_blobs(s, rng, static_cast<int>(1400 * scale * scale), 0.1 * size, 2.0 * scale, 5.0 * scale, 0.15, 0.4);
    build_grid(s);
    return s;
}

Scene random_texture_scene(int size, std::uint64_t seed) {
    Scene s;
    s.width = s.height = size;
    s.has_silhouette = false;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    s.tissue_level = 0.5;
    add_waves(s, rng, 10, 0.08 * size, 0.4 * size, 0.45);
    add_waves(s, rng, 6, 6.0, 24.0, 0.10);
    add_blobs(s, rng, 600, 0.0, 2.0, 6.0, -0.3, 0.3);
    build_grid(s);
    return s;
}

Image render(const Scene& scene, int width, int height, const Map& phi) {
    Image out(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            Point2 p{static_cast<double>(x), static_cast<double>(y)};
            if (phi) p = phi(p);
            out(x, y) = static_cast<float>(scene.value(p.x, p.y));
        }
    }
    return out;
}

Image map_intensity(const Image& img, const std::function<double(double)>& f) {
    Image out = img;
    for (float& v : out.pixels()) v = static_cast<float>(std::clamp(f(v), 0.0, 1.0));
    return out;
}

Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    Image out = img;
    for (float& v : out.pixels()) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 1.0));
    return out;
}

Affine2D similarity_map(const Similarity& s, double cx, double cy) {
    const double c = std::cos(s.theta) / s.scale;
    const double d = std::sin(s.theta) / s.scale;
    // p -> centre + M (p - centre - shift)
    const double px = -cx - s.tx, py = -cy - s.ty;
    return {c, -d, cx + c * px - d * py, d, c, cy + d * px + c * py};
}

Similarity random_similarity(std::uint64_t seed, double max_deg, double min_scale, double max_scale,
                             double max_shift) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> deg(-max_deg, max_deg);
    std::uniform_real_distribution<double> logs(std::log(min_scale), std::log(max_scale));
    std::uniform_real_distribution<double> ang(0.0, 2 * kPi);
    std::uniform_real_distribution<double> mag(0.0, 1.0);
    Similarity s;
    s.theta = deg(rng) * kPi / 180.0;
    s.scale = std::exp(logs(rng));
    const double a = ang(rng);
    const double m = max_shift * std::sqrt(mag(rng));
    s.tx = m * std::cos(a);
    s.ty = m * std::sin(a);
    return s;
}

Point2 SmoothWarp::displacement(Point2 p) const {
    Point2 d{0.0, 0.0};
    for (const auto& b : bumps_u) {
        d.x += b.amplitude * std::exp(-((p.x - b.x) * (p.x - b.x) + (p.y - b.y) * (p.y - b.y)) / (2 * b.radius * b.radius));
    }
    for (const auto& b : bumps_v) {
        d.y += b.amplitude * std::exp(-((p.x - b.x) * (p.x - b.x) + (p.y - b.y) * (p.y - b.y)) / (2 * b.radius * b.radius));
    }
    return d;
}

SmoothWarp random_smooth_warp(int size, std::uint64_t seed, double amplitude) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.15 * size, 0.85 * size);
    std::uniform_real_distribution<double> rad(0.12 * size, 0.25 * size);
    std::uniform_real_distribution<double> sign(-1.0, 1.0);
    SmoothWarp w;
    w.amplitude = amplitude;
    for (int i = 0; i < 3; ++i) {
        w.bumps_u.push_back({pos(rng), pos(rng), rad(rng), sign(rng)});
        w.bumps_v.push_back({pos(rng), pos(rng), rad(rng), sign(rng)});
    }
    // Normalise so the largest sampled displacement equals `amplitude`.
    double peak = 0.0;
    for (int y = 0; y < size; y += 4) {
        for (int x = 0; x < size; x += 4) {
            const Point2 d = w.displacement({static_cast<double>(x), static_cast<double>(y)});
            peak = std::max(peak, std::hypot(d.x, d.y));
        }
    }
    const double k = peak > 0 ? amplitude / peak : 0.0;
    for (auto& b : w.bumps_u) b.amplitude *= k;
    for (auto& b : w.bumps_v) b.amplitude *= k;
    return w;
}

Map compose(const Map& first, const Map& second) {
    return [first, second](Point2 p) { return second(first(p)); };
}

DisplacementField field_from_map(const Map& phi, int width, int height) {
    DisplacementField f(width, height);
    auto u = f.u_data();
    auto v = f.v_data();
    std::size_t i = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x, ++i) {
            const Point2 q = phi({static_cast<double>(x), static_cast<double>(y)});
            u[i] = q.x - x;
            v[i] = q.y - y;
        }
    }
    return f;
}

std::vector<Point2> landmarks_in_tissue(const Scene& scene, const Map& phi, int width, int height, int count,
                                        std::uint64_t seed, double margin) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(margin, width - 1 - margin);
    std::uniform_real_distribution<double> uy(margin, height - 1 - margin);
    std::vector<Point2> pts;
    for (int attempt = 0; attempt < 100000 && static_cast<int>(pts.size()) < count; ++attempt) {
        const Point2 p{ux(rng), uy(rng)};
        const Point2 q = phi ? phi(p) : p;
        if (scene.tissue_weight(q.x, q.y) > 0.99) pts.push_back(p);
    }
    return pts;
}

}  // namespace histreg::synth
