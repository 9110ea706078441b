#include "histreg/initial_align.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "filters.hpp"

namespace histreg::align {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

FeatureCandidate run_detector(const preprocess::PreprocessedPair& pair, DetectorKind kind,
                              const RansacOptions& ransac) {
    FeatureCandidate cand;
    cand.kind = kind;
    cand.good_matches.detector_kind = kind;
    cand.inliers.detector_kind = kind;
    std::vector<Keypoint> src, tgt;
    try {
        src = detect_features(pair.source, kind);
        tgt = detect_features(pair.target, kind);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::too_small) throw;
        return cand;
    }
    if (src.empty() || tgt.empty()) return cand;
    cand.good_matches = match_features(src, tgt, kind);
    try {
        RansacResult fit = ransac_similarity(cand.good_matches, ransac);
        cand.transform = fit.transform;
        cand.inliers = std::move(fit.inliers);
        cand.dice = transform_dice(pair.source_mask, pair.target_mask, *cand.transform);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::no_consensus && e.code() != ErrorCode::singular_matrix &&
            e.code() != ErrorCode::degenerate_input) {
            throw;
        }
        cand.transform.reset();
    }
    return cand;
}

Point2 centroid(const BinaryMask& mask) {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (mask(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
        }
    }
    if (n == 0) throw Error(ErrorCode::empty_input, "centroid of an empty mask");
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

// Dice without materialising the warped mask.
double dice_through(const BinaryMask& source_mask, const BinaryMask& target_mask, const Affine2D& a,
                    std::size_t target_count) {
    std::size_t warped = 0, both = 0;
    const int sw = source_mask.width(), sh = source_mask.height();
    for (int y = 0; y < target_mask.height(); ++y) {
        double qx = a.b() * y + a.tx();
        double qy = a.d() * y + a.ty();
        for (int x = 0; x < target_mask.width(); ++x, qx += a.a(), qy += a.c()) {
            const long ix = std::lround(qx);
            const long iy = std::lround(qy);
            if (qx < -1e-9 || qy < -1e-9 || qx > sw - 1 + 1e-9 || qy > sh - 1 + 1e-9) continue;
            if (!source_mask(static_cast<int>(ix), static_cast<int>(iy))) continue;
            ++warped;
            both += target_mask(x, y) ? 1u : 0u;
        }
    }
    if (warped + target_count == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(warped + target_count);
}

struct Level {
    Image source;
    Image target;
    double scale = 1.0;  // relative to the finest level
};

std::vector<Level> build_pyramid(const Image& source, const Image& target) {
    std::vector<Level> levels;
    double scale = 1.0;
    while (true) {
        Level l;
        l.scale = scale;
        l.source = preprocess::gaussian_smooth(preprocess::resize_by_scale(source, scale), 1.0);
        l.target = preprocess::gaussian_smooth(preprocess::resize_by_scale(target, scale), 1.0);
        const int min_side = std::min(l.source.width(), l.source.height());
        levels.push_back(std::move(l));
        if (levels.size() >= 3 || min_side < 128) break;
        scale *= 2.0;
    }
    std::reverse(levels.begin(), levels.end());
    return levels;
}

struct TileFit {
    std::vector<double> contrast;
    std::vector<double> brightness;
    int tiles_x = 1;
    int tiles_y = 1;
    int tile = kIntensityTile;
};

// Warped samples: value and gradient of the source at A p (0 outside).
struct Warped {
    std::vector<double> value, gx, gy;
    std::vector<unsigned char> valid;
};

Warped sample_source(const Image& source, const std::vector<double>& sgx, const std::vector<double>& sgy,
                     const Affine2D& a, int width, int height) {
    Warped w;
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    w.value.assign(n, 0.0);
    w.gx.assign(n, 0.0);
    w.gy.assign(n, 0.0);
    w.valid.assign(n, 0);
    const int sw = source.width(), sh = source.height();
    std::size_t i = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x, ++i) {
            const Point2 q = a.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!(q.x >= 0.0 && q.y >= 0.0 && q.x <= sw - 1 && q.y <= sh - 1)) continue;
            const int x0 = static_cast<int>(q.x), y0 = static_cast<int>(q.y);
            const int x1 = std::min(x0 + 1, sw - 1), y1 = std::min(y0 + 1, sh - 1);
            const double fx = q.x - x0, fy = q.y - y0;
            const auto at = [&](const auto& buf, int xx, int yy) {
                return static_cast<double>(buf[static_cast<std::size_t>(yy) * sw + xx]);
            };
            const auto lerp = [&](const auto& buf) {
                const double top = at(buf, x0, y0) + fx * (at(buf, x1, y0) - at(buf, x0, y0));
                const double bot = at(buf, x0, y1) + fx * (at(buf, x1, y1) - at(buf, x0, y1));
                return top + fy * (bot - top);
            };
            w.value[i] = lerp(source.pixels());
            w.gx[i] = lerp(sgx);
            w.gy[i] = lerp(sgy);
            w.valid[i] = 1;
        }
    }
    return w;
}

TileFit fit_tiles(const Warped& w, const Image& target, int tile) {
    TileFit fit;
    fit.tile = tile;
    fit.tiles_x = (target.width() + tile - 1) / tile;
    fit.tiles_y = (target.height() + tile - 1) / tile;
    const std::size_t nt = static_cast<std::size_t>(fit.tiles_x) * static_cast<std::size_t>(fit.tiles_y);
    std::vector<double> n(nt), ss(nt), st(nt), sss(nt), sst(nt);
    const auto tp = target.pixels();
    std::size_t i = 0;
    for (int y = 0; y < target.height(); ++y) {
        for (int x = 0; x < target.width(); ++x, ++i) {
            const std::size_t t = static_cast<std::size_t>(y / tile) * fit.tiles_x + static_cast<std::size_t>(x / tile);
            if (!w.valid[i]) continue;
            const double s = w.value[i];
            const double v = tp[i];
            n[t] += 1.0;
            ss[t] += s;
            st[t] += v;
            sss[t] += s * s;
            sst[t] += s * v;
        }
    }
    fit.contrast.assign(nt, 1.0);
    fit.brightness.assign(nt, 0.0);
    for (std::size_t t = 0; t < nt; ++t) {
        if (n[t] < 2.0) continue;
        const double ms = ss[t] / n[t];
        const double mt = st[t] / n[t];
        const double var = sss[t] / n[t] - ms * ms;
        const double cov = sst[t] / n[t] - ms * mt;
        double c = var > 1e-6 ? cov / var : 1.0;
        c = std::clamp(c, 0.05, 20.0);
        fit.contrast[t] = c;
        fit.brightness[t] = mt - c * ms;
    }
    return fit;
}

struct Evaluation {
    double ssd = 0.0;
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
};

Evaluation evaluate(const Image& source, const std::vector<double>& sgx, const std::vector<double>& sgy,
                    const Image& target, const Affine2D& a, int tile, bool with_jacobian) {
    const Warped w = sample_source(source, sgx, sgy, a, target.width(), target.height());
    const TileFit fit = fit_tiles(w, target, tile);
    Evaluation ev;
    const auto tp = target.pixels();
    std::size_t i = 0, count = 0;
    for (int y = 0; y < target.height(); ++y) {
        for (int x = 0; x < target.width(); ++x, ++i) {
            if (!w.valid[i]) continue;
            const std::size_t t = static_cast<std::size_t>(y / tile) * fit.tiles_x + static_cast<std::size_t>(x / tile);
            const double c = fit.contrast[t];
            const double r = c * w.value[i] + fit.brightness[t] - tp[i];
            ev.ssd += r * r;
            ++count;
            if (!with_jacobian) continue;
            const double gx = c * w.gx[i], gy = c * w.gy[i];
            Eigen::Matrix<double, 6, 1> j;
            j << gx * x, gx * y, gx, gy * x, gy * y, gy;
            ev.jtj.selfadjointView<Eigen::Upper>().rankUpdate(j);
            ev.jtr += j * r;
        }
    }
    ev.jtj = ev.jtj.selfadjointView<Eigen::Upper>();
    // Mean over valid samples.
    ev.ssd = count > 0 ? ev.ssd / static_cast<double>(count) : std::numeric_limits<double>::infinity();
    return ev;
}

}  // namespace

std::string_view to_string(AlignMethod method) noexcept {
    switch (method) {
        case AlignMethod::feature: return "feature";
        case AlignMethod::centroid_rotation: return "centroid_rotation";
        case AlignMethod::identity_fallback: return "identity_fallback";
    }
    return "unknown";
}

std::string_view to_string(AlignStatus status) noexcept {
    return status == AlignStatus::ok ? "ok" : "fail_detected";
}

double transform_dice(const BinaryMask& source_mask, const BinaryMask& target_mask, const Affine2D& a) {
    return dice_through(source_mask, target_mask, a, target_mask.count());
}

InitialAlignmentResult feature_alignment(const preprocess::PreprocessedPair& pair,
                                         const InitialAlignmentOptions& options) {
    std::vector<FeatureCandidate> candidates;
    if (options.parallel_detectors) {
        std::vector<std::future<FeatureCandidate>> jobs;
        for (DetectorKind kind : kAllDetectors) {
            jobs.push_back(std::async(std::launch::async, run_detector, std::cref(pair), kind,
                                      std::cref(options.ransac)));
        }
        for (auto& j : jobs) candidates.push_back(j.get());
    } else {
        for (DetectorKind kind : kAllDetectors) candidates.push_back(run_detector(pair, kind, options.ransac));
    }

    InitialAlignmentResult result;
    result.transform = Affine2D::identity();
    result.dice_score = transform_dice(pair.source_mask, pair.target_mask, result.transform);
    result.status = AlignStatus::fail_detected;
    result.method = AlignMethod::identity_fallback;

    const FeatureCandidate* best = nullptr;
    for (const auto& c : candidates) {
        result.good_matches.push_back(c.good_matches);
        if (c.transform && (best == nullptr || c.dice > best->dice)) best = &c;
    }
    if (best != nullptr && best->dice >= options.dice_threshold) {
        result.transform = *best->transform;
        result.dice_score = best->dice;
        result.method = AlignMethod::feature;
        result.detector_kind = best->kind;
        result.inlier_matches = best->inliers;
        result.status = AlignStatus::ok;
    }
    result.candidates = std::move(candidates);
    return result;
}

RotationSearch centroid_rotation_search(const BinaryMask& source_mask, const BinaryMask& target_mask,
                                        double angle_step_degrees) {
    if (!(angle_step_degrees > 0.0)) {
        throw Error(ErrorCode::degenerate_input, "centroid_rotation_search: angle step must be > 0");
    }
    const Point2 cs = centroid(source_mask);
    const Point2 ct = centroid(target_mask);
    const std::size_t target_count = target_mask.count();

    RotationSearch out;
    const int steps = std::max(1, static_cast<int>(std::floor(360.0 / angle_step_degrees + 1e-9)));
    out.dice_per_angle.reserve(static_cast<std::size_t>(steps));
    out.best_dice = -1.0;
    for (int k = 0; k < steps; ++k) {
        const double deg = k * angle_step_degrees;
        const Affine2D a = Affine2D::translation(cs.x, cs.y) *
                           Affine2D::similarity(1.0, deg * kDegToRad, 0.0, 0.0) *
                           Affine2D::translation(-ct.x, -ct.y);
        const double d = dice_through(source_mask, target_mask, a, target_count);
        out.dice_per_angle.push_back(d);
        if (d > out.best_dice) {
            out.best_dice = d;
            out.best_angle_degrees = deg;
            out.transform = a;
        }
    }
    return out;
}

Affine2D centroid_rotation_alignment(const BinaryMask& source_mask, const BinaryMask& target_mask,
                                     double angle_step_degrees) {
    return centroid_rotation_search(source_mask, target_mask, angle_step_degrees).transform;
}

GlobalAffineResult global_affine_ssd(const Image& source, const Image& target, const Affine2D& init,
                                     int iterations, double step_size) {
    if (!source.same_shape(target)) {
        throw Error(ErrorCode::dimension_mismatch, "global_affine_ssd: images differ in size");
    }
    GlobalAffineResult result;
    result.transform = init;

    const std::vector<Level> levels = build_pyramid(source, target);
    Affine2D current = rescale_affine(init, 1.0, levels.front().scale);
    double initial_ssd = -1.0;
    bool improved_anywhere = false;
    int consecutive_growth = 0;

    for (const Level& level : levels) {
        const int w = level.source.width(), h = level.source.height();
        std::vector<double> sgx(level.source.size()), sgy(level.source.size());
        detail::gradient(level.source.pixels(), w, h, std::span<double>(sgx), std::span<double>(sgy));
        const int tile = std::max(8, static_cast<int>(std::lround(kIntensityTile / level.scale)));

        Evaluation ev = evaluate(level.source, sgx, sgy, level.target, current, tile, true);
        if (initial_ssd < 0.0) initial_ssd = ev.ssd;
        double previous = ev.ssd;
        double best_ssd = ev.ssd;
        Affine2D best = current;
        double damping = 1e-3;
        consecutive_growth = 0;

        for (int it = 0; it < iterations; ++it, ++result.iterations) {
            if (ev.ssd <= 0.0) break;
            Eigen::Matrix<double, 6, 6> lhs = ev.jtj;
            for (int k = 0; k < 6; ++k) lhs(k, k) += damping * std::max(ev.jtj(k, k), 1e-12);
            const Eigen::Matrix<double, 6, 1> delta = -step_size * lhs.ldlt().solve(ev.jtr);
            if (!delta.allFinite()) break;
            const auto p = best.parameters();
            const Affine2D trial{p[0] + delta(0), p[1] + delta(1), p[2] + delta(2),
                                 p[3] + delta(3), p[4] + delta(4), p[5] + delta(5)};
            // Largest pixel motion the step induces over the image.
            double motion = 0.0;
            for (const Point2 corner : {Point2{0, 0}, Point2{static_cast<double>(w - 1), 0},
                                        Point2{0, static_cast<double>(h - 1)},
                                        Point2{static_cast<double>(w - 1), static_cast<double>(h - 1)}}) {
                const Point2 a = best.apply(corner), b = trial.apply(corner);
                motion = std::max(motion, std::hypot(a.x - b.x, a.y - b.y));
            }
            if (!trial.invertible()) {
                damping *= 4.0;
                continue;
            }
            Evaluation next = evaluate(level.source, sgx, sgy, level.target, trial, tile, true);
            consecutive_growth = next.ssd > previous ? consecutive_growth + 1 : 0;
            previous = next.ssd;
            if (next.ssd < best_ssd) {
                best_ssd = next.ssd;
                best = trial;
                ev = std::move(next);
                damping = std::max(damping * 0.3, 1e-7);
                improved_anywhere = true;
            } else {
                damping *= 4.0;
            }
            if (motion < 1e-3) break;
            if (consecutive_growth >= 10) break;
        }
        current = best;
        result.ssd = best_ssd;
        if (&level != &levels.back()) current = rescale_affine(current, level.scale, level.scale / 2.0);
    }

    if (consecutive_growth >= 10 && !improved_anywhere) {
        result.transform = init;
        result.diverged = true;
        return result;
    }
    result.transform = rescale_affine(current, levels.back().scale, 1.0);
    return result;
}

InitialAlignmentResult initial_alignment(const preprocess::PreprocessedPair& pair,
                                         const InitialAlignmentOptions& options) {
    InitialAlignmentResult result = feature_alignment(pair, options);
    if (result.status == AlignStatus::ok) return result;

    if (pair.source_mask.count() == 0 || pair.target_mask.count() == 0) return result;

    const Affine2D coarse = centroid_rotation_alignment(pair.source_mask, pair.target_mask,
                                                       options.angle_step_degrees);
    const double coarse_dice = transform_dice(pair.source_mask, pair.target_mask, coarse);
    Affine2D chosen = coarse;
    double chosen_dice = coarse_dice;

    const GlobalAffineResult refined =
        global_affine_ssd(pair.source, pair.target, coarse, options.affine_iterations, options.affine_step);
    result.affine_diverged = refined.diverged;
    if (!refined.diverged && refined.transform.invertible()) {
        const double refined_dice = transform_dice(pair.source_mask, pair.target_mask, refined.transform);
        if (refined_dice >= coarse_dice) {
            chosen = refined.transform;
            chosen_dice = refined_dice;
        }
    }

    if (chosen_dice >= options.dice_threshold) {
        result.transform = chosen;
        result.dice_score = chosen_dice;
        result.method = AlignMethod::centroid_rotation;
        result.detector_kind.reset();
        result.inlier_matches = {};
        result.status = AlignStatus::ok;
    }
    return result;
}

}  // namespace histreg::align
