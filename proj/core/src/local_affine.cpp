#include "histreg/local_affine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include <Eigen/Dense>

#include "filters.hpp"
#include "histreg/preprocess.hpp"

namespace histreg::nonrigid {

namespace {

constexpr int kMotionParams = 6;
constexpr int kAllParams = 8;
constexpr double kBackgroundLevel = 1e-3;

using Vec8 = Eigen::Matrix<double, kAllParams, 1>;
using Mat8 = Eigen::Matrix<double, kAllParams, kAllParams>;

// Evenly spaced window centres along one axis: windows of edge `window`
// overlapping by half, the first and last flush with the image border.
std::vector<double> window_centres(int extent, int window) {
    if (extent <= window) return {0.5 * (extent - 1)};
    const int stride = std::max(1, window / 2);
    const int count = static_cast<int>(std::ceil(static_cast<double>(extent - window) / stride)) + 1;
    std::vector<double> c(static_cast<std::size_t>(count));
    const double first = 0.5 * (window - 1);
    const double last = (extent - 1) - 0.5 * (window - 1);
    for (int i = 0; i < count; ++i) {
        c[static_cast<std::size_t>(i)] = count == 1 ? first : first + (last - first) * i / (count - 1);
    }
    return c;
}

// Tent (bilinear) blending weights of position x against sorted centres.
struct Blend {
    int lo = 0;
    int hi = 0;
    double t = 0.0;  // weight of hi
};

Blend blend_at(const std::vector<double>& centres, double x) {
    if (centres.size() == 1 || x <= centres.front()) return {0, 0, 0.0};
    if (x >= centres.back()) {
        const int last = static_cast<int>(centres.size()) - 1;
        return {last, last, 0.0};
    }
    const auto it = std::upper_bound(centres.begin(), centres.end(), x);
    const int hi = static_cast<int>(it - centres.begin());
    const int lo = hi - 1;
    const double t = (x - centres[static_cast<std::size_t>(lo)]) /
                     (centres[static_cast<std::size_t>(hi)] - centres[static_cast<std::size_t>(lo)]);
    return {lo, hi, t};
}

struct WindowSolution {
    Vec8 params = Vec8::Zero();  // [dx0, dx/dx^, dx/dy^, dy0, dy/dx^, dy/dy^, dc, db]
    double cx = 0.0;
    double cy = 0.0;
};

struct State {
    DisplacementField field;
    std::vector<double> contrast;
    std::vector<double> brightness;
};

struct Residuals {
    Image corrected;                // C * warped + B
    std::vector<double> r;          // fixed - corrected
    std::vector<double> warped;     // warped moving before correction
    std::vector<std::uint8_t> valid;  // sample landed inside the moving image
};

Residuals residuals(const Image& fixed, const Image& moving, const State& s) {
    Residuals out;
    out.corrected = warp_image(moving, s.field);
    const int w = fixed.width();
    const int h = fixed.height();
    const std::size_t n = fixed.size();
    out.r.resize(n);
    out.warped.resize(n);
    out.valid.resize(n);
    auto c = out.corrected.pixels();
    const auto f = fixed.pixels();
    const auto u = s.field.u_data();
    const auto v = s.field.v_data();
    constexpr double tol = 1e-9;
    std::size_t i = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x, ++i) {
            const double sx = x + u[i];
            const double sy = y + v[i];
            out.valid[i] = sx >= -tol && sx <= w - 1 + tol && sy >= -tol && sy <= h - 1 + tol;
            out.warped[i] = c[i];
            const double val = s.contrast[i] * c[i] + s.brightness[i];
            c[i] = static_cast<float>(val);
            out.r[i] = static_cast<double>(f[i]) - val;
        }
    }
    return out;
}

double robust_sigma(const Image& fixed, const Residuals& res, double floor) {
    std::vector<double> mags;
    mags.reserve(res.r.size());
    const auto f = fixed.pixels();
    const auto c = res.corrected.pixels();
    for (std::size_t i = 0; i < res.r.size(); ++i) {
        if (!res.valid[i]) continue;
        if (std::abs(f[i]) > kBackgroundLevel || std::abs(c[i]) > kBackgroundLevel) mags.push_back(std::abs(res.r[i]));
    }
    if (mags.empty()) return floor;
    const auto mid = mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2);
    std::nth_element(mags.begin(), mid, mags.end());
    return std::max(1.4826 * *mid, floor);
}

// Samples pulled from outside the moving image count as missing.
std::vector<double> missing_weights(const Residuals& res, double sigma) {
    std::vector<double> w(res.r.size());
    const double k = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = res.valid[i] ? std::exp(-res.r[i] * res.r[i] * k) : 0.0;
    return w;
}

// Weighted mean of r^2 over pixels whose sample is valid under `res`.
double weighted_energy(const std::vector<double>& w, const Residuals& res) {
    double e = 0.0;
    double mass = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!res.valid[i]) continue;
        e += w[i] * res.r[i] * res.r[i];
        mass += w[i];
    }
    return mass > 0.0 ? e / mass : 0.0;
}

bool solve_window(const Mat8& a, const Vec8& b, int unknowns, Vec8& out) {
    const auto block = a.topLeftCorner(unknowns, unknowns);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block);
    if (eig.info() != Eigen::Success) return false;
    const double largest = eig.eigenvalues().maxCoeff();
    const double smallest = eig.eigenvalues().minCoeff();
    if (!(largest > 0.0) || smallest < 1e-10 * largest) return false;
    out.setZero();
    out.head(unknowns) = eig.eigenvectors() *
                         (eig.eigenvectors().transpose() * b.head(unknowns)).cwiseQuotient(eig.eigenvalues());
    return out.allFinite();
}

}  // namespace

std::vector<int> window_schedule(const LocalAffineParams& params, int width, int height) {
    std::vector<int> schedule = params.level_schedule;
    if (schedule.empty()) {
        int window = std::max(width, height);
        const int smallest = std::max(16, params.min_window);
        while (true) {
            schedule.push_back(window);
            if (window <= smallest) break;
            window = std::max(smallest, window / 2);
        }
    }
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (schedule[i] < 16 || (i > 0 && schedule[i] >= schedule[i - 1])) {
            throw Error(ErrorCode::degenerate_input,
                        "local affine: window sizes must be strictly decreasing and >= 16");
        }
    }
    return schedule;
}

LocalAffineResult local_affine_register_detailed(const Image& fixed, const Image& moving,
                                                 const DisplacementField& init,
                                                 const LocalAffineParams& params) {
    if (!fixed.same_shape(moving) || !init.matches(fixed)) {
        throw Error(ErrorCode::dimension_mismatch, "local affine: fixed, moving and init must share dimensions");
    }
    const int w = fixed.width();
    const int h = fixed.height();
    const std::size_t n = fixed.size();
    const std::vector<int> schedule = window_schedule(params, w, h);
    const int unknowns = params.intensity_correction ? kAllParams : kMotionParams;

    State state{init, std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
    LocalAffineResult result;

    std::vector<double> gx(n), gy(n);
    for (std::size_t level = 0; level < schedule.size(); ++level) {
        const int window = schedule[level];
        const double sigma = std::clamp(window / 32.0, 1.0, 4.0);
        const Image f = preprocess::gaussian_smooth(fixed, sigma);
        const Image m = preprocess::gaussian_smooth(moving, sigma);
        const std::vector<double> cx = window_centres(w, window);
        const std::vector<double> cy = window_centres(h, window);
        const double half = 0.5 * window;

        for (int it = 0; it < params.iters_per_level; ++it) {
            const Residuals res = residuals(f, m, state);
            const double scale = params.missing_prob_sigma > 0.0
                                     ? params.missing_prob_sigma
                                     : robust_sigma(f, res, params.min_residual_sigma);
            const std::vector<double> weight = missing_weights(res, scale);
            LocalAffineResult::Step step;
            step.level = static_cast<int>(level);
            step.window = window;
            step.energy_before = weighted_energy(weight, res);

            // Gradient of the corrected warped moving image w.r.t. motion.
            {
                Image warped(w, h);
                for (std::size_t i = 0; i < n; ++i) warped.pixels()[i] = static_cast<float>(res.warped[i]);
                detail::gradient(warped.pixels(), w, h, std::span<double>(gx), std::span<double>(gy));
                for (std::size_t i = 0; i < n; ++i) {
                    gx[i] *= state.contrast[i];
                    gy[i] *= state.contrast[i];
                }
            }

            std::vector<WindowSolution> solutions(cx.size() * cy.size());
            for (std::size_t wy = 0; wy < cy.size(); ++wy) {
                for (std::size_t wx = 0; wx < cx.size(); ++wx) {
                    WindowSolution& sol = solutions[wy * cx.size() + wx];
                    sol.cx = cx[wx];
                    sol.cy = cy[wy];
                    const int x0 = std::max(0, static_cast<int>(std::ceil(sol.cx - half)));
                    const int x1 = std::min(w - 1, static_cast<int>(std::floor(sol.cx + half)));
                    const int y0 = std::max(0, static_cast<int>(std::ceil(sol.cy - half)));
                    const int y1 = std::min(h - 1, static_cast<int>(std::floor(sol.cy + half)));
                    Mat8 a = Mat8::Zero();
                    Vec8 b = Vec8::Zero();
                    double support = 0.0;
                    for (int y = y0; y <= y1; ++y) {
                        const double yh = (y - sol.cy) / window;
                        for (int x = x0; x <= x1; ++x) {
                            const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                            const double wt = weight[i];
                            if (wt < 1e-6) continue;
                            const double xh = (x - sol.cx) / window;
                            Vec8 j;
                            j << gx[i], gx[i] * xh, gx[i] * yh, gy[i], gy[i] * xh, gy[i] * yh,
                                static_cast<double>(res.corrected.pixels()[i]), 1.0;
                            a.selfadjointView<Eigen::Upper>().rankUpdate(j, wt);
                            b += wt * res.r[i] * j;
                            support += wt;
                        }
                    }
                    if (support < params.min_window_pixels) continue;  // inherits the parent motion
                    a = a.selfadjointView<Eigen::Upper>();
                    Vec8 theta;
                    if (solve_window(a, b, unknowns, theta)) sol.params = theta;
                }
            }

            // Rasterise the blended window models into a dense update.
            DisplacementField update(w, h);
            std::vector<double> dc(n, 0.0), db(n, 0.0);
            std::vector<Blend> bx(static_cast<std::size_t>(w));
            for (int x = 0; x < w; ++x) bx[static_cast<std::size_t>(x)] = blend_at(cx, x);
            for (int y = 0; y < h; ++y) {
                const Blend by = blend_at(cy, y);
                for (int x = 0; x < w; ++x) {
                    const Blend& bxx = bx[static_cast<std::size_t>(x)];
                    const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                    double ux = 0.0, uy = 0.0, c = 0.0, br = 0.0;
                    const std::array<std::pair<int, double>, 2> ys{{{by.lo, 1.0 - by.t}, {by.hi, by.t}}};
                    const std::array<std::pair<int, double>, 2> xs{{{bxx.lo, 1.0 - bxx.t}, {bxx.hi, bxx.t}}};
                    for (const auto& [iy, wyy] : ys) {
                        for (const auto& [ix, wxx] : xs) {
                            const double beta = wyy * wxx;
                            if (beta == 0.0) continue;
                            const WindowSolution& s = solutions[static_cast<std::size_t>(iy) * cx.size() + static_cast<std::size_t>(ix)];
                            const double xh = (x - s.cx) / window;
                            const double yh = (y - s.cy) / window;
                            const Vec8& p = s.params;
                            ux += beta * (p(0) + p(1) * xh + p(2) * yh);
                            uy += beta * (p(3) + p(4) * xh + p(5) * yh);
                            c += beta * p(6);
                            br += beta * p(7);
                        }
                    }
                    const double mag = std::hypot(ux, uy);
                    if (mag > params.max_step) {
                        ux *= params.max_step / mag;
                        uy *= params.max_step / mag;
                    }
                    update.u_data()[i] = ux;
                    update.v_data()[i] = uy;
                    dc[i] = c;
                    db[i] = br;
                }
            }
            detail::gaussian_filter(update.u_data(), w, h, params.field_smoothing_sigma);
            detail::gaussian_filter(update.v_data(), w, h, params.field_smoothing_sigma);

            // Accept the step (or a shortened one) only if sum w r^2 does not grow.
            bool accepted = false;
            for (double fraction : {1.0, 0.5, 0.25}) {
                DisplacementField scaled = update;
                for (double& v : scaled.u_data()) v *= fraction;
                for (double& v : scaled.v_data()) v *= fraction;
                State trial{compose_fields(state.field, scaled), state.contrast, state.brightness};
                for (std::size_t i = 0; i < n; ++i) {
                    const double gain = 1.0 + fraction * dc[i];
                    trial.contrast[i] = gain * state.contrast[i];
                    trial.brightness[i] = gain * state.brightness[i] + fraction * db[i];
                }
                const double energy = weighted_energy(weight, residuals(f, m, trial));
                if (energy <= step.energy_before) {
                    state = std::move(trial);
                    step.energy_after = energy;
                    accepted = true;
                    break;
                }
            }
            step.accepted = accepted;
            if (!accepted) step.energy_after = step.energy_before;
            result.steps.push_back(step);
            if (!accepted) break;
        }
    }

    // Final weights on the unsmoothed images.
    const Residuals res = residuals(fixed, moving, state);
    const double scale = params.missing_prob_sigma > 0.0 ? params.missing_prob_sigma
                                                         : robust_sigma(fixed, res, params.min_residual_sigma);
    const std::vector<double> weight = missing_weights(res, scale);
    result.weights = Image(w, h);
    result.contrast = Image(w, h);
    result.brightness = Image(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        result.weights.pixels()[i] = static_cast<float>(weight[i]);
        result.contrast.pixels()[i] = static_cast<float>(state.contrast[i]);
        result.brightness.pixels()[i] = static_cast<float>(state.brightness[i]);
    }
    result.field = std::move(state.field);
    return result;
}

DisplacementField local_affine_register(const Image& fixed, const Image& moving, const DisplacementField& init,
                                        const LocalAffineParams& params) {
    return local_affine_register_detailed(fixed, moving, init, params).field;
}

}  // namespace histreg::nonrigid
