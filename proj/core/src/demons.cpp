#include "histreg/demons.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "filters.hpp"
#include "histreg/preprocess.hpp"

namespace histreg::nonrigid {

namespace {

struct Force {
    std::vector<double> u, v;
    double ssd = 0.0;
};

// Computes the update for one iteration given the current total field.
using ForceFn = std::function<Force(const DisplacementField& total)>;
// Prepares a per-level force functor from the level's fixed and moving images.
using LevelSetup = std::function<ForceFn(const Image& fixed, const Image& moving)>;

void require_inputs(const Image& fixed, const Image& moving, const DisplacementField& init) {
    if (!fixed.same_shape(moving) || !init.matches(fixed)) {
        throw Error(ErrorCode::dimension_mismatch, "demons: fixed, moving and init must share dimensions");
    }
}

// 1 where p + total(p) lands inside the image; samples outside carry no
// information about the moving image.
std::vector<std::uint8_t> valid_samples(const DisplacementField& total) {
    const int w = total.width(), h = total.height();
    std::vector<std::uint8_t> valid(total.size());
    const auto u = total.u_data();
    const auto v = total.v_data();
    std::size_t i = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x, ++i) {
            const double sx = x + u[i], sy = y + v[i];
            valid[i] = sx >= 0.0 && sx <= w - 1.0 && sy >= 0.0 && sy <= h - 1.0;
        }
    }
    return valid;
}

int usable_levels(const Image& img, int requested) {
    int levels = 1;
    while (levels < requested) {
        const double s = std::ldexp(1.0, levels);
        if (std::min(img.width(), img.height()) / s < 16.0) break;
        ++levels;
    }
    return levels;
}

// Shared symmetric force: u = -2 * step * sum_c(r_c g_c) / (sum_c |g_c|^2 + alpha sum_c r_c^2 + floor)
// where g_c = grad F_c + grad M_c, capped at max_step pixels.
void finish_force(Force& f, const std::vector<double>& num_x, const std::vector<double>& num_y,
                  const std::vector<double>& grad_sq, const std::vector<double>& res_sq, const DemonsParams& p) {
    const std::size_t n = num_x.size();
    f.u.assign(n, 0.0);
    f.v.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double den = grad_sq[i] + p.alpha * res_sq[i] + p.normalization_floor;
        double ux = -2.0 * p.step_scale * num_x[i] / den;
        double uy = -2.0 * p.step_scale * num_y[i] / den;
        const double mag = std::hypot(ux, uy);
        if (mag > p.max_step) {
            ux *= p.max_step / mag;
            uy *= p.max_step / mag;
        }
        f.u[i] = ux;
        f.v[i] = uy;
    }
}

DisplacementField run_demons(const Image& fixed, const Image& moving, const DisplacementField& init,
                             const DemonsParams& params, const LevelSetup& setup, DemonsTrace* trace) {
    require_inputs(fixed, moving, init);
    if (params.levels < 1 || params.iters_per_level < 1 || params.sigma_fluid < 0.0 ||
        params.sigma_diffusion < 0.0) {
        throw Error(ErrorCode::degenerate_input, "demons: invalid parameters");
    }
    const int levels = usable_levels(fixed, params.levels);

    // The nonrigid correction `psi` is composed onto the initial field, so an
    // untouched correction reproduces the initial field exactly.
    DisplacementField psi;
    double psi_scale = 1.0;
    DemonsTrace local;
    if (trace != nullptr) local.initial_ssd = setup(fixed, moving)(init).ssd;

    for (int level = levels - 1; level >= 0; --level) {
        const double scale = std::ldexp(1.0, level);
        const Image f = preprocess::resize_by_scale(fixed, scale);
        const Image m = preprocess::resize_by_scale(moving, scale);
        const DisplacementField init_l = resample_field(init, f.width(), f.height(), 1.0, scale);
        psi = psi.size() == 0 ? DisplacementField(f.width(), f.height())
                              : resample_field(psi, f.width(), f.height(), psi_scale, scale);
        psi_scale = scale;

        const ForceFn force = setup(f, m);
        for (int it = 0; it < params.iters_per_level; ++it) {
            const DisplacementField total = compose_fields(init_l, psi);
            Force step = force(total);
            local.final_ssd = step.ssd;
            ++local.iterations;

            detail::gaussian_filter(std::span<double>(step.u), f.width(), f.height(), params.sigma_fluid);
            detail::gaussian_filter(std::span<double>(step.v), f.width(), f.height(), params.sigma_fluid);
            double largest = 0.0;
            for (std::size_t i = 0; i < step.u.size(); ++i) largest = std::max(largest, std::hypot(step.u[i], step.v[i]));
            if (largest < params.tolerance) break;

            DisplacementField update(f.width(), f.height());
            std::copy(step.u.begin(), step.u.end(), update.u_data().begin());
            std::copy(step.v.begin(), step.v.end(), update.v_data().begin());
            psi = compose_fields(psi, update);
            detail::gaussian_filter(psi.u_data(), f.width(), f.height(), params.sigma_diffusion);
            detail::gaussian_filter(psi.v_data(), f.width(), f.height(), params.sigma_diffusion);
        }
    }

    DisplacementField out = compose_fields(init, psi);
    if (trace != nullptr) {
        // Report the residual of the returned field at full resolution.
        const Force last = setup(fixed, moving)(out);
        local.final_ssd = last.ssd;
        *trace = local;
    }
    return out;
}

}  // namespace

DisplacementField demons_register(const Image& fixed, const Image& moving, const DisplacementField& init,
                                  const DemonsParams& params, DemonsTrace* trace) {
    const LevelSetup setup = [&params](const Image& f, const Image& m) -> ForceFn {
        const int w = f.width(), h = f.height();
        auto fgx = std::make_shared<std::vector<double>>(f.size());
        auto fgy = std::make_shared<std::vector<double>>(f.size());
        detail::gradient(f.pixels(), w, h, std::span<double>(*fgx), std::span<double>(*fgy));
        return [f, m, fgx, fgy, w, h, &params](const DisplacementField& total) {
            const Image warped = warp_image(m, total);
            const auto valid = valid_samples(total);
            const std::size_t n = f.size();
            std::vector<double> mgx(n), mgy(n);
            detail::gradient(warped.pixels(), w, h, std::span<double>(mgx), std::span<double>(mgy));
            std::vector<double> nx(n), ny(n), g2(n), r2(n);
            Force out;
            const auto fp = f.pixels();
            const auto wp = warped.pixels();
            for (std::size_t i = 0; i < n; ++i) {
                const double r = valid[i] ? static_cast<double>(wp[i]) - fp[i] : 0.0;
                const double gx = (*fgx)[i] + mgx[i];
                const double gy = (*fgy)[i] + mgy[i];
                nx[i] = r * gx;
                ny[i] = r * gy;
                g2[i] = gx * gx + gy * gy;
                r2[i] = r * r;
                out.ssd += r * r;
            }
            finish_force(out, nx, ny, g2, r2, params);
            return out;
        };
    };
    return run_demons(fixed, moving, init, params, setup, trace);
}

DisplacementField mind_demons_register(const Image& fixed, const Image& moving,
                                       const DisplacementField& init, const DemonsParams& params,
                                       DemonsTrace* trace) {
    const LevelSetup setup = [&params](const Image& f, const Image& m) -> ForceFn {
        const int w = f.width(), h = f.height();
        auto fixed_desc = std::make_shared<MindDescriptorField>(mind_descriptor(f));
        auto fixed_grad = std::make_shared<std::vector<double>>(2 * kMindChannels * f.size());
        const std::size_t n = f.size();
        for (int c = 0; c < kMindChannels; ++c) {
            std::span<double> all(*fixed_grad);
            detail::gradient(fixed_desc->channel(c), w, h, all.subspan(2 * c * n, n),
                             all.subspan((2 * c + 1) * n, n));
        }
        return [m, fixed_desc, fixed_grad, w, h, n, &params](const DisplacementField& total) {
            const Image warped = warp_image(m, total);
            const MindDescriptorField moving_desc = mind_descriptor(warped);
            const auto valid = valid_samples(total);
            std::vector<double> nx(n, 0.0), ny(n, 0.0), g2(n, 0.0), r2(n, 0.0);
            std::vector<double> mgx(n), mgy(n);
            Force out;
            for (int c = 0; c < kMindChannels; ++c) {
                const auto mc = moving_desc.channel(c);
                const auto fc = fixed_desc->channel(c);
                detail::gradient(mc, w, h, std::span<double>(mgx), std::span<double>(mgy));
                const double* fgx = fixed_grad->data() + 2 * c * n;
                const double* fgy = fixed_grad->data() + (2 * c + 1) * n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!valid[i]) continue;
                    const double r = static_cast<double>(mc[i]) - fc[i];
                    const double gx = fgx[i] + mgx[i];
                    const double gy = fgy[i] + mgy[i];
                    nx[i] += r * gx;
                    ny[i] += r * gy;
                    g2[i] += gx * gx + gy * gy;
                    r2[i] += r * r;
                }
            }
            for (double r : r2) out.ssd += r;
            finish_force(out, nx, ny, g2, r2, params);
            return out;
        };
    };
    return run_demons(fixed, moving, init, params, setup, trace);
}

}  // namespace histreg::nonrigid
