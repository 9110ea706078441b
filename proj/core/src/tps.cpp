#include "histreg/tps.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <utility>

#include <Eigen/Dense>

namespace histreg::nonrigid {

double tps_kernel(double r) noexcept {
    return r > 0.0 ? r * r * std::log(r) : 0.0;
}

Point2 TpsModel::evaluate(Point2 p) const noexcept {
    Point2 out = affine_part.apply(p);
    for (std::size_t i = 0; i < control_points.size(); ++i) {
        const double dx = p.x - control_points[i].x;
        const double dy = p.y - control_points[i].y;
        const double r2 = dx * dx + dy * dy;
        const double u = r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;
        out.x += weights[i].x * u;
        out.y += weights[i].y * u;
    }
    return out;
}

double TpsModel::weight_norm() const noexcept {
    double s = 0.0;
    for (const Point2& w : weights) s += w.x * w.x + w.y * w.y;
    return std::sqrt(s);
}

TpsModel tps_fit(std::span<const Point2> src_pts, std::span<const Point2> tgt_pts, double lambda) {
    if (src_pts.size() != tgt_pts.size()) {
        throw Error(ErrorCode::dimension_mismatch, "tps_fit: point lists differ in length");
    }
    if (lambda < 0.0) throw Error(ErrorCode::degenerate_input, "tps_fit: lambda must be >= 0");
    const std::size_t n = src_pts.size();
    if (n < 3) throw Error(ErrorCode::degenerate_input, "tps_fit: needs at least three control points");

    // Normalise coordinates so the collinearity and duplicate tests are scale free.
    double extent = 0.0;
    for (const Point2& p : src_pts) {
        extent = std::max({extent, std::abs(p.x - src_pts[0].x), std::abs(p.y - src_pts[0].y)});
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::hypot(src_pts[i].x - src_pts[j].x, src_pts[i].y - src_pts[j].y) <= 1e-9 * std::max(extent, 1.0)) {
                throw Error(ErrorCode::degenerate_input, "tps_fit: duplicate control points");
            }
        }
    }
    {
        Eigen::MatrixXd centred(static_cast<Eigen::Index>(n), 2);
        double mx = 0.0, my = 0.0;
        for (const Point2& p : src_pts) {
            mx += p.x;
            my += p.y;
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            centred(static_cast<Eigen::Index>(i), 0) = src_pts[i].x - mx;
            centred(static_cast<Eigen::Index>(i), 1) = src_pts[i].y - my;
        }
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
        const auto sv = svd.singularValues();
        if (sv(1) <= 1e-9 * std::max(sv(0), 1e-300)) {
            throw Error(ErrorCode::degenerate_input, "tps_fit: control points are collinear");
        }
    }

    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(N + 3, N + 3);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(N + 3, 2);
    for (Eigen::Index i = 0; i < N; ++i) {
        const Point2& pi = src_pts[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < N; ++j) {
            const Point2& pj = src_pts[static_cast<std::size_t>(j)];
            system(i, j) = tps_kernel(std::hypot(pi.x - pj.x, pi.y - pj.y));
        }
        system(i, i) += lambda;
        system(i, N) = 1.0;
        system(i, N + 1) = pi.x;
        system(i, N + 2) = pi.y;
        system(N, i) = 1.0;
        system(N + 1, i) = pi.x;
        system(N + 2, i) = pi.y;
        rhs(i, 0) = tgt_pts[static_cast<std::size_t>(i)].x;
        rhs(i, 1) = tgt_pts[static_cast<std::size_t>(i)].y;
    }
    const Eigen::MatrixXd sol = system.partialPivLu().solve(rhs);
    if (!sol.allFinite()) throw Error(ErrorCode::singular_matrix, "tps_fit: singular system");

    TpsModel model;
    model.lambda = lambda;
    model.control_points.assign(src_pts.begin(), src_pts.end());
    model.weights.resize(n);
    for (Eigen::Index i = 0; i < N; ++i) model.weights[static_cast<std::size_t>(i)] = {sol(i, 0), sol(i, 1)};
    model.affine_part = Affine2D{sol(N + 1, 0), sol(N + 2, 0), sol(N, 0), sol(N + 1, 1), sol(N + 2, 1), sol(N, 1)};
    return model;
}

DisplacementField tps_to_field(const TpsModel& model, int width, int height, int grid_step) {
    if (grid_step < 1) throw Error(ErrorCode::degenerate_input, "tps_to_field: grid_step must be >= 1");
    DisplacementField field(width, height);
    auto u = field.u_data();
    auto v = field.v_data();
    const auto displacement = [&](int x, int y) {
        const Point2 p{static_cast<double>(x), static_cast<double>(y)};
        const Point2 q = model.evaluate(p);
        return Point2{q.x - p.x, q.y - p.y};
    };
    if (grid_step == 1) {
        std::size_t i = 0;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x, ++i) {
                const Point2 d = displacement(x, y);
                u[i] = d.x;
                v[i] = d.y;
            }
        }
        return field;
    }
    // Exact at grid nodes (the last row and column always included), bilinear in between.
    std::vector<int> xs, ys;
    for (int x = 0; x < width - 1; x += grid_step) xs.push_back(x);
    xs.push_back(width - 1);
    for (int y = 0; y < height - 1; y += grid_step) ys.push_back(y);
    ys.push_back(height - 1);
    std::vector<Point2> nodes(xs.size() * ys.size());
    for (std::size_t j = 0; j < ys.size(); ++j) {
        for (std::size_t i = 0; i < xs.size(); ++i) nodes[j * xs.size() + i] = displacement(xs[i], ys[j]);
    }
    const auto span_of = [](const std::vector<int>& ticks, int p) {
        const auto it = std::upper_bound(ticks.begin(), ticks.end(), p);
        std::size_t hi = static_cast<std::size_t>(it - ticks.begin());
        if (hi >= ticks.size()) hi = ticks.size() - 1;
        const std::size_t lo = hi == 0 ? 0 : hi - 1;
        const double t = ticks[hi] == ticks[lo] ? 0.0 : static_cast<double>(p - ticks[lo]) / (ticks[hi] - ticks[lo]);
        return std::tuple{lo, hi, t};
    };
    std::size_t k = 0;
    for (int y = 0; y < height; ++y) {
        const auto [y0, y1, ty] = span_of(ys, y);
        for (int x = 0; x < width; ++x, ++k) {
            const auto [x0, x1, tx] = span_of(xs, x);
            const Point2& a = nodes[y0 * xs.size() + x0];
            const Point2& b = nodes[y0 * xs.size() + x1];
            const Point2& c = nodes[y1 * xs.size() + x0];
            const Point2& d = nodes[y1 * xs.size() + x1];
            u[k] = (1 - ty) * ((1 - tx) * a.x + tx * b.x) + ty * ((1 - tx) * c.x + tx * d.x);
            v[k] = (1 - ty) * ((1 - tx) * a.y + tx * b.y) + ty * ((1 - tx) * c.y + tx * d.y);
        }
    }
    return field;
}

void deduplicate_pairs(std::vector<Point2>& src, std::vector<Point2>& tgt, double cell) {
    if (src.size() != tgt.size()) {
        throw Error(ErrorCode::dimension_mismatch, "deduplicate_pairs: point lists differ in length");
    }
    if (!(cell > 0.0)) return;
    std::map<std::pair<long, long>, std::size_t> seen;
    std::vector<Point2> s, t;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const std::pair<long, long> key{std::lround(src[i].x / cell), std::lround(src[i].y / cell)};
        if (seen.emplace(key, i).second) {
            s.push_back(src[i]);
            t.push_back(tgt[i]);
        }
    }
    src = std::move(s);
    tgt = std::move(t);
}

}  // namespace histreg::nonrigid
