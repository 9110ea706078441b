#include "histreg/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace histreg {

namespace {

constexpr double kEdgeTolerance = 1e-9;

void require_positive_dims(int width, int height) {
    if (width < 0 || height < 0) {
        throw Error(ErrorCode::dimension_mismatch,
                    "negative raster dimensions " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
}

std::size_t area(int width, int height) {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw Error(ErrorCode::dimension_mismatch,
                    std::string(what) + ": " + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                        "x" + std::to_string(b.height()));
    }
}

// Maps a continuous coordinate into [0, extent-1]; false when it lies outside.
inline bool inside(double& c, int extent) noexcept {
    if (!(c >= -kEdgeTolerance && c <= extent - 1 + kEdgeTolerance)) return false;
    c = std::clamp(c, 0.0, static_cast<double>(extent - 1));
    return true;
}

}  // namespace

Image::Image(int width, int height, float fill)
    : width_(width), height_(height) {
    require_positive_dims(width, height);
    data_.assign(area(width, height), fill);
}

Image::Image(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
    require_positive_dims(width, height);
    if (data_.size() != area(width, height)) {
        throw Error(ErrorCode::dimension_mismatch, "image data length does not match dimensions");
    }
}

BinaryMask::BinaryMask(int width, int height, bool fill)
    : width_(width), height_(height), bits_(area(width, height), fill ? 1 : 0) {
    require_positive_dims(width, height);
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

Affine2D Affine2D::similarity(double scale, double theta, double tx, double ty) {
    const double c = scale * std::cos(theta);
    const double s = scale * std::sin(theta);
    return {c, -s, tx, s, c, ty};
}

Affine2D Affine2D::rotation_about(double theta, Point2 centre) {
    return translation(centre.x, centre.y) * similarity(1.0, theta, 0.0, 0.0) *
           translation(-centre.x, -centre.y);
}

double Affine2D::operator()(int row, int col) const {
    if (row == 2) return col == 2 ? 1.0 : 0.0;
    return m_[static_cast<std::size_t>(row * 3 + col)];
}

bool Affine2D::invertible() const noexcept {
    const double scale = std::max({std::abs(m_[0]), std::abs(m_[1]), std::abs(m_[3]),
                                   std::abs(m_[4]), 1e-300});
    return std::isfinite(determinant()) && std::abs(determinant()) > 1e-12 * scale * scale;
}

Affine2D Affine2D::inverse() const {
    if (!invertible()) throw Error(ErrorCode::singular_matrix, "affine transform is singular");
    const double det = determinant();
    const double ia = m_[4] / det;
    const double ib = -m_[1] / det;
    const double ic = -m_[3] / det;
    const double id = m_[0] / det;
    return {ia, ib, -(ia * m_[2] + ib * m_[5]), ic, id, -(ic * m_[2] + id * m_[5])};
}

Affine2D Affine2D::operator*(const Affine2D& r) const noexcept {
    const auto& l = m_;
    const auto& q = r.m_;
    return {l[0] * q[0] + l[1] * q[3], l[0] * q[1] + l[1] * q[4], l[0] * q[2] + l[1] * q[5] + l[2],
            l[3] * q[0] + l[4] * q[3], l[3] * q[1] + l[4] * q[4], l[3] * q[2] + l[4] * q[5] + l[5]};
}

DisplacementField::DisplacementField(int width, int height)
    : width_(width), height_(height), u_(area(width, height), 0.0), v_(area(width, height), 0.0) {
    require_positive_dims(width, height);
}

double DisplacementField::max_magnitude() const noexcept {
    double best = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i) best = std::max(best, std::hypot(u_[i], v_[i]));
    return best;
}

Point2 DisplacementField::sample(double x, double y) const noexcept {
    if (u_.empty()) return {};
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const std::size_t i00 = index(x0, y0), i10 = index(x1, y0), i01 = index(x0, y1),
                      i11 = index(x1, y1);
    const double top_u = u_[i00] + fx * (u_[i10] - u_[i00]);
    const double bot_u = u_[i01] + fx * (u_[i11] - u_[i01]);
    const double top_v = v_[i00] + fx * (v_[i10] - v_[i00]);
    const double bot_v = v_[i01] + fx * (v_[i11] - v_[i01]);
    return {top_u + fy * (bot_u - top_u), top_v + fy * (bot_v - top_v)};
}

float sample_bilinear(const Image& img, double x, double y) noexcept {
    if (img.empty() || !inside(x, img.width()) || !inside(y, img.height())) return 0.0f;
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.width() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double p00 = img(x0, y0), p10 = img(x1, y0), p01 = img(x0, y1), p11 = img(x1, y1);
    const double top = p00 + fx * (p10 - p00);
    const double bot = p01 + fx * (p11 - p01);
    return static_cast<float>(top + fy * (bot - top));
}

namespace {

float sample_nearest(const Image& img, double x, double y) noexcept {
    if (img.empty() || !inside(x, img.width()) || !inside(y, img.height())) return 0.0f;
    return img(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
}

bool sample_mask(const BinaryMask& mask, double x, double y) noexcept {
    if (mask.size() == 0 || !inside(x, mask.width()) || !inside(y, mask.height())) return false;
    return mask(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)));
}

}  // namespace

Image warp_image(const Image& img, const DisplacementField& field, Interpolation interp) {
    require_same_shape(img, field, "warp_image");
    Image out(img.width(), img.height());
    const auto u = field.u_data();
    const auto v = field.v_data();
    auto dst = out.pixels();
    std::size_t i = 0;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x, ++i) {
            const double sx = x + u[i];
            const double sy = y + v[i];
            dst[i] = interp == Interpolation::bilinear ? sample_bilinear(img, sx, sy)
                                                       : sample_nearest(img, sx, sy);
        }
    }
    return out;
}

BinaryMask warp_mask(const BinaryMask& mask, const DisplacementField& field) {
    require_same_shape(mask, field, "warp_mask");
    BinaryMask out(mask.width(), mask.height());
    const auto u = field.u_data();
    const auto v = field.v_data();
    auto dst = out.bits();
    std::size_t i = 0;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x, ++i) {
            dst[i] = sample_mask(mask, x + u[i], y + v[i]) ? 1 : 0;
        }
    }
    return out;
}

BinaryMask warp_mask(const BinaryMask& mask, const Affine2D& a) {
    BinaryMask out(mask.width(), mask.height());
    auto dst = out.bits();
    std::size_t i = 0;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x, ++i) {
            const Point2 q = a.apply({static_cast<double>(x), static_cast<double>(y)});
            dst[i] = sample_mask(mask, q.x, q.y) ? 1 : 0;
        }
    }
    return out;
}

DisplacementField affine_to_field(const Affine2D& a, int width, int height) {
    if (!a.invertible()) throw Error(ErrorCode::singular_matrix, "affine_to_field: singular matrix");
    DisplacementField field(width, height);
    auto u = field.u_data();
    auto v = field.v_data();
    std::size_t i = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x, ++i) {
            const Point2 q = a.apply({static_cast<double>(x), static_cast<double>(y)});
            u[i] = q.x - x;
            v[i] = q.y - y;
        }
    }
    return field;
}

DisplacementField compose_fields(const DisplacementField& outer, const DisplacementField& inner) {
    require_same_shape(outer, inner, "compose_fields");
    DisplacementField out(inner.width(), inner.height());
    const auto iu = inner.u_data();
    const auto iv = inner.v_data();
    auto ou = out.u_data();
    auto ov = out.v_data();
    std::size_t i = 0;
    for (int y = 0; y < inner.height(); ++y) {
        for (int x = 0; x < inner.width(); ++x, ++i) {
            const Point2 d = outer.sample(x + iu[i], y + iv[i]);
            ou[i] = iu[i] + d.x;
            ov[i] = iv[i] + d.y;
        }
    }
    return out;
}

std::vector<Point2> transform_points(const Affine2D& a, std::span<const Point2> pts) {
    std::vector<Point2> out;
    out.reserve(pts.size());
    for (const Point2& p : pts) out.push_back(a.apply(p));
    return out;
}

std::vector<Point2> warp_points(const DisplacementField& field, std::span<const Point2> pts) {
    std::vector<Point2> out;
    out.reserve(pts.size());
    for (const Point2& p : pts) {
        double x = p.x;
        double y = p.y;
        if (!inside(x, field.width()) || !inside(y, field.height())) {
            throw Error(ErrorCode::out_of_bounds,
                        "warp_points: point (" + std::to_string(p.x) + ", " +
                            std::to_string(p.y) + ") outside field");
        }
        const Point2 d = field.sample(p.x, p.y);
        out.push_back({p.x + d.x, p.y + d.y});
    }
    return out;
}

DisplacementField resample_field(const DisplacementField& field, int width, int height,
                                 double scale_from, double scale_to) {
    if (scale_from <= 0.0 || scale_to <= 0.0) {
        throw Error(ErrorCode::degenerate_input, "resample_field: scales must be positive");
    }
    if (field.width() == width && field.height() == height && scale_from == scale_to) return field;
    const double pos = scale_to / scale_from;
    const double mag = scale_from / scale_to;
    DisplacementField out(width, height);
    auto u = out.u_data();
    auto v = out.v_data();
    std::size_t i = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x, ++i) {
            const Point2 d = field.sample(x * pos, y * pos);
            u[i] = d.x * mag;
            v[i] = d.y * mag;
        }
    }
    return out;
}

Affine2D rescale_affine(const Affine2D& a, double scale_from, double scale_to) {
    const double k = scale_to / scale_from;
    return {a.a(), a.b(), a.tx() / k, a.c(), a.d(), a.ty() / k};
}

DisplacementField quantize_to_float(const DisplacementField& field) {
    DisplacementField out = field;
    for (double& x : out.u_data()) x = static_cast<double>(static_cast<float>(x));
    for (double& x : out.v_data()) x = static_cast<double>(static_cast<float>(x));
    return out;
}

}  // namespace histreg
