#pragma once

// Raster, transform and resampling primitives shared by every stage.
//
// Coordinates are (x = column, y = row) in pixels with the origin at the
// centre of pixel (0,0). Displacement fields use backward mapping: output
// pixel p samples the moving image at p + d(p).

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "histreg/error.hpp"

namespace histreg {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

// Single-channel float raster, row-major, nominal range [0,1].
class Image {
public:
    Image() = default;
    Image(int width, int height, float fill = 0.0f);
    Image(int width, int height, std::vector<float> data);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(int x, int y) { return data_[index(x, y)]; }
    float operator()(int x, int y) const { return data_[index(x, y)]; }

    std::span<float> pixels() noexcept { return data_; }
    std::span<const float> pixels() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<float> data_;
};

// Three-channel raster (R,G,B interleaved per pixel), channel values in [0,1].
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::array<float, 3>> data;
};

class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool operator()(int x, int y) const {
        return bits_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                     static_cast<std::size_t>(x)] != 0;
    }
    void set(int x, int y, bool value) {
        bits_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
              static_cast<std::size_t>(x)] = value ? 1 : 0;
    }

    std::span<const unsigned char> bits() const noexcept { return bits_; }
    std::span<unsigned char> bits() noexcept { return bits_; }
    std::size_t count() const noexcept;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<unsigned char> bits_;
};

// 3x3 homogeneous planar transform; the bottom row is always (0,0,1).
class Affine2D {
public:
    Affine2D() = default;  // identity
    Affine2D(double a, double b, double tx, double c, double d, double ty)
        : m_{a, b, tx, c, d, ty} {}

    static Affine2D identity() { return {}; }
    static Affine2D translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty}; }
    // Scale s and counter-clockwise rotation theta (radians) about `centre`, then translate.
    static Affine2D similarity(double scale, double theta, double tx, double ty);
    static Affine2D rotation_about(double theta, Point2 centre);

    double operator()(int row, int col) const;

    double a() const noexcept { return m_[0]; }
    double b() const noexcept { return m_[1]; }
    double tx() const noexcept { return m_[2]; }
    double c() const noexcept { return m_[3]; }
    double d() const noexcept { return m_[4]; }
    double ty() const noexcept { return m_[5]; }

    double determinant() const noexcept { return m_[0] * m_[4] - m_[1] * m_[3]; }
    bool invertible() const noexcept;

    Point2 apply(Point2 p) const noexcept {
        return {m_[0] * p.x + m_[1] * p.y + m_[2], m_[3] * p.x + m_[4] * p.y + m_[5]};
    }

    Affine2D inverse() const;  // throws Error(singular_matrix)

    // (*this) * rhs : apply rhs first.
    Affine2D operator*(const Affine2D& rhs) const noexcept;

    std::array<double, 6> parameters() const noexcept { return m_; }

    friend bool operator==(const Affine2D&, const Affine2D&) = default;

private:
    std::array<double, 6> m_{1, 0, 0, 0, 1, 0};
};

// Dense backward displacement field.
class DisplacementField {
public:
    DisplacementField() = default;
    DisplacementField(int width, int height);  // zero field

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return u_.size(); }

    double& u(int x, int y) { return u_[index(x, y)]; }
    double& v(int x, int y) { return v_[index(x, y)]; }
    double u(int x, int y) const { return u_[index(x, y)]; }
    double v(int x, int y) const { return v_[index(x, y)]; }

    std::span<double> u_data() noexcept { return u_; }
    std::span<double> v_data() noexcept { return v_; }
    std::span<const double> u_data() const noexcept { return u_; }
    std::span<const double> v_data() const noexcept { return v_; }

    bool same_shape(const DisplacementField& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }
    template <typename Raster>
    bool matches(const Raster& r) const noexcept {
        return width_ == r.width() && height_ == r.height();
    }

    // Largest displacement magnitude in pixels.
    double max_magnitude() const noexcept;

    // Bilinear sample with coordinates clamped to the field's extent.
    Point2 sample(double x, double y) const noexcept;

    friend bool operator==(const DisplacementField&, const DisplacementField&) = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> u_;
    std::vector<double> v_;
};

enum class Interpolation { nearest, bilinear };

// Samples img at (x,y); positions outside [0,w-1]x[0,h-1] read as 0.
float sample_bilinear(const Image& img, double x, double y) noexcept;

Image warp_image(const Image& img, const DisplacementField& field,
                 Interpolation interp = Interpolation::bilinear);
BinaryMask warp_mask(const BinaryMask& mask, const DisplacementField& field);
BinaryMask warp_mask(const BinaryMask& mask, const Affine2D& a);

DisplacementField affine_to_field(const Affine2D& a, int width, int height);

// result(p) = inner(p) + outer(p + inner(p)).
DisplacementField compose_fields(const DisplacementField& outer,
                                 const DisplacementField& inner);

std::vector<Point2> transform_points(const Affine2D& a, std::span<const Point2> pts);
std::vector<Point2> warp_points(const DisplacementField& field, std::span<const Point2> pts);

// Resamples a field defined on one grid onto a grid of another size covering
// the same physical extent (full-resolution pixel = scale * grid pixel). The
// displacement vectors are rescaled accordingly.
DisplacementField resample_field(const DisplacementField& field, int width, int height,
                                 double scale_from, double scale_to);

// Conjugates a transform expressed in one working resolution into another:
// p_from * scale_from == p_to * scale_to.
Affine2D rescale_affine(const Affine2D& a, double scale_from, double scale_to);

// Rounds every displacement to the nearest float32 value.
DisplacementField quantize_to_float(const DisplacementField& field);

}  // namespace histreg
