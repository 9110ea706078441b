#include "histreg/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

namespace histreg::eval {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_double(const std::string& s, std::size_t line_no) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) {
        throw Error(ErrorCode::parse, "landmarks: bad number '" + s + "' on line " + std::to_string(line_no));
    }
    return v;
}

}  // namespace

LandmarkSet read_landmarks(std::istream& in) {
    LandmarkSet set;
    std::string line;
    if (!std::getline(in, line)) return set;  // no header: empty set
    std::size_t line_no = 1;
    std::set<int> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        if (cells.size() < 3) {
            throw Error(ErrorCode::parse, "landmarks: expected id,x,y on line " + std::to_string(line_no));
        }
        int id = static_cast<int>(set.size());
        if (!cells[0].empty()) {
            const auto res = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), id);
            if (res.ec != std::errc() || res.ptr != cells[0].data() + cells[0].size()) {
                throw Error(ErrorCode::parse, "landmarks: bad id on line " + std::to_string(line_no));
            }
        }
        if (!seen.insert(id).second) {
            throw Error(ErrorCode::parse, "landmarks: duplicate id " + std::to_string(id));
        }
        set.ids.push_back(id);
        set.points.push_back({parse_double(cells[1], line_no), parse_double(cells[2], line_no)});
    }
    return set;
}

LandmarkSet read_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open landmarks " + path.string());
    return read_landmarks(in);
}

void write_landmarks(std::ostream& out, const LandmarkSet& set) {
    out << "id,x,y\n";
    char buf[64];
    for (std::size_t i = 0; i < set.size(); ++i) {
        out << set.ids[i];
        for (double v : {set.points[i].x, set.points[i].y}) {
            const auto res = std::to_chars(buf, buf + sizeof buf, v);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
}

void write_landmarks(const std::filesystem::path& path, const LandmarkSet& set) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write landmarks " + path.string());
    write_landmarks(out, set);
}

double image_diagonal(int width, int height) noexcept {
    return std::hypot(static_cast<double>(width), static_cast<double>(height));
}

std::vector<double> rtre(std::span<const Point2> warped, std::span<const Point2> reference, double diagonal) {
    if (warped.size() != reference.size()) {
        throw Error(ErrorCode::dimension_mismatch, "rtre: landmark counts differ");
    }
    if (!(diagonal > 0.0)) throw Error(ErrorCode::degenerate_input, "rtre: diagonal must be > 0");
    std::vector<double> out(warped.size());
    for (std::size_t i = 0; i < warped.size(); ++i) {
        out[i] = std::hypot(warped[i].x - reference[i].x, warped[i].y - reference[i].y) / diagonal;
    }
    return out;
}

std::vector<double> rtre(const LandmarkSet& warped, const LandmarkSet& reference, double diagonal) {
    if (warped.ids != reference.ids) throw Error(ErrorCode::dimension_mismatch, "rtre: landmark ids differ");
    return rtre(warped.points, reference.points, diagonal);
}

double median(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorCode::empty_input, "median of an empty list");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

PairEvaluation pair_summary(std::span<const double> before, std::span<const double> after) {
    if (before.size() != after.size()) {
        throw Error(ErrorCode::dimension_mismatch, "pair_summary: landmark counts differ");
    }
    if (after.empty()) throw Error(ErrorCode::empty_input, "pair_summary: no landmarks");
    PairEvaluation e;
    e.rtre_per_landmark.assign(after.begin(), after.end());
    e.median_rtre = median(e.rtre_per_landmark);
    e.median_rtre_before = median(std::vector<double>(before.begin(), before.end()));
    e.mean_rtre = std::accumulate(after.begin(), after.end(), 0.0) / static_cast<double>(after.size());
    e.max_rtre = *std::max_element(after.begin(), after.end());
    std::size_t improved = 0;
    for (std::size_t i = 0; i < after.size(); ++i) improved += after[i] < before[i] ? 1u : 0u;
    e.improved_fraction = static_cast<double>(improved) / static_cast<double>(after.size());
    e.improved = e.median_rtre < e.median_rtre_before;
    return e;
}

std::vector<Point2> scale_landmarks(std::span<const Point2> pts, double scale) {
    if (!(scale > 0.0)) throw Error(ErrorCode::degenerate_input, "scale_landmarks: scale must be > 0");
    std::vector<Point2> out;
    out.reserve(pts.size());
    for (const Point2& p : pts) out.push_back({p.x * scale, p.y * scale});
    return out;
}

std::vector<Point2> warp_landmarks(const DisplacementField& field, double scale_to_full,
                                   std::span<const Point2> target_full) {
    std::vector<Point2> working = scale_landmarks(target_full, 1.0 / scale_to_full);
    // Landmarks sitting a fraction of a pixel outside the working grid are
    // clamped onto it; warp_points rejects anything further out.
    for (Point2& p : working) {
        p.x = std::clamp(p.x, 0.0, static_cast<double>(field.width() - 1));
        p.y = std::clamp(p.y, 0.0, static_cast<double>(field.height() - 1));
    }
    std::vector<Point2> moved = warp_points(field, working);
    // Only the displacement is rescaled so clamping never moves a landmark.
    std::vector<Point2> out(target_full.size());
    for (std::size_t i = 0; i < moved.size(); ++i) {
        out[i] = {target_full[i].x + (moved[i].x - working[i].x) * scale_to_full,
                  target_full[i].y + (moved[i].y - working[i].y) * scale_to_full};
    }
    return out;
}

namespace {

Point2 residual(const DisplacementField& field, Point2 q, Point2 p) {
    const Point2 d = field.sample(q.x, q.y);
    return {q.x + d.x - p.x, q.y + d.y - p.y};
}

Point2 invert_point(const DisplacementField& field, Point2 p) {
    constexpr double h = 0.5;
    Point2 q = p;
    Point2 r = residual(field, q, p);
    double err = std::hypot(r.x, r.y);
    for (int it = 0; it < 60 && err > 1e-9; ++it) {
        const Point2 rx0 = residual(field, {q.x - h, q.y}, p);
        const Point2 rx1 = residual(field, {q.x + h, q.y}, p);
        const Point2 ry0 = residual(field, {q.x, q.y - h}, p);
        const Point2 ry1 = residual(field, {q.x, q.y + h}, p);
        const double j00 = (rx1.x - rx0.x) / (2 * h), j10 = (rx1.y - rx0.y) / (2 * h);
        const double j01 = (ry1.x - ry0.x) / (2 * h), j11 = (ry1.y - ry0.y) / (2 * h);
        const double det = j00 * j11 - j01 * j10;
        Point2 step{r.x, r.y};
        if (std::abs(det) > 1e-12) {
            step = {(j11 * r.x - j01 * r.y) / det, (-j10 * r.x + j00 * r.y) / det};
        }
        double t = 1.0;
        bool moved = false;
        for (int k = 0; k < 20; ++k, t *= 0.5) {
            const Point2 cand{q.x - t * step.x, q.y - t * step.y};
            const Point2 rc = residual(field, cand, p);
            const double ec = std::hypot(rc.x, rc.y);
            if (ec < err) {
                q = cand;
                r = rc;
                err = ec;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    return q;
}

}  // namespace

std::vector<Point2> map_source_landmarks(const DisplacementField& field, double scale_to_full,
                                         std::span<const Point2> source_full) {
    if (!(scale_to_full > 0.0)) throw Error(ErrorCode::degenerate_input, "map_source_landmarks: scale must be > 0");
    if (field.width() == 0 || field.height() == 0) {
        throw Error(ErrorCode::empty_input, "map_source_landmarks: empty field");
    }
    std::vector<Point2> out;
    out.reserve(source_full.size());
    for (const Point2& p : source_full) {
        const Point2 q = invert_point(field, {p.x / scale_to_full, p.y / scale_to_full});
        out.push_back({q.x * scale_to_full, q.y * scale_to_full});
    }
    return out;
}

}  // namespace histreg::eval
