#include "histreg/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Dense>
#include <opencv2/core.hpp>
#include <opencv2/features2d.hpp>

namespace histreg::align {

namespace {

cv::Mat to_u8(const Image& img) {
    cv::Mat out(img.height(), img.width(), CV_8U);
    const auto px = img.pixels();
    for (int y = 0; y < img.height(); ++y) {
        auto* row = out.ptr<std::uint8_t>(y);
        for (int x = 0; x < img.width(); ++x) {
            const double v = std::clamp(static_cast<double>(px[static_cast<std::size_t>(y) * img.width() + x]), 0.0, 1.0);
            row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return out;
}

cv::Ptr<cv::Feature2D> make_detector(DetectorKind kind, std::size_t max_keypoints) {
    switch (kind) {
        case DetectorKind::blob_scale_space:
            return cv::SIFT::create(static_cast<int>(max_keypoints));
        case DetectorKind::fast_binary:
            return cv::ORB::create(static_cast<int>(max_keypoints));
        case DetectorKind::hessian_blob:
            return cv::KAZE::create();
    }
    return {};
}

double hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) {
    std::size_t bits = 0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        bits += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
    }
    return static_cast<double>(bits);
}

struct Nearest {
    std::vector<int> best;
    std::vector<double> best_dist;
    std::vector<double> second_dist;
    std::vector<int> reverse_best;  // for each target, closest source
};

void consider(Nearest& nn, std::vector<double>& reverse_dist, int i, int j, double d) {
    const auto si = static_cast<std::size_t>(i);
    if (d < nn.best_dist[si]) {
        nn.second_dist[si] = nn.best_dist[si];
        nn.best_dist[si] = d;
        nn.best[si] = j;
    } else if (d < nn.second_dist[si]) {
        nn.second_dist[si] = d;
    }
    const auto sj = static_cast<std::size_t>(j);
    if (d < reverse_dist[sj]) {
        reverse_dist[sj] = d;
        nn.reverse_best[sj] = i;
    }
}

Nearest nearest_neighbours(std::span<const Keypoint> source, std::span<const Keypoint> target) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    Nearest nn;
    nn.best.assign(source.size(), -1);
    nn.best_dist.assign(source.size(), inf);
    nn.second_dist.assign(source.size(), inf);
    nn.reverse_best.assign(target.size(), -1);
    std::vector<double> reverse_dist(target.size(), inf);

    const bool is_float = std::holds_alternative<FloatDescriptor>(source.front().descriptor);
    if (!is_float) {
        for (std::size_t i = 0; i < source.size(); ++i) {
            const auto& a = std::get<BinaryDescriptor>(source[i].descriptor);
            for (std::size_t j = 0; j < target.size(); ++j) {
                consider(nn, reverse_dist, static_cast<int>(i), static_cast<int>(j),
                         hamming(a, std::get<BinaryDescriptor>(target[j].descriptor)));
            }
        }
        return nn;
    }

    const auto dim = static_cast<Eigen::Index>(std::get<FloatDescriptor>(source.front().descriptor).size());
    const auto pack = [dim](std::span<const Keypoint> kps) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(kps.size()), dim);
        for (std::size_t i = 0; i < kps.size(); ++i) {
            const auto& d = std::get<FloatDescriptor>(kps[i].descriptor);
            if (static_cast<Eigen::Index>(d.size()) != dim) {
                throw Error(ErrorCode::dimension_mismatch, "match_features: descriptor lengths differ");
            }
            for (Eigen::Index k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(i), k) = d[static_cast<std::size_t>(k)];
        }
        return m;
    };
    const Eigen::MatrixXd s = pack(source);
    const Eigen::MatrixXd t = pack(target);
    const Eigen::VectorXd s_norm = s.rowwise().squaredNorm();
    const Eigen::VectorXd t_norm = t.rowwise().squaredNorm();

    constexpr Eigen::Index block = 256;
    for (Eigen::Index r0 = 0; r0 < s.rows(); r0 += block) {
        const Eigen::Index rows = std::min(block, s.rows() - r0);
        const Eigen::MatrixXd dots = s.middleRows(r0, rows) * t.transpose();
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < t.rows(); ++c) {
                const double d2 = s_norm(r0 + r) + t_norm(c) - 2.0 * dots(r, c);
                consider(nn, reverse_dist, static_cast<int>(r0 + r), static_cast<int>(c),
                         std::sqrt(std::max(d2, 0.0)));
            }
        }
    }
    return nn;
}

double residual(const Affine2D& a, const PointPair& p) {
    const Point2 q = a.apply(p.from);
    return std::hypot(q.x - p.to.x, q.y - p.to.y);
}

Affine2D fit_similarity_unreflected(std::span<const PointPair> pairs, double& ssr) {
    const double n = static_cast<double>(pairs.size());
    Point2 mf, mt;
    for (const auto& p : pairs) {
        mf.x += p.from.x;
        mf.y += p.from.y;
        mt.x += p.to.x;
        mt.y += p.to.y;
    }
    mf = {mf.x / n, mf.y / n};
    mt = {mt.x / n, mt.y / n};

    double a = 0.0, b = 0.0, norm = 0.0;
    for (const auto& p : pairs) {
        const double px = p.from.x - mf.x, py = p.from.y - mf.y;
        const double qx = p.to.x - mt.x, qy = p.to.y - mt.y;
        a += px * qx + py * qy;
        b += px * qy - py * qx;
        norm += px * px + py * py;
    }
    if (norm < 1e-12) throw Error(ErrorCode::degenerate_input, "estimate_similarity: coincident points");
    const double sc = a / norm;  // scale * cos
    const double ss = b / norm;  // scale * sin
    if (std::hypot(sc, ss) < 1e-12) {
        throw Error(ErrorCode::degenerate_input, "estimate_similarity: coincident targets");
    }
    const Affine2D out{sc, -ss, mt.x - (sc * mf.x - ss * mf.y), ss, sc, mt.y - (ss * mf.x + sc * mf.y)};
    ssr = 0.0;
    for (const auto& p : pairs) {
        const double r = residual(out, p);
        ssr += r * r;
    }
    return out;
}

}  // namespace

std::string_view to_string(DetectorKind kind) noexcept {
    switch (kind) {
        case DetectorKind::blob_scale_space: return "blob_scale_space";
        case DetectorKind::fast_binary: return "fast_binary";
        case DetectorKind::hessian_blob: return "hessian_blob";
    }
    return "unknown";
}

std::vector<Keypoint> detect_features(const Image& img, DetectorKind kind, std::size_t max_keypoints) {
    if (img.width() < 64 || img.height() < 64) {
        throw Error(ErrorCode::too_small, "detect_features: image must be at least 64x64");
    }
    const cv::Mat u8 = to_u8(img);
    std::vector<cv::KeyPoint> cv_kps;
    cv::Mat desc;
    make_detector(kind, max_keypoints)->detectAndCompute(u8, cv::noArray(), cv_kps, desc);
    if (cv_kps.empty() || desc.empty()) return {};

    std::vector<std::size_t> order(cv_kps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ka = cv_kps[a];
        const auto& kb = cv_kps[b];
        if (ka.response != kb.response) return ka.response > kb.response;
        if (ka.pt.y != kb.pt.y) return ka.pt.y < kb.pt.y;
        if (ka.pt.x != kb.pt.x) return ka.pt.x < kb.pt.x;
        if (ka.size != kb.size) return ka.size < kb.size;
        return ka.angle < kb.angle;
    });
    if (order.size() > max_keypoints) order.resize(max_keypoints);

    std::vector<Keypoint> out;
    out.reserve(order.size());
    for (std::size_t idx : order) {
        const cv::KeyPoint& k = cv_kps[idx];
        Keypoint kp;
        kp.x = k.pt.x;
        kp.y = k.pt.y;
        kp.scale = k.size;
        kp.orientation = k.angle >= 0 ? k.angle * CV_PI / 180.0 : 0.0;
        kp.response = k.response;
        const int row = static_cast<int>(idx);
        if (desc.type() == CV_8U) {
            const auto* p = desc.ptr<std::uint8_t>(row);
            kp.descriptor = BinaryDescriptor(p, p + desc.cols);
        } else {
            cv::Mat f;
            desc.row(row).convertTo(f, CV_32F);
            const auto* p = f.ptr<float>(0);
            kp.descriptor = FloatDescriptor(p, p + f.cols);
        }
        out.push_back(std::move(kp));
    }
    return out;
}

double descriptor_distance(const Descriptor& a, const Descriptor& b) {
    if (a.index() != b.index()) {
        throw Error(ErrorCode::dimension_mismatch, "descriptor_distance: mixed descriptor kinds");
    }
    if (const auto* fa = std::get_if<FloatDescriptor>(&a)) {
        const auto& fb = std::get<FloatDescriptor>(b);
        if (fa->size() != fb.size()) {
            throw Error(ErrorCode::dimension_mismatch, "descriptor_distance: length mismatch");
        }
        double s = 0.0;
        for (std::size_t i = 0; i < fa->size(); ++i) {
            const double d = static_cast<double>((*fa)[i]) - fb[i];
            s += d * d;
        }
        return std::sqrt(s);
    }
    return hamming(std::get<BinaryDescriptor>(a), std::get<BinaryDescriptor>(b));
}

MatchSet match_features(std::span<const Keypoint> source, std::span<const Keypoint> target,
                        DetectorKind kind, double ratio) {
    if (source.empty() || target.empty()) {
        throw Error(ErrorCode::empty_input, "match_features: empty keypoint set");
    }
    MatchSet out;
    out.detector_kind = kind;
    const Nearest nn = nearest_neighbours(source, target);
    for (std::size_t i = 0; i < source.size(); ++i) {
        const int j = nn.best[i];
        if (j < 0 || nn.reverse_best[static_cast<std::size_t>(j)] != static_cast<int>(i)) continue;
        if (!(nn.best_dist[i] < ratio * nn.second_dist[i])) continue;
        const Keypoint& t = target[static_cast<std::size_t>(j)];
        out.pairs.push_back({source[i], t, descriptor_distance(source[i].descriptor, t.descriptor)});
    }
    return out;
}

Affine2D estimate_similarity(std::span<const PointPair> pairs, bool allow_reflection) {
    if (pairs.size() < 2) {
        throw Error(ErrorCode::degenerate_input, "estimate_similarity: needs at least two pairs");
    }
    double ssr = 0.0;
    const Affine2D direct = fit_similarity_unreflected(pairs, ssr);
    if (!allow_reflection) return direct;

    // Fit against y-mirrored sources, then fold the mirror back in.
    std::vector<PointPair> mirrored(pairs.begin(), pairs.end());
    for (auto& p : mirrored) p.from.y = -p.from.y;
    double ssr_mirror = 0.0;
    const Affine2D fit = fit_similarity_unreflected(mirrored, ssr_mirror);
    if (ssr_mirror + 1e-12 < ssr) return fit * Affine2D{1, 0, 0, 0, -1, 0};
    return direct;
}

std::vector<PointPair> target_to_source_pairs(const MatchSet& matches) {
    std::vector<PointPair> pairs;
    pairs.reserve(matches.pairs.size());
    for (const auto& m : matches.pairs) {
        pairs.push_back({{m.target.x, m.target.y}, {m.source.x, m.source.y}});
    }
    return pairs;
}

RansacResult ransac_similarity(const MatchSet& matches, const RansacOptions& options) {
    const std::vector<PointPair> pairs = target_to_source_pairs(matches);
    const std::size_t n = pairs.size();
    if (n < 2) throw Error(ErrorCode::no_consensus, "ransac_similarity: fewer than two matches");

    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);

    std::size_t best_count = 0;
    double best_mean = std::numeric_limits<double>::infinity();
    Affine2D best_model;
    std::array<PointPair, 2> sample;

    for (int it = 0; it < options.iterations; ++it) {
        const std::size_t i = pick(rng);
        std::size_t j = pick(rng);
        if (i == j) continue;
        sample = {pairs[i], pairs[j]};
        if (std::hypot(sample[0].from.x - sample[1].from.x, sample[0].from.y - sample[1].from.y) < 1.0 ||
            std::hypot(sample[0].to.x - sample[1].to.x, sample[0].to.y - sample[1].to.y) < 1.0) {
            continue;
        }
        Affine2D model;
        try {
            model = estimate_similarity(sample);
        } catch (const Error&) {
            continue;
        }
        std::size_t count = 0;
        double sum = 0.0;
        for (const auto& p : pairs) {
            const double r = residual(model, p);
            if (r <= options.inlier_tolerance) {
                ++count;
                sum += r;
            }
        }
        if (count == 0) continue;
        const double mean = sum / static_cast<double>(count);
        if (count > best_count || (count == best_count && mean < best_mean)) {
            best_count = count;
            best_mean = mean;
            best_model = model;
        }
    }
    if (best_count < options.min_consensus) {
        throw Error(ErrorCode::no_consensus,
                    "ransac_similarity: best consensus " + std::to_string(best_count) + " < " +
                        std::to_string(options.min_consensus));
    }

    // Refit on the consensus set until it stops changing.
    std::vector<std::size_t> inliers;
    Affine2D model = best_model;
    for (int round = 0; round < 5; ++round) {
        std::vector<std::size_t> next;
        for (std::size_t k = 0; k < n; ++k) {
            if (residual(model, pairs[k]) <= options.inlier_tolerance) next.push_back(k);
        }
        if (next.size() < options.min_consensus) break;
        if (next == inliers) break;
        inliers = std::move(next);
        std::vector<PointPair> subset;
        subset.reserve(inliers.size());
        for (std::size_t k : inliers) subset.push_back(pairs[k]);
        model = estimate_similarity(subset);
    }
    if (inliers.empty()) {
        for (std::size_t k = 0; k < n; ++k) {
            if (residual(best_model, pairs[k]) <= options.inlier_tolerance) inliers.push_back(k);
        }
        model = best_model;
    }

    RansacResult result;
    result.transform = model;
    result.inliers.detector_kind = matches.detector_kind;
    double ss = 0.0;
    for (std::size_t k : inliers) {
        result.inliers.pairs.push_back(matches.pairs[k]);
        const double r = residual(model, pairs[k]);
        ss += r * r;
    }
    result.inlier_rms = std::sqrt(ss / static_cast<double>(inliers.size()));
    return result;
}

}  // namespace histreg::align
