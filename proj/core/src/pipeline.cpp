#include "histreg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <semaphore>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "histreg/demons.hpp"
#include "histreg/error.hpp"
#include "histreg/field_io.hpp"
#include "histreg/local_affine.hpp"
#include "histreg/mind.hpp"
#include "histreg/preprocess.hpp"
#include "histreg/tps.hpp"

namespace histreg::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using decision::Method;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

float channel_value(const cv::Mat& m, int y, int x, int c, double norm) {
    const int ch = m.channels();
    switch (m.depth()) {
        case CV_8U: return static_cast<float>(m.ptr<std::uint8_t>(y)[x * ch + c] / norm);
        case CV_16U: return static_cast<float>(m.ptr<std::uint16_t>(y)[x * ch + c] / norm);
        case CV_32F: return m.ptr<float>(y)[x * ch + c];
        default: return static_cast<float>(m.ptr<double>(y)[x * ch + c]);
    }
}

}  // namespace

Image load_image(const fs::path& path) {
    const cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (m.empty()) throw Error(ErrorCode::io, "cannot read image " + path.string());
    double norm = 1.0;
    switch (m.depth()) {
        case CV_8U: norm = 255.0; break;
        case CV_16U: norm = 65535.0; break;
        case CV_32F:
        case CV_64F: break;
        default: throw Error(ErrorCode::io, "unsupported pixel depth in " + path.string());
    }
    const int ch = m.channels();
    if (ch == 1) {
        Image out(m.cols, m.rows);
        for (int y = 0; y < m.rows; ++y) {
            for (int x = 0; x < m.cols; ++x) out(x, y) = channel_value(m, y, x, 0, norm);
        }
        return out;
    }
    if (ch != 3 && ch != 4) throw Error(ErrorCode::io, "unsupported channel count in " + path.string());
    RgbImage rgb{m.cols, m.rows, {}};
    rgb.data.resize(static_cast<std::size_t>(m.cols) * static_cast<std::size_t>(m.rows));
    std::size_t i = 0;
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x, ++i) {
            // OpenCV stores BGR(A).
            rgb.data[i] = {channel_value(m, y, x, 2, norm), channel_value(m, y, x, 1, norm),
                           channel_value(m, y, x, 0, norm)};
        }
    }
    return preprocess::to_grayscale(rgb);
}

void save_image(const fs::path& path, const Image& img) {
    if (img.empty()) throw Error(ErrorCode::empty_input, "save_image: empty image");
    cv::Mat m(img.height(), img.width(), CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
        auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < img.width(); ++x) {
            row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(img(x, y), 0.0f, 1.0f) * 255.0f));
        }
    }
    if (!cv::imwrite(path.string(), m)) throw Error(ErrorCode::io, "cannot write image " + path.string());
}

Image render_checkerboard(const Image& a, const Image& b, int tile) {
    if (!a.same_shape(b)) throw Error(ErrorCode::dimension_mismatch, "render_checkerboard: shapes differ");
    if (tile < 1) throw Error(ErrorCode::degenerate_input, "render_checkerboard: tile must be >= 1");
    Image out(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) out(x, y) = ((x / tile + y / tile) % 2 == 0) ? a(x, y) : b(x, y);
    }
    return out;
}

namespace {

preprocess::PreprocessedPair prepare(const Image& source, const Image& target, const PipelineConfig& cfg,
                                     const preprocess::ResolutionPolicy& policy, bool histogram_match) {
    return preprocess::preprocess_pair(source, target, {policy, cfg.extra_sigma, histogram_match});
}

DisplacementField init_field(const Affine2D& a, double scale_from, const preprocess::PreprocessedPair& pair) {
    return affine_to_field(rescale_affine(a, scale_from, pair.scale_to_full), pair.target.width(),
                           pair.target.height());
}

struct EngineOutput {
    DisplacementField field;
    double scale_to_full = 1.0;
};

// Control points are target positions, values are source positions, both at
// the TPS working resolution; the closest descriptor matches win ties.
EngineOutput run_tps(const align::InitialAlignmentResult& ia, double ia_scale,
                     const preprocess::PreprocessedPair& pair, const PipelineConfig& cfg) {
    std::vector<align::Match> pooled;
    for (const auto& set : ia.good_matches) pooled.insert(pooled.end(), set.pairs.begin(), set.pairs.end());
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const align::Match& a, const align::Match& b) { return a.distance < b.distance; });
    const double k = ia_scale / pair.scale_to_full;
    std::vector<Point2> tgt_pts;
    std::vector<Point2> src_pts;
    for (const auto& m : pooled) {
        tgt_pts.push_back({m.target.x * k, m.target.y * k});
        src_pts.push_back({m.source.x * k, m.source.y * k});
    }
    nonrigid::deduplicate_pairs(tgt_pts, src_pts, cfg.tps_dedup_cell);
    const auto cap = static_cast<std::size_t>(cfg.tps_max_points);
    if (tgt_pts.size() > cap) {
        tgt_pts.resize(cap);
        src_pts.resize(cap);
    }
    const auto model = nonrigid::tps_fit(tgt_pts, src_pts, cfg.tps_lambda);
    return {nonrigid::tps_to_field(model, pair.target.width(), pair.target.height(), cfg.tps_grid_step), pair.scale_to_full};
}

EngineOutput run_engine(Method method, const Image& source_full, const Image& target_full,
                        const align::InitialAlignmentResult& ia, double ia_scale, const PipelineConfig& cfg) {
    switch (method) {
        case Method::local_affine: {
            const auto pair = prepare(source_full, target_full, cfg, cfg.local_affine_resolution, true);
            return {nonrigid::local_affine_register(pair.target, pair.source,
                                                    init_field(ia.transform, ia_scale, pair), cfg.local_affine),
                    pair.scale_to_full};
        }
        case Method::demons: {
            const auto pair = prepare(source_full, target_full, cfg, cfg.demons_resolution, true);
            return {nonrigid::demons_register(pair.target, pair.source, init_field(ia.transform, ia_scale, pair),
                                              cfg.demons),
                    pair.scale_to_full};
        }
        case Method::mind_demons: {
            const auto pair = prepare(source_full, target_full, cfg, cfg.mind_demons_resolution, false);
            return {nonrigid::mind_demons_register(pair.target, pair.source,
                                                   init_field(ia.transform, ia_scale, pair), cfg.mind_demons),
                    pair.scale_to_full};
        }
        case Method::tps: {
            const auto pair = prepare(source_full, target_full, cfg, cfg.tps_resolution, true);
            return run_tps(ia, ia_scale, pair, cfg);
        }
        case Method::initial_only: break;
    }
    throw Error(ErrorCode::degenerate_input, "run_engine: not an engine");
}

Image display(const Image& inverted) {
    Image out = inverted;
    for (float& v : out.pixels()) v = 1.0f - v;
    return out;
}

}  // namespace

PairOutcome register_images(const Image& source_full, const Image& target_full, const PipelineConfig& cfg,
                            const eval::LandmarkSet* source_landmarks,
                            const eval::LandmarkSet* target_landmarks) {
    validate(cfg);
    if (source_full.empty() || target_full.empty()) {
        throw Error(ErrorCode::empty_input, "register_images: empty image");
    }
    const auto t_total = Clock::now();
    PairOutcome out;

    auto t = Clock::now();
    const auto ia_pair = prepare(source_full, target_full, cfg, cfg.initial_resolution, true);
    out.timings_ms.emplace_back("preprocess", elapsed_ms(t));

    t = Clock::now();
    align::InitialAlignmentOptions ia_opts;
    ia_opts.dice_threshold = cfg.dice_threshold;
    ia_opts.ransac.iterations = cfg.ransac_iterations;
    ia_opts.ransac.inlier_tolerance = cfg.ransac_tolerance;
    ia_opts.ransac.min_consensus = static_cast<std::size_t>(cfg.min_consensus);
    ia_opts.ransac.seed = cfg.seed;
    ia_opts.angle_step_degrees = cfg.angle_step;
    ia_opts.affine_iterations = cfg.affine_iterations;
    ia_opts.affine_step = cfg.affine_step;
    ia_opts.parallel_detectors = cfg.candidate_parallelism > 1;
    out.initial = align::initial_alignment(ia_pair, ia_opts);
    out.timings_ms.emplace_back("initial_alignment", elapsed_ms(t));

    const double ia_scale = ia_pair.scale_to_full;
    const bool run_nonrigid =
        !(cfg.skip_nonrigid_on_fail && out.initial.status == align::AlignStatus::fail_detected);
    std::vector<Method> engines = run_nonrigid ? cfg.engines : std::vector<Method>{};

    struct EngineRun {
        std::optional<EngineOutput> output;
        std::string error;
        double ms = 0.0;
    };
    std::vector<EngineRun> runs(engines.size());
    {
        std::counting_semaphore<> slots(cfg.candidate_parallelism);
        std::vector<std::future<void>> tasks;
        for (std::size_t i = 0; i < engines.size(); ++i) {
            tasks.push_back(std::async(std::launch::async, [&, i] {
                slots.acquire();
                const auto start = Clock::now();
                try {
                    runs[i].output = run_engine(engines[i], source_full, target_full, out.initial, ia_scale, cfg);
                } catch (const std::exception& e) {
                    runs[i].error = e.what();
                }
                runs[i].ms = elapsed_ms(start);
                slots.release();
            }));
        }
        for (auto& task : tasks) task.get();
    }
    for (std::size_t i = 0; i < engines.size(); ++i) {
        out.timings_ms.emplace_back(std::string(decision::to_string(engines[i])), runs[i].ms);
    }

    t = Clock::now();
    const auto dec = prepare(source_full, target_full, cfg, cfg.decision_resolution, false);
    const int dw = dec.target.width();
    const int dh = dec.target.height();
    const auto fixed_desc = nonrigid::mind_descriptor(dec.target);
    const auto score = [&](Method method, const DisplacementField& field) {
        return decision::score_candidate(method, quantize_to_float(field), fixed_desc, dec.source, dec.target_mask,
                                         dec.source_mask);
    };
    for (std::size_t i = 0; i < engines.size(); ++i) {
        CandidateOutcome c;
        c.runtime_ms = runs[i].ms;
        c.result.method = engines[i];
        if (runs[i].output) {
            const auto& o = *runs[i].output;
            c.result = score(engines[i], resample_field(o.field, dw, dh, o.scale_to_full, dec.scale_to_full));
        } else {
            c.error = runs[i].error;
        }
        out.candidates.push_back(std::move(c));
    }
    {
        CandidateOutcome c;
        c.result = score(Method::initial_only, init_field(out.initial.transform, ia_scale, dec));
        out.candidates.push_back(std::move(c));
    }
    std::vector<decision::RegistrationResult> eligible;
    std::vector<std::size_t> eligible_index;
    for (std::size_t i = 0; i < out.candidates.size(); ++i) {
        if (out.candidates[i].ok()) {
            eligible.push_back(out.candidates[i].result);
            eligible_index.push_back(i);
        }
    }
    out.selected = eligible_index[decision::select_best(eligible)];
    out.field = out.candidates[out.selected].result.field;
    out.scale_to_full = dec.scale_to_full;
    out.target_view = display(dec.target);
    out.warped_source_view = display(warp_image(dec.source, out.field));
    out.timings_ms.emplace_back("decision", elapsed_ms(t));

    t = Clock::now();
    if (source_landmarks != nullptr) {
        eval::LandmarkSet warped;
        warped.ids = source_landmarks->ids;
        warped.points = eval::map_source_landmarks(out.field, out.scale_to_full, source_landmarks->points);
        if (target_landmarks != nullptr) {
            const double diag = eval::image_diagonal(target_full.width(), target_full.height());
            const auto before = eval::rtre(*source_landmarks, *target_landmarks, diag);
            const auto after = eval::rtre(warped, *target_landmarks, diag);
            out.evaluation = eval::pair_summary(before, after);
            out.evaluation->diagonal = diag;
        }
        out.warped_landmarks = std::move(warped);
    }
    out.timings_ms.emplace_back("evaluation", elapsed_ms(t));
    out.timings_ms.emplace_back("total", elapsed_ms(t_total));
    return out;
}

std::string report_json(const PairOutcome& o, bool include_timings) {
    json j;
    j["pair_id"] = o.pair_id;
    j["status"] = std::string(align::to_string(o.initial.status));
    json initial;
    initial["method"] = std::string(align::to_string(o.initial.method));
    initial["dice"] = o.initial.dice_score;
    initial["detector"] =
        o.initial.detector_kind ? json(std::string(align::to_string(*o.initial.detector_kind))) : json(nullptr);
    initial["inliers"] = o.initial.inlier_matches.pairs.size();
    initial["transform"] = o.initial.transform.parameters();
    j["initial"] = std::move(initial);
    json candidates = json::array();
    for (const auto& c : o.candidates) {
        json cj;
        cj["method"] = std::string(decision::to_string(c.result.method));
        if (c.ok()) {
            cj["mind_ssd"] = c.result.mind_ssd;
            cj["dice_after"] = c.result.dice_after;
        } else {
            cj["error"] = c.error;
        }
        candidates.push_back(std::move(cj));
    }
    j["candidates"] = std::move(candidates);
    j["selected"] = std::string(decision::to_string(o.selected_result().method));
    j["scale_to_full"] = o.scale_to_full;
    j["field"] = {{"width", o.field.width()}, {"height", o.field.height()}};
    if (o.evaluation) {
        const auto& e = *o.evaluation;
        j["eval"] = {{"median_rtre", e.median_rtre},
                     {"mean_rtre", e.mean_rtre},
                     {"max_rtre", e.max_rtre},
                     {"median_rtre_before", e.median_rtre_before},
                     {"improved_fraction", e.improved_fraction},
                     {"improved", e.improved},
                     {"diagonal", e.diagonal},
                     {"landmarks", e.rtre_per_landmark.size()}};
    } else {
        j["eval"] = nullptr;
    }
    if (include_timings) {
        json tj = json::object();
        for (const auto& [stage, ms] : o.timings_ms) tj[stage] = ms;
        j["timings_ms"] = std::move(tj);
    }
    return j.dump(2) + "\n";
}

PairOutcome run_pair(const PairRecord& record, const PipelineConfig& cfg) {
    if (record.pair_id.empty() || record.source.empty() || record.target.empty()) {
        throw Error(ErrorCode::parse, "run_pair: pair id and image paths must be nonempty");
    }
    const Image source = load_image(record.source);
    const Image target = load_image(record.target);
    std::optional<eval::LandmarkSet> src_lm;
    std::optional<eval::LandmarkSet> tgt_lm;
    if (record.source_landmarks) src_lm = eval::read_landmarks(*record.source_landmarks);
    if (record.target_landmarks) tgt_lm = eval::read_landmarks(*record.target_landmarks);

    PairOutcome out = register_images(source, target, cfg, src_lm ? &*src_lm : nullptr, tgt_lm ? &*tgt_lm : nullptr);
    out.pair_id = record.pair_id;

    const fs::path dir = cfg.output_dir / record.pair_id;
    fs::create_directories(dir);
    write_field(dir / "field.dfl", out.field);
    save_image(dir / "checkerboard.png",
               render_checkerboard(out.target_view, out.warped_source_view, cfg.checkerboard_tile));
    if (out.warped_landmarks) eval::write_landmarks(dir / "warped_landmarks.csv", *out.warped_landmarks);
    std::ofstream report(dir / "report.json", std::ios::binary);
    report << report_json(out);
    if (!report) throw Error(ErrorCode::io, "cannot write " + (dir / "report.json").string());
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::vector<PairRecord> read_pairs(const fs::path& csv, std::vector<std::string>* row_errors) {
    std::ifstream in(csv);
    if (!in) throw Error(ErrorCode::io, "cannot open pair list " + csv.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::parse, "pair list is empty: " + csv.string());
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "pair_id" || header[1] != "source" || header[2] != "target") {
        throw Error(ErrorCode::parse, "pair list header must start with pair_id,source,target");
    }
    const fs::path base = csv.parent_path();
    const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    std::vector<PairRecord> records;
    std::set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        const auto fail = [&](const std::string& why) {
            if (row_errors) row_errors->push_back("line " + std::to_string(line_no) + ": " + why);
        };
        if (cells.size() < 3 || cells.size() > 5) {
            fail("expected 3 to 5 columns");
            continue;
        }
        if (cells[0].empty() || cells[1].empty() || cells[2].empty()) {
            fail("pair_id, source and target must be nonempty");
            continue;
        }
        if (!seen.insert(cells[0]).second) {
            fail("duplicate pair_id " + cells[0]);
            continue;
        }
        PairRecord r{cells[0], resolve(cells[1]), resolve(cells[2]), std::nullopt, std::nullopt};
        if (cells.size() > 3 && !cells[3].empty()) r.source_landmarks = resolve(cells[3]);
        if (cells.size() > 4 && !cells[4].empty()) r.target_landmarks = resolve(cells[4]);
        records.push_back(std::move(r));
    }
    return records;
}

std::size_t BatchReport::failures() const noexcept {
    return row_errors.size() + static_cast<std::size_t>(std::count_if(
                                   entries.begin(), entries.end(), [](const BatchEntry& e) { return !e.outcome; }));
}

int BatchReport::exit_code() const noexcept { return failures() == 0 ? 0 : 2; }

std::string BatchReport::json() const {
    pipeline::json j;
    pipeline::json pairs = pipeline::json::array();
    double median_sum = 0.0;
    std::size_t evaluated = 0;
    std::size_t improved = 0;
    for (const auto& e : entries) {
        pipeline::json pj;
        pj["pair_id"] = e.pair_id;
        if (e.outcome) {
            const auto& o = *e.outcome;
            pj["status"] = std::string(align::to_string(o.initial.status));
            pj["selected"] = std::string(decision::to_string(o.selected_result().method));
            if (o.evaluation) {
                pj["median_rtre"] = o.evaluation->median_rtre;
                pj["improved"] = o.evaluation->improved;
                median_sum += o.evaluation->median_rtre;
                improved += o.evaluation->improved ? 1 : 0;
                ++evaluated;
            }
            pipeline::json tj = pipeline::json::object();
            for (const auto& [stage, ms] : o.timings_ms) tj[stage] = ms;
            pj["timings_ms"] = std::move(tj);
        } else {
            pj["status"] = "error";
            pj["error"] = e.error;
        }
        pairs.push_back(std::move(pj));
    }
    j["pairs"] = std::move(pairs);
    j["row_errors"] = row_errors;
    j["summary"] = {{"pairs", entries.size()},
                    {"failed", failures()},
                    {"evaluated", evaluated},
                    {"average_median_rtre", evaluated ? pipeline::json(median_sum / static_cast<double>(evaluated))
                                                      : pipeline::json(nullptr)},
                    {"improved_pair_fraction", evaluated ? pipeline::json(static_cast<double>(improved) /
                                                                          static_cast<double>(evaluated))
                                                         : pipeline::json(nullptr)}};
    return j.dump(2) + "\n";
}

BatchReport run_batch(const fs::path& csv, const PipelineConfig& cfg) {
    validate(cfg);
    BatchReport report;
    const auto records = read_pairs(csv, &report.row_errors);
    report.entries.resize(records.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
            auto& entry = report.entries[i];
            entry.pair_id = records[i].pair_id;
            try {
                entry.outcome = run_pair(records[i], cfg);
            } catch (const std::exception& e) {
                entry.error = e.what();
            }
        }
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), records.size());
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    pool.clear();

    fs::create_directories(cfg.output_dir);
    std::ofstream out(cfg.output_dir / "batch_report.json", std::ios::binary);
    out << report.json();
    if (!out) throw Error(ErrorCode::io, "cannot write batch report");
    return report;
}

}  // namespace histreg::pipeline
