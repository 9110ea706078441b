#pragma once

// End-to-end orchestration: preprocessing, initial alignment, the nonrigid
// engines, automatic selection and landmark evaluation, plus the artifacts
// written per pair and per batch.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "histreg/config.hpp"
#include "histreg/decision.hpp"
#include "histreg/evaluation.hpp"
#include "histreg/initial_align.hpp"

namespace histreg::pipeline {

struct PairRecord {
    std::string pair_id;
    std::filesystem::path source;
    std::filesystem::path target;
    std::optional<std::filesystem::path> source_landmarks;
    std::optional<std::filesystem::path> target_landmarks;
};

// Grayscale in [0,1]. 8/16-bit and float images with 1, 3 or 4 channels.
Image load_image(const std::filesystem::path& path);
// 8-bit PNG (or whatever the extension asks for); values are clamped to [0,1].
void save_image(const std::filesystem::path& path, const Image& img);

// Tile (i, j) comes from `a` when i + j is even.
Image render_checkerboard(const Image& a, const Image& b, int tile);

struct CandidateOutcome {
    decision::RegistrationResult result;
    std::string error;  // nonempty when the engine threw; such candidates are never selected
    double runtime_ms = 0.0;
    bool ok() const noexcept { return error.empty(); }
};

struct PairOutcome {
    std::string pair_id;
    align::InitialAlignmentResult initial;
    std::vector<CandidateOutcome> candidates;  // initial_only is always last
    std::size_t selected = 0;                  // index into candidates
    DisplacementField field;                   // selected field, decision resolution, float-exact
    double scale_to_full = 1.0;                // of `field`
    Image target_view;                         // decision-resolution target, display intensities
    Image warped_source_view;                  // source pulled through `field`, same space
    std::optional<eval::PairEvaluation> evaluation;
    std::optional<eval::LandmarkSet> warped_landmarks;  // source landmarks carried into target space
    std::vector<std::pair<std::string, double>> timings_ms;

    const decision::RegistrationResult& selected_result() const { return candidates.at(selected).result; }
};

PairOutcome register_images(const Image& source_full, const Image& target_full, const PipelineConfig& cfg,
                            const eval::LandmarkSet* source_landmarks = nullptr,
                            const eval::LandmarkSet* target_landmarks = nullptr);

// JSON report; timings are omitted when `include_timings` is false.
std::string report_json(const PairOutcome& outcome, bool include_timings = true);

// Registers one pair and writes <output_dir>/<pair_id>/{field.dfl, report.json,
// checkerboard.png, warped_landmarks.csv}.
PairOutcome run_pair(const PairRecord& record, const PipelineConfig& cfg);

struct BatchEntry {
    std::string pair_id;
    std::optional<PairOutcome> outcome;
    std::string error;
};

struct BatchReport {
    std::vector<BatchEntry> entries;         // CSV order
    std::vector<std::string> row_errors;     // malformed rows
    std::size_t failures() const noexcept;
    int exit_code() const noexcept;          // 0 all good, 2 partial failure
    std::string json() const;
};

// Paths in the CSV are resolved relative to its directory.
std::vector<PairRecord> read_pairs(const std::filesystem::path& csv, std::vector<std::string>* row_errors);

// Throws Error(io/parse) only when the CSV itself is unusable.
BatchReport run_batch(const std::filesystem::path& csv, const PipelineConfig& cfg);

}  // namespace histreg::pipeline
