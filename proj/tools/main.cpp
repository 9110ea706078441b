// histreg: register, batch, evaluate, visualize.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "histreg/config.hpp"
#include "histreg/error.hpp"
#include "histreg/evaluation.hpp"
#include "histreg/field_io.hpp"
#include "histreg/pipeline.hpp"
#include "histreg/preprocess.hpp"

namespace fs = std::filesystem;
using namespace histreg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;

struct GlobalOptions {
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> output_dir;
    std::optional<int> jobs;
    std::optional<int> tile;
};

PipelineConfig resolve_config(const GlobalOptions& g) {
    PipelineConfig cfg = g.config ? load_config(*g.config) : PipelineConfig{};
    if (g.seed) cfg.seed = *g.seed;
    if (g.output_dir) cfg.output_dir = *g.output_dir;
    if (g.jobs) cfg.jobs = *g.jobs;
    if (g.tile) cfg.checkerboard_tile = *g.tile;
    validate(cfg);
    return cfg;
}

void print_outcome(const pipeline::PairOutcome& o, const PipelineConfig& cfg) {
    std::printf("%s: %s, selected %s (mind_ssd %.6g)", o.pair_id.c_str(),
                std::string(align::to_string(o.initial.status)).c_str(),
                std::string(decision::to_string(o.selected_result().method)).c_str(), o.selected_result().mind_ssd);
    if (o.evaluation) std::printf(", median rTRE %.5f", o.evaluation->median_rtre);
    std::printf("\n  -> %s\n", (cfg.output_dir / o.pair_id).string().c_str());
}

// Image brought onto a field's canvas: decimated by `scale`, then zero padded.
Image onto_canvas(const Image& img, double scale, int width, int height) {
    Image small = scale > 1.0 ? preprocess::resize_by_scale(img, scale) : img;
    return preprocess::pad_to(small, width, height);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Automatic multimodal registration of histology image pairs"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "RANSAC seed");
    app.add_option("--output-dir", g.output_dir, "directory for per-pair artifacts");
    app.add_option("--jobs", g.jobs, "pairs registered concurrently in a batch");
    app.add_option("--tile", g.tile, "checkerboard tile size in pixels");

    fs::path source, target, source_lm, target_lm, field_path, pairs, output;
    std::string pair_id = "pair";
    double scale = 1.0;

    auto* reg = app.add_subcommand("register", "register one image pair");
    reg->add_option("--source", source, "moving image")->required()->check(CLI::ExistingFile);
    reg->add_option("--target", target, "fixed image")->required()->check(CLI::ExistingFile);
    reg->add_option("--landmarks", source_lm, "source landmarks CSV (id,x,y)")->check(CLI::ExistingFile);
    reg->add_option("--target-landmarks", target_lm, "target landmarks CSV")->check(CLI::ExistingFile);
    reg->add_option("--pair-id", pair_id, "name of the output subdirectory");

    auto* batch = app.add_subcommand("batch", "register every pair listed in a CSV");
    batch->add_option("--pairs", pairs, "pair_id,source,target,source_landmarks,target_landmarks")
        ->required()
        ->check(CLI::ExistingFile);

    auto* evaluate = app.add_subcommand("evaluate", "rTRE of a stored field against landmarks");
    evaluate->add_option("--field", field_path, "DFL1 field written by register")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--scale", scale, "full-resolution pixels per field pixel (report.json scale_to_full)");
    evaluate->add_option("--landmarks", source_lm, "source landmarks CSV")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--target-landmarks", target_lm, "target landmarks CSV")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--target", target, "target image; its diagonal normalises the errors")
        ->required()
        ->check(CLI::ExistingFile);

    auto* visualize = app.add_subcommand("visualize", "checkerboard of two images, optionally through a field");
    visualize->add_option("--source", source, "moving image")->required()->check(CLI::ExistingFile);
    visualize->add_option("--target", target, "fixed image")->required()->check(CLI::ExistingFile);
    visualize->add_option("--field", field_path, "warp the source through this DFL1 field")->check(CLI::ExistingFile);
    visualize->add_option("--scale", scale, "full-resolution pixels per field pixel");
    visualize->add_option("--output", output, "PNG path (default <output-dir>/checkerboard.png)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitFatal;
    }

    try {
        const PipelineConfig cfg = resolve_config(g);

        if (reg->parsed()) {
            pipeline::PairRecord rec{pair_id, source, target, std::nullopt, std::nullopt};
            if (!source_lm.empty()) rec.source_landmarks = source_lm;
            if (!target_lm.empty()) rec.target_landmarks = target_lm;
            print_outcome(pipeline::run_pair(rec, cfg), cfg);
            return kExitOk;
        }

        if (batch->parsed()) {
            const auto report = pipeline::run_batch(pairs, cfg);
            for (const auto& e : report.entries) {
                if (e.outcome) print_outcome(*e.outcome, cfg);
                else std::fprintf(stderr, "%s: error: %s\n", e.pair_id.c_str(), e.error.c_str());
            }
            for (const auto& r : report.row_errors) std::fprintf(stderr, "skipped row: %s\n", r.c_str());
            std::printf("%zu pairs, %zu failed -> %s\n", report.entries.size() + report.row_errors.size(),
                        report.failures(), (cfg.output_dir / "batch_report.json").string().c_str());
            return report.exit_code();
        }

        if (evaluate->parsed()) {
            const auto field = read_field(field_path);
            const auto src = eval::read_landmarks(source_lm);
            const auto tgt = eval::read_landmarks(target_lm);
            const Image timg = pipeline::load_image(target);
            const double diag = eval::image_diagonal(timg.width(), timg.height());
            eval::LandmarkSet warped{src.ids, eval::map_source_landmarks(field, scale, src.points)};
            const auto summary =
                eval::pair_summary(eval::rtre(src, tgt, diag), eval::rtre(warped, tgt, diag));
            nlohmann::ordered_json j;
            j["landmarks"] = summary.rtre_per_landmark.size();
            j["median_rtre"] = summary.median_rtre;
            j["mean_rtre"] = summary.mean_rtre;
            j["max_rtre"] = summary.max_rtre;
            j["median_rtre_before"] = summary.median_rtre_before;
            j["improved_fraction"] = summary.improved_fraction;
            j["improved"] = summary.improved;
            std::cout << j.dump(2) << '\n';
            if (g.output_dir) {
                fs::create_directories(cfg.output_dir);
                eval::write_landmarks(cfg.output_dir / "warped_landmarks.csv", warped);
            }
            return kExitOk;
        }

        if (visualize->parsed()) {
            Image a = pipeline::load_image(target);
            Image b = pipeline::load_image(source);
            if (!field_path.empty()) {
                const auto field = read_field(field_path);
                a = onto_canvas(a, scale, field.width(), field.height());
                b = warp_image(onto_canvas(b, scale, field.width(), field.height()), field);
            } else {
                std::tie(a, b) = preprocess::pad_to_common(a, b);
            }
            if (output.empty()) output = cfg.output_dir / "checkerboard.png";
            if (output.has_parent_path()) fs::create_directories(output.parent_path());
            pipeline::save_image(output, pipeline::render_checkerboard(a, b, cfg.checkerboard_tile));
            std::printf("%s\n", output.string().c_str());
            return kExitOk;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "histreg: %s: %s\n", to_string(e.code()), e.what());
        return kExitFatal;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "histreg: %s\n", e.what());
        return kExitFatal;
    }
    return kExitFatal;
}
