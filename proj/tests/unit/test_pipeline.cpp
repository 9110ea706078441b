#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "histreg/config.hpp"
#include "histreg/error.hpp"
#include "histreg/field_io.hpp"
#include "histreg/pipeline.hpp"
#include "histreg/preprocess.hpp"
#include "synth.hpp"

namespace fs = std::filesystem;
using namespace histreg;
using namespace histreg::pipeline;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("histreg_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

constexpr int kSize = 128;

PipelineConfig small_config(const fs::path& out) {
    auto cfg = desk_scale_config(kSize);
    cfg.output_dir = out;
    cfg.demons.iters_per_level = 20;
    cfg.mind_demons.iters_per_level = 20;
    return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Source image, a gently deformed target and matching landmark files.
void write_pair(const fs::path& dir, const std::string& name, std::uint64_t seed) {
    const auto scene = synth::tissue_scene(kSize, seed);
    const synth::Map phi = [](Point2 p) { return Point2{p.x + 1.5 * std::sin(p.y / 20.0), p.y + 1.0}; };
    save_image(dir / (name + "_s.png"), synth::render(scene, kSize, kSize));
    save_image(dir / (name + "_t.png"), synth::render(scene, kSize, kSize, phi));
    const auto tl = synth::landmarks_in_tissue(scene, phi, kSize, kSize, 12, seed + 1);
    eval::LandmarkSet t, s;
    for (std::size_t i = 0; i < tl.size(); ++i) {
        t.ids.push_back(static_cast<int>(i));
        t.points.push_back(tl[i]);
        s.ids.push_back(static_cast<int>(i));
        s.points.push_back(phi(tl[i]));
    }
    eval::write_landmarks(dir / (name + "_s.csv"), s);
    eval::write_landmarks(dir / (name + "_t.csv"), t);
}

}  // namespace

TEST_CASE("config round trip and validation") {
    PipelineConfig cfg;
    cfg.seed = 42;
    cfg.demons.sigma_fluid = 2.5;
    cfg.local_affine.level_schedule = {256, 64};
    cfg.engines = {decision::Method::demons, decision::Method::tps};
    cfg.initial_resolution = preprocess::ResolutionPolicy::min_side(777);
    const std::string text = write_config(cfg);
    std::istringstream in(text);
    const auto back = parse_config(in);
    CHECK(write_config(back) == text);
    CHECK(back.seed == 42);
    CHECK(back.local_affine.level_schedule == std::vector<int>{256, 64});
    CHECK(back.engines.size() == 2);

    std::istringstream partial("# comment\ndemons.levels = 3\nseed=7\n");
    const auto p = parse_config(partial);
    CHECK(p.demons.levels == 3);
    CHECK(p.seed == 7);
    CHECK(p.mind_demons.levels == 4);

    for (const char* bad : {"nope = 1\n", "demons.levels = x\n", "demons.levels = 0\n", "align.dice_threshold = 1.5\n",
                            "engines = demons,initial_only\n", "seed\n"}) {
        CAPTURE(bad);
        std::istringstream b(bad);
        CHECK_THROWS_AS(parse_config(b), Error);
    }
}

TEST_CASE("render_checkerboard") {
    const Image a(32, 16, 0.0f), b(32, 16, 1.0f);
    CHECK(render_checkerboard(a, a, 8) == a);
    const auto c = render_checkerboard(a, b, 8);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 32; ++x) CHECK(c(x, y) == static_cast<float>((x / 8 + y / 8) % 2));
    const auto wide = render_checkerboard(a, b, 32);
    for (int y = 0; y < 16; ++y) CHECK(wide(0, y) == wide(31, y));
    CHECK(render_checkerboard(Image(8, 40, 0.0f), Image(8, 40, 1.0f), 8)(0, 8) == 1.0f);
    CHECK_THROWS_AS(render_checkerboard(a, Image(8, 8), 4), Error);
    CHECK_THROWS_AS(render_checkerboard(a, b, 0), Error);
}

TEST_CASE("image io") {
    TempDir tmp("io");
    Image img(20, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x) img(x, y) = static_cast<float>((x * 13 + y * 7) % 256) / 255.0f;
    save_image(tmp.path / "a.png", img);
    const auto back = load_image(tmp.path / "a.png");
    REQUIRE(back.width() == 20);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) < 0.5 / 255.0);
    CHECK_THROWS_AS(load_image(tmp.path / "missing.png"), Error);
}

TEST_CASE("register_images on an identical pair") {
    const auto scene = synth::tissue_scene(kSize, 3);
    const Image img = synth::render(scene, kSize, kSize);
    const auto cfg = small_config("unused");
    const auto tl = synth::landmarks_in_tissue(scene, {}, kSize, kSize, 10, 4);
    const eval::LandmarkSet lm{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, tl};
    const auto out = register_images(img, img, cfg, &lm, &lm);
    CHECK(out.initial.status == align::AlignStatus::ok);
    CHECK(out.field.max_magnitude() < 0.05);
    CHECK(out.selected_result().mind_ssd < 1e-6);
    REQUIRE(out.evaluation.has_value());
    CHECK(out.evaluation->median_rtre < 0.001);
    CHECK(out.candidates.back().result.method == decision::Method::initial_only);
    CHECK(out.candidates.size() == 5);
}

TEST_CASE("register_images on an unrelated pair keeps the initial result") {
    const Image a = synth::render(synth::random_texture_scene(kSize, 1), kSize, kSize);
    const Image b = synth::render(synth::random_texture_scene(kSize, 2), kSize, kSize);
    const auto out = register_images(a, b, small_config("unused"));
    CHECK(out.initial.status == align::AlignStatus::fail_detected);
    CHECK(out.selected_result().method == decision::Method::initial_only);
    const auto j = nlohmann::json::parse(report_json(out));
    CHECK(j["status"] == "fail_detected");
    CHECK(j["selected"] == "initial_only");
    CHECK(j["eval"].is_null());
}

TEST_CASE("run_pair artifacts") {
    TempDir tmp("pair");
    write_pair(tmp.path, "p", 11);
    auto cfg = small_config(tmp.path / "out");
    const PairRecord rec{"p", tmp.path / "p_s.png", tmp.path / "p_t.png", tmp.path / "p_s.csv", tmp.path / "p_t.csv"};
    const auto out = run_pair(rec, cfg);
    const auto dir = tmp.path / "out" / "p";
    for (const char* f : {"field.dfl", "report.json", "checkerboard.png", "warped_landmarks.csv"}) {
        CAPTURE(f);
        CHECK(fs::exists(dir / f));
    }
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    for (const char* key : {"pair_id", "status", "initial", "candidates", "selected", "eval", "timings_ms"}) {
        CAPTURE(key);
        CHECK(j.contains(key));
    }
    CHECK(j["initial"].contains("method"));
    CHECK(j["initial"].contains("dice"));
    CHECK(j["candidates"].size() == out.candidates.size());
    CHECK(j["candidates"][0].contains("mind_ssd"));
    CHECK(j["eval"]["median_rtre"].get<double>() < 0.005);

    // The reported score can be recomputed from the stored field.
    const auto field = read_field(dir / "field.dfl");
    CHECK(field == out.field);
    const auto dec = preprocess::preprocess_pair(load_image(rec.source), load_image(rec.target),
                                                 {cfg.decision_resolution, cfg.extra_sigma, false});
    const double again = decision::masked_mind_ssd(dec.target, warp_image(dec.source, field), dec.target_mask);
    double reported = 0.0;
    for (const auto& c : j["candidates"])
        if (c["method"] == j["selected"]) reported = c["mind_ssd"].get<double>();
    CHECK(std::abs(again - reported) < 1e-6);
    CHECK(eval::read_landmarks(dir / "warped_landmarks.csv").size() == 12);

    // Same seed, same bytes.
    cfg.output_dir = tmp.path / "out2";
    const auto out2 = run_pair(rec, cfg);
    CHECK(slurp(tmp.path / "out2" / "p" / "field.dfl") == slurp(dir / "field.dfl"));
    CHECK(report_json(out2, false) == report_json(out, false));
}

TEST_CASE("read_pairs") {
    TempDir tmp("csv");
    write_text(tmp.path / "pairs.csv",
               "pair_id,source,target,source_landmarks,target_landmarks\n"
               "a,x.png,y.png,,\n"
               "b,x.png\n"
               "a,x.png,y.png\n"
               "c,sub/x.png,/abs/y.png,l.csv\n"
               "\n");
    std::vector<std::string> errors;
    const auto recs = read_pairs(tmp.path / "pairs.csv", &errors);
    REQUIRE(recs.size() == 2);
    CHECK(errors.size() == 2);
    CHECK(recs[0].source == tmp.path / "x.png");
    CHECK_FALSE(recs[0].source_landmarks.has_value());
    CHECK(recs[1].target == fs::path("/abs/y.png"));
    CHECK(recs[1].source_landmarks == tmp.path / "l.csv");

    write_text(tmp.path / "bad.csv", "id,src,tgt\n");
    CHECK_THROWS_AS(read_pairs(tmp.path / "bad.csv", nullptr), Error);
    CHECK_THROWS_AS(read_pairs(tmp.path / "none.csv", nullptr), Error);
}

TEST_CASE("run_batch") {
    TempDir tmp("batch");
    SUBCASE("header only") {
        write_text(tmp.path / "pairs.csv", "pair_id,source,target,source_landmarks,target_landmarks\n");
        const auto r = run_batch(tmp.path / "pairs.csv", small_config(tmp.path / "out"));
        CHECK(r.entries.empty());
        CHECK(r.exit_code() == 0);
        CHECK(fs::exists(tmp.path / "out" / "batch_report.json"));
    }
    SUBCASE("three pairs, one unreadable") {
        for (int i = 0; i < 2; ++i) write_pair(tmp.path, "p" + std::to_string(i), 30 + i);
        write_text(tmp.path / "pairs.csv",
                   "pair_id,source,target,source_landmarks,target_landmarks\n"
                   "p0,p0_s.png,p0_t.png,p0_s.csv,p0_t.csv\n"
                   "bad,missing.png,p0_t.png,,\n"
                   "p1,p1_s.png,p1_t.png,p1_s.csv,p1_t.csv\n");
        auto cfg = small_config(tmp.path / "out");
        cfg.jobs = 2;
        const auto r = run_batch(tmp.path / "pairs.csv", cfg);
        REQUIRE(r.entries.size() == 3);
        CHECK(r.entries[0].outcome.has_value());
        CHECK_FALSE(r.entries[1].outcome.has_value());
        CHECK_FALSE(r.entries[1].error.empty());
        CHECK(r.entries[2].outcome.has_value());
        CHECK(r.exit_code() == 2);

        const auto j = nlohmann::json::parse(slurp(tmp.path / "out" / "batch_report.json"));
        const double mean = (r.entries[0].outcome->evaluation->median_rtre + r.entries[2].outcome->evaluation->median_rtre) / 2;
        CHECK(j["summary"]["average_median_rtre"].get<double>() == doctest::Approx(mean).epsilon(1e-12));
        CHECK(j["summary"]["failed"] == 1);
        CHECK(j["pairs"][1]["status"] == "error");
    }
}
